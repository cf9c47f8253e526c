#include "dexplore/io.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dexplore/errors.hpp"

namespace dexplore {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ContractError("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ContractError("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

void append_vector(std::string& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!out.empty() && out.back() != ' ') out.push_back(' ');
    out += format_double(v(i));
  }
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

Eigen::VectorXd take_vector(const std::vector<std::string_view>& tokens, size_t& pos, int n) {
  if (pos + n > tokens.size()) throw ContractError("record is too short");
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = parse_double(tokens[pos++]);
  return v;
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  out << contents;
}

std::string hash_file(const std::string& path) { return hex64(fnv1a(read_file(path))); }

namespace {
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return mix(mix(mix(seed) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

namespace {
std::atomic<bool> g_log_enabled{true};
}

void set_log_enabled(bool enabled) { g_log_enabled = enabled; }

void log_info(std::string_view message) {
  if (g_log_enabled) std::clog << message << '\n';
}

}  // namespace dexplore
