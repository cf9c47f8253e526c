#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dexplore {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view s);

void append_vector(std::string& out, const Eigen::VectorXd& v);

/// Splits on runs of whitespace.
std::vector<std::string_view> split_ws(std::string_view s);

/// Reads `n` doubles from tokens starting at `pos`, advancing it.
Eigen::VectorXd take_vector(const std::vector<std::string_view>& tokens, size_t& pos, int n);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t h);
std::string hash_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

/// Splits a seed into independent streams: mixes (seed, a, b) with splitmix64
/// finalisers. Used to give every (iteration, candidate) its own generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Informational messages go to stderr unless silenced.
void log_info(std::string_view message);
void set_log_enabled(bool enabled);

}  // namespace dexplore
