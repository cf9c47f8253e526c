#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/grasp.hpp"
#include "dexplore/hand_model.hpp"
#include "dexplore/stability.hpp"

namespace testing {

using namespace dexplore;

inline constexpr double kPi = std::numbers::pi;

// Contact set built directly from world points and inward normals; the
// fingers are numbered in order and all active.
inline ContactSet make_contacts(const std::vector<Vec2>& points, const std::vector<Vec2>& normals) {
  ContactSet set;
  for (size_t i = 0; i < points.size(); ++i) {
    ContactInfo c;
    c.finger = static_cast<int>(i);
    c.point = points[i];
    c.normal = normals[i].normalized();
    c.active = true;
    set.contacts.push_back(c);
  }
  return set;
}

inline std::vector<int> all_of(const ContactSet& set) { return set.active_fingers(); }

inline Eigen::VectorXd uniform_q(const HandModel& m, std::mt19937_64& rng) {
  Eigen::VectorXd q(m.dof());
  const auto lo = m.lower_limits(), hi = m.upper_limits();
  for (int i = 0; i < m.dof(); ++i) q[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  return q;
}

inline SimulatorFactory disc_factory(SimConfig sc = {}) {
  return SimulatorFactory(reference_hand(), reference_object("disc"), sc);
}

inline StabilityConfig stability_for(const ObjectShape& s) {
  StabilityConfig c;
  c.torque_weight = s.bounding_radius();
  return c;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("dexplore_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
