#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dexplore/dynamics.hpp"
#include "dexplore/hand_model.hpp"
#include "dexplore/planners.hpp"
#include "dexplore/reset_set.hpp"
#include "dexplore/rl.hpp"
#include "dexplore/stability.hpp"

namespace dexplore {

enum class ResetKind { kFixed, kSgs, kExplored, kTree };
std::string to_string(ResetKind k);
ResetKind reset_kind_from_string(const std::string& s);

struct SgsConfig {
  int max_attempts = 1000;
  double spread = 0.6;
  double free_probability = 0.3;
};

/// Hand with `fingers` identical two-link fingers evenly spaced on a circle.
struct HandSpec {
  std::string name = "reference";
  int fingers = 4;
  double base_radius = 0.1;
  double phase = 45.0;  // degrees, angle of finger 0's base
  double link0 = 0.06, link1 = 0.055;
  double lower0 = -2.0, upper0 = 0.8, lower1 = 0.15, upper1 = 2.9;
  double tip_radius = 0.008;

  HandModel build() const;
};

/// A built-in object by name, or a custom disc/polygon.
struct ObjectSpec {
  std::string name = "disc";
  std::string shape;  // empty: built-in `name`; else "disc" or "polygon"
  double radius = 0.0;
  std::vector<Vec2> vertices;
  std::string category = "easy";

  ObjectShape build() const;
};

struct ExperimentConfig {
  HandSpec hand;
  ObjectSpec object;
  SimConfig sim;
  PlannerKind planner_kind = PlannerKind::kGRRT;
  PlannerConfig planner;
  StabilityConfig stability;
  bool auto_torque_weight = true;  // torque weight = object bounding radius
  ResetConfig reset;
  RewardConfig reward;
  TrainerConfig trainer;
  SgsConfig sgs;
  ResetKind reset_kind = ResetKind::kTree;
  std::vector<std::uint64_t> seeds{1};
  std::string output = "out";

  /// Every setting as sorted `section.key = value` lines.
  std::string canonical_text() const;
  std::string hash() const;
  /// Copy with a single seed, pushed into planner and trainer.
  ExperimentConfig with_seed(std::uint64_t seed) const;
  void validate() const;
  /// Stability settings with the automatic torque weight resolved.
  StabilityConfig resolved_stability(const ObjectShape& shape) const;
};

/// Environment variables DEXPLORE_<SECTION>_<KEY> override file values.
inline constexpr const char* kEnvPrefix = "DEXPLORE_";

/// Parses INI text; unknown sections or keys and malformed values throw
/// ConfigError. `env` entries (NAME=VALUE) with the prefix are applied after
/// the file.
ExperimentConfig parse_config(const std::string& ini_text,
                              const std::vector<std::string>& env = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& env = {});
/// The process environment as NAME=VALUE strings.
std::vector<std::string> process_environment();

/// Shared immutable pieces built from a configuration.
struct ExperimentContext {
  ExperimentConfig config;
  std::shared_ptr<SimulatorFactory> factory;
  StabilityConfig stability;

  explicit ExperimentContext(ExperimentConfig c);
  /// Settled canonical grasp; the fixed-initialization state.
  SimState root() const;
};

// Artifacts written by the commands. Every file carries the config hash and seed.

struct PlanArtifacts {
  std::string tree_path, coverage_path;
  PlanResult result;
};
PlanArtifacts run_plan(const ExperimentContext& ctx, std::uint64_t seed, const std::string& out_dir);

std::string format_coverage_csv(const std::vector<CoveragePoint>& coverage,
                                const std::string& config_hash, std::uint64_t seed);

struct ExtractArtifacts {
  std::string resets_path, summary_path;
  ResetSet set;
  std::string summary;
};
ExtractArtifacts run_extract(const ExperimentContext& ctx, const std::string& tree_path,
                             const std::string& out_dir);

struct TrainArtifacts {
  std::string metrics_path, eval_path, checkpoint_path;
  TrainResult result;
};
TrainArtifacts run_train(const ExperimentContext& ctx, std::uint64_t seed,
                         const std::string& resets_path, const std::string& out_dir);

struct EvalEpisode {
  double rotation = 0.0;
  double revolutions = 0.0;
  double mean_speed = 0.0;  // rad/s
  int length = 0;
  Termination reason = Termination::kNone;
};
struct EvalArtifacts {
  std::string episodes_path;
  std::vector<EvalEpisode> episodes;
  double median_revolutions = 0.0;
  double mean_speed = 0.0;
};
/// Deterministic evaluation from the fixed-initialization state, or from
/// states drawn out of `resets_path` when it is given.
EvalArtifacts run_eval(const ExperimentContext& ctx, const std::string& checkpoint_path,
                       int episodes, std::uint64_t seed, const std::string& resets_path,
                       const std::string& out_dir);

}  // namespace dexplore
