#include "dexplore/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <sstream>

#include "dexplore/errors.hpp"
#include "dexplore/grasp.hpp"
#include "dexplore/io.hpp"

extern char** environ;

namespace dexplore {

std::string to_string(ResetKind k) {
  switch (k) {
    case ResetKind::kFixed: return "fixed";
    case ResetKind::kSgs: return "sgs";
    case ResetKind::kExplored: return "explored";
    case ResetKind::kTree: return "tree";
  }
  return "?";
}

ResetKind reset_kind_from_string(const std::string& s) {
  if (s == "fixed") return ResetKind::kFixed;
  if (s == "sgs") return ResetKind::kSgs;
  if (s == "explored") return ResetKind::kExplored;
  if (s == "tree") return ResetKind::kTree;
  throw ConfigError("unknown reset distribution '" + s + "' (fixed|sgs|explored|tree)");
}

HandModel HandSpec::build() const {
  if (fingers < 1) throw ConfigError("hand.fingers must be >= 1");
  std::vector<FingerSpec> specs;
  for (int i = 0; i < fingers; ++i) {
    const double angle = phase * std::numbers::pi / 180.0 + i * 2.0 * std::numbers::pi / fingers;
    FingerSpec f;
    f.base = base_radius * Vec2(std::cos(angle), std::sin(angle));
    f.base_angle = angle + std::numbers::pi;
    f.links = {link0, link1};
    f.lower = {lower0, lower1};
    f.upper = {upper0, upper1};
    specs.push_back(f);
  }
  try {
    return HandModel(std::move(specs), tip_radius);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid hand: ") + e.what());
  }
}

ObjectShape ObjectSpec::build() const {
  try {
    if (shape.empty()) return reference_object(name);
    const ShapeCategory cat = category_from_string(category);
    if (shape == "disc") return ObjectShape::disc(radius, cat, name);
    if (shape == "polygon") return ObjectShape::polygon(vertices, cat, name);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("invalid object: ") + e.what());
  }
  throw ConfigError("object.shape must be disc or polygon");
}

// ---------------------------------------------------------------------------
// Key bindings

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  try {
    return parse_double(trim(v));
  } catch (const std::exception&) {
    throw ConfigError("'" + v + "' is not a number");
  }
}

template <typename Int>
Int to_int(const std::string& v) {
  const std::string t = trim(v);
  Int out{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("'" + v + "' is not an integer");
  }
  return out;
}

struct Binding {
  std::string section, key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool hashed = true;
};

template <typename Access>
Binding real(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = to_double(v); },
          [access](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return format_double(access(copy));
          }};
}

template <typename Access>
Binding integer(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = to_int<int>(v); },
          [access](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return std::to_string(access(copy));
          }};
}

template <typename Access>
Binding text(std::string section, std::string key, Access access) {
  return {std::move(section), std::move(key),
          [access](ExperimentConfig& c, const std::string& v) { access(c) = trim(v); },
          [access](const ExperimentConfig& c) {
            ExperimentConfig copy = c;
            return access(copy);
          }};
}

std::vector<Vec2> parse_vertices(const std::string& v) {
  std::vector<Vec2> out;
  std::stringstream ss(v);
  std::string pair;
  while (std::getline(ss, pair, ';')) {
    if (trim(pair).empty()) continue;
    const auto tok = split_ws(pair);
    if (tok.size() != 2) throw ConfigError("object.vertices expects 'x y; x y; ...'");
    out.emplace_back(to_double(std::string(tok[0])), to_double(std::string(tok[1])));
  }
  return out;
}

std::string format_vertices(const std::vector<Vec2>& vs) {
  std::string out;
  for (size_t i = 0; i < vs.size(); ++i) {
    if (i) out += "; ";
    out += format_double(vs[i].x()) + " " + format_double(vs[i].y());
  }
  return out;
}

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = [] {
    using C = ExperimentConfig;
    std::vector<Binding> b;
    // experiment
    b.push_back(text("experiment", "object", [](C& c) -> std::string& { return c.object.name; }));
    b.push_back({"experiment", "reset",
                 [](C& c, const std::string& v) { c.reset_kind = reset_kind_from_string(trim(v)); },
                 [](const C& c) { return to_string(c.reset_kind); }});
    b.push_back({"experiment", "seeds",
                 [](C& c, const std::string& v) {
                   c.seeds.clear();
                   std::stringstream ss(v);
                   std::string item;
                   while (std::getline(ss, item, ',')) c.seeds.push_back(to_int<std::uint64_t>(item));
                 },
                 [](const C& c) {
                   std::string out;
                   for (size_t i = 0; i < c.seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.seeds[i]);
                   return out;
                 },
                 false});
    Binding output = text("experiment", "output", [](C& c) -> std::string& { return c.output; });
    output.hashed = false;
    b.push_back(output);
    // hand
    b.push_back(text("hand", "name", [](C& c) -> std::string& { return c.hand.name; }));
    b.push_back(integer("hand", "fingers", [](C& c) -> int& { return c.hand.fingers; }));
    b.push_back(real("hand", "base_radius", [](C& c) -> double& { return c.hand.base_radius; }));
    b.push_back(real("hand", "phase", [](C& c) -> double& { return c.hand.phase; }));
    b.push_back(real("hand", "link0", [](C& c) -> double& { return c.hand.link0; }));
    b.push_back(real("hand", "link1", [](C& c) -> double& { return c.hand.link1; }));
    b.push_back(real("hand", "lower0", [](C& c) -> double& { return c.hand.lower0; }));
    b.push_back(real("hand", "upper0", [](C& c) -> double& { return c.hand.upper0; }));
    b.push_back(real("hand", "lower1", [](C& c) -> double& { return c.hand.lower1; }));
    b.push_back(real("hand", "upper1", [](C& c) -> double& { return c.hand.upper1; }));
    b.push_back(real("hand", "tip_radius", [](C& c) -> double& { return c.hand.tip_radius; }));
    // object
    b.push_back(text("object", "shape", [](C& c) -> std::string& { return c.object.shape; }));
    b.push_back(real("object", "radius", [](C& c) -> double& { return c.object.radius; }));
    b.push_back(text("object", "category", [](C& c) -> std::string& { return c.object.category; }));
    b.push_back({"object", "vertices",
                 [](C& c, const std::string& v) { c.object.vertices = parse_vertices(v); },
                 [](const C& c) { return format_vertices(c.object.vertices); }});
    // sim
    b.push_back(real("sim", "dt", [](C& c) -> double& { return c.sim.dt; }));
    b.push_back(real("sim", "servo_gain", [](C& c) -> double& { return c.sim.servo_gain; }));
    b.push_back(real("sim", "max_torque", [](C& c) -> double& { return c.sim.max_torque; }));
    b.push_back(real("sim", "joint_damping", [](C& c) -> double& { return c.sim.joint_damping; }));
    b.push_back(real("sim", "velocity_limit", [](C& c) -> double& { return c.sim.velocity_limit; }));
    b.push_back(real("sim", "contact_stiffness", [](C& c) -> double& { return c.sim.contact_stiffness; }));
    b.push_back(real("sim", "contact_damping", [](C& c) -> double& { return c.sim.contact_damping; }));
    b.push_back(real("sim", "tangential_stiffness", [](C& c) -> double& { return c.sim.tangential_stiffness; }));
    b.push_back(real("sim", "tangential_damping", [](C& c) -> double& { return c.sim.tangential_damping; }));
    b.push_back(real("sim", "friction", [](C& c) -> double& { return c.sim.friction; }));
    b.push_back(real("sim", "gravity", [](C& c) -> double& { return c.sim.gravity; }));
    b.push_back(real("sim", "object_mass", [](C& c) -> double& { return c.sim.object_mass; }));
    b.push_back(real("sim", "object_inertia", [](C& c) -> double& { return c.sim.object_inertia; }));
    b.push_back(real("sim", "drop_height", [](C& c) -> double& { return c.sim.drop_height; }));
    b.push_back(real("sim", "rollout_duration", [](C& c) -> double& { return c.sim.rollout_duration; }));
    b.push_back(integer("sim", "control_steps", [](C& c) -> int& { return c.sim.control_steps; }));
    // planner
    b.push_back({"planner", "kind",
                 [](C& c, const std::string& v) { c.planner_kind = planner_from_string(trim(v)); },
                 [](const C& c) { return to_string(c.planner_kind); }});
    b.push_back(integer("planner", "max_nodes", [](C& c) -> int& { return c.planner.max_nodes; }));
    b.push_back(integer("planner", "max_iterations", [](C& c) -> int& { return c.planner.max_iterations; }));
    b.push_back(integer("planner", "k_max", [](C& c) -> int& { return c.planner.k_max; }));
    b.push_back(real("planner", "alpha", [](C& c) -> double& { return c.planner.alpha; }));
    b.push_back(real("planner", "resnap_threshold", [](C& c) -> double& { return c.planner.resnap_threshold; }));
    b.push_back(real("planner", "contact_tolerance", [](C& c) -> double& { return c.planner.contact_tolerance; }));
    b.push_back(real("planner", "action_delta", [](C& c) -> double& { return c.planner.action_delta; }));
    b.push_back(integer("planner", "min_contacts", [](C& c) -> int& { return c.planner.min_contacts; }));
    b.push_back(integer("planner", "coverage_every", [](C& c) -> int& { return c.planner.coverage_every; }));
    b.push_back(real("planner", "w_joint", [](C& c) -> double& { return c.planner.weights.joint; }));
    b.push_back(real("planner", "w_position", [](C& c) -> double& { return c.planner.weights.position; }));
    b.push_back(real("planner", "w_angle", [](C& c) -> double& { return c.planner.weights.angle; }));
    b.push_back({"planner", "execution",
                 [](C& c, const std::string& v) {
                   const std::string t = trim(v);
                   if (t != "serial" && t != "parallel") throw ConfigError("planner.execution must be serial or parallel");
                   const Execution e = t == "serial" ? Execution::kSerial : Execution::kParallel;
                   c.planner.execution = e;
                   c.reset.execution = e;
                   c.trainer.execution = e;
                 },
                 [](const C& c) { return std::string(c.planner.execution == Execution::kSerial ? "serial" : "parallel"); },
                 false});
    // stability
    b.push_back(real("stability", "epsilon", [](C& c) -> double& { return c.stability.epsilon; }));
    b.push_back({"stability", "torque_weight",
                 [](C& c, const std::string& v) {
                   if (trim(v) == "auto") {
                     c.auto_torque_weight = true;
                   } else {
                     c.auto_torque_weight = false;
                     c.stability.torque_weight = to_double(v);
                   }
                 },
                 [](const C& c) {
                   return c.auto_torque_weight ? std::string("auto") : format_double(c.stability.torque_weight);
                 }});
    b.push_back(real("stability", "solver_tolerance", [](C& c) -> double& { return c.stability.solver_tolerance; }));
    b.push_back(integer("stability", "max_iterations", [](C& c) -> int& { return c.stability.max_iterations; }));
    // reset
    b.push_back(integer("reset", "top_k", [](C& c) -> int& { return c.reset.top_k; }));
    b.push_back(integer("reset", "cap", [](C& c) -> int& { return c.reset.cap; }));
    b.push_back(integer("reset", "min_contacts", [](C& c) -> int& { return c.reset.min_contacts; }));
    b.push_back(real("reset", "grip_force", [](C& c) -> double& { return c.reset.grip_force; }));
    // reward
    b.push_back(real("reward", "w_rot", [](C& c) -> double& { return c.reward.w_rot; }));
    b.push_back(real("reward", "omega_max", [](C& c) -> double& { return c.reward.omega_max; }));
    b.push_back(real("reward", "w_v", [](C& c) -> double& { return c.reward.w_v; }));
    b.push_back(real("reward", "w_pos", [](C& c) -> double& { return c.reward.w_pos; }));
    b.push_back(integer("reward", "reward_contacts", [](C& c) -> int& { return c.reward.reward_contacts; }));
    b.push_back(integer("reward", "terminate_contacts", [](C& c) -> int& { return c.reward.terminate_contacts; }));
    b.push_back(integer("reward", "horizon", [](C& c) -> int& { return c.reward.horizon; }));
    b.push_back(real("reward", "contact_threshold", [](C& c) -> double& { return c.reward.contact_threshold; }));
    // trainer
    b.push_back(integer("trainer", "updates", [](C& c) -> int& { return c.trainer.updates; }));
    b.push_back(integer("trainer", "steps_per_update", [](C& c) -> int& { return c.trainer.steps_per_update; }));
    b.push_back(integer("trainer", "envs", [](C& c) -> int& { return c.trainer.envs; }));
    b.push_back(integer("trainer", "epochs", [](C& c) -> int& { return c.trainer.epochs; }));
    b.push_back(integer("trainer", "minibatch", [](C& c) -> int& { return c.trainer.minibatch; }));
    b.push_back(real("trainer", "gamma", [](C& c) -> double& { return c.trainer.gamma; }));
    b.push_back(real("trainer", "lambda", [](C& c) -> double& { return c.trainer.lambda; }));
    b.push_back(real("trainer", "clip", [](C& c) -> double& { return c.trainer.clip; }));
    b.push_back(real("trainer", "actor_lr", [](C& c) -> double& { return c.trainer.actor_lr; }));
    b.push_back(real("trainer", "critic_lr", [](C& c) -> double& { return c.trainer.critic_lr; }));
    b.push_back(real("trainer", "entropy_coef", [](C& c) -> double& { return c.trainer.entropy_coef; }));
    b.push_back(real("trainer", "max_grad_norm", [](C& c) -> double& { return c.trainer.max_grad_norm; }));
    b.push_back(integer("trainer", "hidden", [](C& c) -> int& { return c.trainer.hidden; }));
    b.push_back(real("trainer", "init_log_std", [](C& c) -> double& { return c.trainer.init_log_std; }));
    b.push_back(integer("trainer", "eval_every", [](C& c) -> int& { return c.trainer.eval_every; }));
    b.push_back(integer("trainer", "eval_episodes", [](C& c) -> int& { return c.trainer.eval_episodes; }));
    // sgs
    b.push_back(integer("sgs", "max_attempts", [](C& c) -> int& { return c.sgs.max_attempts; }));
    b.push_back(real("sgs", "spread", [](C& c) -> double& { return c.sgs.spread; }));
    b.push_back(real("sgs", "free_probability", [](C& c) -> double& { return c.sgs.free_probability; }));
    return b;
  }();
  return table;
}

const Binding* find_binding(const std::string& section, const std::string& key) {
  for (const auto& b : bindings()) {
    if (b.section == section && b.key == key) return &b;
  }
  return nullptr;
}

void apply(ExperimentConfig& c, const std::string& section, const std::string& key,
           const std::string& value, const std::string& origin) {
  const Binding* b = find_binding(section, key);
  if (!b) throw ConfigError(origin + ": unknown setting '" + section + "." + key + "'");
  try {
    b->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + section + "." + key + ": " + e.what());
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

std::string ExperimentConfig::canonical_text() const {
  std::vector<std::string> lines;
  for (const auto& b : bindings()) {
    if (b.hashed) lines.push_back(b.section + "." + b.key + " = " + b.get(*this));
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a(canonical_text())); }

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t seed) const {
  ExperimentConfig c = *this;
  c.seeds = {seed};
  c.planner.seed = seed;
  c.trainer.seed = seed;
  return c;
}

void ExperimentConfig::validate() const {
  hand.build();
  object.build();
  sim.validate();
  planner.validate();
  stability.validate();
  reset.validate();
  reward.validate();
  trainer.validate();
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  if (sgs.max_attempts < 1 || !(sgs.spread >= 0) ||
      !(sgs.free_probability >= 0 && sgs.free_probability <= 1)) {
    throw ConfigError("invalid sgs settings");
  }
}

StabilityConfig ExperimentConfig::resolved_stability(const ObjectShape& shape) const {
  StabilityConfig s = stability;
  if (auto_torque_weight) s.torque_weight = shape.bounding_radius();
  return s;
}

ExperimentConfig parse_config(const std::string& ini_text, const std::vector<std::string>& env) {
  namespace pt = boost::property_tree;
  ExperimentConfig c;
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config: setting '" + section + "' outside a section");
    for (const auto& [key, value] : body) apply(c, section, key, value.data(), "config");
  }
  const std::string prefix = kEnvPrefix;
  for (const std::string& entry : env) {
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const auto us = name.find('_');
    if (us == std::string::npos) throw ConfigError("environment: '" + entry.substr(0, eq) + "' names no setting");
    apply(c, lower(name.substr(0, us)), lower(name.substr(us + 1)), entry.substr(eq + 1),
          "environment " + entry.substr(0, eq));
  }
  c.planner.seed = c.seeds.empty() ? 1 : c.seeds.front();
  c.trainer.seed = c.planner.seed;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& env) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const RuntimeFailure& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, env);
}

std::vector<std::string> process_environment() {
  std::vector<std::string> out;
  for (char** e = environ; e && *e; ++e) out.emplace_back(*e);
  return out;
}

// ---------------------------------------------------------------------------
// Context and commands

ExperimentContext::ExperimentContext(ExperimentConfig c) : config(std::move(c)) {
  config.validate();
  ObjectShape shape = config.object.build();
  stability = config.resolved_stability(shape);
  factory = std::make_shared<SimulatorFactory>(config.hand.build(), std::move(shape), config.sim);
}

SimState ExperimentContext::root() const { return settled_root(factory->make(), stability); }

namespace {

std::string provenance(const std::string& hash, std::uint64_t seed) {
  return "# config_hash " + hash + "\n# seed " + std::to_string(seed) + "\n";
}

std::string join(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir.empty() ? "." : dir);
  return (std::filesystem::path(dir.empty() ? "." : dir) / name).string();
}

std::string stem(const std::string& path) { return std::filesystem::path(path).stem().string(); }

}  // namespace

std::string format_coverage_csv(const std::vector<CoveragePoint>& coverage,
                                const std::string& config_hash, std::uint64_t seed) {
  std::string out = provenance(config_hash, seed) + "iteration,nodes,max_rotation\n";
  for (const auto& p : coverage) {
    out += std::to_string(p.iteration) + "," + std::to_string(p.nodes) + "," +
           format_double(p.max_rotation) + "\n";
  }
  return out;
}

PlanArtifacts run_plan(const ExperimentContext& ctx, std::uint64_t seed, const std::string& out_dir) {
  const ExperimentConfig cfg = ctx.config.with_seed(seed);
  const std::string hash = cfg.hash();
  PlanArtifacts a{"", "",
                  cfg.planner_kind == PlannerKind::kGRRT
                      ? grow_grrt(ctx.root(), cfg.planner, *ctx.factory)
                      : grow_mrrt(canonical_grasp(ctx.factory->model(), ctx.factory->shape()),
                                  cfg.planner, ctx.factory->model(), ctx.factory->shape(),
                                  ctx.stability)};
  const std::string tag = to_string(cfg.planner_kind) + "_" + cfg.object.name + "_s" + std::to_string(seed);
  a.tree_path = join(out_dir, "tree_" + tag + ".txt");
  a.coverage_path = join(out_dir, "coverage_" + tag + ".csv");
  save_tree(a.tree_path, a.result.tree, TreeFileMeta{cfg.object.name, seed, hash});
  write_file(a.coverage_path, format_coverage_csv(a.result.coverage, hash, seed));
  return a;
}

ExtractArtifacts run_extract(const ExperimentContext& ctx, const std::string& tree_path,
                             const std::string& out_dir) {
  TreeFileMeta meta;
  const ExplorationTree tree = load_tree(tree_path, ctx.config.planner.weights, &meta);
  if (meta.object != ctx.config.object.name) {
    throw ConfigError("tree was grown for object '" + meta.object + "' but the config selects '" +
                      ctx.config.object.name + "'");
  }
  ExtractArtifacts a;
  a.set = build_reset_set(tree, ctx.config.reset, *ctx.factory, ctx.stability, hash_file(tree_path));
  a.set.hand = ctx.config.hand.name;
  a.set.config_hash = ctx.config.hash();
  a.resets_path = join(out_dir, "resets_" + stem(tree_path) + ".txt");
  a.summary_path = join(out_dir, "resets_" + stem(tree_path) + ".summary.txt");
  save_reset_set(a.resets_path, a.set);

  std::string s = provenance(a.set.config_hash, meta.seed);
  s += "# tree " + tree_path + " hash " + a.set.tree_hash + "\n";
  s += "paths " + std::to_string(a.set.path_leaves.size()) + "\n";
  for (const auto& path : top_k_paths(tree, ctx.config.reset.top_k)) {
    s += "path leaf " + std::to_string(path.back()) + " length " + std::to_string(path.size()) +
         " rotation " + format_double(path_rotation(tree, path.back())) + "\n";
  }
  s += "states " + std::to_string(a.set.size()) + " cap " + std::to_string(a.set.cap) + "\n";
  a.summary = s;
  write_file(a.summary_path, s);
  return a;
}

TrainArtifacts run_train(const ExperimentContext& ctx, std::uint64_t seed,
                         const std::string& resets_path, const std::string& out_dir) {
  const ExperimentConfig cfg = ctx.config.with_seed(seed);
  const std::string hash = cfg.hash();
  const SimState root = ctx.root();
  std::unique_ptr<ResetDistribution> dist;
  switch (cfg.reset_kind) {
    case ResetKind::kFixed: dist = std::make_unique<FixedInit>(root); break;
    case ResetKind::kSgs:
      dist = std::make_unique<StableGraspSampler>(ctx.stability, cfg.sgs.max_attempts, cfg.sgs.spread,
                                                  cfg.sgs.free_probability, cfg.reset.grip_force);
      break;
    case ResetKind::kExplored: dist = std::make_unique<ExploredRestarts>(root); break;
    case ResetKind::kTree:
      if (resets_path.empty()) throw ConfigError("reset distribution 'tree' needs a reset-set file (--resets)");
      dist = std::make_unique<TreeResets>(load_reset_set(resets_path, ctx.factory.get()));
      break;
  }
  TrainArtifacts a;
  a.result = train(*ctx.factory, cfg.reward, cfg.trainer, *dist, root);
  const std::string tag = to_string(cfg.reset_kind) + "_" + cfg.object.name + "_s" + std::to_string(seed);
  a.metrics_path = join(out_dir, "metrics_" + tag + ".csv");
  a.eval_path = join(out_dir, "eval_" + tag + ".csv");
  a.checkpoint_path = join(out_dir, "policy_" + tag + ".txt");
  std::string metrics = provenance(hash, seed) + metrics_csv_header();
  for (const auto& m : a.result.updates) metrics += format_metrics_row(m);
  write_file(a.metrics_path, metrics);
  std::string evals = provenance(hash, seed) + eval_csv_header();
  for (const auto& m : a.result.evals) evals += format_eval_row(m);
  write_file(a.eval_path, evals);
  write_file(a.checkpoint_path, format_policy(a.result.policy, hash));
  return a;
}

EvalArtifacts run_eval(const ExperimentContext& ctx, const std::string& checkpoint_path,
                       int episodes, std::uint64_t seed, const std::string& resets_path,
                       const std::string& out_dir) {
  if (episodes < 1) throw ConfigError("--episodes must be >= 1");
  std::string stored_hash;
  const Policy policy = parse_policy(read_file(checkpoint_path), &stored_hash);
  const std::string hash = ctx.config.hash();
  if (stored_hash != hash) {
    throw ConfigError("checkpoint config hash " + stored_hash + " does not match config hash " + hash);
  }
  if (policy.actor.inputs() != observation_size(ctx.factory->model()) ||
      policy.action_size() != ctx.factory->model().dof()) {
    throw ConfigError("checkpoint network does not fit the configured hand");
  }
  std::optional<ResetSet> starts;
  if (!resets_path.empty()) starts = load_reset_set(resets_path, ctx.factory.get());
  const SimState root = ctx.root();
  std::mt19937_64 rng(derive_seed(seed, 0xe7a1ULL));
  RotationEnv env(ctx.factory->make(), ctx.config.reward);

  EvalArtifacts a;
  std::string csv = provenance(hash, seed) + "episode,rotation,revolutions,mean_speed,length,reason\n";
  std::vector<double> revs;
  for (int e = 0; e < episodes; ++e) {
    const SimState start = starts ? starts->draw(rng) : root;
    const EpisodeStats s = evaluate_episode(policy, env, start);
    EvalEpisode ep;
    ep.rotation = s.rotation;
    ep.revolutions = s.rotation / (2.0 * std::numbers::pi);
    ep.mean_speed = s.rotation / (s.length * env.control_dt());
    ep.length = s.length;
    ep.reason = s.reason;
    a.episodes.push_back(ep);
    revs.push_back(ep.revolutions);
    a.mean_speed += ep.mean_speed / episodes;
    csv += std::to_string(e) + "," + format_double(ep.rotation) + "," + format_double(ep.revolutions) +
           "," + format_double(ep.mean_speed) + "," + std::to_string(ep.length) + "," +
           to_string(ep.reason) + "\n";
  }
  std::sort(revs.begin(), revs.end());
  const size_t n = revs.size();
  a.median_revolutions = n % 2 ? revs[n / 2] : 0.5 * (revs[n / 2 - 1] + revs[n / 2]);
  csv += "# median_revolutions " + format_double(a.median_revolutions) + "\n";
  csv += "# mean_speed " + format_double(a.mean_speed) + "\n";
  a.episodes_path = join(out_dir, "episodes_" + stem(checkpoint_path) + ".csv");
  write_file(a.episodes_path, csv);
  return a;
}

}  // namespace dexplore
