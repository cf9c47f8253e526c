// Serial reference against the OpenMP path for the three parallel kernels.
// Arg 0 = serial, 1 = parallel.

#include <benchmark/benchmark.h>

#include <random>

#include "dexplore/grasp.hpp"
#include "dexplore/planners.hpp"
#include "dexplore/reset_set.hpp"
#include "dexplore/rl.hpp"

using namespace dexplore;

namespace {

struct Setup {
  SimulatorFactory factory{reference_hand(), reference_object("disc"), SimConfig{}};
  StabilityConfig stability;
  SimState root;

  Setup() {
    stability.torque_weight = factory.shape().bounding_radius();
    root = settled_root(factory.make(), stability);
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

Execution execution(const benchmark::State& state) {
  return state.range(0) == 0 ? Execution::kSerial : Execution::kParallel;
}

void BM_GrrtExtend(benchmark::State& state) {
  const Setup& s = setup();
  PlannerConfig pc;
  pc.k_max = 64;
  pc.execution = execution(state);
  State target = s.root.state;
  target.p.z() += 1.0;
  int it = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grrt_extend(s.root, target, pc.k_max, s.factory, pc, it++));
  }
}
BENCHMARK(BM_GrrtExtend)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_StabilityFilter(benchmark::State& state) {
  const Setup& s = setup();
  const Simulator sim = s.factory.make();
  std::vector<SimState> states;
  for (int k = 0; k < 32; ++k) {
    const Action a = sample_action(s.factory.model(), s.root.state.q, 0.15, 3, 0, k);
    states.push_back(SimState::at_rest(sim.advance(s.root, a, sim.config().control_steps).state, a));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(stability_filter(states, s.factory, 3, kDefaultContactTolerance, execution(state)));
  }
}
BENCHMARK(BM_StabilityFilter)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_CollectRollouts(benchmark::State& state) {
  const Setup& s = setup();
  std::mt19937_64 rng(1);
  const Policy policy = Policy::create(s.factory.model(), 64, -1.0, rng);
  FixedInit dist(s.root);
  auto workers = make_workers(s.factory, RewardConfig{}, dist, 16, 1);
  int round = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(collect_rollouts(policy, workers, dist, 64, 1, ++round, execution(state)));
  }
}
BENCHMARK(BM_CollectRollouts)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
