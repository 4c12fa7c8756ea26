#include <benchmark/benchmark.h>

#include "fmdp/dynamics.hpp"
#include "fmdp/networks.hpp"
#include "fmdp/training.hpp"

using namespace fmdp;

namespace {

InstanceSpec bench_instance(int n) { return generate_instance(DomainKind::SysAdmin, n, 1); }

void BM_NormalizeAdjacency(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(normalize_adjacency(spec.adjacency, spec.num_vars));
}
BENCHMARK(BM_NormalizeAdjacency)->Arg(10)->Arg(50);

void BM_DynamicsStep(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  RngStream rng(7);
  State s = spec.initial_state;
  int a = 0;
  for (auto _ : state) {
    StepResult r = step(spec, s, a, rng);
    s = r.next;
    a = (a + 1) % spec.num_actions();
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_DynamicsStep)->Arg(10)->Arg(50);

void BM_EnumerateSuccessors(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  State s = spec.initial_state;
  for (auto _ : state)
    benchmark::DoNotOptimize(enumerate_successors(spec, s, spec.num_actions() - 1));
}
BENCHMARK(BM_EnumerateSuccessors)->Arg(8)->Arg(12);

void BM_ActionPosterior(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  RngStream rng(3);
  State s = spec.initial_state;
  StepResult r = step(spec, s, 0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(action_posterior(spec, s, r.next));
}
BENCHMARK(BM_ActionPosterior)->Arg(10)->Arg(50);

void BM_EncodeState(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 1);
  GraphContext graph = make_graph_context(spec);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(encode_state(tape, bundle, graph, spec.initial_state));
  }
}
BENCHMARK(BM_EncodeState)->Arg(10)->Arg(50);

void BM_PolicyDistribution(benchmark::State& state) {
  InstanceSpec spec = bench_instance(static_cast<int>(state.range(0)));
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 1);
  GraphContext graph = make_graph_context(spec);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        policy_distribution(bundle, graph, spec.instance_id, spec.initial_state));
}
BENCHMARK(BM_PolicyDistribution)->Arg(10)->Arg(50);

void BM_CombinedLossBackward(benchmark::State& state) {
  InstanceSpec spec = bench_instance(10);
  ModelBundle bundle = ModelBundle::initialize(make_signature({spec}), 1);
  GraphContext graph = make_graph_context(spec);
  std::vector<const GraphContext*> graphs{&graph};
  TrainConfig cfg;
  cfg.use_sad_tr = true;
  cfg.use_ic = false;

  RngStream env(1), act(2);
  RolloutSegment seg;
  seg.instance_id = spec.instance_id;
  seg.states.push_back(spec.initial_state);
  State cur = spec.initial_state;
  for (int h = 0; h < cfg.rollout_len; ++h) {
    auto pi = policy_distribution(bundle, graph, spec.instance_id, cur);
    int a = sample_index(pi, act);
    StepResult st = step(spec, cur, a, env);
    seg.actions.push_back(a);
    seg.rewards.push_back(st.reward);
    seg.states.push_back(st.next);
    cur = st.next;
  }
  std::vector<RolloutSegment> batch{seg};
  for (auto _ : state) {
    bundle.zero_grads();
    Tape tape;
    Tensor loss = combined_loss(tape, bundle, graphs, batch, cfg);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_CombinedLossBackward);

}  // namespace

BENCHMARK_MAIN();
