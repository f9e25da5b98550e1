#include <benchmark/benchmark.h>

#include <cmath>
#include <numeric>
#include <random>

#include "sta4clc/graph.hpp"
#include "sta4clc/model.hpp"
#include "sta4clc/resilience.hpp"
#include "sta4clc/synth.hpp"
#include "sta4clc/training.hpp"

using namespace sta4clc;

namespace {

struct Reference {
  synth::Scenario scenario;
  training::NodeFeatures features;
  graph::MultiRelationalGraph graph;

  Reference() : scenario(synth::generate(synth::ScenarioConfig::reference())) {
    features = training::build_features(scenario.dataset);
    graph = training::node_graph(training::build_block_graph(scenario.dataset), features.n_periods);
  }
};

const Reference& reference() {
  static const Reference r;
  return r;
}

std::vector<data::Point> random_points(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10000.0);
  std::vector<data::Point> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

}  // namespace

static void BM_DecaySequence(benchmark::State& state) {
  const auto weeks = static_cast<std::size_t>(state.range(0));
  std::vector<resilience::Impulse> imp;
  for (std::size_t w = 0; w < weeks; w += 17) imp.push_back({static_cast<int>(w), 1.0});
  for (auto _ : state) benchmark::DoNotOptimize(resilience::decay_sequence(imp, 0.1, weeks));
}
BENCHMARK(BM_DecaySequence)->Arg(104)->Arg(1024);

static void BM_RollingResilience(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 2.0);
  std::vector<double> v(104);
  double x = 80.0;
  for (auto& y : v) {
    x += 0.3 * (100.0 - x) + noise(rng);
    y = x;
  }
  resilience::ResilienceConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(resilience::rolling_resilience(v, cfg));
}
BENCHMARK(BM_RollingResilience)->Unit(benchmark::kMicrosecond);

static void BM_KnnAdjacency(benchmark::State& state) {
  const auto pts = random_points(static_cast<std::size_t>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(graph::knn_adjacency(pts, 10));
}
BENCHMARK(BM_KnnAdjacency)->Arg(300)->Arg(1500)->Unit(benchmark::kMillisecond);

static void BM_BuildFeatures(benchmark::State& state) {
  const auto& ref = reference();
  for (auto _ : state) benchmark::DoNotOptimize(training::build_features(ref.scenario.dataset));
}
BENCHMARK(BM_BuildFeatures)->Unit(benchmark::kMillisecond)->Iterations(2);

static void BM_ForwardBackward(benchmark::State& state) {
  const auto& ref = reference();
  model::ModelConfig cfg;
  cfg.use_multi_relation = state.range(0) != 0;
  const auto tensors = model::prepare_graph(ref.graph);
  std::vector<std::size_t> all(ref.features.n_nodes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto inputs = training::make_inputs(ref.features, training::fit_scaling(ref.features, all));
  auto params = model::ModelParameters::init(cfg, ref.features.attribute_dim, ref.graph.relation_count());
  model::Targets targets{ref.features.labels, ref.features.delta, std::vector<double>(all.size(), 1.0)};
  for (auto _ : state) {
    for (auto& p : params.all()) p.zero_grad();
    const auto fwd = model::forward(inputs, tensors, params, cfg);
    const auto loss = model::total_loss(fwd, targets, tensors, params, cfg);
    ad::backward(loss.total);
    benchmark::DoNotOptimize(loss.cls);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
