#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "telto/backbone.hpp"
#include "telto/flow.hpp"
#include "telto/framework.hpp"
#include "telto/metrics.hpp"
#include "telto/params.hpp"
#include "telto/rng.hpp"
#include "telto/synthetic.hpp"
#include "telto/topology.hpp"
#include "telto/train.hpp"
#include "telto/windows.hpp"

namespace {

using namespace telto;

GeneratorConfig day_config(int days) {
  GeneratorConfig cfg;
  cfg.days = days;
  return cfg;
}

const RoadTopology& demo() {
  static const RoadTopology topo = make_demo_topology();
  return topo;
}

const SyntheticData& day_data() {
  static const SyntheticData data = generate_synthetic(demo(), day_config(1), 11);
  return data;
}

Tensor<float> random_features(std::size_t e, std::size_t c, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> out({e, c, d}, 0.0f);
  for (float& v : out.data) v = static_cast<float>(rng.normal());
  return out;
}

void BM_GenerateDay(benchmark::State& state) {
  const GeneratorConfig cfg = day_config(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    SyntheticData data = generate_synthetic(demo(), cfg, 11);
    benchmark::DoNotOptimize(data.gct.values.data.data());
  }
}
BENCHMARK(BM_GenerateDay)->Arg(1)->Arg(7);

void BM_PairRecords(benchmark::State& state) {
  const std::vector<GctRecord>& records = day_data().records;
  for (auto _ : state) {
    std::vector<GctPairing> pairs = pair_records(records, demo());
    benchmark::DoNotOptimize(pairs.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(records.size()));
}
BENCHMARK(BM_PairRecords);

void BM_AggregateRecords(benchmark::State& state) {
  const SyntheticData& data = day_data();
  const std::int64_t start = data.gct.start_timestamp;
  const std::int64_t end = data.gct.end_timestamp();
  for (auto _ : state) {
    FlowSeries flows = aggregate_flows(data.records, demo(), 900, start, end);
    benchmark::DoNotOptimize(flows.values.data.data());
  }
}
BENCHMARK(BM_AggregateRecords);

void BM_Transform(benchmark::State& state) {
  const Tensor<float> h = random_features(demo().segment_count(), 32, 8, 5);
  for (auto _ : state) {
    Tensor<float> t = transform(h, demo(), Activation::relu);
    benchmark::DoNotOptimize(t.data.data());
  }
}
BENCHMARK(BM_Transform);

void BM_MgatEnhance(benchmark::State& state) {
  const std::size_t channels = static_cast<std::size_t>(state.range(0));
  const Tensor<float> h = random_features(demo().route_count(), channels, 8, 6);
  const MgatParams<float> params(channels, 8, 0.2f, 7);
  for (auto _ : state) {
    Tensor<float> e = mgat_enhance(h, demo(), params, Activation::relu);
    benchmark::DoNotOptimize(e.data.data());
  }
}
BENCHMARK(BM_MgatEnhance)->Arg(8)->Arg(32);

BackboneConfig bench_backbone(std::size_t channels) {
  BackboneConfig cfg;
  cfg.channels = channels;
  cfg.layers = 4;
  return cfg;
}

void BM_BackboneForward(benchmark::State& state) {
  const std::size_t channels = static_cast<std::size_t>(state.range(0));
  const Backbone<float> model(bench_backbone(channels), demo().segment_count(), 3);
  const GraphOps<float> graph = make_graph_ops<float>(demo().segment_adjacency);
  Rng rng(9);
  Tensor<float> x({demo().segment_count(), 8}, 0.0f);
  for (float& v : x.data) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    ad::Tape<float> tape;
    const std::vector<ad::NodeId> ids = model.params().bind_all(tape, false);
    const ad::NodeId out = model.predict_on_tape(tape, ids, tape.leaf(x), graph);
    benchmark::DoNotOptimize(tape.value(out).data.data());
  }
}
BENCHMARK(BM_BackboneForward)->Arg(8)->Arg(32);

struct FrameworkFixture {
  Stage1Model<float> stage1;
  FrameworkModel<float> model;
  Tensor<float> x;
  Tensor<float> target;

  explicit FrameworkFixture(std::size_t channels)
      : stage1(make_stage1(channels)),
        model(stage1, make_config(), demo(), 21),
        x({demo().segment_count(), 8}, 0.0f),
        target({demo().route_count(), 4}, 0.0f) {
    Rng rng(13);
    for (float& v : x.data) v = 40.0f + 10.0f * static_cast<float>(rng.normal());
    for (float& v : target.data) v = 10.0f + 2.0f * static_cast<float>(rng.normal());
  }

  static Stage1Model<float> make_stage1(std::size_t channels) {
    Stage1Model<float> s;
    s.backbone = Backbone<float>(bench_backbone(channels), demo().segment_count(), 3);
    s.topology_hash = topology_hash(demo());
    return s;
  }

  static FrameworkConfig make_config() {
    FrameworkConfig cfg;
    cfg.stage2.layers = 2;
    return cfg;
  }
};

void BM_FrameworkForward(benchmark::State& state) {
  const FrameworkFixture fix(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    Tensor<float> y = fix.model.forward(fix.x);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_FrameworkForward)->Arg(8)->Arg(32);

void BM_FrameworkGradient(benchmark::State& state) {
  const FrameworkFixture fix(static_cast<std::size_t>(state.range(0)));
  const Tensor<float> features = fix.model.stage1_features(fix.x);
  for (auto _ : state) {
    ad::Tape<float> tape;
    const std::vector<ad::NodeId> ids = fix.model.params().bind_all(tape, true);
    const ad::NodeId pred = fix.model.predict_on_tape(tape, ids, tape.leaf(features));
    const ad::NodeId loss = tape.mean_abs_error(pred, fix.target);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(ids.front()).data.data());
  }
}
BENCHMARK(BM_FrameworkGradient)->Arg(8)->Arg(32);

void BM_ComputeMetrics(benchmark::State& state) {
  Rng rng(17);
  Tensor<double> pred({64, demo().route_count(), 4}, 0.0);
  Tensor<double> truth({64, demo().route_count(), 4}, 0.0);
  for (double& v : pred.data) v = 10.0 + rng.normal();
  for (double& v : truth.data) v = 10.0 + rng.normal();
  for (auto _ : state) {
    MetricsReport report = compute_metrics(pred, truth, 900);
    benchmark::DoNotOptimize(&report.overall.mae);
  }
}
BENCHMARK(BM_ComputeMetrics);

}  // namespace

BENCHMARK_MAIN();
