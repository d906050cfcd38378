#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "telto/analysis.hpp"
#include "telto/checkpoint.hpp"
#include "telto/experiments.hpp"
#include "telto/metrics.hpp"
#include "telto/synthetic.hpp"
#include "telto/topology.hpp"
#include "test_util.hpp"

using namespace telto;
using testutil::chain_topology;
using testutil::digest_params;

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "telto_test_report";
  fs::create_directories(dir);
  return dir;
}

template <typename T>
Stage1Model<T> hand_stage1(const RoadTopology& topology, std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.channels = 2;
  cfg.layers = 1;
  cfg.input_steps = 6;
  cfg.horizon = 2;
  cfg.head_hidden = 4;
  Stage1Model<T> s1;
  s1.backbone = Backbone<T>(cfg, topology.segment_count(), seed);
  s1.input_stats.mean = {4.0};
  s1.input_stats.std_dev = {2.0};
  s1.target_stats.mean = {1.0};
  s1.target_stats.std_dev = {0.5};
  s1.topology_hash = topology_hash(topology);
  return s1;
}

MetricsReport hand_report(double mae, double rmse, double mape, bool mape_defined,
                          std::size_t horizons = 1) {
  MetricsReport r;
  r.samples = 1;
  r.entities = 1;
  r.per_horizon.resize(horizons);
  for (MetricValues& m : r.per_horizon) {
    m.mae = mae;
    m.rmse = rmse;
    m.mape = mape;
    m.mape_defined = mape_defined;
    m.cells = 10;
  }
  r.overall = r.per_horizon[0];
  return r;
}

FlowSeries series_of(FlowKind kind, std::size_t entities, std::vector<double> values,
                     std::int64_t interval = 900, std::int64_t start = 0) {
  FlowSeries s;
  s.kind = kind;
  s.entity_count = entities;
  s.interval = interval;
  s.start_timestamp = start;
  const std::size_t steps = values.size() / entities;
  s.values = Tensor<double>({entities, steps}, 0.0);
  s.values.data = std::move(values);
  return s;
}

RoadTopology line_topology() {
  std::vector<Segment> segments = {
      {0, "a", 0.0, 0.0}, {1, "b", 1.0, 0.0}, {2, "c", 2.0, 0.0}, {3, "d", 3.0, 0.0}};
  std::vector<Route> routes = {{0, 0, 1}, {1, 1, 2}, {2, 2, 3}};
  return build_topology(std::move(segments), std::move(routes), TopologyOptions{});
}

}  // namespace

TEST_CASE("metrics on hand-computed examples") {
  SUBCASE("single horizon") {
    Tensor<double> pred({2, 1, 1}, 0.0), truth({2, 1, 1}, 0.0);
    pred.data = {1.0, 6.0};
    truth.data = {2.0, 4.0};
    const MetricsReport r = compute_metrics(pred, truth);
    REQUIRE(r.per_horizon.size() == 1);
    CHECK(r.per_horizon[0].mae == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(r.per_horizon[0].rmse == doctest::Approx(std::sqrt(2.5)).epsilon(1e-15));
    CHECK(r.per_horizon[0].mape == doctest::Approx(50.0).epsilon(1e-15));
    CHECK(r.per_horizon[0].cells == 2);
    CHECK(r.per_horizon[0].masked_cells == 0);
    CHECK(r.overall.mae == r.per_horizon[0].mae);
    CHECK(r.samples == 2);
    CHECK(r.entities == 1);
  }
  SUBCASE("per-horizon slotting and the overall mean") {
    Tensor<double> pred({1, 2, 2}, 0.0), truth({1, 2, 2}, 0.0);
    truth.data = {10.0, 20.0, 30.0, 40.0};  // [e0h0, e0h1, e1h0, e1h1]
    pred.data = {11.0, 18.0, 33.0, 44.0};
    const MetricsReport r = compute_metrics(pred, truth);
    REQUIRE(r.per_horizon.size() == 2);
    CHECK(r.per_horizon[0].mae == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(r.per_horizon[0].rmse == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
    CHECK(r.per_horizon[0].mape == doctest::Approx(10.0).epsilon(1e-13));
    CHECK(r.per_horizon[1].mae == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(r.per_horizon[1].rmse == doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
    CHECK(r.per_horizon[1].mape == doctest::Approx(10.0).epsilon(1e-13));
    CHECK(r.overall.mae == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(r.overall.rmse ==
          doctest::Approx((std::sqrt(5.0) + std::sqrt(10.0)) / 2.0).epsilon(1e-15));
    CHECK(r.overall.mape == doctest::Approx(10.0).epsilon(1e-13));
    CHECK(r.overall.cells == 4);
  }
  SUBCASE("zero truth cells are masked out of MAPE") {
    Tensor<double> pred({2, 1, 1}, 0.0), truth({2, 1, 1}, 0.0);
    pred.data = {1.0, 6.0};
    truth.data = {0.0, 4.0};
    const MetricsReport r = compute_metrics(pred, truth);
    CHECK(r.per_horizon[0].mae == doctest::Approx(1.5));
    CHECK(r.per_horizon[0].mape == doctest::Approx(50.0));
    CHECK(r.per_horizon[0].mape_defined);
    CHECK(r.per_horizon[0].masked_cells == 1);

    truth.data = {0.0, 0.0};
    const MetricsReport all_masked = compute_metrics(pred, truth);
    CHECK(!all_masked.per_horizon[0].mape_defined);
    CHECK(all_masked.per_horizon[0].masked_cells == 2);
    CHECK(!all_masked.overall.mape_defined);
  }
  SUBCASE("overall MAPE needs every horizon defined") {
    Tensor<double> pred({1, 1, 2}, 1.0), truth({1, 1, 2}, 0.0);
    truth.data = {0.0, 5.0};
    const MetricsReport r = compute_metrics(pred, truth);
    CHECK(!r.per_horizon[0].mape_defined);
    CHECK(r.per_horizon[1].mape_defined);
    CHECK(!r.overall.mape_defined);
  }
  SUBCASE("labels follow the interval") {
    Tensor<double> pred({1, 1, 4}, 1.0), truth({1, 1, 4}, 2.0);
    const MetricsReport r = compute_metrics(pred, truth, 900);
    CHECK(r.horizon_label(0) == "15 min");
    CHECK(r.horizon_label(1) == "30 min");
    CHECK(r.horizon_label(3) == "60 min");
    const MetricsReport r2 = compute_metrics(pred, truth, 300);
    CHECK(r2.horizon_label(0) == "5 min");
  }
  SUBCASE("MAE never exceeds RMSE") {
    testutil::Rng rng(21);
    const Tensor<double> pred = testutil::random_tensor(rng, {4, 5, 3});
    const Tensor<double> truth = testutil::random_tensor(rng, {4, 5, 3});
    const MetricsReport r = compute_metrics(pred, truth);
    for (const MetricValues& m : r.per_horizon) CHECK(m.mae <= m.rmse + 1e-12);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(compute_metrics(Tensor<double>({2, 2}, 0.0), Tensor<double>({2, 2}, 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        compute_metrics(Tensor<double>({1, 2, 2}, 0.0), Tensor<double>({2, 2, 1}, 0.0)),
        std::invalid_argument);
  }
}

TEST_CASE("improvement ratios") {
  const MetricsReport wo = hand_report(3.99, 7.21, 39.9, true);
  const MetricsReport w = hand_report(3.61, 6.26, 36.6, true);
  const ImprovementRatios ir = improvement_ratio(wo, w);
  CHECK(ir.overall.mae.defined);
  CHECK(ir.overall.mae.value == doctest::Approx((3.99 - 3.61) / 3.99 * 100.0).epsilon(1e-15));
  CHECK(ir.overall.mae.value == doctest::Approx(9.5238).epsilon(1e-4));
  CHECK(ir.overall.rmse.value == doctest::Approx((7.21 - 6.26) / 7.21 * 100.0).epsilon(1e-15));
  CHECK(ir.per_horizon.size() == 1);
  CHECK(ir.per_horizon[0].mape.value ==
        doctest::Approx((39.9 - 36.6) / 39.9 * 100.0).epsilon(1e-15));

  SUBCASE("zero baselines and undefined MAPE stay undefined") {
    const MetricsReport zero = hand_report(0.0, 0.0, 0.0, false);
    const ImprovementRatios z = improvement_ratio(zero, w);
    CHECK(!z.overall.mae.defined);
    CHECK(!z.overall.rmse.defined);
    CHECK(!z.overall.mape.defined);
    const ImprovementRatios u = improvement_ratio(wo, hand_report(1.0, 1.0, 0.0, false));
    CHECK(u.overall.mae.defined);
    CHECK(!u.overall.mape.defined);
  }
  SUBCASE("mismatched horizons are rejected") {
    CHECK_THROWS_AS(improvement_ratio(wo, hand_report(1, 1, 1, true, 3)), std::invalid_argument);
  }
}

TEST_CASE("mean report across runs") {
  MetricsReport a = hand_report(1.0, 2.0, 10.0, true);
  a.per_horizon[0].cells = 10;
  a.overall.cells = 10;
  MetricsReport b = hand_report(3.0, 4.0, 30.0, true);
  b.per_horizon[0].cells = 20;
  b.overall.cells = 20;
  const MetricsReport m = mean_report({a, b});
  CHECK(m.per_horizon[0].mae == doctest::Approx(2.0));
  CHECK(m.per_horizon[0].rmse == doctest::Approx(3.0));
  CHECK(m.per_horizon[0].mape == doctest::Approx(20.0));
  CHECK(m.per_horizon[0].mape_defined);
  CHECK(m.per_horizon[0].cells == 15);
  CHECK(m.overall.mae == doctest::Approx(2.0));

  b.per_horizon[0].mape_defined = false;
  const MetricsReport u = mean_report({a, b});
  CHECK(!u.per_horizon[0].mape_defined);
  CHECK(u.per_horizon[0].mape == 0.0);

  CHECK_THROWS_AS(mean_report({}), std::invalid_argument);
  CHECK_THROWS_AS(mean_report({a, hand_report(1, 1, 1, true, 2)}), std::invalid_argument);
}

TEST_CASE("stage-1 checkpoints round-trip exactly") {
  const RoadTopology topo = chain_topology();
  Stage1Model<double> s1 = hand_stage1<double>(topo, 31);
  s1.log.best_epoch = 2;
  s1.log.best_valid_mae = std::numeric_limits<double>::infinity();
  s1.log.early_stopped = true;
  EpochLog e;
  e.epoch = 1;
  e.train_mae = 0.5;
  e.valid_mae = std::numeric_limits<double>::quiet_NaN();
  s1.log.epochs.push_back(e);

  const fs::path path = scratch_dir() / "stage1.json";
  save_stage1(s1, path.string());
  const Stage1Model<double> back = load_stage1<double>(path.string());

  CHECK(digest_params(back.backbone.params()) == digest_params(s1.backbone.params()));
  CHECK(back.topology_hash == s1.topology_hash);
  CHECK(back.input_stats.mean == s1.input_stats.mean);
  CHECK(back.input_stats.std_dev == s1.input_stats.std_dev);
  CHECK(back.target_stats.mean == s1.target_stats.mean);
  CHECK(back.backbone.config().channels == 2);
  CHECK(back.log.best_epoch == 2);
  CHECK(std::isinf(back.log.best_valid_mae));
  CHECK(back.log.early_stopped);
  REQUIRE(back.log.epochs.size() == 1);
  CHECK(back.log.epochs[0].train_mae == 0.5);
  CHECK(std::isnan(back.log.epochs[0].valid_mae));
  CHECK(stage1_fingerprint(back) == stage1_fingerprint(s1));

  // Same forward result through the graph ops.
  const GraphOps<double> ops = make_graph_ops<double>(topo.segment_adjacency);
  testutil::Rng rng(22);
  const Tensor<double> x = testutil::random_tensor(rng, {4, 6});
  CHECK(back.backbone.forward_predict(x, ops).data == s1.backbone.forward_predict(x, ops).data);
}

TEST_CASE("fingerprints react to parameters and statistics") {
  const RoadTopology topo = chain_topology();
  Stage1Model<double> a = hand_stage1<double>(topo, 31);
  Stage1Model<double> b = hand_stage1<double>(topo, 31);
  CHECK(stage1_fingerprint(a) == stage1_fingerprint(b));
  b.backbone.params().values[0].data[0] += 1e-9;
  CHECK(stage1_fingerprint(a) != stage1_fingerprint(b));
  Stage1Model<double> c = hand_stage1<double>(topo, 31);
  c.input_stats.mean = {4.5};
  CHECK(stage1_fingerprint(a) != stage1_fingerprint(c));
}

TEST_CASE("stage-1 checkpoint refusals") {
  const RoadTopology topo = chain_topology();
  const fs::path dir = scratch_dir();

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_stage1<double>((dir / "absent.json").string()), std::runtime_error);
  }
  SUBCASE("not JSON") {
    const fs::path path = dir / "garbage.json";
    std::ofstream(path) << "not json";
    CHECK_THROWS_AS(load_stage1<double>(path.string()), std::runtime_error);
  }
  SUBCASE("unsupported version") {
    const fs::path path = dir / "version.json";
    save_stage1(hand_stage1<double>(topo, 1), path.string());
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(buf.str());
    j["version"] = 99;
    std::ofstream(path) << j.dump(2);
    CHECK_THROWS_AS(load_stage1<double>(path.string()), std::runtime_error);
  }
  SUBCASE("dtype mismatch") {
    const fs::path path = dir / "float.json";
    save_stage1(hand_stage1<float>(topo, 1), path.string());
    CHECK_THROWS_AS(load_stage1<double>(path.string()), std::runtime_error);
    CHECK(load_stage1<float>(path.string()).backbone.config().channels == 2);
  }
  SUBCASE("kind mismatch") {
    const fs::path path = dir / "kind.json";
    const Stage1Model<double> s1 = hand_stage1<double>(topo, 1);
    FrameworkConfig fcfg;
    fcfg.stage2.layers = 1;
    fcfg.head_hidden = 4;
    save_framework(FrameworkModel<double>(s1, fcfg, topo, 2), path.string());
    CHECK_THROWS_AS(load_stage1<double>(path.string()), std::runtime_error);
  }
}

TEST_CASE("framework checkpoints round-trip exactly") {
  const RoadTopology topo = chain_topology();
  const Stage1Model<double> s1 = hand_stage1<double>(topo, 31);
  FrameworkConfig fcfg;
  fcfg.stage2.layers = 1;
  fcfg.head_hidden = 5;
  fcfg.sigma = Activation::tanh;
  FrameworkModel<double> model(s1, fcfg, topo, 8);
  NormalizationStats tstats;
  tstats.mean = {12.0};
  tstats.std_dev = {3.0};
  model.set_target_stats(tstats);
  model.log.best_epoch = 4;

  const fs::path path = scratch_dir() / "framework.json";
  save_framework(model, path.string());
  const FrameworkModel<double> back = load_framework<double>(path.string(), s1, topo);

  CHECK(digest_params(back.params()) == digest_params(model.params()));
  CHECK(back.config().sigma == Activation::tanh);
  CHECK(back.target_stats().mean == std::vector<double>{12.0});
  CHECK(back.log.best_epoch == 4);

  testutil::Rng rng(23);
  const Tensor<double> x = testutil::random_tensor(rng, {4, 6}, 0.0, 8.0);
  CHECK(back.forward(x).data == model.forward(x).data);
}

TEST_CASE("framework checkpoint refusals") {
  const RoadTopology topo = chain_topology();
  const Stage1Model<double> s1 = hand_stage1<double>(topo, 31);
  FrameworkConfig fcfg;
  fcfg.stage2.layers = 1;
  fcfg.head_hidden = 5;
  const FrameworkModel<double> model(s1, fcfg, topo, 8);
  const fs::path path = scratch_dir() / "framework_refusals.json";
  save_framework(model, path.string());

  SUBCASE("topology hash must match") {
    const RoadTopology demo = make_demo_topology();
    CHECK_THROWS_WITH_AS(load_framework<double>(path.string(), s1, demo),
                         doctest::Contains("different hash"), std::runtime_error);
  }
  SUBCASE("stage-1 fingerprint must match") {
    const Stage1Model<double> other = hand_stage1<double>(topo, 77);
    CHECK_THROWS_WITH_AS(load_framework<double>(path.string(), other, topo),
                         doctest::Contains("fingerprint"), std::runtime_error);
  }
  SUBCASE("missing stage-1 reference") {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    nlohmann::json j = nlohmann::json::parse(buf.str());
    j["stage1_fingerprint"] = nullptr;
    const fs::path patched = scratch_dir() / "framework_nofp.json";
    std::ofstream(patched) << j.dump(2);
    CHECK_THROWS_WITH_AS(load_framework<double>(patched.string(), s1, topo),
                         doctest::Contains("stage-1 reference"), std::runtime_error);
  }
}

TEST_CASE("framework checkpoint without stage-1 features") {
  const RoadTopology topo = chain_topology();
  FrameworkConfig fcfg;
  fcfg.stage2.layers = 1;
  fcfg.stage2.input_steps = 6;
  fcfg.stage2.horizon = 2;
  fcfg.head_hidden = 5;
  fcfg.ablation.no_stage1_features = true;
  FrameworkModel<double> model(Stage1Model<double>{}, fcfg, topo, 8);
  NormalizationStats in;
  in.mean = {2.0};
  in.std_dev = {1.5};
  model.set_input_stats(in);

  const fs::path path = scratch_dir() / "framework_nostage1.json";
  save_framework(model, path.string());

  std::ifstream file(path);
  std::stringstream buf;
  buf << file.rdbuf();
  const nlohmann::json j = nlohmann::json::parse(buf.str());
  CHECK(j.at("stage1_fingerprint").is_null());

  const FrameworkModel<double> back =
      load_framework<double>(path.string(), Stage1Model<double>{}, topo);
  CHECK(digest_params(back.params()) == digest_params(model.params()));
  CHECK(back.input_stats().mean == std::vector<double>{2.0});
  CHECK(back.channels() == 1);
}

TEST_CASE("config JSON round-trips and partial overrides") {
  SUBCASE("backbone") {
    BackboneConfig c;
    c.channels = 7;
    c.layers = 3;
    c.dilations = {1, 2, 4};
    c.dropout = 0.25;
    c.activation = Activation::tanh;
    c.adjacency_mode = AdjacencyMode::static_adaptive;
    c.adaptive_rank = 5;
    c.input_steps = 10;
    c.horizon = 3;
    c.head_hidden = 17;
    c.with_head = false;
    const BackboneConfig back = parse_backbone_config(backbone_config_json(c));
    CHECK(back.channels == 7);
    CHECK(back.layers == 3);
    CHECK(back.dilations == std::vector<std::size_t>{1, 2, 4});
    CHECK(back.dropout == 0.25);
    CHECK(back.activation == Activation::tanh);
    CHECK(back.adjacency_mode == AdjacencyMode::static_adaptive);
    CHECK(back.adaptive_rank == 5);
    CHECK(back.input_steps == 10);
    CHECK(back.horizon == 3);
    CHECK(back.head_hidden == 17);
    CHECK(!back.with_head);

    const BackboneConfig defaults = parse_backbone_config("{}");
    CHECK(defaults.channels == BackboneConfig{}.channels);
    CHECK(defaults.with_head == BackboneConfig{}.with_head);
    const BackboneConfig partial = parse_backbone_config(R"({"channels": 3})");
    CHECK(partial.channels == 3);
    CHECK(partial.layers == BackboneConfig{}.layers);
  }
  SUBCASE("framework") {
    FrameworkConfig c;
    c.sigma = Activation::tanh;
    c.leaky_slope = 0.1;
    c.head_hidden = 33;
    c.stage2.layers = 5;
    c.ablation.no_enhance = true;
    const FrameworkConfig back = parse_framework_config(framework_config_json(c));
    CHECK(back.sigma == Activation::tanh);
    CHECK(back.leaky_slope == 0.1);
    CHECK(back.head_hidden == 33);
    CHECK(back.stage2.layers == 5);
    CHECK(back.ablation.no_enhance);
    CHECK(!back.ablation.no_transform);
    const FrameworkConfig partial =
        parse_framework_config(R"({"ablation": {"no_stage2": true}})");
    CHECK(partial.ablation.no_stage2);
    CHECK(partial.head_hidden == FrameworkConfig{}.head_hidden);
  }
  SUBCASE("train") {
    TrainConfig c;
    c.max_epochs = 77;
    c.patience = 6;
    c.learning_rate = 0.0125;
    c.batch_size = 9;
    c.grad_clip = 2.5;
    c.seed = 123;
    const TrainConfig back = parse_train_config(train_config_json(c));
    CHECK(back.max_epochs == 77);
    CHECK(back.patience == 6);
    CHECK(back.learning_rate == 0.0125);
    CHECK(back.batch_size == 9);
    CHECK(back.grad_clip == 2.5);
    CHECK(back.seed == 123);
    const TrainConfig partial = parse_train_config(R"({"learning_rate": 0.5})");
    CHECK(partial.learning_rate == 0.5);
    CHECK(partial.max_epochs == TrainConfig{}.max_epochs);
  }
  SUBCASE("generator") {
    GeneratorConfig c;
    c.days = 3;
    c.interval = 1800;
    c.start_timestamp = 1000000;
    c.gct_mean = 99.5;
    c.mob_mean = 7.25;
    c.noise_level = 0.0;
    c.propagation = 0.5;
    c.segment_level_overrides = {1.0, 2.0};
    c.emit_records = false;
    const GeneratorConfig back = parse_generator_config(generator_config_json(c));
    CHECK(back.days == 3);
    CHECK(back.interval == 1800);
    CHECK(back.start_timestamp == 1000000);
    CHECK(back.gct_mean == 99.5);
    CHECK(back.mob_mean == 7.25);
    CHECK(back.noise_level == 0.0);
    CHECK(back.propagation == 0.5);
    CHECK(back.segment_level_overrides == std::vector<double>{1.0, 2.0});
    CHECK(!back.emit_records);
  }
  SUBCASE("invalid documents throw") {
    CHECK_THROWS(parse_backbone_config("not json"));
    CHECK_THROWS(parse_train_config("{\"max_epochs\": }"));
    // Documents without recognized keys fall back to the defaults.
    CHECK(parse_train_config("[1,2]").max_epochs == TrainConfig{}.max_epochs);
  }
}

TEST_CASE("descriptive statistics") {
  const FlowSeries s = series_of(FlowKind::mobility, 2, {1, 2, 3, 4, 5, 6});
  const DescriptiveStats d = describe(s);
  CHECK(d.kind == "mobility");
  CHECK(d.entities == 2);
  CHECK(d.steps == 3);
  CHECK(d.samples == 6);
  CHECK(d.interval == 900);
  CHECK(d.grand_mean == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(d.grand_std == doctest::Approx(std::sqrt(17.5 / 6.0)).epsilon(1e-15));
  CHECK(d.max_entity == 1);
  CHECK(d.max_entity_mean == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_THROWS_AS(describe(FlowSeries{}), std::invalid_argument);
}

TEST_CASE("histogram of per-entity means") {
  // Means 0, 1 and 10 over a single step each.
  const FlowSeries s = series_of(FlowKind::gct, 3, {0, 1, 10});
  const HistogramResult h = histogram(s, 2);
  CHECK(h.edges == std::vector<double>{0.0, 5.0, 10.0});
  CHECK(h.counts == std::vector<std::size_t>{2, 1});

  // Adjusted Fisher-Pearson coefficient, written out again by hand.
  const double mean = 11.0 / 3.0;
  double m2 = 0.0, m3 = 0.0;
  for (double v : {0.0, 1.0, 10.0}) {
    m2 += (v - mean) * (v - mean);
    m3 += (v - mean) * (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(m2 / 2.0);
  const double expected = 3.0 / (2.0 * 1.0) * m3 / (sd * sd * sd);
  CHECK(h.skewness_defined);
  CHECK(h.skewness == doctest::Approx(expected).epsilon(1e-12));
  CHECK(h.skewness > 0.0);  // long right tail

  SUBCASE("equal means widen the range and leave skewness undefined") {
    const FlowSeries flat = series_of(FlowKind::gct, 3, {4, 4, 4});
    const HistogramResult hf = histogram(flat, 2);
    CHECK(hf.edges == std::vector<double>{3.5, 4.0, 4.5});
    CHECK(hf.counts == std::vector<std::size_t>{0, 3});
    CHECK(!hf.skewness_defined);
  }
  SUBCASE("fewer than three entities have no skewness") {
    const FlowSeries two = series_of(FlowKind::gct, 2, {1, 5});
    CHECK(!histogram(two, 2).skewness_defined);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(histogram(s, 1), std::invalid_argument);
    CHECK_THROWS_AS(histogram(FlowSeries{}, 4), std::invalid_argument);
  }
}

TEST_CASE("upstream correlation radar") {
  const RoadTopology topo = line_topology();  // r0 -> r1 -> r2
  REQUIRE(topo.upstream_map[2] == std::vector<int>{1});
  REQUIRE(topo.upstream_map[1] == std::vector<int>{0});

  const std::size_t per_day = 96;
  const std::size_t T = 2 * per_day;
  std::vector<double> values(3 * T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double base = std::sin(0.31 * static_cast<double>(t)) + 2.0;
    values[0 * T + t] = 5.0;  // constant, correlation undefined
    values[2 * T + t] = base;
    // Day 0: negative affine image of the focal series; day 1: positive.
    values[1 * T + t] = t < per_day ? -2.0 * base + 9.0 : 3.0 * base + 1.0;
  }
  const FlowSeries mob = series_of(FlowKind::mobility, 3, std::move(values));

  const CorrelationRadar day1 = upstream_correlation(mob, topo, 2, 1, 2);
  CHECK(day1.focal_route == 2);
  CHECK(day1.day_index == 1);
  REQUIRE(day1.entries.size() == 2);
  CHECK(day1.entries[0].route == 1);
  CHECK(day1.entries[0].hops == 1);
  CHECK(day1.entries[0].defined);
  CHECK(day1.entries[0].r == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(day1.entries[1].route == 0);
  CHECK(day1.entries[1].hops == 2);
  CHECK(!day1.entries[1].defined);

  const CorrelationRadar day0 = upstream_correlation(mob, topo, 2, 0, 2);
  CHECK(day0.entries[0].r == doctest::Approx(-1.0).epsilon(1e-12));

  // One hop only.
  CHECK(upstream_correlation(mob, topo, 2, 0, 1).entries.size() == 1);

  SUBCASE("validation") {
    CHECK_THROWS_AS(upstream_correlation(mob, topo, 3, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(upstream_correlation(mob, topo, -1, 0, 2), std::invalid_argument);
    CHECK_THROWS_AS(upstream_correlation(mob, topo, 2, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(upstream_correlation(mob, topo, 2, 0, 0), std::invalid_argument);
    FlowSeries gct = mob;
    gct.kind = FlowKind::gct;
    CHECK_THROWS_AS(upstream_correlation(gct, topo, 2, 0, 2), std::invalid_argument);
    FlowSeries wrong = series_of(FlowKind::mobility, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(upstream_correlation(wrong, topo, 0, 0, 2), std::invalid_argument);
    FlowSeries odd = mob;
    odd.interval = 700;
    CHECK_THROWS_AS(upstream_correlation(odd, topo, 2, 0, 2), std::invalid_argument);
  }
}

TEST_CASE("weekly profile by weekday and slot") {
  const std::int64_t interval = 21600;  // four slots per day
  const std::size_t per_day = 4;
  const std::size_t days = 14;
  const std::int64_t start = 1661644800;  // 2022-08-28, a Sunday
  std::vector<double> values;
  for (std::size_t t = 0; t < days * per_day; ++t) {
    const std::int64_t ts = start + static_cast<std::int64_t>(t) * interval;
    const double dow = static_cast<double>((ts / 86400 + 4) % 7);
    const double slot = static_cast<double>((ts % 86400) / interval);
    values.push_back(dow * 10.0 + slot);
  }
  const FlowSeries s = series_of(FlowKind::mobility, 1, std::move(values), interval, start);
  REQUIRE(static_cast<std::size_t>((start / 86400 + 4) % 7) == 0);

  const Tensor<double> profile = weekly_profile(s, 0);
  REQUIRE(profile.shape == std::vector<std::size_t>{7, per_day});
  for (std::size_t d = 0; d < 7; ++d)
    for (std::size_t slot = 0; slot < per_day; ++slot)
      CHECK(profile.at(d, slot) ==
            doctest::Approx(static_cast<double>(d) * 10.0 + static_cast<double>(slot))
                .epsilon(1e-15));

  SUBCASE("validation") {
    CHECK_THROWS_AS(weekly_profile(s, 1), std::invalid_argument);
    FlowSeries short_series = series_of(FlowKind::mobility, 1, std::vector<double>(24, 1.0),
                                        interval, start);  // six days
    CHECK_THROWS_AS(weekly_profile(short_series, 0), std::invalid_argument);
    FlowSeries odd = s;
    odd.interval = 1000;
    CHECK_THROWS_AS(weekly_profile(odd, 0), std::invalid_argument);
  }
}

TEST_CASE("report renderers") {
  Tensor<double> pred({1, 2, 2}, 0.0), truth({1, 2, 2}, 0.0);
  truth.data = {10.0, 20.0, 30.0, 40.0};
  pred.data = {11.0, 18.0, 33.0, 44.0};
  const MetricsReport report = compute_metrics(pred, truth);

  SUBCASE("metrics csv") {
    const std::string csv = metrics_csv(report);
    CHECK(csv.find("horizon,label,mae,rmse,mape,cells,masked_cells\n") == 0);
    CHECK(csv.find("1,15 min,2.0000,2.2361,10.0000,2,0\n") != std::string::npos);
    CHECK(csv.find("overall,overall,2.5000,") != std::string::npos);
    // Undefined MAPE renders as an empty field.
    truth.data = {0.0, 0.0, 0.0, 0.0};
    const std::string masked = metrics_csv(compute_metrics(pred, truth));
    CHECK(masked.find("1,15 min,") != std::string::npos);
    CHECK(masked.find(",,2,2\n") != std::string::npos);
  }
  SUBCASE("metrics json") {
    const nlohmann::json j = nlohmann::json::parse(metrics_json(report));
    CHECK(j.at("samples") == 1);
    CHECK(j.at("per_horizon").size() == 2);
    CHECK(j.at("per_horizon").at(0).at("label") == "15 min");
    CHECK(j.at("overall").at("mae").get<double>() == doctest::Approx(2.5));
    truth.data = {0.0, 0.0, 0.0, 0.0};
    const nlohmann::json masked = nlohmann::json::parse(metrics_json(compute_metrics(pred, truth)));
    CHECK(masked.at("overall").at("mape").is_null());
  }
  SUBCASE("metrics markdown") {
    const std::string md = metrics_markdown(report);
    CHECK(md.find("| Metric | 15 min | 30 min | Overall |") == 0);
    CHECK(md.find("| MAE |") != std::string::npos);
    CHECK(md.find("| RMSE |") != std::string::npos);
    CHECK(md.find("| MAPE") != std::string::npos);
  }
  SUBCASE("comparison renderers") {
    ComparisonResult result;
    result.runs = 2;
    result.baseline = hand_report(4.0, 8.0, 40.0, true);
    result.framework = hand_report(3.0, 6.0, 30.0, true);
    result.ir = improvement_ratio(result.baseline, result.framework);
    result.baseline_runs = {result.baseline, result.baseline};
    result.framework_runs = {result.framework, result.framework};

    const std::string csv = comparison_csv(result);
    CHECK(csv.find("metric,horizon,label,baseline,framework,ir_percent\n") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + 3 metrics x 2 rows
    CHECK(csv.find("MAE,overall,overall,4.0000,3.0000,25.0000") != std::string::npos);

    const std::string md = comparison_markdown(result);
    CHECK(md.find("w/o framework") != std::string::npos);
    CHECK(md.find("with framework") != std::string::npos);
    CHECK(md.find("IR (%)") != std::string::npos);

    const nlohmann::json j = nlohmann::json::parse(comparison_json(result));
    CHECK(j.at("runs") == 2);
    CHECK(j.at("improvement_ratio").at("overall").at("mae").get<double>() == doctest::Approx(25.0));
    CHECK(j.at("baseline_runs").size() == 2);
  }
  SUBCASE("ablation renderers") {
    AblationRow ok;
    ok.name = "full";
    ok.mean = hand_report(2.0, 4.0, 20.0, true);
    ok.runs = {ok.mean};
    AblationRow bad;
    bad.name = "no_enhance";
    bad.failed = true;
    bad.error = "boom";
    const std::vector<AblationRow> rows = {ok, bad};

    const std::string csv = ablation_csv(rows);
    CHECK(csv.find("variant,mae,rmse,mape,failed\n") == 0);
    CHECK(csv.find("full,2.0000,4.0000,20.0000,false\n") != std::string::npos);
    CHECK(csv.find("no_enhance,,,,true\n") != std::string::npos);

    const std::string md = ablation_markdown(rows);
    CHECK(md.find("| full | 2.0000 | 4.0000 | 20.0000 |") != std::string::npos);
    CHECK(md.find("| no_enhance | failed | failed | failed |") != std::string::npos);

    const nlohmann::json j = nlohmann::json::parse(ablation_json(rows));
    REQUIRE(j.size() == 2);
    CHECK(j.at(0).at("mean").at("overall").at("mae").get<double>() == doctest::Approx(2.0));
    CHECK(j.at(1).at("failed") == true);
    CHECK(j.at(1).at("error") == "boom");
    CHECK(!j.at(1).contains("mean"));
  }
}

TEST_CASE("baseline dataset view pairs route inputs with start segments") {
  const RoadTopology topo = chain_topology();
  GeneratorConfig gcfg;
  gcfg.days = 1;
  const SyntheticData data = generate_synthetic(topo, gcfg, 5);
  const DatasetSplits splits = make_windows(data.gct, data.mob, 6, 2, {0.8, 0.1, 0.1});
  const DatasetSplits base = baseline_dataset(splits, topo);

  REQUIRE(base.train.inputs.shape ==
          std::vector<std::size_t>{splits.train.sample_count(), 4, 6});
  CHECK(base.train.targets.data == splits.train.targets.data);
  CHECK(base.test.inputs.shape[1] == 4);
  CHECK(base.valid.targets.data == splits.valid.targets.data);
  // Route r picks up its start segment's window: route 1 starts at segment 2.
  for (std::size_t s = 0; s < base.train.sample_count(); ++s)
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(base.train.inputs.at(s, 1, t) == splits.train.inputs.at(s, 2, t));
      CHECK(base.train.inputs.at(s, 0, t) == splits.train.inputs.at(s, 0, t));
      CHECK(base.train.inputs.at(s, 3, t) == splits.train.inputs.at(s, 3, t));
    }
}
