#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "telto/analysis.hpp"
#include "telto/checkpoint.hpp"
#include "telto/csv.hpp"
#include "telto/experiments.hpp"
#include "telto/flow.hpp"
#include "telto/framework.hpp"
#include "telto/metrics.hpp"
#include "telto/synthetic.hpp"
#include "telto/topology.hpp"
#include "telto/train.hpp"
#include "telto/windows.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace telto;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
  std::cout << "wrote " << path << "\n";
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string out_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

RoadTopology load_topology_arg(const std::string& path) {
  return path.empty() ? make_demo_topology() : load_topology(path);
}

// ---------------------------------------------------------------------------
// Shared option bundles. Defaults live in the library structs; a --config
// JSON file overrides them, and explicitly passed flags override the file.

struct WindowFlags {
  std::size_t t_in = 8;
  std::size_t t_out = 4;
  double train = 0.7;
  double test = 0.2;
  double valid = 0.1;
};

void add_window_flags(CLI::App* cmd, WindowFlags& w) {
  cmd->add_option("--t-in", w.t_in, "Input window length in steps (default 8)");
  cmd->add_option("--t-out", w.t_out, "Forecast horizon in steps (default 4)");
  cmd->add_option("--train-ratio", w.train, "Chronological train fraction (default 0.7)");
  cmd->add_option("--test-ratio", w.test, "Test fraction following train (default 0.2)");
  cmd->add_option("--valid-ratio", w.valid, "Validation fraction at the end (default 0.1)");
}

void merge_window(const CLI::App* cmd, const json& file, WindowFlags& w) {
  if (file.contains("window")) {
    const json& j = file.at("window");
    if (j.contains("t_in")) w.t_in = j.at("t_in").get<std::size_t>();
    if (j.contains("t_out")) w.t_out = j.at("t_out").get<std::size_t>();
  }
  if (file.contains("split")) {
    const json& j = file.at("split");
    if (j.contains("train")) w.train = j.at("train").get<double>();
    if (j.contains("test")) w.test = j.at("test").get<double>();
    if (j.contains("valid")) w.valid = j.at("valid").get<double>();
  }
  WindowFlags flags = w;  // values after parse; re-apply only the ones passed
  auto keep = [cmd](const std::string& name, auto& dst, const auto& src) {
    if (cmd->count(name)) dst = src;
  };
  (void)flags;
  keep("--t-in", w.t_in, flags.t_in);
  keep("--t-out", w.t_out, flags.t_out);
  keep("--train-ratio", w.train, flags.train);
  keep("--test-ratio", w.test, flags.test);
  keep("--valid-ratio", w.valid, flags.valid);
}

json window_json(const WindowFlags& w) {
  json j;
  j["window"] = {{"t_in", w.t_in}, {"t_out", w.t_out}};
  j["split"] = {{"train", w.train}, {"test", w.test}, {"valid", w.valid}};
  return j;
}

SplitRatios ratios_of(const WindowFlags& w) { return SplitRatios{w.train, w.test, w.valid}; }

struct BackboneFlags {
  BackboneConfig cfg;
  std::string activation = "relu";
  std::string adjacency = "static";
};

void add_backbone_flags(CLI::App* cmd, BackboneFlags& b, const std::string& prefix) {
  const std::string p = "--" + prefix;
  cmd->add_option(p + "channels", b.cfg.channels, "Feature channels C (default 32)");
  cmd->add_option(p + "layers", b.cfg.layers, "Temporal-graph layers (default 4)");
  cmd->add_option(p + "kernel", b.cfg.temporal_kernel, "Temporal kernel width (default 2)");
  cmd->add_option(p + "dilations", b.cfg.dilations,
                  "Per-layer dilations (default cycles 1,2,1,2,...)");
  cmd->add_option(p + "dropout", b.cfg.dropout, "Dropout probability (default 0)");
  cmd->add_option(p + "activation", b.activation, "Layer activation: relu or tanh")
      ->check(CLI::IsMember({"relu", "tanh"}));
  cmd->add_option(p + "adjacency", b.adjacency,
                  "Graph convolution support: static or static+adaptive")
      ->check(CLI::IsMember({"static", "static+adaptive"}));
  cmd->add_option(p + "rank", b.cfg.adaptive_rank,
                  "Adaptive adjacency embedding rank (default 4)");
  cmd->add_option(p + "head-hidden", b.cfg.head_hidden, "Head hidden width (default 256)");
}

void merge_backbone(const CLI::App* cmd, const json& file, const char* key, BackboneFlags& b,
                    const std::string& prefix) {
  BackboneFlags flags = b;
  if (file.contains(key)) b.cfg = parse_backbone_config(file.at(key).dump());
  const std::string p = "--" + prefix;
  auto keep = [cmd, &p](const std::string& name, auto& dst, const auto& src) {
    if (cmd->count(p + name)) dst = src;
  };
  keep("channels", b.cfg.channels, flags.cfg.channels);
  keep("layers", b.cfg.layers, flags.cfg.layers);
  keep("kernel", b.cfg.temporal_kernel, flags.cfg.temporal_kernel);
  keep("dilations", b.cfg.dilations, flags.cfg.dilations);
  keep("dropout", b.cfg.dropout, flags.cfg.dropout);
  keep("rank", b.cfg.adaptive_rank, flags.cfg.adaptive_rank);
  keep("head-hidden", b.cfg.head_hidden, flags.cfg.head_hidden);
  if (cmd->count(p + "activation") || !file.contains(key))
    b.cfg.activation = activation_from_name(b.activation);
  if (cmd->count(p + "adjacency") || !file.contains(key))
    b.cfg.adjacency_mode = adjacency_mode_from_name(b.adjacency);
}

struct FrameworkFlags {
  FrameworkConfig cfg;
  std::string sigma = "relu";
  BackboneFlags stage2;
};

void add_framework_flags(CLI::App* cmd, FrameworkFlags& f, bool with_ablation) {
  cmd->add_option("--sigma", f.sigma, "Transformation/attention nonlinearity: relu or tanh")
      ->check(CLI::IsMember({"relu", "tanh"}));
  cmd->add_option("--slope", f.cfg.leaky_slope,
                  "LeakyReLU slope in attention scoring (default 0.2)");
  cmd->add_option("--head-hidden", f.cfg.head_hidden,
                  "Forecast head hidden width (default 256)");
  f.stage2.cfg = f.cfg.stage2;
  add_backbone_flags(cmd, f.stage2, "stage2-");
  if (with_ablation) {
    cmd->add_flag("--no-stage1-features", f.cfg.ablation.no_stage1_features,
                  "Feed raw flows instead of stage-1 features");
    cmd->add_flag("--no-transform", f.cfg.ablation.no_transform,
                  "Use start-segment features without the directional difference");
    cmd->add_flag("--no-enhance", f.cfg.ablation.no_enhance, "Skip the attention enhancement");
    cmd->add_flag("--no-stage2", f.cfg.ablation.no_stage2, "Skip the secondary network");
  }
}

bool flag_passed(const CLI::App* cmd, const std::string& name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

void merge_framework(const CLI::App* cmd, const json& file, FrameworkFlags& f) {
  FrameworkFlags flags = f;
  if (file.contains("framework")) f.cfg = parse_framework_config(file.at("framework").dump());
  auto keep = [cmd](const std::string& name, auto& dst, const auto& src) {
    if (cmd->count(name)) dst = src;
  };
  keep("--slope", f.cfg.leaky_slope, flags.cfg.leaky_slope);
  keep("--head-hidden", f.cfg.head_hidden, flags.cfg.head_hidden);
  if (cmd->count("--sigma") || !file.contains("framework"))
    f.cfg.sigma = activation_from_name(f.sigma);
  if (flag_passed(cmd, "--no-stage1-features"))
    f.cfg.ablation.no_stage1_features = flags.cfg.ablation.no_stage1_features;
  if (flag_passed(cmd, "--no-transform"))
    f.cfg.ablation.no_transform = flags.cfg.ablation.no_transform;
  if (flag_passed(cmd, "--no-enhance"))
    f.cfg.ablation.no_enhance = flags.cfg.ablation.no_enhance;
  if (flag_passed(cmd, "--no-stage2"))
    f.cfg.ablation.no_stage2 = flags.cfg.ablation.no_stage2;

  // stage2 flag names live under --stage2-*; reuse the backbone merge with a
  // synthetic file object so flag precedence matches. f.stage2 still holds
  // the flag-bound values at this point.
  json sub;
  if (file.contains("framework") && file.at("framework").contains("stage2"))
    sub["stage2"] = file.at("framework").at("stage2");
  merge_backbone(cmd, sub, "stage2", f.stage2, "stage2-");
  f.cfg.stage2 = f.stage2.cfg;
}

struct TrainFlags {
  TrainConfig cfg;
};

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
  cmd->add_option("--epochs", t.cfg.max_epochs, "Training epochs (default 180)");
  cmd->add_option("--patience", t.cfg.patience,
                  "Early-stopping patience on validation MAE, 0 disables (default 20)");
  cmd->add_option("--lr", t.cfg.learning_rate, "Adam learning rate (default 1e-3)");
  cmd->add_option("--batch", t.cfg.batch_size, "Mini-batch size (default 8)");
  cmd->add_option("--clip", t.cfg.grad_clip, "Global gradient norm clip, 0 disables (default 5)");
  cmd->add_option("--seed", t.cfg.seed, "Deterministic seed (default 1)");
}

void merge_train(const CLI::App* cmd, const json& file, TrainFlags& t) {
  TrainFlags flags = t;
  if (file.contains("train")) t.cfg = parse_train_config(file.at("train").dump());
  auto keep = [cmd](const std::string& name, auto& dst, const auto& src) {
    if (cmd->count(name)) dst = src;
  };
  keep("--epochs", t.cfg.max_epochs, flags.cfg.max_epochs);
  keep("--patience", t.cfg.patience, flags.cfg.patience);
  keep("--lr", t.cfg.learning_rate, flags.cfg.learning_rate);
  keep("--batch", t.cfg.batch_size, flags.cfg.batch_size);
  keep("--clip", t.cfg.grad_clip, flags.cfg.grad_clip);
  keep("--seed", t.cfg.seed, flags.cfg.seed);
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config file " + path + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data loading shared by the training and reporting commands.

struct LoadedData {
  RoadTopology topology;
  FlowSeries gct;
  FlowSeries mob;
};

LoadedData load_data_dir(const std::string& data_dir, const std::string& topology_path) {
  LoadedData out;
  const fs::path dir(data_dir);
  const std::string topo =
      topology_path.empty() ? (dir / "topology.json").string() : topology_path;
  out.topology = load_topology(topo);
  out.gct = read_flows_csv((dir / "gct_flows.csv").string(), FlowKind::gct);
  out.mob = read_flows_csv((dir / "mobility_flows.csv").string(), FlowKind::mobility);
  if (out.gct.entity_count != out.topology.segment_count())
    throw std::runtime_error("gct_flows.csv does not cover the topology's segments");
  if (out.mob.entity_count != out.topology.route_count())
    throw std::runtime_error("mobility_flows.csv does not cover the topology's routes");
  return out;
}

std::string checkpoint_dtype(const std::string& path) {
  const json j = json::parse(read_text(path));
  if (!j.contains("dtype")) throw std::runtime_error(path + " has no dtype field");
  return j.at("dtype").get<std::string>();
}

json parse_fragment(const std::string& text) { return json::parse(text); }

void write_run_config(const std::string& dir, json run) {
  run["version"] = 1;
  write_text(out_path(dir, "run_config.json"), run.dump(2) + "\n");
}

void write_report_files(const std::string& dir, const std::string& stem,
                        const std::string& json_text, const std::string& csv_text,
                        const std::string& format, const std::string& markdown_text) {
  write_text(out_path(dir, stem + ".json"), json_text);
  write_text(out_path(dir, stem + ".csv"), csv_text);
  if (format == "markdown") write_text(out_path(dir, stem + ".md"), markdown_text);
}

void print_log_summary(const TrainLog& log) {
  std::cout << "epochs run: " << log.epochs.size();
  if (!log.epochs.empty()) {
    std::cout << ", final train MAE: " << log.epochs.back().train_mae;
    std::cout << ", best epoch: " << log.best_epoch << " (monitored MAE "
              << log.best_valid_mae << ")";
  }
  if (log.early_stopped) std::cout << ", early stopped";
  if (log.aborted_nan) std::cout << ", aborted on non-finite loss";
  std::cout << "\n";
}

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  std::string out_dir;
  std::string topology_path;
  std::string config_path;
  std::uint64_t seed = 1;
  bool show_config = false;
  bool no_records = false;
  GeneratorConfig cfg;
};

int run_generate(const CLI::App* cmd, GenerateOptions& opt) {
  GeneratorConfig flags = opt.cfg;
  const json file = load_config_file(opt.config_path);
  if (file.contains("generator"))
    opt.cfg = parse_generator_config(file.at("generator").dump());
  auto keep = [cmd](const std::string& name, auto& dst, const auto& src) {
    if (cmd->count(name)) dst = src;
  };
  keep("--days", opt.cfg.days, flags.days);
  keep("--interval", opt.cfg.interval, flags.interval);
  keep("--start", opt.cfg.start_timestamp, flags.start_timestamp);
  keep("--gct-mean", opt.cfg.gct_mean, flags.gct_mean);
  keep("--mob-mean", opt.cfg.mob_mean, flags.mob_mean);
  keep("--commute", opt.cfg.commute_amplitude, flags.commute_amplitude);
  keep("--diurnal", opt.cfg.diurnal_strength, flags.diurnal_strength);
  keep("--weekend", opt.cfg.weekend_factor, flags.weekend_factor);
  keep("--noise", opt.cfg.noise_level, flags.noise_level);
  keep("--propagation", opt.cfg.propagation, flags.propagation);
  keep("--delay", opt.cfg.propagation_delay, flags.propagation_delay);
  keep("--spread", opt.cfg.entity_spread, flags.entity_spread);
  if (opt.no_records) opt.cfg.emit_records = false;

  if (opt.show_config) {
    std::cout << generator_config_json(opt.cfg);
    return 0;
  }
  if (opt.out_dir.empty())
    throw CLI::RequiredError("--out is required unless --show-config is given");

  const RoadTopology topology = load_topology_arg(opt.topology_path);
  const SyntheticData data = generate_synthetic(topology, opt.cfg, opt.seed);

  ensure_dir(opt.out_dir);
  save_topology(topology, out_path(opt.out_dir, "topology.json"));
  std::cout << "wrote " << out_path(opt.out_dir, "topology.json") << "\n";
  if (opt.cfg.emit_records) {
    write_records_csv(out_path(opt.out_dir, "records.csv"), data.records);
    std::cout << "wrote " << out_path(opt.out_dir, "records.csv") << " ("
              << data.records.size() << " records)\n";
  }
  write_flows_csv(out_path(opt.out_dir, "gct_flows.csv"), data.gct,
                  entity_labels(topology, FlowKind::gct));
  std::cout << "wrote " << out_path(opt.out_dir, "gct_flows.csv") << "\n";
  write_flows_csv(out_path(opt.out_dir, "mobility_flows.csv"), data.mob,
                  entity_labels(topology, FlowKind::mobility));
  std::cout << "wrote " << out_path(opt.out_dir, "mobility_flows.csv") << "\n";
  std::cout << "steps: " << data.gct.steps() << ", segments: " << topology.segment_count()
            << ", routes: " << topology.route_count() << "\n";

  json run;
  run["command"] = "generate";
  run["seed"] = opt.seed;
  run["topology"] = opt.topology_path.empty() ? "(built-in demo)" : opt.topology_path;
  run["output"] = opt.out_dir;
  run["generator"] = parse_fragment(generator_config_json(opt.cfg));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOptions {
  std::string data_dir, topology_path, config_path, out_dir;
  std::string dtype = "f32";
  WindowFlags window;
  BackboneFlags backbone;
  TrainFlags train;
};

template <typename T>
int pretrain_impl(const PretrainOptions& opt) {
  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const DatasetSplits splits =
      make_windows(data.gct, data.gct, opt.window.t_in, opt.window.t_out, ratios_of(opt.window));
  const Stage1Model<T> model =
      pretrain_stage1<T>(splits, data.topology, opt.backbone.cfg, opt.train.cfg);
  print_log_summary(model.log);

  ensure_dir(opt.out_dir);
  save_stage1(model, out_path(opt.out_dir, "stage1.json"));
  std::cout << "wrote " << out_path(opt.out_dir, "stage1.json") << "\n";

  json run;
  run["command"] = "pretrain";
  run["data"] = opt.data_dir;
  run["topology"] = opt.topology_path.empty() ? "(from data dir)" : opt.topology_path;
  run["output"] = opt.out_dir;
  run["dtype"] = opt.dtype;
  run["seed"] = opt.train.cfg.seed;
  run.update(window_json(opt.window));
  run["backbone"] = parse_fragment(backbone_config_json(opt.backbone.cfg));
  run["train"] = parse_fragment(train_config_json(opt.train.cfg));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

int run_pretrain(const CLI::App* cmd, PretrainOptions& opt) {
  const json file = load_config_file(opt.config_path);
  merge_window(cmd, file, opt.window);
  merge_backbone(cmd, file, "backbone", opt.backbone, "");
  merge_train(cmd, file, opt.train);
  return opt.dtype == "f64" ? pretrain_impl<double>(opt) : pretrain_impl<float>(opt);
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data_dir, topology_path, config_path, out_dir, stage1_path;
  std::string dtype = "f32";
  WindowFlags window;
  FrameworkFlags framework;
  TrainFlags train;
};

template <typename T>
int train_impl(const TrainOptions& opt) {
  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const DatasetSplits splits =
      make_windows(data.gct, data.mob, opt.window.t_in, opt.window.t_out, ratios_of(opt.window));

  Stage1Model<T> stage1;
  if (!opt.stage1_path.empty()) {
    stage1 = load_stage1<T>(opt.stage1_path);
  } else if (!opt.framework.cfg.ablation.no_stage1_features) {
    throw std::runtime_error("--stage1 is required unless --no-stage1-features is set");
  }

  const FrameworkModel<T> model =
      train_framework<T>(stage1, splits, data.topology, opt.framework.cfg, opt.train.cfg);
  print_log_summary(model.log);

  ensure_dir(opt.out_dir);
  save_framework(model, out_path(opt.out_dir, "framework.json"));
  std::cout << "wrote " << out_path(opt.out_dir, "framework.json") << "\n";

  json run;
  run["command"] = "train";
  run["data"] = opt.data_dir;
  run["topology"] = opt.topology_path.empty() ? "(from data dir)" : opt.topology_path;
  run["stage1"] = opt.stage1_path;
  run["output"] = opt.out_dir;
  run["dtype"] = opt.dtype;
  run["seed"] = opt.train.cfg.seed;
  run.update(window_json(opt.window));
  run["framework"] = parse_fragment(framework_config_json(model.config()));
  run["train"] = parse_fragment(train_config_json(opt.train.cfg));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

int run_train(const CLI::App* cmd, TrainOptions& opt) {
  const json file = load_config_file(opt.config_path);
  merge_window(cmd, file, opt.window);
  merge_framework(cmd, file, opt.framework);
  merge_train(cmd, file, opt.train);
  return opt.dtype == "f64" ? train_impl<double>(opt) : train_impl<float>(opt);
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::string data_dir, topology_path, out_dir, checkpoint_path, stage1_path;
  std::string format = "json";
  WindowFlags window;
};

template <typename T>
int evaluate_impl(const EvaluateOptions& opt) {
  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const DatasetSplits splits =
      make_windows(data.gct, data.mob, opt.window.t_in, opt.window.t_out, ratios_of(opt.window));

  Stage1Model<T> stage1;
  if (!opt.stage1_path.empty()) stage1 = load_stage1<T>(opt.stage1_path);
  const FrameworkModel<T> model =
      load_framework<T>(opt.checkpoint_path, stage1, data.topology);

  const Tensor<double> pred = framework_predict_all(model, splits.test.inputs);
  const MetricsReport report = compute_metrics(pred, splits.test.targets, data.mob.interval);

  ensure_dir(opt.out_dir);
  write_report_files(opt.out_dir, "metrics", metrics_json(report), metrics_csv(report),
                     opt.format, metrics_markdown(report));
  std::cout << "test MAE (mean over horizons): " << report.overall.mae << "\n";

  json run;
  run["command"] = "evaluate";
  run["data"] = opt.data_dir;
  run["checkpoint"] = opt.checkpoint_path;
  run["stage1"] = opt.stage1_path;
  run["output"] = opt.out_dir;
  run["format"] = opt.format;
  run.update(window_json(opt.window));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

int run_evaluate(const CLI::App* cmd, EvaluateOptions& opt) {
  merge_window(cmd, json::object(), opt.window);
  const std::string dtype = checkpoint_dtype(opt.checkpoint_path);
  return dtype == "f64" ? evaluate_impl<double>(opt) : evaluate_impl<float>(opt);
}

// ---------------------------------------------------------------------------
// compare / ablate

struct ExperimentOptions {
  std::string data_dir, topology_path, config_path, out_dir, stage1_path;
  std::string dtype = "f32";
  std::string format = "json";
  std::size_t runs = 5;
  WindowFlags window;
  BackboneFlags backbone;
  FrameworkFlags framework;
  TrainFlags train;
  bool backbone_from_stage1 = true;
};

template <typename T>
ExperimentConfig make_experiment_config(const ExperimentOptions& opt,
                                        const Stage1Model<T>& stage1,
                                        std::int64_t interval) {
  ExperimentConfig cfg;
  cfg.backbone = opt.backbone_from_stage1 ? stage1.backbone.config() : opt.backbone.cfg;
  cfg.backbone.input_channels = 1;
  cfg.framework = opt.framework.cfg;
  cfg.train = opt.train.cfg;
  cfg.runs = opt.runs;
  cfg.base_seed = opt.train.cfg.seed;
  cfg.interval = interval;
  return cfg;
}

template <typename T>
int compare_impl(const ExperimentOptions& opt) {
  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const DatasetSplits splits =
      make_windows(data.gct, data.mob, opt.window.t_in, opt.window.t_out, ratios_of(opt.window));
  const Stage1Model<T> stage1 = load_stage1<T>(opt.stage1_path);
  const ExperimentConfig cfg = make_experiment_config(opt, stage1, data.mob.interval);

  const ComparisonResult result = run_comparison<T>(stage1, splits, data.topology, cfg);
  ensure_dir(opt.out_dir);
  write_report_files(opt.out_dir, "comparison", comparison_json(result),
                     comparison_csv(result), opt.format, comparison_markdown(result));
  if (result.ir.overall.mae.defined)
    std::cout << "overall MAE improvement ratio: " << result.ir.overall.mae.value << "%\n";

  json run;
  run["command"] = "compare";
  run["data"] = opt.data_dir;
  run["stage1"] = opt.stage1_path;
  run["output"] = opt.out_dir;
  run["dtype"] = opt.dtype;
  run["runs"] = opt.runs;
  run["seed"] = opt.train.cfg.seed;
  run["format"] = opt.format;
  run.update(window_json(opt.window));
  run["backbone"] = parse_fragment(backbone_config_json(cfg.backbone));
  run["framework"] = parse_fragment(framework_config_json(cfg.framework));
  run["train"] = parse_fragment(train_config_json(cfg.train));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

template <typename T>
int ablate_impl(const ExperimentOptions& opt) {
  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const DatasetSplits splits =
      make_windows(data.gct, data.mob, opt.window.t_in, opt.window.t_out, ratios_of(opt.window));
  const Stage1Model<T> stage1 = load_stage1<T>(opt.stage1_path);
  const ExperimentConfig cfg = make_experiment_config(opt, stage1, data.mob.interval);

  const std::vector<AblationRow> rows = run_ablations<T>(stage1, splits, data.topology, cfg);
  ensure_dir(opt.out_dir);
  write_report_files(opt.out_dir, "ablation", ablation_json(rows), ablation_csv(rows),
                     opt.format, ablation_markdown(rows));
  for (const AblationRow& row : rows) {
    if (row.failed)
      std::cout << row.name << ": failed (" << row.error << ")\n";
    else
      std::cout << row.name << ": MAE " << row.mean.overall.mae << "\n";
  }

  json run;
  run["command"] = "ablate";
  run["data"] = opt.data_dir;
  run["stage1"] = opt.stage1_path;
  run["output"] = opt.out_dir;
  run["dtype"] = opt.dtype;
  run["runs"] = opt.runs;
  run["seed"] = opt.train.cfg.seed;
  run["format"] = opt.format;
  run.update(window_json(opt.window));
  run["backbone"] = parse_fragment(backbone_config_json(cfg.backbone));
  run["framework"] = parse_fragment(framework_config_json(cfg.framework));
  run["train"] = parse_fragment(train_config_json(cfg.train));
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

int run_experiment(const CLI::App* cmd, ExperimentOptions& opt, bool ablate) {
  const json file = load_config_file(opt.config_path);
  merge_window(cmd, file, opt.window);
  merge_backbone(cmd, file, "backbone", opt.backbone, "baseline-");
  merge_framework(cmd, file, opt.framework);
  merge_train(cmd, file, opt.train);
  opt.backbone_from_stage1 =
      !(cmd->count("--baseline-channels") || cmd->count("--baseline-layers") ||
        cmd->count("--baseline-kernel") || cmd->count("--baseline-dilations") ||
        cmd->count("--baseline-dropout") || cmd->count("--baseline-activation") ||
        cmd->count("--baseline-adjacency") || cmd->count("--baseline-rank") ||
        file.contains("backbone"));
  if (ablate)
    return opt.dtype == "f64" ? ablate_impl<double>(opt) : ablate_impl<float>(opt);
  return opt.dtype == "f64" ? compare_impl<double>(opt) : compare_impl<float>(opt);
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::string data_dir, topology_path, out_dir;
  std::string flow = "mobility";
  bool stats = false;
  std::size_t hist_bins = 0;
  int radar_route = -1;
  std::size_t day = 0;
  int weekly_entity = -1;
};

json describe_json(const DescriptiveStats& d, const std::string& max_label) {
  json j;
  j["kind"] = d.kind;
  j["entities"] = d.entities;
  j["steps"] = d.steps;
  j["samples"] = d.samples;
  j["interval"] = d.interval;
  j["grand_mean"] = d.grand_mean;
  j["grand_std"] = d.grand_std;
  j["max_entity_mean"] = d.max_entity_mean;
  j["max_entity"] = d.max_entity;
  j["max_entity_label"] = max_label;
  return j;
}

int run_analyze(const CLI::App* cmd, AnalyzeOptions& opt) {
  const int modes = (opt.stats ? 1 : 0) + (opt.hist_bins > 0 ? 1 : 0) +
                    (cmd->count("--radar") ? 1 : 0) + (cmd->count("--weekly") ? 1 : 0);
  if (modes != 1)
    throw CLI::ValidationError(
        "analyze", "pass exactly one of --stats, --hist, --radar <route>, --weekly <entity>");

  const LoadedData data = load_data_dir(opt.data_dir, opt.topology_path);
  const FlowSeries& series = opt.flow == "gct" ? data.gct : data.mob;
  const std::vector<std::string> labels =
      entity_labels(data.topology, opt.flow == "gct" ? FlowKind::gct : FlowKind::mobility);
  ensure_dir(opt.out_dir);

  json run;
  run["command"] = "analyze";
  run["data"] = opt.data_dir;
  run["output"] = opt.out_dir;
  run["flow"] = opt.flow;

  if (opt.stats) {
    const DescriptiveStats g = describe(data.gct);
    const DescriptiveStats m = describe(data.mob);
    json j;
    j["gct"] = describe_json(g, entity_labels(data.topology, FlowKind::gct)[g.max_entity]);
    j["mobility"] =
        describe_json(m, entity_labels(data.topology, FlowKind::mobility)[m.max_entity]);
    write_text(out_path(opt.out_dir, "stats.json"), j.dump(2) + "\n");
    run["mode"] = "stats";
  } else if (opt.hist_bins > 0) {
    const HistogramResult h = histogram(series, opt.hist_bins);
    json j;
    j["edges"] = h.edges;
    j["counts"] = h.counts;
    j["skewness"] = h.skewness_defined ? json(h.skewness) : json(nullptr);
    write_text(out_path(opt.out_dir, "hist.json"), j.dump(2) + "\n");
    std::vector<std::vector<double>> rows;
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      rows.push_back({h.edges[b], h.edges[b + 1], static_cast<double>(h.counts[b])});
    write_table_csv(out_path(opt.out_dir, "hist.csv"), {"bin_lo", "bin_hi", "count"}, rows);
    std::cout << "wrote " << out_path(opt.out_dir, "hist.csv") << "\n";
    run["mode"] = "hist";
    run["bins"] = opt.hist_bins;
  } else if (cmd->count("--radar")) {
    const CorrelationRadar radar =
        upstream_correlation(data.mob, data.topology, opt.radar_route, opt.day);
    json j;
    j["focal_route"] = radar.focal_route;
    j["focal_label"] = entity_labels(data.topology, FlowKind::mobility)[static_cast<std::size_t>(
        radar.focal_route)];
    j["day_index"] = radar.day_index;
    json entries = json::array();
    std::vector<std::vector<double>> rows;
    for (const CorrelationEntry& e : radar.entries) {
      json row;
      row["route"] = e.route;
      row["label"] =
          entity_labels(data.topology, FlowKind::mobility)[static_cast<std::size_t>(e.route)];
      row["hops"] = e.hops;
      row["r"] = e.defined ? json(e.r) : json(nullptr);
      entries.push_back(std::move(row));
      rows.push_back({static_cast<double>(e.route), static_cast<double>(e.hops),
                      e.defined ? e.r : std::numeric_limits<double>::quiet_NaN()});
    }
    j["entries"] = std::move(entries);
    write_text(out_path(opt.out_dir, "radar.json"), j.dump(2) + "\n");
    write_table_csv(out_path(opt.out_dir, "radar.csv"), {"route", "hops", "r"}, rows);
    std::cout << "wrote " << out_path(opt.out_dir, "radar.csv") << "\n";
    run["mode"] = "radar";
    run["route"] = opt.radar_route;
    run["day"] = opt.day;
  } else {
    if (opt.weekly_entity < 0 ||
        static_cast<std::size_t>(opt.weekly_entity) >= series.entity_count)
      throw std::runtime_error("--weekly entity out of range");
    const Tensor<double> profile =
        weekly_profile(series, static_cast<std::size_t>(opt.weekly_entity));
    std::vector<std::string> header{"weekday"};
    const std::size_t per_day = profile.shape[1];
    for (std::size_t s = 0; s < per_day; ++s) {
      const std::int64_t sec = static_cast<std::int64_t>(s) * series.interval;
      char buf[16];
      std::snprintf(buf, sizeof buf, "%02d:%02d", static_cast<int>(sec / 3600),
                    static_cast<int>(sec % 3600 / 60));
      header.push_back(buf);
    }
    std::vector<std::vector<double>> rows;
    for (std::size_t d = 0; d < 7; ++d) {
      std::vector<double> row{static_cast<double>(d)};
      for (std::size_t s = 0; s < per_day; ++s) row.push_back(profile.at(d, s));
      rows.push_back(std::move(row));
    }
    write_table_csv(out_path(opt.out_dir, "weekly.csv"), header, rows);
    std::cout << "wrote " << out_path(opt.out_dir, "weekly.csv") << "\n";
    run["mode"] = "weekly";
    run["entity"] = opt.weekly_entity;
    run["entity_label"] = labels[static_cast<std::size_t>(opt.weekly_entity)];
  }

  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictOptions {
  std::string checkpoint_path, stage1_path, flows_path, topology_path, out_dir;
};

template <typename T>
int predict_impl(const PredictOptions& opt) {
  const RoadTopology topology = load_topology(opt.topology_path);
  Stage1Model<T> stage1;
  if (!opt.stage1_path.empty()) stage1 = load_stage1<T>(opt.stage1_path);
  const FrameworkModel<T> model = load_framework<T>(opt.checkpoint_path, stage1, topology);

  const FlowSeries gct = read_flows_csv(opt.flows_path, FlowKind::gct);
  if (gct.entity_count != topology.segment_count())
    throw std::runtime_error("flows CSV does not cover the topology's segments");
  const std::size_t t_in = model.feature_steps();
  if (gct.steps() < t_in)
    throw std::runtime_error("flows CSV is shorter than one input window (" +
                             std::to_string(t_in) + " steps)");

  const std::size_t windows = gct.steps() - t_in + 1;
  const std::size_t horizon = model.horizon();
  std::vector<std::string> header{"forecast_timestamp", "horizon_step"};
  for (const std::string& label : entity_labels(topology, FlowKind::mobility))
    header.push_back(label);

  std::vector<std::vector<double>> rows;
  rows.reserve(windows * horizon);
  for (std::size_t w = 0; w < windows; ++w) {
    Tensor<T> x({topology.segment_count(), t_in}, T(0));
    for (std::size_t e = 0; e < topology.segment_count(); ++e)
      for (std::size_t t = 0; t < t_in; ++t)
        x.at(e, t) = static_cast<T>(gct.values.at(e, w + t));
    const Tensor<T> y = model.forward(x);
    for (std::size_t h = 0; h < horizon; ++h) {
      std::vector<double> row;
      row.reserve(2 + y.shape[0]);
      row.push_back(static_cast<double>(
          gct.start_timestamp +
          static_cast<std::int64_t>(w + t_in + h) * gct.interval));
      row.push_back(static_cast<double>(h + 1));
      for (std::size_t r = 0; r < y.shape[0]; ++r)
        row.push_back(static_cast<double>(y.at(r, h)));
      rows.push_back(std::move(row));
    }
  }

  ensure_dir(opt.out_dir);
  write_table_csv(out_path(opt.out_dir, "predictions.csv"), header, rows);
  std::cout << "wrote " << out_path(opt.out_dir, "predictions.csv") << " (" << windows
            << " windows x " << horizon << " horizons)\n";

  json run;
  run["command"] = "predict";
  run["checkpoint"] = opt.checkpoint_path;
  run["stage1"] = opt.stage1_path;
  run["flows"] = opt.flows_path;
  run["topology"] = opt.topology_path;
  run["output"] = opt.out_dir;
  write_run_config(opt.out_dir, std::move(run));
  return 0;
}

int run_predict(PredictOptions& opt) {
  const std::string dtype = checkpoint_dtype(opt.checkpoint_path);
  return dtype == "f64" ? predict_impl<double>(opt) : predict_impl<float>(opt);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Route-level mobility flow forecasting from cellular traffic"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "telto 0.1.0");

  GenerateOptions gen;
  CLI::App* cmd_gen = app.add_subcommand("generate", "Simulate a synthetic dataset");
  cmd_gen->add_option("-o,--out", gen.out_dir, "Output directory");
  cmd_gen->add_option("--topology", gen.topology_path,
                      "Topology JSON (default: built-in demo network)");
  cmd_gen->add_option("--config", gen.config_path, "JSON config file; flags override it");
  cmd_gen->add_option("--seed", gen.seed, "Deterministic seed (default 1)");
  cmd_gen->add_flag("--show-config", gen.show_config,
                    "Print the resolved generator config and exit");
  cmd_gen->add_option("--days", gen.cfg.days, "Days to simulate (default 31)");
  cmd_gen->add_option("--interval", gen.cfg.interval, "Aggregation interval seconds (default 900)");
  cmd_gen->add_option("--start", gen.cfg.start_timestamp,
                      "Epoch start timestamp (default a Sunday midnight)");
  cmd_gen->add_option("--gct-mean", gen.cfg.gct_mean, "Target grand mean GCT flow (default 159.9)");
  cmd_gen->add_option("--mob-mean", gen.cfg.mob_mean,
                      "Target grand mean mobility flow (default 12.9)");
  cmd_gen->add_option("--commute", gen.cfg.commute_amplitude,
                      "Commute bump amplitude (default 1)");
  cmd_gen->add_option("--diurnal", gen.cfg.diurnal_strength, "Day/night swing (default 1)");
  cmd_gen->add_option("--weekend", gen.cfg.weekend_factor,
                      "Weekend level vs weekdays (default 0.6)");
  cmd_gen->add_option("--noise", gen.cfg.noise_level,
                      "Rate jitter; 0 gives deterministic counts (default 0.1)");
  cmd_gen->add_option("--propagation", gen.cfg.propagation,
                      "Probability of continuing downstream (default 0.55)");
  cmd_gen->add_option("--delay", gen.cfg.propagation_delay,
                      "Max dwell between legs, seconds (default 450)");
  cmd_gen->add_option("--spread", gen.cfg.entity_spread,
                      "Lognormal sigma of per-entity levels (default 0.6)");
  cmd_gen->add_flag("--no-records", gen.no_records, "Skip the raw record list, keep flows");

  PretrainOptions pre;
  CLI::App* cmd_pre = app.add_subcommand("pretrain", "Train the stage-1 flow encoder");
  cmd_pre->add_option("--data", pre.data_dir, "Dataset directory from `generate`")->required();
  cmd_pre->add_option("--topology", pre.topology_path, "Topology JSON (default from data dir)");
  cmd_pre->add_option("--config", pre.config_path, "JSON config file; flags override it");
  cmd_pre->add_option("-o,--out", pre.out_dir, "Output directory")->required();
  cmd_pre->add_option("--dtype", pre.dtype, "Parameter precision (default f32)")
      ->check(CLI::IsMember({"f32", "f64"}));
  add_window_flags(cmd_pre, pre.window);
  add_backbone_flags(cmd_pre, pre.backbone, "");
  add_train_flags(cmd_pre, pre.train);

  TrainOptions trn;
  CLI::App* cmd_trn = app.add_subcommand("train", "Train the route-level framework (stage 2)");
  cmd_trn->add_option("--data", trn.data_dir, "Dataset directory from `generate`")->required();
  cmd_trn->add_option("--topology", trn.topology_path, "Topology JSON (default from data dir)");
  cmd_trn->add_option("--stage1", trn.stage1_path, "Stage-1 checkpoint from `pretrain`");
  cmd_trn->add_option("--config", trn.config_path, "JSON config file; flags override it");
  cmd_trn->add_option("-o,--out", trn.out_dir, "Output directory")->required();
  cmd_trn->add_option("--dtype", trn.dtype, "Parameter precision (default f32)")
      ->check(CLI::IsMember({"f32", "f64"}));
  add_window_flags(cmd_trn, trn.window);
  add_framework_flags(cmd_trn, trn.framework, true);
  add_train_flags(cmd_trn, trn.train);

  EvaluateOptions ev;
  CLI::App* cmd_ev = app.add_subcommand("evaluate", "Score a trained framework on the test split");
  cmd_ev->add_option("--data", ev.data_dir, "Dataset directory")->required();
  cmd_ev->add_option("--topology", ev.topology_path, "Topology JSON (default from data dir)");
  cmd_ev->add_option("--checkpoint", ev.checkpoint_path, "Framework checkpoint")->required();
  cmd_ev->add_option("--stage1", ev.stage1_path, "Stage-1 checkpoint the framework references");
  cmd_ev->add_option("-o,--out", ev.out_dir, "Output directory")->required();
  cmd_ev->add_option("--format", ev.format, "Report format: json (with csv) or markdown extra")
      ->check(CLI::IsMember({"json", "markdown"}));
  add_window_flags(cmd_ev, ev.window);

  ExperimentOptions cmp;
  CLI::App* cmd_cmp = app.add_subcommand(
      "compare", "Train backbone-only and framework arms with matched budgets");
  cmd_cmp->add_option("--data", cmp.data_dir, "Dataset directory")->required();
  cmd_cmp->add_option("--topology", cmp.topology_path, "Topology JSON (default from data dir)");
  cmd_cmp->add_option("--stage1", cmp.stage1_path, "Stage-1 checkpoint")->required();
  cmd_cmp->add_option("--config", cmp.config_path, "JSON config file; flags override it");
  cmd_cmp->add_option("-o,--out", cmp.out_dir, "Output directory")->required();
  cmd_cmp->add_option("--dtype", cmp.dtype, "Parameter precision (default f32)")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd_cmp->add_option("--runs", cmp.runs, "Repetitions with matched seeds (default 5)");
  cmd_cmp->add_option("--format", cmp.format, "Report format: json (with csv) or markdown extra")
      ->check(CLI::IsMember({"json", "markdown"}));
  add_window_flags(cmd_cmp, cmp.window);
  add_backbone_flags(cmd_cmp, cmp.backbone, "baseline-");
  add_framework_flags(cmd_cmp, cmp.framework, false);
  add_train_flags(cmd_cmp, cmp.train);

  ExperimentOptions abl;
  CLI::App* cmd_abl =
      app.add_subcommand("ablate", "Train the full framework and its four ablations");
  cmd_abl->add_option("--data", abl.data_dir, "Dataset directory")->required();
  cmd_abl->add_option("--topology", abl.topology_path, "Topology JSON (default from data dir)");
  cmd_abl->add_option("--stage1", abl.stage1_path, "Stage-1 checkpoint")->required();
  cmd_abl->add_option("--config", abl.config_path, "JSON config file; flags override it");
  cmd_abl->add_option("-o,--out", abl.out_dir, "Output directory")->required();
  cmd_abl->add_option("--dtype", abl.dtype, "Parameter precision (default f32)")
      ->check(CLI::IsMember({"f32", "f64"}));
  cmd_abl->add_option("--runs", abl.runs, "Repetitions with matched seeds (default 5)");
  cmd_abl->add_option("--format", abl.format, "Report format: json (with csv) or markdown extra")
      ->check(CLI::IsMember({"json", "markdown"}));
  add_window_flags(cmd_abl, abl.window);
  add_backbone_flags(cmd_abl, abl.backbone, "baseline-");
  add_framework_flags(cmd_abl, abl.framework, false);
  add_train_flags(cmd_abl, abl.train);

  AnalyzeOptions ana;
  CLI::App* cmd_ana = app.add_subcommand("analyze", "Descriptive statistics and plots data");
  cmd_ana->add_option("--data", ana.data_dir, "Dataset directory")->required();
  cmd_ana->add_option("--topology", ana.topology_path, "Topology JSON (default from data dir)");
  cmd_ana->add_option("-o,--out", ana.out_dir, "Output directory")->required();
  cmd_ana->add_option("--flow", ana.flow, "Series for --hist/--weekly: gct or mobility")
      ->check(CLI::IsMember({"gct", "mobility"}));
  cmd_ana->add_flag("--stats", ana.stats, "Grand/per-entity summary of both series");
  cmd_ana->add_option("--hist", ana.hist_bins, "Histogram of per-entity means with N bins");
  cmd_ana->add_option("--radar", ana.radar_route,
                      "Correlation of a focal route with its upstream routes");
  cmd_ana->add_option("--day", ana.day, "Day index for --radar (default 0)");
  cmd_ana->add_option("--weekly", ana.weekly_entity, "Per-weekday profile of one entity");

  PredictOptions prd;
  CLI::App* cmd_prd =
      app.add_subcommand("predict", "Forecast mobility flows from a GCT flows CSV");
  cmd_prd->add_option("--checkpoint", prd.checkpoint_path, "Framework checkpoint")->required();
  cmd_prd->add_option("--stage1", prd.stage1_path, "Stage-1 checkpoint the framework references");
  cmd_prd->add_option("--flows", prd.flows_path, "GCT flows CSV")->required();
  cmd_prd->add_option("--topology", prd.topology_path, "Topology JSON")->required();
  cmd_prd->add_option("-o,--out", prd.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_gen->parsed()) return run_generate(cmd_gen, gen);
    if (cmd_pre->parsed()) return run_pretrain(cmd_pre, pre);
    if (cmd_trn->parsed()) return run_train(cmd_trn, trn);
    if (cmd_ev->parsed()) return run_evaluate(cmd_ev, ev);
    if (cmd_cmp->parsed()) return run_experiment(cmd_cmp, cmp, false);
    if (cmd_abl->parsed()) return run_experiment(cmd_abl, abl, true);
    if (cmd_ana->parsed()) return run_analyze(cmd_ana, ana);
    if (cmd_prd->parsed()) return run_predict(prd);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
