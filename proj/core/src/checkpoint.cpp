#include "telto/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace telto {

namespace {

using nlohmann::json;

constexpr int kVersion = 1;

struct Fnv {
  std::uint64_t state = 1469598103934665603ull;
  void feed(const std::string& text) {
    for (unsigned char c : text) {
      state ^= c;
      state *= 1099511628211ull;
    }
  }
};

template <typename T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_finite_or_null(const json& j, double fallback) {
  return j.is_null() ? fallback : j.get<double>();
}

json stats_json(const NormalizationStats& s) {
  json j;
  j["per_entity"] = s.per_entity;
  j["mean"] = s.mean;
  j["std_dev"] = s.std_dev;
  j["clamped"] = s.clamped;
  return j;
}

NormalizationStats stats_from_json(const json& j) {
  NormalizationStats s;
  s.per_entity = j.at("per_entity").get<bool>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.std_dev = j.at("std_dev").get<std::vector<double>>();
  s.clamped = j.at("clamped").get<bool>();
  return s;
}

json log_json(const TrainLog& log) {
  json j;
  j["best_epoch"] = log.best_epoch;
  j["best_valid_mae"] = finite_or_null(log.best_valid_mae);
  j["early_stopped"] = log.early_stopped;
  j["aborted_nan"] = log.aborted_nan;
  json epochs = json::array();
  for (const EpochLog& e : log.epochs) {
    json row;
    row["epoch"] = e.epoch;
    row["train_mae"] = finite_or_null(e.train_mae);
    row["valid_mae"] = finite_or_null(e.valid_mae);
    epochs.push_back(std::move(row));
  }
  j["epochs"] = std::move(epochs);
  return j;
}

TrainLog log_from_json(const json& j) {
  TrainLog log;
  log.best_epoch = j.at("best_epoch").get<std::size_t>();
  log.best_valid_mae =
      from_finite_or_null(j.at("best_valid_mae"), std::numeric_limits<double>::infinity());
  log.early_stopped = j.at("early_stopped").get<bool>();
  log.aborted_nan = j.at("aborted_nan").get<bool>();
  for (const json& row : j.at("epochs")) {
    EpochLog e;
    e.epoch = row.at("epoch").get<std::size_t>();
    e.train_mae = from_finite_or_null(row.at("train_mae"),
                                      std::numeric_limits<double>::quiet_NaN());
    e.valid_mae = from_finite_or_null(row.at("valid_mae"),
                                      std::numeric_limits<double>::quiet_NaN());
    log.epochs.push_back(e);
  }
  return log;
}

template <typename T>
json params_json(const ParamSet<T>& params) {
  json out = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    json p;
    p["name"] = params.names[i];
    p["shape"] = params.values[i].shape;
    json data = json::array();
    for (T v : params.values[i].data) data.push_back(static_cast<double>(v));
    p["data"] = std::move(data);
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
void params_from_json(const json& j, ParamSet<T>& params) {
  if (j.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& p = j.at(i);
    if (p.at("name").get<std::string>() != params.names[i])
      throw std::runtime_error("checkpoint: parameter names do not match the model");
    if (p.at("shape").get<std::vector<std::size_t>>() != params.values[i].shape)
      throw std::runtime_error("checkpoint: parameter shapes do not match the model");
    const json& data = p.at("data");
    if (data.size() != params.values[i].data.size())
      throw std::runtime_error("checkpoint: parameter sizes do not match the model");
    for (std::size_t k = 0; k < data.size(); ++k)
      params.values[i].data[k] = static_cast<T>(data.at(k).get<double>());
  }
}

json backbone_json(const BackboneConfig& c) {
  json j;
  j["channels"] = c.channels;
  j["input_channels"] = c.input_channels;
  j["layers"] = c.layers;
  j["temporal_kernel"] = c.temporal_kernel;
  j["dilations"] = c.dilations;
  j["dropout"] = c.dropout;
  j["activation"] = activation_name(c.activation);
  j["adjacency_mode"] = adjacency_mode_name(c.adjacency_mode);
  j["adaptive_rank"] = c.adaptive_rank;
  j["input_steps"] = c.input_steps;
  j["horizon"] = c.horizon;
  j["head_hidden"] = c.head_hidden;
  j["with_head"] = c.with_head;
  return j;
}

template <typename Field>
void maybe(const json& j, const char* key, Field& field) {
  if (j.contains(key)) field = j.at(key).get<Field>();
}

BackboneConfig backbone_from_json(const json& j) {
  BackboneConfig c;
  maybe(j, "channels", c.channels);
  maybe(j, "input_channels", c.input_channels);
  maybe(j, "layers", c.layers);
  maybe(j, "temporal_kernel", c.temporal_kernel);
  maybe(j, "dilations", c.dilations);
  maybe(j, "dropout", c.dropout);
  if (j.contains("activation")) c.activation = activation_from_name(j.at("activation"));
  if (j.contains("adjacency_mode"))
    c.adjacency_mode = adjacency_mode_from_name(j.at("adjacency_mode"));
  maybe(j, "adaptive_rank", c.adaptive_rank);
  maybe(j, "input_steps", c.input_steps);
  maybe(j, "horizon", c.horizon);
  maybe(j, "head_hidden", c.head_hidden);
  maybe(j, "with_head", c.with_head);
  return c;
}

json framework_json(const FrameworkConfig& c) {
  json j;
  j["sigma"] = activation_name(c.sigma);
  j["leaky_slope"] = c.leaky_slope;
  j["head_hidden"] = c.head_hidden;
  j["stage2"] = backbone_json(c.stage2);
  json a;
  a["no_stage1_features"] = c.ablation.no_stage1_features;
  a["no_transform"] = c.ablation.no_transform;
  a["no_enhance"] = c.ablation.no_enhance;
  a["no_stage2"] = c.ablation.no_stage2;
  j["ablation"] = std::move(a);
  return j;
}

FrameworkConfig framework_from_json(const json& j) {
  FrameworkConfig c;
  if (j.contains("sigma")) c.sigma = activation_from_name(j.at("sigma"));
  maybe(j, "leaky_slope", c.leaky_slope);
  maybe(j, "head_hidden", c.head_hidden);
  if (j.contains("stage2")) c.stage2 = backbone_from_json(j.at("stage2"));
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    maybe(a, "no_stage1_features", c.ablation.no_stage1_features);
    maybe(a, "no_transform", c.ablation.no_transform);
    maybe(a, "no_enhance", c.ablation.no_enhance);
    maybe(a, "no_stage2", c.ablation.no_stage2);
  }
  return c;
}

std::string hash_string(std::uint64_t hash) {
  std::ostringstream out;
  out << std::hex << hash;
  return out.str();
}

std::uint64_t hash_from_string(const std::string& text) {
  return std::stoull(text, nullptr, 16);
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint: " + path + " is not valid JSON: " + e.what());
  }
}

void check_header(const json& j, const std::string& path, const char* kind, const char* dtype) {
  if (!j.contains("version"))
    throw std::runtime_error("checkpoint: " + path + " has no version field");
  if (j.at("version").get<int>() != kVersion)
    throw std::runtime_error("checkpoint: " + path + " has an unsupported version");
  if (j.at("kind").get<std::string>() != kind)
    throw std::runtime_error("checkpoint: " + path + " is not a " + kind + " checkpoint");
  if (j.at("dtype").get<std::string>() != dtype)
    throw std::runtime_error("checkpoint: " + path + " holds " +
                             j.at("dtype").get<std::string>() + " parameters, expected " + dtype);
}

}  // namespace

template <typename T>
std::uint64_t stage1_fingerprint(const Stage1Model<T>& model) {
  Fnv fnv;
  fnv.feed("stage1|");
  fnv.feed(dtype_name<T>());
  fnv.feed("|");
  fnv.feed(backbone_json(model.backbone.config()).dump());
  fnv.feed("|");
  fnv.feed(std::to_string(model.backbone.nodes()));
  fnv.feed("|");
  fnv.feed(hash_string(model.topology_hash));
  fnv.feed("|");
  fnv.feed(stats_json(model.input_stats).dump());
  fnv.feed(stats_json(model.target_stats).dump());
  fnv.feed(params_json(model.backbone.params()).dump());
  return fnv.state;
}

template <typename T>
void save_stage1(const Stage1Model<T>& model, const std::string& path) {
  json j;
  j["version"] = kVersion;
  j["kind"] = "stage1";
  j["dtype"] = dtype_name<T>();
  j["topology_hash"] = hash_string(model.topology_hash);
  j["nodes"] = model.backbone.nodes();
  j["config"] = backbone_json(model.backbone.config());
  j["input_stats"] = stats_json(model.input_stats);
  j["target_stats"] = stats_json(model.target_stats);
  j["params"] = params_json(model.backbone.params());
  j["log"] = log_json(model.log);
  write_file(path, j.dump(2) + "\n");
}

template <typename T>
Stage1Model<T> load_stage1(const std::string& path) {
  const json j = read_json(path);
  check_header(j, path, "stage1", dtype_name<T>());

  Stage1Model<T> model;
  model.topology_hash = hash_from_string(j.at("topology_hash").get<std::string>());
  model.input_stats = stats_from_json(j.at("input_stats"));
  model.target_stats = stats_from_json(j.at("target_stats"));
  model.log = log_from_json(j.at("log"));
  model.backbone = Backbone<T>(backbone_from_json(j.at("config")),
                               j.at("nodes").get<std::size_t>(), 0);
  params_from_json(j.at("params"), model.backbone.params());
  return model;
}

template <typename T>
void save_framework(const FrameworkModel<T>& model, const std::string& path) {
  json j;
  j["version"] = kVersion;
  j["kind"] = "framework";
  j["dtype"] = dtype_name<T>();
  j["topology_hash"] = hash_string(model.topology_hash());
  j["stage1_fingerprint"] = model.config().ablation.no_stage1_features
                                ? json(nullptr)
                                : json(hash_string(stage1_fingerprint(model.stage1())));
  j["config"] = framework_json(model.config());
  j["input_stats"] = stats_json(model.input_stats());
  j["target_stats"] = stats_json(model.target_stats());
  j["params"] = params_json(model.params());
  j["log"] = log_json(model.log);
  write_file(path, j.dump(2) + "\n");
}

template <typename T>
FrameworkModel<T> load_framework(const std::string& path, const Stage1Model<T>& stage1,
                                 const RoadTopology& topology) {
  const json j = read_json(path);
  check_header(j, path, "framework", dtype_name<T>());

  const std::uint64_t stored_hash = hash_from_string(j.at("topology_hash").get<std::string>());
  if (stored_hash != topology_hash(topology))
    throw std::runtime_error("checkpoint: " + path +
                             " was trained on a topology with a different hash");

  const FrameworkConfig config = framework_from_json(j.at("config"));
  if (!config.ablation.no_stage1_features) {
    const json& ref = j.at("stage1_fingerprint");
    if (ref.is_null())
      throw std::runtime_error("checkpoint: " + path + " is missing its stage-1 reference");
    if (hash_from_string(ref.get<std::string>()) != stage1_fingerprint(stage1))
      throw std::runtime_error(
          "checkpoint: the provided stage-1 model does not match the fingerprint in " + path);
  }

  FrameworkModel<T> model(stage1, config, topology, 0);
  params_from_json(j.at("params"), model.params());
  model.set_input_stats(stats_from_json(j.at("input_stats")));
  model.set_target_stats(stats_from_json(j.at("target_stats")));
  model.log = log_from_json(j.at("log"));
  return model;
}

std::string backbone_config_json(const BackboneConfig& config) {
  return backbone_json(config).dump(2) + "\n";
}

BackboneConfig parse_backbone_config(const std::string& text) {
  return backbone_from_json(json::parse(text));
}

std::string framework_config_json(const FrameworkConfig& config) {
  return framework_json(config).dump(2) + "\n";
}

FrameworkConfig parse_framework_config(const std::string& text) {
  return framework_from_json(json::parse(text));
}

std::string train_config_json(const TrainConfig& config) {
  json j;
  j["max_epochs"] = config.max_epochs;
  j["patience"] = config.patience;
  j["learning_rate"] = config.learning_rate;
  j["batch_size"] = config.batch_size;
  j["grad_clip"] = config.grad_clip;
  j["seed"] = config.seed;
  return j.dump(2) + "\n";
}

TrainConfig parse_train_config(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig c;
  maybe(j, "max_epochs", c.max_epochs);
  maybe(j, "patience", c.patience);
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "grad_clip", c.grad_clip);
  maybe(j, "seed", c.seed);
  return c;
}

std::string generator_config_json(const GeneratorConfig& config) {
  json j;
  j["days"] = config.days;
  j["interval"] = config.interval;
  j["start_timestamp"] = config.start_timestamp;
  j["gct_mean"] = config.gct_mean;
  j["mob_mean"] = config.mob_mean;
  j["commute_amplitude"] = config.commute_amplitude;
  j["diurnal_strength"] = config.diurnal_strength;
  j["weekend_factor"] = config.weekend_factor;
  j["noise_level"] = config.noise_level;
  j["propagation"] = config.propagation;
  j["propagation_delay"] = config.propagation_delay;
  j["entity_spread"] = config.entity_spread;
  j["segment_level_overrides"] = config.segment_level_overrides;
  j["route_level_overrides"] = config.route_level_overrides;
  j["emit_records"] = config.emit_records;
  return j.dump(2) + "\n";
}

GeneratorConfig parse_generator_config(const std::string& text) {
  const json j = json::parse(text);
  GeneratorConfig c;
  maybe(j, "days", c.days);
  maybe(j, "interval", c.interval);
  maybe(j, "start_timestamp", c.start_timestamp);
  maybe(j, "gct_mean", c.gct_mean);
  maybe(j, "mob_mean", c.mob_mean);
  maybe(j, "commute_amplitude", c.commute_amplitude);
  maybe(j, "diurnal_strength", c.diurnal_strength);
  maybe(j, "weekend_factor", c.weekend_factor);
  maybe(j, "noise_level", c.noise_level);
  maybe(j, "propagation", c.propagation);
  maybe(j, "propagation_delay", c.propagation_delay);
  maybe(j, "entity_spread", c.entity_spread);
  maybe(j, "segment_level_overrides", c.segment_level_overrides);
  maybe(j, "route_level_overrides", c.route_level_overrides);
  maybe(j, "emit_records", c.emit_records);
  return c;
}

template std::uint64_t stage1_fingerprint<float>(const Stage1Model<float>&);
template std::uint64_t stage1_fingerprint<double>(const Stage1Model<double>&);
template void save_stage1<float>(const Stage1Model<float>&, const std::string&);
template void save_stage1<double>(const Stage1Model<double>&, const std::string&);
template Stage1Model<float> load_stage1<float>(const std::string&);
template Stage1Model<double> load_stage1<double>(const std::string&);
template void save_framework<float>(const FrameworkModel<float>&, const std::string&);
template void save_framework<double>(const FrameworkModel<double>&, const std::string&);
template FrameworkModel<float> load_framework<float>(const std::string&, const Stage1Model<float>&,
                                                     const RoadTopology&);
template FrameworkModel<double> load_framework<double>(const std::string&,
                                                       const Stage1Model<double>&,
                                                       const RoadTopology&);

}  // namespace telto
