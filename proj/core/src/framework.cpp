#include "telto/framework.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace telto {

namespace {

std::vector<std::size_t> route_starts(const RoadTopology& topology) {
  std::vector<std::size_t> out;
  out.reserve(topology.routes.size());
  for (const Route& r : topology.routes) out.push_back(static_cast<std::size_t>(r.start_segment));
  return out;
}

std::vector<std::size_t> route_ends(const RoadTopology& topology) {
  std::vector<std::size_t> out;
  out.reserve(topology.routes.size());
  for (const Route& r : topology.routes) out.push_back(static_cast<std::size_t>(r.end_segment));
  return out;
}

// Attention source sets: the route itself first, then its upstream routes.
std::vector<std::vector<std::size_t>> attention_sets(const RoadTopology& topology) {
  std::vector<std::vector<std::size_t>> sets(topology.route_count());
  for (std::size_t r = 0; r < sets.size(); ++r) {
    sets[r].push_back(r);
    for (int q : topology.upstream_map[r]) sets[r].push_back(static_cast<std::size_t>(q));
  }
  return sets;
}

template <typename T>
void check_segment_features(const Tensor<T>& features, std::size_t segments) {
  if (features.shape.size() != 3 || features.shape[0] != segments)
    throw std::invalid_argument("transform: features must be [N,C,D] over the topology segments");
}

template <typename T>
ad::NodeId transform_on_tape(ad::Tape<T>& tape, ad::NodeId features,
                             const std::vector<std::size_t>& starts,
                             const std::vector<std::size_t>& ends) {
  return tape.sub(tape.gather_rows(features, ends), tape.gather_rows(features, starts));
}

template <typename T>
ad::NodeId enhance_on_tape(ad::Tape<T>& tape, ad::NodeId route_features,
                           const std::vector<ad::NodeId>& w_ids,
                           const std::vector<ad::NodeId>& a_ids,
                           const std::vector<std::vector<std::size_t>>& sets, T slope,
                           Activation sigma, std::size_t dim, AttentionWeights<T>* attention) {
  const std::size_t channels = w_ids.size();
  if (attention) attention->assign(channels, {});
  std::vector<ad::NodeId> outs;
  outs.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const ad::NodeId xc = tape.slice_channel(route_features, c);
    const ad::NodeId proj = tape.matmul_nt(xc, w_ids[c]);  // row r is W_c h_r
    const ad::NodeId a1 = tape.reshape(tape.gather_rows(a_ids[c], {0}), {dim});
    const ad::NodeId a2 = tape.reshape(tape.gather_rows(a_ids[c], {1}), {dim});
    const ad::NodeId self_score = tape.matvec(proj, a1);
    const ad::NodeId neigh_score = tape.matvec(proj, a2);
    std::vector<std::vector<T>>* weights = attention ? &(*attention)[c] : nullptr;
    const ad::NodeId mixed =
        tape.neighbor_attention(proj, self_score, neigh_score, sets, slope, weights);
    outs.push_back(tape.activation(mixed, sigma));
  }
  return tape.stack_channels(outs);
}

}  // namespace

template <typename T>
Tensor<T> transform_raw(const Tensor<T>& features, const RoadTopology& topology) {
  check_segment_features(features, topology.segment_count());
  ad::Tape<T> tape;
  const ad::NodeId h = tape.leaf(features);
  return tape.value(transform_on_tape(tape, h, route_starts(topology), route_ends(topology)));
}

template <typename T>
Tensor<T> transform(const Tensor<T>& features, const RoadTopology& topology, Activation sigma) {
  check_segment_features(features, topology.segment_count());
  ad::Tape<T> tape;
  const ad::NodeId h = tape.leaf(features);
  const ad::NodeId raw = transform_on_tape(tape, h, route_starts(topology), route_ends(topology));
  return tape.value(tape.activation(raw, sigma));
}

template <typename T>
MgatParams<T>::MgatParams(std::size_t channels_in, std::size_t dim_in, T slope, std::uint64_t seed)
    : channels(channels_in), dim(dim_in), leaky_slope(slope) {
  if (channels == 0 || dim == 0) throw std::invalid_argument("mgat: empty parameter shape");
  Rng rng(seed);
  const double w_lim = std::sqrt(6.0 / static_cast<double>(dim + dim));
  const double a_lim = std::sqrt(6.0 / static_cast<double>(2 * dim + 1));
  for (std::size_t c = 0; c < channels; ++c) {
    Tensor<T> wc({dim, dim}, T(0));
    for (T& v : wc.data) v = static_cast<T>(rng.uniform(-w_lim, w_lim));
    w.push_back(std::move(wc));
    Tensor<T> ac({2, dim}, T(0));
    for (T& v : ac.data) v = static_cast<T>(rng.uniform(-a_lim, a_lim));
    a.push_back(std::move(ac));
  }
}

template <typename T>
Tensor<T> mgat_enhance(const Tensor<T>& route_features, const RoadTopology& topology,
                       const MgatParams<T>& params, Activation sigma,
                       AttentionWeights<T>* attention) {
  const std::vector<std::size_t> want{topology.route_count(), params.channels, params.dim};
  if (route_features.shape != want)
    throw std::invalid_argument("mgat: route features must be [M,C,D] matching the parameters");

  ad::Tape<T> tape;
  const ad::NodeId hbar = tape.leaf(route_features);
  std::vector<ad::NodeId> w_ids, a_ids;
  for (std::size_t c = 0; c < params.channels; ++c) {
    w_ids.push_back(tape.leaf(params.w[c]));
    a_ids.push_back(tape.leaf(params.a[c]));
  }
  const ad::NodeId out = enhance_on_tape(tape, hbar, w_ids, a_ids, attention_sets(topology),
                                         params.leaky_slope, sigma, params.dim, attention);
  return tape.value(out);
}

std::string AblationFlags::label() const {
  if (!any()) return "full";
  std::string out;
  auto append = [&out](const char* name) {
    if (!out.empty()) out += "+";
    out += name;
  };
  if (no_stage1_features) append("no_stage1_features");
  if (no_transform) append("no_transform");
  if (no_enhance) append("no_enhance");
  if (no_stage2) append("no_stage2");
  return out;
}

template <typename T>
FrameworkModel<T>::FrameworkModel(Stage1Model<T> stage1, FrameworkConfig config,
                                  const RoadTopology& topology, std::uint64_t seed)
    : stage1_(std::move(stage1)), config_(std::move(config)) {
  n_ = topology.segment_count();
  m_ = topology.route_count();
  topo_hash_ = telto::topology_hash(topology);
  horizon_ = config_.stage2.horizon;
  if (horizon_ == 0) throw std::invalid_argument("framework: horizon must be positive");
  if (config_.head_hidden == 0) throw std::invalid_argument("framework: head_hidden must be positive");

  const bool have_stage1 = stage1_.backbone.params().size() > 0;
  if (!config_.ablation.no_stage1_features) {
    if (!have_stage1)
      throw std::invalid_argument("framework: a pretrained stage-1 model is required");
    if (stage1_.backbone.config().input_channels != 1)
      throw std::invalid_argument("framework: stage-1 model must consume single-channel input");
  }
  if (have_stage1) {
    if (stage1_.topology_hash != topo_hash_)
      throw std::invalid_argument("framework: stage-1 model was trained on a different topology");
    if (stage1_.backbone.nodes() != n_)
      throw std::invalid_argument("framework: stage-1 node count does not match topology");
  }

  if (config_.ablation.no_stage1_features) {
    channels_ = 1;
    steps_ = config_.stage2.input_steps;
  } else {
    channels_ = stage1_.backbone.config().channels;
    steps_ = stage1_.backbone.config().input_steps;
  }
  if (channels_ == 0 || steps_ == 0)
    throw std::invalid_argument("framework: empty feature shape");

  starts_ = route_starts(topology);
  ends_ = route_ends(topology);
  attention_sets_ = attention_sets(topology);
  gct_graph_ = make_graph_ops<T>(topology.segment_adjacency);
  route_graph_ = make_graph_ops<T>(topology.route_adjacency);
  input_stats_ = stage1_.input_stats;

  MgatParams<T> mgat(channels_, steps_, static_cast<T>(config_.leaky_slope), seed);
  for (std::size_t c = 0; c < channels_; ++c) {
    const std::string prefix = "mgat.c" + std::to_string(c) + ".";
    params_.add(prefix + "w", std::move(mgat.w[c]));
    params_.add(prefix + "a", std::move(mgat.a[c]));
  }

  BackboneConfig s2 = config_.stage2;
  s2.channels = channels_;
  s2.input_channels = channels_;
  s2.input_steps = steps_;
  s2.horizon = horizon_;
  s2.with_head = false;
  stage2_ = Backbone<T>(s2, m_, seed + 1);
  stage2_offset_ = params_.size();
  for (std::size_t i = 0; i < stage2_.params().size(); ++i)
    params_.add("stage2." + stage2_.params().names[i], stage2_.params().values[i]);

  Rng head_rng(seed + 2);
  const std::size_t flat = channels_ * steps_;
  auto glorot = [&head_rng](std::size_t rows, std::size_t cols) {
    Tensor<T> t({rows, cols}, T(0));
    const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (T& v : t.data) v = static_cast<T>(head_rng.uniform(-lim, lim));
    return t;
  };
  params_.add("head.l1.w", glorot(config_.head_hidden, flat));
  params_.add("head.l1.b", Tensor<T>({config_.head_hidden}, T(0)));
  params_.add("head.l2.w", glorot(horizon_, config_.head_hidden));
  params_.add("head.l2.b", Tensor<T>({horizon_}, T(0)));
}

template <typename T>
Tensor<T> FrameworkModel<T>::stage1_features(const Tensor<T>& x_raw) const {
  if (x_raw.shape != std::vector<std::size_t>{n_, steps_})
    throw std::invalid_argument("framework: input window must be [N,T_in] with T_in=" +
                                std::to_string(steps_));
  if (config_.ablation.no_stage1_features) {
    Tensor<T> out({n_, 1, steps_}, T(0));
    const double mean = input_stats_.mean.at(0), sd = input_stats_.std_dev.at(0);
    for (std::size_t i = 0; i < x_raw.data.size(); ++i)
      out.data[i] = static_cast<T>((static_cast<double>(x_raw.data[i]) - mean) / sd);
    return out;
  }
  const double mean = stage1_.input_stats.mean.at(0), sd = stage1_.input_stats.std_dev.at(0);
  Tensor<T> x = x_raw;
  for (T& v : x.data) v = static_cast<T>((static_cast<double>(v) - mean) / sd);
  return stage1_.backbone.forward_features(x, gct_graph_);
}

template <typename T>
ad::NodeId FrameworkModel<T>::predict_on_tape(ad::Tape<T>& tape,
                                              const std::vector<ad::NodeId>& param_ids,
                                              ad::NodeId features, Rng* dropout_rng,
                                              AttentionWeights<T>* attention,
                                              FrameworkTrace<T>* trace_nodes) const {
  if (param_ids.size() != params_.size())
    throw std::invalid_argument("framework: parameter binding does not match the model");
  if (tape.value(features).shape != std::vector<std::size_t>{n_, channels_, steps_})
    throw std::invalid_argument("framework: feature node must be [N,C,D]");
  auto p = [&](const std::string& name) { return param_ids[params_.index_of(name)]; };

  ad::NodeId hbar;
  if (config_.ablation.no_transform) {
    hbar = tape.gather_rows(features, starts_);
  } else {
    hbar = tape.activation(transform_on_tape(tape, features, starts_, ends_), config_.sigma);
  }

  ad::NodeId enhanced = hbar;
  if (!config_.ablation.no_enhance) {
    std::vector<ad::NodeId> w_ids, a_ids;
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::string prefix = "mgat.c" + std::to_string(c) + ".";
      w_ids.push_back(p(prefix + "w"));
      a_ids.push_back(p(prefix + "a"));
    }
    enhanced = enhance_on_tape(tape, hbar, w_ids, a_ids, attention_sets_,
                               static_cast<T>(config_.leaky_slope), config_.sigma, steps_,
                               attention);
  } else if (attention) {
    attention->clear();
  }

  ad::NodeId feats = enhanced;
  if (!config_.ablation.no_stage2) {
    const std::vector<ad::NodeId> stage2_ids(
        param_ids.begin() + static_cast<std::ptrdiff_t>(stage2_offset_),
        param_ids.begin() + static_cast<std::ptrdiff_t>(stage2_offset_ + stage2_.params().size()));
    feats = stage2_.features_on_tape(tape, stage2_ids, enhanced, route_graph_, dropout_rng);
  }

  ad::NodeId h = tape.relu(feats);
  h = tape.reshape(h, {m_, channels_ * steps_});
  h = tape.add_rowvec(tape.matmul_nt(h, p("head.l1.w")), p("head.l1.b"));
  h = tape.relu(h);
  h = tape.add_rowvec(tape.matmul_nt(h, p("head.l2.w")), p("head.l2.b"));
  h = tape.shift(tape.scale(h, static_cast<T>(target_stats_.std_dev.at(0))),
                 static_cast<T>(target_stats_.mean.at(0)));

  if (trace_nodes) {
    trace_nodes->transformed = tape.value(hbar);
    trace_nodes->enhanced = tape.value(enhanced);
    trace_nodes->stage2_features = tape.value(feats);
    trace_nodes->prediction = tape.value(h);
  }
  return h;
}

template <typename T>
Tensor<T> FrameworkModel<T>::forward(const Tensor<T>& x_raw) const {
  return forward_from_features(stage1_features(x_raw));
}

template <typename T>
Tensor<T> FrameworkModel<T>::forward_from_features(const Tensor<T>& features) const {
  ad::Tape<T> tape;
  const std::vector<ad::NodeId> param_ids = params_.bind_all(tape, false);
  const ad::NodeId f = tape.leaf(features);
  return tape.value(predict_on_tape(tape, param_ids, f));
}

template <typename T>
FrameworkTrace<T> FrameworkModel<T>::forward_trace(const Tensor<T>& x_raw) const {
  FrameworkTrace<T> trace;
  trace.stage1_features = stage1_features(x_raw);
  ad::Tape<T> tape;
  const std::vector<ad::NodeId> param_ids = params_.bind_all(tape, false);
  const ad::NodeId f = tape.leaf(trace.stage1_features);
  predict_on_tape(tape, param_ids, f, nullptr, &trace.attention, &trace);
  return trace;
}

namespace {

// Stage 1 stays frozen: its features are computed once per window and enter
// each tape as constants.
template <typename T>
class FrameworkProblem final : public SampleLossProblem<T> {
 public:
  FrameworkProblem(FrameworkModel<T>& model, std::vector<Tensor<T>> train_features,
                   const Tensor<double>& train_targets, std::vector<Tensor<T>> valid_features,
                   const Tensor<double>& valid_targets)
      : model_(model), train_features_(std::move(train_features)), train_targets_(train_targets),
        valid_features_(std::move(valid_features)), valid_targets_(valid_targets) {}

  ParamSet<T>& params() override { return model_.params(); }

  ad::NodeId sample_loss(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                         std::size_t sample, Rng* dropout_rng) override {
    const ad::NodeId f = tape.leaf(train_features_[sample]);
    const ad::NodeId pred = model_.predict_on_tape(tape, param_ids, f, dropout_rng);
    return tape.mean_abs_error(pred, sample_slice<T>(train_targets_, sample));
  }

  double valid_mae() override {
    if (valid_features_.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < valid_features_.size(); ++s) {
      const Tensor<T> pred = model_.forward_from_features(valid_features_[s]);
      const double* truth = &valid_targets_.data[s * pred.data.size()];
      for (std::size_t i = 0; i < pred.data.size(); ++i)
        sum += std::abs(static_cast<double>(pred.data[i]) - truth[i]);
      count += pred.data.size();
    }
    return sum / static_cast<double>(count);
  }

 private:
  FrameworkModel<T>& model_;
  std::vector<Tensor<T>> train_features_;
  const Tensor<double>& train_targets_;
  std::vector<Tensor<T>> valid_features_;
  const Tensor<double>& valid_targets_;
};

template <typename T>
std::vector<Tensor<T>> precompute_features(const FrameworkModel<T>& model,
                                           const WindowedDataset& data) {
  std::vector<Tensor<T>> out;
  out.reserve(data.sample_count());
  for (std::size_t s = 0; s < data.sample_count(); ++s)
    out.push_back(model.stage1_features(sample_slice<T>(data.inputs, s)));
  return out;
}

}  // namespace

template <typename T>
FrameworkModel<T> train_framework(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                  const RoadTopology& topology, const FrameworkConfig& config,
                                  const TrainConfig& train_config) {
  if (data.train.sample_count() == 0) throw std::invalid_argument("framework: empty train split");
  if (data.train.inputs.shape[1] != topology.segment_count())
    throw std::invalid_argument("framework: inputs must cover the topology segments");
  if (data.train.targets.shape[1] != topology.route_count())
    throw std::invalid_argument("framework: targets must cover the topology routes");

  FrameworkConfig cfg = config;
  cfg.stage2.input_steps = data.train.t_in;
  cfg.stage2.horizon = data.train.t_out;
  if (!cfg.ablation.no_stage1_features &&
      stage1.backbone.config().input_steps != data.train.t_in)
    throw std::invalid_argument("framework: stage-1 input length does not match the dataset");

  FrameworkModel<T> model(stage1, cfg, topology, train_config.seed);
  model.set_target_stats(fit_normalizer(data.train.targets, 1, false));
  if (cfg.ablation.no_stage1_features)
    model.set_input_stats(fit_normalizer(data.train.inputs, 1, false));

  FrameworkProblem<T> problem(model, precompute_features(model, data.train), data.train.targets,
                              precompute_features(model, data.valid), data.valid.targets);
  model.log = run_training(problem, data.train.sample_count(), train_config);
  return model;
}

template <typename T>
Tensor<double> framework_predict_all(const FrameworkModel<T>& model, const Tensor<double>& inputs) {
  if (inputs.shape.size() != 3 || inputs.shape[1] != model.segment_count())
    throw std::invalid_argument("framework: inputs must be [S,N,T_in]");
  const std::size_t S = inputs.shape[0];
  Tensor<double> out({S, model.route_count(), model.horizon()}, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    const Tensor<T> pred = model.forward(sample_slice<T>(inputs, s));
    double* dst = &out.data[s * pred.data.size()];
    for (std::size_t i = 0; i < pred.data.size(); ++i) dst[i] = static_cast<double>(pred.data[i]);
  }
  return out;
}

template Tensor<float> transform<float>(const Tensor<float>&, const RoadTopology&, Activation);
template Tensor<double> transform<double>(const Tensor<double>&, const RoadTopology&, Activation);
template Tensor<float> transform_raw<float>(const Tensor<float>&, const RoadTopology&);
template Tensor<double> transform_raw<double>(const Tensor<double>&, const RoadTopology&);
template struct MgatParams<float>;
template struct MgatParams<double>;
template Tensor<float> mgat_enhance<float>(const Tensor<float>&, const RoadTopology&,
                                           const MgatParams<float>&, Activation,
                                           AttentionWeights<float>*);
template Tensor<double> mgat_enhance<double>(const Tensor<double>&, const RoadTopology&,
                                             const MgatParams<double>&, Activation,
                                             AttentionWeights<double>*);
template class FrameworkModel<float>;
template class FrameworkModel<double>;
template FrameworkModel<float> train_framework<float>(const Stage1Model<float>&,
                                                      const DatasetSplits&, const RoadTopology&,
                                                      const FrameworkConfig&, const TrainConfig&);
template FrameworkModel<double> train_framework<double>(const Stage1Model<double>&,
                                                        const DatasetSplits&, const RoadTopology&,
                                                        const FrameworkConfig&,
                                                        const TrainConfig&);
template Tensor<double> framework_predict_all<float>(const FrameworkModel<float>&,
                                                     const Tensor<double>&);
template Tensor<double> framework_predict_all<double>(const FrameworkModel<double>&,
                                                      const Tensor<double>&);

}  // namespace telto
