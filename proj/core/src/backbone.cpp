#include "telto/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "telto/topology.hpp"

namespace telto {

std::string adjacency_mode_name(AdjacencyMode mode) {
  return mode == AdjacencyMode::static_only ? "static" : "static+adaptive";
}

AdjacencyMode adjacency_mode_from_name(const std::string& name) {
  if (name == "static") return AdjacencyMode::static_only;
  if (name == "static+adaptive") return AdjacencyMode::static_adaptive;
  throw std::invalid_argument("unknown adjacency mode: " + name);
}

std::vector<std::size_t> BackboneConfig::dilation_schedule() const {
  if (!dilations.empty()) {
    if (dilations.size() != layers)
      throw std::invalid_argument("backbone: dilation schedule length must equal layer count");
    return dilations;
  }
  std::vector<std::size_t> schedule(layers);
  for (std::size_t l = 0; l < layers; ++l) schedule[l] = (l % 2 == 0) ? 1 : 2;
  return schedule;
}

namespace {

void check_config(const BackboneConfig& c) {
  if (c.channels == 0 || c.input_channels == 0 || c.layers == 0 || c.temporal_kernel == 0)
    throw std::invalid_argument("backbone: channels, layers, and kernel must be positive");
  if (c.dropout < 0.0 || c.dropout >= 1.0)
    throw std::invalid_argument("backbone: dropout must be in [0,1)");
  if (c.input_steps == 0 || c.horizon == 0)
    throw std::invalid_argument("backbone: input_steps and horizon must be positive");
  if (c.adjacency_mode == AdjacencyMode::static_adaptive && c.adaptive_rank == 0)
    throw std::invalid_argument("backbone: adaptive_rank must be positive");
  c.dilation_schedule();
}

template <typename T>
Tensor<T> glorot(const std::vector<std::size_t>& shape, std::size_t fan_in, std::size_t fan_out,
                 Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(shape, T(0));
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace

template <typename T>
GraphOps<T> make_graph_ops(const Tensor<double>& binary_adjacency) {
  GraphOps<T> ops;
  ops.fwd = tensor_cast<T>(row_normalized(binary_adjacency));
  ops.bwd = tensor_cast<T>(row_normalized(transposed(binary_adjacency)));
  return ops;
}

template <typename T>
Backbone<T>::Backbone(BackboneConfig config, std::size_t nodes, std::uint64_t seed)
    : config_(std::move(config)), nodes_(nodes) {
  check_config(config_);
  if (nodes_ == 0) throw std::invalid_argument("backbone: node count must be positive");
  init_params(seed);
}

template <typename T>
void Backbone<T>::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t C = config_.channels;
  const std::size_t Ci = config_.input_channels;
  const std::size_t K = config_.temporal_kernel;

  params_.add("input_proj.w", glorot<T>({C, Ci}, Ci, C, rng));
  params_.add("input_proj.b", Tensor<T>({C}, T(0)));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    params_.add(prefix + "filter.w", glorot<T>({C, C, K}, C * K, C * K, rng));
    params_.add(prefix + "filter.b", Tensor<T>({C}, T(0)));
    params_.add(prefix + "gate.w", glorot<T>({C, C, K}, C * K, C * K, rng));
    params_.add(prefix + "gate.b", Tensor<T>({C}, T(0)));
    params_.add(prefix + "skip.w", glorot<T>({C, C}, C, C, rng));
    params_.add(prefix + "skip.b", Tensor<T>({C}, T(0)));
    params_.add(prefix + "graph.w0", glorot<T>({C, C}, C, C, rng));
    params_.add(prefix + "graph.w1", glorot<T>({C, C}, C, C, rng));
    params_.add(prefix + "graph.w2", glorot<T>({C, C}, C, C, rng));
    if (config_.adjacency_mode == AdjacencyMode::static_adaptive)
      params_.add(prefix + "graph.w3", glorot<T>({C, C}, C, C, rng));
    params_.add(prefix + "graph.b", Tensor<T>({C}, T(0)));
  }
  if (config_.adjacency_mode == AdjacencyMode::static_adaptive) {
    Tensor<T> e1({nodes_, config_.adaptive_rank}, T(0));
    Tensor<T> e2({config_.adaptive_rank, nodes_}, T(0));
    for (T& v : e1.data) v = static_cast<T>(0.1 * rng.normal());
    for (T& v : e2.data) v = static_cast<T>(0.1 * rng.normal());
    params_.add("adaptive.e1", std::move(e1));
    params_.add("adaptive.e2", std::move(e2));
  }
  if (config_.with_head) {
    const std::size_t flat = C * config_.input_steps;
    params_.add("head.l1.w", glorot<T>({config_.head_hidden, flat}, flat, config_.head_hidden, rng));
    params_.add("head.l1.b", Tensor<T>({config_.head_hidden}, T(0)));
    params_.add("head.l2.w",
                glorot<T>({config_.horizon, config_.head_hidden}, config_.head_hidden,
                          config_.horizon, rng));
    params_.add("head.l2.b", Tensor<T>({config_.horizon}, T(0)));
  }
}

template <typename T>
std::size_t Backbone<T>::expected_param_count(const BackboneConfig& config, std::size_t nodes) {
  check_config(config);
  const std::size_t C = config.channels;
  const std::size_t K = config.temporal_kernel;
  const bool adaptive = config.adjacency_mode == AdjacencyMode::static_adaptive;
  const std::size_t graph_mats = adaptive ? 4 : 3;
  std::size_t count = C * config.input_channels + C;                      // input projection
  count += config.layers * (2 * (C * C * K + C)                           // filter + gate
                            + C * C + C                                   // skip
                            + graph_mats * C * C + C);                    // graph conv
  if (adaptive) count += 2 * nodes * config.adaptive_rank;                // node embeddings
  if (config.with_head) {
    const std::size_t flat = C * config.input_steps;
    count += config.head_hidden * flat + config.head_hidden + config.horizon * config.head_hidden +
             config.horizon;
  }
  return count;
}

template <typename T>
ad::NodeId Backbone<T>::adaptive_adjacency(ad::Tape<T>& tape,
                                           const std::vector<ad::NodeId>& param_ids) const {
  const ad::NodeId e1 = param_ids[params_.index_of("adaptive.e1")];
  const ad::NodeId e2 = param_ids[params_.index_of("adaptive.e2")];
  return tape.softmax_rows(tape.relu(tape.matmul(e1, e2)));
}

template <typename T>
ad::NodeId Backbone<T>::features_on_tape(ad::Tape<T>& tape,
                                         const std::vector<ad::NodeId>& param_ids,
                                         ad::NodeId input, const GraphOps<T>& graph,
                                         Rng* dropout_rng) const {
  if (param_ids.size() != params_.size())
    throw std::invalid_argument("backbone: bound parameter count mismatch");
  const std::vector<std::size_t>& in_shape = tape.value(input).shape;
  const std::size_t E = nodes_;
  const std::size_t Ci = config_.input_channels;
  const std::size_t D = config_.input_steps;
  const bool flat_input = in_shape.size() == 2;
  if (flat_input) {
    if (Ci != 1 || in_shape != std::vector<std::size_t>{E, D})
      throw std::invalid_argument("backbone: expected input [" + std::to_string(E) + "," +
                                  std::to_string(D) + "], got " + shape_string(in_shape));
  } else if (in_shape != std::vector<std::size_t>{E, Ci, D}) {
    throw std::invalid_argument("backbone: expected input [" + std::to_string(E) + "," +
                                std::to_string(Ci) + "," + std::to_string(D) + "], got " +
                                shape_string(in_shape));
  }
  if (graph.fwd.shape != std::vector<std::size_t>{E, E})
    throw std::invalid_argument("backbone: graph size does not match node count");

  auto p = [&](const std::string& name) { return param_ids[params_.index_of(name)]; };

  ad::NodeId x = flat_input ? tape.reshape(input, {E, 1, D}) : input;
  x = tape.channel_linear(x, p("input_proj.w"), p("input_proj.b"));

  const ad::NodeId adaptive = config_.adjacency_mode == AdjacencyMode::static_adaptive
                                  ? adaptive_adjacency(tape, param_ids)
                                  : ad::Tape<T>::kNone;

  const std::vector<std::size_t> dilations = config_.dilation_schedule();
  ad::NodeId skip_sum = ad::Tape<T>::kNone;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    const ad::NodeId filter =
        tape.tanh(tape.temporal_conv(x, p(prefix + "filter.w"), p(prefix + "filter.b"), dilations[l]));
    const ad::NodeId gate = tape.sigmoid(
        tape.temporal_conv(x, p(prefix + "gate.w"), p(prefix + "gate.b"), dilations[l]));
    const ad::NodeId h = tape.mul(filter, gate);

    const ad::NodeId skip = tape.channel_linear(h, p(prefix + "skip.w"), p(prefix + "skip.b"));
    skip_sum = skip_sum == ad::Tape<T>::kNone ? skip : tape.add(skip_sum, skip);

    ad::NodeId conv = tape.channel_linear(h, p(prefix + "graph.w0"), ad::Tape<T>::kNone);
    conv = tape.add(conv, tape.channel_linear(tape.graph_mix(h, graph.fwd),
                                              p(prefix + "graph.w1"), ad::Tape<T>::kNone));
    conv = tape.add(conv, tape.channel_linear(tape.graph_mix(h, graph.bwd),
                                              p(prefix + "graph.w2"), ad::Tape<T>::kNone));
    if (adaptive != ad::Tape<T>::kNone)
      conv = tape.add(conv, tape.channel_linear(tape.graph_mix_var(h, adaptive),
                                                p(prefix + "graph.w3"), ad::Tape<T>::kNone));
    conv = tape.add_channel_bias(conv, p(prefix + "graph.b"));
    if (dropout_rng && config_.dropout > 0.0) {
      const T keep = static_cast<T>(1.0 - config_.dropout);
      Tensor<T> mask(tape.value(conv).shape, T(0));
      for (T& v : mask.data)
        v = dropout_rng->uniform() < config_.dropout ? T(0) : T(1) / keep;
      conv = tape.mask(conv, std::move(mask));
    }
    x = tape.add(x, conv);
  }
  return skip_sum;
}

template <typename T>
ad::NodeId Backbone<T>::head_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                                     ad::NodeId features) const {
  if (!config_.with_head) throw std::logic_error("backbone: configured without a head");
  auto p = [&](const std::string& name) { return param_ids[params_.index_of(name)]; };
  const std::vector<std::size_t>& shape = tape.value(features).shape;
  if (shape.size() != 3 || shape[1] != config_.channels || shape[2] != config_.input_steps)
    throw std::invalid_argument("backbone head: expected features [E,C,D], got " +
                                shape_string(shape));
  const std::size_t E = shape[0];
  ad::NodeId h = tape.relu(features);
  h = tape.reshape(h, {E, config_.channels * config_.input_steps});
  h = tape.add_rowvec(tape.matmul_nt(h, p("head.l1.w")), p("head.l1.b"));
  h = tape.relu(h);
  return tape.add_rowvec(tape.matmul_nt(h, p("head.l2.w")), p("head.l2.b"));
}

template <typename T>
ad::NodeId Backbone<T>::predict_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                                        ad::NodeId input, const GraphOps<T>& graph,
                                        Rng* dropout_rng) const {
  return head_on_tape(tape, param_ids, features_on_tape(tape, param_ids, input, graph, dropout_rng));
}

template <typename T>
Tensor<T> Backbone<T>::forward_features(const Tensor<T>& x, const GraphOps<T>& graph) const {
  ad::Tape<T> tape;
  const std::vector<ad::NodeId> ids = params_.bind_all(tape, false);
  return tape.value(features_on_tape(tape, ids, tape.leaf(x), graph, nullptr));
}

template <typename T>
Tensor<T> Backbone<T>::forward_predict(const Tensor<T>& x, const GraphOps<T>& graph) const {
  ad::Tape<T> tape;
  const std::vector<ad::NodeId> ids = params_.bind_all(tape, false);
  return tape.value(predict_on_tape(tape, ids, tape.leaf(x), graph, nullptr));
}

template GraphOps<float> make_graph_ops<float>(const Tensor<double>&);
template GraphOps<double> make_graph_ops<double>(const Tensor<double>&);
template class Backbone<float>;
template class Backbone<double>;

}  // namespace telto
