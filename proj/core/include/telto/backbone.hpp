#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/autodiff.hpp"
#include "telto/params.hpp"
#include "telto/rng.hpp"
#include "telto/tensor.hpp"

namespace telto {

enum class AdjacencyMode { static_only, static_adaptive };

std::string adjacency_mode_name(AdjacencyMode mode);
AdjacencyMode adjacency_mode_from_name(const std::string& name);

/// Fully determines parameter shapes; temporal length is preserved through
/// all layers by causal left-padding.
struct BackboneConfig {
  std::size_t channels = 32;        // C: residual/skip/feature width
  std::size_t input_channels = 1;   // 1 for raw flows, C for stacked features
  std::size_t layers = 4;
  std::size_t temporal_kernel = 2;
  std::vector<std::size_t> dilations;  // empty: cycle 1,2,1,2,...
  double dropout = 0.0;
  Activation activation = Activation::relu;
  AdjacencyMode adjacency_mode = AdjacencyMode::static_only;
  std::size_t adaptive_rank = 4;
  std::size_t input_steps = 8;   // D
  std::size_t horizon = 4;       // D'
  std::size_t head_hidden = 256;
  bool with_head = true;

  std::vector<std::size_t> dilation_schedule() const;
};

/// Row-normalized transition matrices for the graph convolution.
template <typename T>
struct GraphOps {
  Tensor<T> fwd;
  Tensor<T> bwd;
};

template <typename T>
GraphOps<T> make_graph_ops(const Tensor<double>& binary_adjacency);

extern template GraphOps<float> make_graph_ops<float>(const Tensor<double>&);
extern template GraphOps<double> make_graph_ops<double>(const Tensor<double>&);

/// Reference STGNN: 1x1 input projection, then per layer a gated causal
/// dilated temporal convolution, a skip tap, and a graph convolution with
/// residual connection; features are the accumulated skip sum [E,C,D], and
/// the optional head maps flattened features to [E,D'].
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  /// Initializes parameters deterministically from the seed.
  Backbone(BackboneConfig config, std::size_t nodes, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  std::size_t nodes() const { return nodes_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Asserted against params().total_elements() in tests.
  static std::size_t expected_param_count(const BackboneConfig& config, std::size_t nodes);

  /// Graph construction on a caller-owned tape. `input` is a [E,D] node;
  /// `param_ids` must come from params().bind_all on the same tape.
  /// `dropout_rng` non-null enables training-mode dropout.
  ad::NodeId features_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                              ad::NodeId input, const GraphOps<T>& graph,
                              Rng* dropout_rng = nullptr) const;
  ad::NodeId predict_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                             ad::NodeId input, const GraphOps<T>& graph,
                             Rng* dropout_rng = nullptr) const;
  /// Head applied to an externally built feature node (used by no-op stage-2
  /// variants). `features` must be [E,C,D].
  ad::NodeId head_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                          ad::NodeId features) const;

  /// Evaluation mode: deterministic, dropout disabled.
  Tensor<T> forward_features(const Tensor<T>& x, const GraphOps<T>& graph) const;
  Tensor<T> forward_predict(const Tensor<T>& x, const GraphOps<T>& graph) const;

 private:
  void init_params(std::uint64_t seed);
  ad::NodeId adaptive_adjacency(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids) const;

  BackboneConfig config_;
  std::size_t nodes_ = 0;
  ParamSet<T> params_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace telto
