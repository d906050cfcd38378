#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "telto/tensor.hpp"

namespace telto {

/// Nonlinearity choice shared by the model configs.
enum class Activation { relu, tanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

namespace ad {

using NodeId = std::uint32_t;

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so a
/// single reverse sweep is a valid topological traversal. One tape serves one
/// forward (or one batch of forwards sharing parameter leaves) and is then
/// discarded.
template <typename T>
class Tape {
 public:
  NodeId leaf(Tensor<T> value, bool requires_grad = false);

  const Tensor<T>& value(NodeId id) const { return nodes_[id].value; }
  /// Gradient accumulated by backward(). Allocates zeros if the node was
  /// never reached by the sweep.
  const Tensor<T>& grad(NodeId id);
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Elementwise.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, T factor);
  NodeId shift(NodeId a, T offset);
  NodeId relu(NodeId a);
  NodeId leaky_relu(NodeId a, T slope);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId activation(NodeId a, Activation act);
  /// Elementwise product with a fixed mask (dropout masks are pre-scaled by
  /// 1/keep_prob by the caller).
  NodeId mask(NodeId a, Tensor<T> mask);

  // Dense linear algebra.
  NodeId matmul(NodeId a, NodeId b);     // [m,k] x [k,n] -> [m,n]
  NodeId matmul_nt(NodeId a, NodeId b);  // [m,k] x [n,k]^T -> [m,n]
  NodeId matvec(NodeId a, NodeId v);     // [m,n] x [n] -> [m]
  NodeId add_rowvec(NodeId a, NodeId v); // [m,n] + broadcast [n]
  NodeId softmax_rows(NodeId a);         // [m,n], softmax per row

  // Ops on [entities, channels, steps] blocks.
  NodeId channel_linear(NodeId x, NodeId w, NodeId b);  // w [Co,Ci], b [Co] or kNone
  NodeId add_channel_bias(NodeId x, NodeId b);          // x [E,C,D] + broadcast b [C]
  NodeId temporal_conv(NodeId x, NodeId w, NodeId b, std::size_t dilation);  // w [Co,Ci,K], causal
  NodeId graph_mix(NodeId x, Tensor<T> adjacency);      // fixed [E,E] mixing matrix
  NodeId graph_mix_var(NodeId x, NodeId adjacency);     // learned mixing matrix
  NodeId gather_rows(NodeId x, std::vector<std::size_t> indices);
  NodeId slice_channel(NodeId x, std::size_t channel);  // [E,C,D] -> [E,D]
  NodeId stack_channels(const std::vector<NodeId>& channels);  // C x [E,D] -> [E,C,D]
  NodeId reshape(NodeId x, std::vector<std::size_t> dims);

  /// Attention-weighted neighborhood aggregation. For each output row r with
  /// source set S_r = sets[r] (row 0 is r itself by convention):
  ///   score(q) = leaky_relu(center_score[r] + neighbor_score[q])
  ///   alpha    = softmax over S_r
  ///   out[r]   = sum_q alpha_q * projected[q]
  /// When `weights_out` is given, the per-row weights are recorded.
  NodeId neighbor_attention(NodeId projected, NodeId center_score, NodeId neighbor_score,
                            const std::vector<std::vector<std::size_t>>& sets, T slope,
                            std::vector<std::vector<T>>* weights_out = nullptr);

  /// Scalar mean absolute error against a fixed target.
  NodeId mean_abs_error(NodeId pred, Tensor<T> target);
  /// Mean of several scalar nodes (batch loss).
  NodeId mean_of(const std::vector<NodeId>& scalars);

  /// Runs the reverse sweep from a scalar root.
  void backward(NodeId root);

  static constexpr NodeId kNone = static_cast<NodeId>(-1);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily
    bool requires_grad = false;
    std::function<void(Tape&)> back;
  };

  NodeId push(Tensor<T> value, bool requires_grad, std::function<void(Tape&)> back);
  Tensor<T>& grad_ref(NodeId id);
  bool any_grad(std::initializer_list<NodeId> ids) const;

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ad
}  // namespace telto
