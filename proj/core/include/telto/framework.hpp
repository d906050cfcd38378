#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/autodiff.hpp"
#include "telto/backbone.hpp"
#include "telto/params.hpp"
#include "telto/rng.hpp"
#include "telto/tensor.hpp"
#include "telto/topology.hpp"
#include "telto/train.hpp"
#include "telto/windows.hpp"

namespace telto {

/// Directional route representation from segment features: out[r] =
/// sigma(H[end(r)] - H[start(r)]). transform_raw skips the nonlinearity (the
/// raw map is anti-symmetric under endpoint swap).
template <typename T>
Tensor<T> transform(const Tensor<T>& features, const RoadTopology& topology, Activation sigma);
template <typename T>
Tensor<T> transform_raw(const Tensor<T>& features, const RoadTopology& topology);

/// C independent per-channel attention heads over {route} + upstream routes.
template <typename T>
struct MgatParams {
  std::size_t channels = 0;
  std::size_t dim = 0;
  T leaky_slope = T(0.2);
  std::vector<Tensor<T>> w;  // per channel [D,D]
  std::vector<Tensor<T>> a;  // per channel [2,D]: row 0 scores self, row 1 neighbors

  MgatParams() = default;
  MgatParams(std::size_t channels, std::size_t dim, T leaky_slope, std::uint64_t seed);
};

/// Per-route attention weights, indexed [channel][route][position] with
/// position 0 the route itself followed by its upstream routes in id order.
template <typename T>
using AttentionWeights = std::vector<std::vector<std::vector<T>>>;

/// Enhancement: per channel c, scores e(r,q) = leaky_relu(a_c . [W_c h_r ||
/// W_c h_q]) softmaxed over {r} + upstream(r), output sigma(sum_q alpha W_c
/// h_q), channels re-stacked to [M,C,D].
template <typename T>
Tensor<T> mgat_enhance(const Tensor<T>& route_features, const RoadTopology& topology,
                       const MgatParams<T>& params, Activation sigma,
                       AttentionWeights<T>* attention = nullptr);

struct AblationFlags {
  bool no_stage1_features = false;  // raw GCT broadcast to C=1 instead of H
  bool no_transform = false;        // start-segment feature, no subtraction
  bool no_enhance = false;          // identity instead of MGAT
  bool no_stage2 = false;           // head directly on the enhanced features

  bool any() const { return no_stage1_features || no_transform || no_enhance || no_stage2; }
  std::string label() const;
};

struct FrameworkConfig {
  Activation sigma = Activation::relu;  // transformation + attention nonlinearity
  double leaky_slope = 0.2;
  std::size_t head_hidden = 256;
  /// Channel counts and head settings are overridden to match the stage-1
  /// feature width; the remaining fields (layers, kernel, dilations, dropout,
  /// activation, adjacency mode) are honored.
  BackboneConfig stage2;
  AblationFlags ablation;
};

template <typename T>
struct FrameworkTrace {
  Tensor<T> stage1_features;  // [N,C,D] (or [N,1,D] under no_stage1_features)
  Tensor<T> transformed;      // [M,C,D]
  Tensor<T> enhanced;         // [M,C,D]
  Tensor<T> stage2_features;  // [M,C,D]
  Tensor<T> prediction;       // [M,D'] raw units
  AttentionWeights<T> attention;
};

/// Stage 2 of the pipeline with a frozen stage-1 encoder. Trainable
/// parameters (mgat.*, stage2.*, head.*) live in a single ParamSet; the
/// stage-1 model is used only through eval-mode feature extraction.
template <typename T>
class FrameworkModel {
 public:
  FrameworkModel() = default;
  FrameworkModel(Stage1Model<T> stage1, FrameworkConfig config, const RoadTopology& topology,
                 std::uint64_t seed);

  const FrameworkConfig& config() const { return config_; }
  const BackboneConfig& stage2_config() const { return stage2_.config(); }
  const Stage1Model<T>& stage1() const { return stage1_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  std::size_t segment_count() const { return n_; }
  std::size_t route_count() const { return m_; }
  std::size_t channels() const { return channels_; }
  std::size_t feature_steps() const { return steps_; }
  std::size_t horizon() const { return horizon_; }
  std::uint64_t topology_hash() const { return topo_hash_; }

  const NormalizationStats& target_stats() const { return target_stats_; }
  void set_target_stats(NormalizationStats stats) { target_stats_ = std::move(stats); }
  /// Raw-input normalizer for the no_stage1_features path; the regular path
  /// always normalizes with the stage-1 model's own statistics.
  const NormalizationStats& input_stats() const { return input_stats_; }
  void set_input_stats(NormalizationStats stats) { input_stats_ = std::move(stats); }
  TrainLog log;

  /// Frozen stage-1 feature extraction for one raw GCT window [N,D].
  Tensor<T> stage1_features(const Tensor<T>& x_raw) const;

  /// Stage-2 pipeline on a caller tape, from a stage-1 feature node
  /// [N,C,D]. Returns the raw-unit prediction [M,D'].
  ad::NodeId predict_on_tape(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                             ad::NodeId features, Rng* dropout_rng = nullptr,
                             AttentionWeights<T>* attention = nullptr,
                             FrameworkTrace<T>* trace_nodes = nullptr) const;

  /// Full eval-mode pipeline from one raw GCT window [N,D].
  Tensor<T> forward(const Tensor<T>& x_raw) const;
  /// Eval-mode stage 2 only, from precomputed stage-1 features [N,C,D].
  Tensor<T> forward_from_features(const Tensor<T>& features) const;
  FrameworkTrace<T> forward_trace(const Tensor<T>& x_raw) const;

 private:
  Stage1Model<T> stage1_;
  FrameworkConfig config_;
  Backbone<T> stage2_;  // structural only; its values live in params_
  ParamSet<T> params_;
  std::size_t stage2_offset_ = 0;  // index of first stage2.* entry in params_

  std::size_t n_ = 0, m_ = 0, channels_ = 0, steps_ = 0, horizon_ = 0;
  std::uint64_t topo_hash_ = 0;
  std::vector<std::size_t> starts_, ends_;
  std::vector<std::vector<std::size_t>> attention_sets_;  // self first, then upstream
  GraphOps<T> gct_graph_, route_graph_;
  NormalizationStats input_stats_;
  NormalizationStats target_stats_;
};

/// Trains the stage-2 parameters with MAE loss on raw units, stage 1 frozen
/// (its features are precomputed per window). Returns the best-validation
/// model with its training log attached.
template <typename T>
FrameworkModel<T> train_framework(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                  const RoadTopology& topology, const FrameworkConfig& config,
                                  const TrainConfig& train_config);

/// Raw-unit predictions [S,M,D'] over a windowed input set [S,N,T_in].
template <typename T>
Tensor<double> framework_predict_all(const FrameworkModel<T>& model, const Tensor<double>& inputs);

extern template Tensor<float> transform<float>(const Tensor<float>&, const RoadTopology&, Activation);
extern template Tensor<double> transform<double>(const Tensor<double>&, const RoadTopology&,
                                                 Activation);
extern template Tensor<float> transform_raw<float>(const Tensor<float>&, const RoadTopology&);
extern template Tensor<double> transform_raw<double>(const Tensor<double>&, const RoadTopology&);
extern template struct MgatParams<float>;
extern template struct MgatParams<double>;
extern template Tensor<float> mgat_enhance<float>(const Tensor<float>&, const RoadTopology&,
                                                  const MgatParams<float>&, Activation,
                                                  AttentionWeights<float>*);
extern template Tensor<double> mgat_enhance<double>(const Tensor<double>&, const RoadTopology&,
                                                    const MgatParams<double>&, Activation,
                                                    AttentionWeights<double>*);
extern template class FrameworkModel<float>;
extern template class FrameworkModel<double>;
extern template FrameworkModel<float> train_framework<float>(const Stage1Model<float>&,
                                                             const DatasetSplits&,
                                                             const RoadTopology&,
                                                             const FrameworkConfig&,
                                                             const TrainConfig&);
extern template FrameworkModel<double> train_framework<double>(const Stage1Model<double>&,
                                                               const DatasetSplits&,
                                                               const RoadTopology&,
                                                               const FrameworkConfig&,
                                                               const TrainConfig&);
extern template Tensor<double> framework_predict_all<float>(const FrameworkModel<float>&,
                                                            const Tensor<double>&);
extern template Tensor<double> framework_predict_all<double>(const FrameworkModel<double>&,
                                                             const Tensor<double>&);

}  // namespace telto
