#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "telto/autodiff.hpp"
#include "telto/backbone.hpp"
#include "telto/params.hpp"
#include "telto/rng.hpp"
#include "telto/topology.hpp"
#include "telto/windows.hpp"

namespace telto {

struct TrainConfig {
  std::size_t max_epochs = 180;
  std::size_t patience = 20;  // early stop on validation MAE; 0 disables
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  double grad_clip = 5.0;  // global gradient norm; 0 disables
  std::uint64_t seed = 1;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_mae = 0.0;
  double valid_mae = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_valid_mae = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
  bool aborted_nan = false;
};

/// Adaptive moment estimation with bias correction.
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamSet<T>& params);
  /// Applies one update in place. `grads` parallel to params.values.
  void step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double learning_rate,
            double grad_clip);

 private:
  std::vector<Tensor<T>> m_, v_;
  std::size_t t_ = 0;
};

/// A model trained by batched sample losses. Implementations own the
/// parameters and any cached data.
template <typename T>
class SampleLossProblem {
 public:
  virtual ~SampleLossProblem() = default;
  virtual ParamSet<T>& params() = 0;
  /// Scalar raw-unit loss node for one training sample.
  virtual ad::NodeId sample_loss(ad::Tape<T>& tape, const std::vector<ad::NodeId>& param_ids,
                                 std::size_t sample, Rng* dropout_rng) = 0;
  /// Raw-unit validation MAE in eval mode; NaN when no validation set.
  virtual double valid_mae() = 0;
};

/// Shuffled mini-batch loop with gradient clipping, early stopping on
/// validation MAE, and NaN abort. The best-validation parameters are written
/// back into the problem before returning.
template <typename T>
TrainLog run_training(SampleLossProblem<T>& problem, std::size_t train_samples,
                      const TrainConfig& config);

/// A backbone trained end to end on a windowed dataset, with the
/// normalization fitted on its train split. Inputs are normalized and
/// predictions denormalized inside the model wrappers, so losses and metrics
/// stay in raw units.
template <typename T>
struct BackboneTrainResult {
  Backbone<T> backbone;
  NormalizationStats input_stats;
  NormalizationStats target_stats;
  TrainLog log;
};

/// Trains a fresh backbone on the dataset over the given graph adjacency.
/// Input/horizon lengths are taken from the dataset.
template <typename T>
BackboneTrainResult<T> train_backbone(const DatasetSplits& data,
                                      const Tensor<double>& binary_adjacency,
                                      const BackboneConfig& config,
                                      const TrainConfig& train_config);

/// Stage-1 model: the backbone plus the normalization fitted on its train
/// split, bound to a topology by hash.
template <typename T>
struct Stage1Model {
  Backbone<T> backbone;
  NormalizationStats input_stats;
  NormalizationStats target_stats;
  std::uint64_t topology_hash = 0;
  TrainLog log;
};

/// Pretrains the backbone to predict future GCT flows from past GCT flows
/// (inputs and targets both from the GCT series). Returns the
/// best-validation checkpoint.
template <typename T>
Stage1Model<T> pretrain_stage1(const DatasetSplits& data, const RoadTopology& topology,
                               const BackboneConfig& config, const TrainConfig& train_config);

/// Raw-unit predictions [S,E,D'] for a backbone with internal normalization.
template <typename T>
Tensor<double> backbone_predict_all(const Backbone<T>& model, const GraphOps<T>& graph,
                                    const Tensor<double>& inputs,
                                    const NormalizationStats& input_stats,
                                    const NormalizationStats& target_stats);

extern template class Adam<float>;
extern template class Adam<double>;
extern template TrainLog run_training<float>(SampleLossProblem<float>&, std::size_t,
                                             const TrainConfig&);
extern template TrainLog run_training<double>(SampleLossProblem<double>&, std::size_t,
                                              const TrainConfig&);
extern template BackboneTrainResult<float> train_backbone<float>(const DatasetSplits&,
                                                                 const Tensor<double>&,
                                                                 const BackboneConfig&,
                                                                 const TrainConfig&);
extern template BackboneTrainResult<double> train_backbone<double>(const DatasetSplits&,
                                                                   const Tensor<double>&,
                                                                   const BackboneConfig&,
                                                                   const TrainConfig&);
extern template Stage1Model<float> pretrain_stage1<float>(const DatasetSplits&,
                                                          const RoadTopology&,
                                                          const BackboneConfig&,
                                                          const TrainConfig&);
extern template Stage1Model<double> pretrain_stage1<double>(const DatasetSplits&,
                                                            const RoadTopology&,
                                                            const BackboneConfig&,
                                                            const TrainConfig&);
extern template Tensor<double> backbone_predict_all<float>(const Backbone<float>&,
                                                           const GraphOps<float>&,
                                                           const Tensor<double>&,
                                                           const NormalizationStats&,
                                                           const NormalizationStats&);
extern template Tensor<double> backbone_predict_all<double>(const Backbone<double>&,
                                                            const GraphOps<double>&,
                                                            const Tensor<double>&,
                                                            const NormalizationStats&,
                                                            const NormalizationStats&);

}  // namespace telto
