#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "telto/flow.hpp"
#include "telto/tensor.hpp"

namespace telto {

/// Sliding-window samples: inputs [S, E_in, T_in], targets [S, E_out, T_out],
/// each target window immediately following its input window. Values are kept
/// in raw count units; normalization is applied by the consumer.
struct WindowedDataset {
  Tensor<double> inputs;
  Tensor<double> targets;
  std::size_t t_in = 8;
  std::size_t t_out = 4;
  std::string split;

  std::size_t sample_count() const { return inputs.shape.empty() ? 0 : inputs.shape[0]; }
};

struct SplitRatios {
  double train = 0.7;
  double test = 0.2;
  double valid = 0.1;
};

struct DatasetSplits {
  WindowedDataset train;
  WindowedDataset test;
  WindowedDataset valid;
};

/// Builds all S = T - (T_in + T_out) + 1 stride-1 windows and splits them
/// chronologically, train earliest then test then valid; train and test sizes
/// are floored, valid takes the remainder.
DatasetSplits make_windows(const FlowSeries& input_series, const FlowSeries& target_series,
                           std::size_t t_in, std::size_t t_out, const SplitRatios& ratios = {});

/// Global or per-entity mean/std, fit on the training split only.
/// Population std; values below 1e-12 are clamped to 1.
struct NormalizationStats {
  bool per_entity = false;
  std::vector<double> mean{0.0};
  std::vector<double> std_dev{1.0};
  bool clamped = false;
};

/// `entity_axis` names the axis indexed by entity id ([S,E,T] -> 1, [E,T] -> 0).
/// per_entity=false fits one global mean/std pair.
NormalizationStats fit_normalizer(const Tensor<double>& data, std::size_t entity_axis,
                                  bool per_entity = false);

Tensor<double> apply_normalizer(const Tensor<double>& data, const NormalizationStats& stats,
                                std::size_t entity_axis);
Tensor<double> invert_normalizer(const Tensor<double>& data, const NormalizationStats& stats,
                                 std::size_t entity_axis);

/// Copies window `sample` of a [S,E,K] tensor to [E,K], casting to T.
template <typename T>
Tensor<T> sample_slice(const Tensor<double>& data, std::size_t sample) {
  const std::size_t E = data.shape[1], K = data.shape[2];
  Tensor<T> out({E, K}, T(0));
  const double* src = &data.data[sample * E * K];
  for (std::size_t i = 0; i < E * K; ++i) out.data[i] = static_cast<T>(src[i]);
  return out;
}

}  // namespace telto
