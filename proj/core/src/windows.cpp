#include "telto/windows.hpp"

#include <cmath>
#include <stdexcept>

namespace telto {
namespace {

WindowedDataset take_windows(const FlowSeries& input_series, const FlowSeries& target_series,
                             std::size_t t_in, std::size_t t_out, std::size_t first,
                             std::size_t count, const std::string& split) {
  const std::size_t e_in = input_series.entity_count;
  const std::size_t e_out = target_series.entity_count;
  const std::size_t T = input_series.steps();
  WindowedDataset ds;
  ds.t_in = t_in;
  ds.t_out = t_out;
  ds.split = split;
  ds.inputs = Tensor<double>({count, e_in, t_in}, 0.0);
  ds.targets = Tensor<double>({count, e_out, t_out}, 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t t0 = first + s;
    for (std::size_t e = 0; e < e_in; ++e)
      for (std::size_t k = 0; k < t_in; ++k)
        ds.inputs.data[(s * e_in + e) * t_in + k] = input_series.values.data[e * T + t0 + k];
    for (std::size_t e = 0; e < e_out; ++e)
      for (std::size_t k = 0; k < t_out; ++k)
        ds.targets.data[(s * e_out + e) * t_out + k] =
            target_series.values.data[e * T + t0 + t_in + k];
  }
  return ds;
}

}  // namespace

DatasetSplits make_windows(const FlowSeries& input_series, const FlowSeries& target_series,
                           std::size_t t_in, std::size_t t_out, const SplitRatios& ratios) {
  if (input_series.interval != target_series.interval ||
      input_series.start_timestamp != target_series.start_timestamp ||
      input_series.steps() != target_series.steps())
    throw std::invalid_argument("make_windows: series must share interval, start, and length");
  if (t_in == 0 || t_out == 0) throw std::invalid_argument("make_windows: window sizes must be > 0");
  const std::size_t T = input_series.steps();
  if (T < t_in + t_out)
    throw std::invalid_argument("make_windows: series too short for requested windows");
  if (std::abs(ratios.train + ratios.test + ratios.valid - 1.0) > 1e-9)
    throw std::invalid_argument("make_windows: split ratios must sum to 1");
  if (ratios.train < 0 || ratios.test < 0 || ratios.valid < 0)
    throw std::invalid_argument("make_windows: split ratios must be non-negative");

  const std::size_t S = T - (t_in + t_out) + 1;
  const std::size_t n_train = static_cast<std::size_t>(std::floor(ratios.train * S));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(ratios.test * S));
  const std::size_t n_valid = S - n_train - n_test;

  DatasetSplits splits;
  splits.train = take_windows(input_series, target_series, t_in, t_out, 0, n_train, "train");
  splits.test = take_windows(input_series, target_series, t_in, t_out, n_train, n_test, "test");
  splits.valid =
      take_windows(input_series, target_series, t_in, t_out, n_train + n_test, n_valid, "valid");
  return splits;
}

namespace {

// Entity index of flat element i for the given axis.
struct AxisView {
  std::size_t entities;
  std::size_t inner;
};

AxisView axis_view(const Tensor<double>& data, std::size_t entity_axis) {
  if (entity_axis >= data.shape.size())
    throw std::invalid_argument("normalizer: entity_axis out of range");
  AxisView view{data.shape[entity_axis], 1};
  for (std::size_t d = entity_axis + 1; d < data.shape.size(); ++d) view.inner *= data.shape[d];
  return view;
}

}  // namespace

NormalizationStats fit_normalizer(const Tensor<double>& data, std::size_t entity_axis,
                                  bool per_entity) {
  if (data.data.empty()) throw std::invalid_argument("fit_normalizer: empty input");
  const AxisView view = axis_view(data, entity_axis);
  const std::size_t groups = per_entity ? view.entities : 1;

  std::vector<double> sum(groups, 0.0), sum_sq(groups, 0.0), count(groups, 0.0);
  for (std::size_t i = 0; i < data.data.size(); ++i) {
    const std::size_t g = per_entity ? (i / view.inner) % view.entities : 0;
    sum[g] += data.data[i];
    sum_sq[g] += data.data[i] * data.data[i];
    count[g] += 1.0;
  }
  NormalizationStats stats;
  stats.per_entity = per_entity;
  stats.mean.assign(groups, 0.0);
  stats.std_dev.assign(groups, 1.0);
  for (std::size_t g = 0; g < groups; ++g) {
    if (count[g] == 0.0) throw std::invalid_argument("fit_normalizer: empty entity group");
    stats.mean[g] = sum[g] / count[g];
    const double var = sum_sq[g] / count[g] - stats.mean[g] * stats.mean[g];
    const double sd = var > 0.0 ? std::sqrt(var) : 0.0;
    if (sd < 1e-12) {
      stats.std_dev[g] = 1.0;
      stats.clamped = true;
    } else {
      stats.std_dev[g] = sd;
    }
  }
  return stats;
}

namespace {

Tensor<double> transform(const Tensor<double>& data, const NormalizationStats& stats,
                         std::size_t entity_axis, bool forward) {
  const AxisView view = axis_view(data, entity_axis);
  if (stats.per_entity && stats.mean.size() != view.entities)
    throw std::invalid_argument("normalizer: stats entity count mismatch");
  Tensor<double> out = data;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t g = stats.per_entity ? (i / view.inner) % view.entities : 0;
    if (forward)
      out.data[i] = (out.data[i] - stats.mean[g]) / stats.std_dev[g];
    else
      out.data[i] = out.data[i] * stats.std_dev[g] + stats.mean[g];
  }
  return out;
}

}  // namespace

Tensor<double> apply_normalizer(const Tensor<double>& data, const NormalizationStats& stats,
                                std::size_t entity_axis) {
  return transform(data, stats, entity_axis, true);
}

Tensor<double> invert_normalizer(const Tensor<double>& data, const NormalizationStats& stats,
                                 std::size_t entity_axis) {
  return transform(data, stats, entity_axis, false);
}

}  // namespace telto
