#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/tensor.hpp"

namespace telto {

/// MAPE is masked: cells with zero truth are excluded and counted in
/// masked_cells; with no valid cell left it is undefined.
struct MetricValues {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  bool mape_defined = false;
  std::size_t cells = 0;
  std::size_t masked_cells = 0;
};

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t entities = 0;
  std::int64_t interval = 900;
  std::vector<MetricValues> per_horizon;  // index h is horizon step h+1
  MetricValues overall;                   // mean of the per-horizon values

  /// "15 min" style label for horizon step h+1.
  std::string horizon_label(std::size_t h) const;
};

/// Predictions and truth are [S,E,D'] in raw units.
MetricsReport compute_metrics(const Tensor<double>& predictions, const Tensor<double>& truth,
                              std::int64_t interval = 900);

struct IrValue {
  double value = 0.0;  // percent
  bool defined = false;
};

/// (without - with) / without x 100 per metric; undefined on zero baseline.
struct IrTriple {
  IrValue mae;
  IrValue rmse;
  IrValue mape;
};

struct ImprovementRatios {
  std::vector<IrTriple> per_horizon;
  IrTriple overall;
};

ImprovementRatios improvement_ratio(const MetricsReport& without_model,
                                    const MetricsReport& with_model);

/// Elementwise arithmetic mean of reports from repeated runs. MAPE entries
/// stay defined only if defined in every run.
MetricsReport mean_report(const std::vector<MetricsReport>& runs);

}  // namespace telto
