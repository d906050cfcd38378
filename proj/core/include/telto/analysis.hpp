#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/flow.hpp"
#include "telto/tensor.hpp"
#include "telto/topology.hpp"

namespace telto {

struct DescriptiveStats {
  std::string kind;
  std::size_t entities = 0;
  std::size_t steps = 0;
  std::size_t samples = 0;  // entities x steps
  std::int64_t interval = 900;
  double grand_mean = 0.0;
  double grand_std = 0.0;  // population
  double max_entity_mean = 0.0;
  std::size_t max_entity = 0;
};

DescriptiveStats describe(const FlowSeries& series);

/// Histogram of per-entity means with uniform bins over their range; counts
/// sum to the entity count. Skewness is the adjusted Fisher-Pearson sample
/// coefficient, undefined for fewer than three entities or zero spread.
struct HistogramResult {
  std::vector<double> edges;        // bins + 1
  std::vector<std::size_t> counts;  // bins
  double skewness = 0.0;
  bool skewness_defined = false;
};

HistogramResult histogram(const FlowSeries& series, std::size_t bins);

struct CorrelationEntry {
  int route = 0;
  int hops = 1;
  double r = 0.0;
  bool defined = false;  // false when either series has zero variance
};

/// Pearson correlation between the focal route and each route up to
/// `max_hops` upstream of it, over one day of the series.
struct CorrelationRadar {
  int focal_route = 0;
  std::size_t day_index = 0;
  std::vector<CorrelationEntry> entries;
};

CorrelationRadar upstream_correlation(const FlowSeries& mobility, const RoadTopology& topology,
                                      int focal_route, std::size_t day_index, int max_hops = 2);

/// Per-weekday per-slot means for one entity, [7, steps_per_day] with
/// weekday 0 Sunday. Requires at least seven full days of data.
Tensor<double> weekly_profile(const FlowSeries& series, std::size_t entity);

}  // namespace telto
