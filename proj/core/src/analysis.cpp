#include "telto/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace telto {

namespace {

std::vector<double> entity_means(const FlowSeries& series) {
  const std::size_t E = series.entity_count, T = series.steps();
  std::vector<double> means(E, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) sum += series.values.at(e, t);
    means[e] = sum / static_cast<double>(T);
  }
  return means;
}

void check_series(const FlowSeries& series) {
  if (series.entity_count == 0 || series.steps() == 0)
    throw std::invalid_argument("analysis: empty series");
}

}  // namespace

DescriptiveStats describe(const FlowSeries& series) {
  check_series(series);
  DescriptiveStats out;
  out.kind = flow_kind_name(series.kind);
  out.entities = series.entity_count;
  out.steps = series.steps();
  out.samples = out.entities * out.steps;
  out.interval = series.interval;

  double sum = 0.0;
  for (double v : series.values.data) sum += v;
  out.grand_mean = sum / static_cast<double>(out.samples);
  double sq = 0.0;
  for (double v : series.values.data) sq += (v - out.grand_mean) * (v - out.grand_mean);
  out.grand_std = std::sqrt(sq / static_cast<double>(out.samples));

  const std::vector<double> means = entity_means(series);
  out.max_entity = static_cast<std::size_t>(
      std::max_element(means.begin(), means.end()) - means.begin());
  out.max_entity_mean = means[out.max_entity];
  return out;
}

HistogramResult histogram(const FlowSeries& series, std::size_t bins) {
  check_series(series);
  if (bins < 2) throw std::invalid_argument("histogram: need at least 2 bins");
  const std::vector<double> means = entity_means(series);
  const std::size_t n = means.size();

  double lo = means[0], hi = means[0];
  for (double v : means) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }

  HistogramResult out;
  out.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b)
    out.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  out.counts.assign(bins, 0);
  for (double v : means) {
    std::size_t b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    ++out.counts[b];
  }

  if (n >= 3) {
    double mean = 0.0;
    for (double v : means) mean += v;
    mean /= static_cast<double>(n);
    double m2 = 0.0, m3 = 0.0;
    for (double v : means) {
      const double d = v - mean;
      m2 += d * d;
      m3 += d * d * d;
    }
    const double s = std::sqrt(m2 / static_cast<double>(n - 1));
    if (s > 0.0) {
      const double nf = static_cast<double>(n);
      out.skewness = nf / ((nf - 1.0) * (nf - 2.0)) * m3 / (s * s * s);
      out.skewness_defined = true;
    }
  }
  return out;
}

namespace {

CorrelationEntry day_correlation(const FlowSeries& series, int focal, int other, int hops,
                                 std::size_t offset, std::size_t count) {
  CorrelationEntry out;
  out.route = other;
  out.hops = hops;

  double mx = 0.0, my = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    mx += series.values.at(static_cast<std::size_t>(focal), offset + t);
    my += series.values.at(static_cast<std::size_t>(other), offset + t);
  }
  mx /= static_cast<double>(count);
  my /= static_cast<double>(count);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t t = 0; t < count; ++t) {
    const double dx = series.values.at(static_cast<std::size_t>(focal), offset + t) - mx;
    const double dy = series.values.at(static_cast<std::size_t>(other), offset + t) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx > 0.0 && syy > 0.0) {
    out.r = sxy / std::sqrt(sxx * syy);
    out.defined = true;
  }
  return out;
}

}  // namespace

CorrelationRadar upstream_correlation(const FlowSeries& mobility, const RoadTopology& topology,
                                      int focal_route, std::size_t day_index, int max_hops) {
  check_series(mobility);
  if (mobility.kind != FlowKind::mobility)
    throw std::invalid_argument("correlation: expected a mobility series");
  if (mobility.entity_count != topology.route_count())
    throw std::invalid_argument("correlation: series does not cover the topology routes");
  if (focal_route < 0 || static_cast<std::size_t>(focal_route) >= topology.route_count())
    throw std::invalid_argument("correlation: focal route out of range");
  if (max_hops < 1) throw std::invalid_argument("correlation: max_hops must be positive");
  if (86400 % mobility.interval != 0)
    throw std::invalid_argument("correlation: interval must divide one day");
  const std::size_t per_day = static_cast<std::size_t>(86400 / mobility.interval);
  if ((day_index + 1) * per_day > mobility.steps())
    throw std::invalid_argument("correlation: day index past the end of the series");

  CorrelationRadar out;
  out.focal_route = focal_route;
  out.day_index = day_index;
  const std::size_t offset = day_index * per_day;

  // Breadth-first over upstream routes; each route is reported at its
  // smallest hop distance, the focal route never.
  std::vector<int> hop_of(topology.route_count(), -1);
  hop_of[static_cast<std::size_t>(focal_route)] = 0;
  std::vector<int> frontier{focal_route};
  for (int hop = 1; hop <= max_hops && !frontier.empty(); ++hop) {
    std::vector<int> next;
    for (int r : frontier) {
      for (int q : topology.upstream_map[static_cast<std::size_t>(r)]) {
        if (hop_of[static_cast<std::size_t>(q)] != -1) continue;
        hop_of[static_cast<std::size_t>(q)] = hop;
        next.push_back(q);
        out.entries.push_back(day_correlation(mobility, focal_route, q, hop, offset, per_day));
      }
    }
    frontier = std::move(next);
  }
  return out;
}

Tensor<double> weekly_profile(const FlowSeries& series, std::size_t entity) {
  check_series(series);
  if (entity >= series.entity_count)
    throw std::invalid_argument("weekly_profile: entity out of range");
  if (86400 % series.interval != 0)
    throw std::invalid_argument("weekly_profile: interval must divide one day");
  const std::size_t per_day = static_cast<std::size_t>(86400 / series.interval);
  if (series.steps() < 7 * per_day)
    throw std::invalid_argument("weekly_profile: series must span at least seven days");

  Tensor<double> sums({7, per_day}, 0.0);
  Tensor<double> counts({7, per_day}, 0.0);
  for (std::size_t t = 0; t < series.steps(); ++t) {
    const std::int64_t ts =
        series.start_timestamp + static_cast<std::int64_t>(t) * series.interval;
    // Epoch day 0 was a Thursday; shift so that 0 means Sunday.
    const std::size_t dow = static_cast<std::size_t>((ts / 86400 + 4) % 7);
    const std::size_t slot = static_cast<std::size_t>((ts % 86400) / series.interval);
    sums.at(dow, slot) += series.values.at(entity, t);
    counts.at(dow, slot) += 1.0;
  }
  for (std::size_t i = 0; i < sums.data.size(); ++i) sums.data[i] /= counts.data[i];
  return sums;
}

}  // namespace telto
