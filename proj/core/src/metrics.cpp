#include "telto/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace telto {

std::string MetricsReport::horizon_label(std::size_t h) const {
  const std::int64_t minutes = interval * static_cast<std::int64_t>(h + 1) / 60;
  return std::to_string(minutes) + " min";
}

MetricsReport compute_metrics(const Tensor<double>& predictions, const Tensor<double>& truth,
                              std::int64_t interval) {
  if (predictions.shape.size() != 3)
    throw std::invalid_argument("metrics: predictions must be [S,E,D']");
  if (predictions.shape != truth.shape)
    throw std::invalid_argument("metrics: prediction and truth shapes differ");
  const std::size_t S = predictions.shape[0], E = predictions.shape[1], D = predictions.shape[2];
  if (S == 0 || E == 0 || D == 0) throw std::invalid_argument("metrics: empty tensor");

  MetricsReport report;
  report.samples = S;
  report.entities = E;
  report.interval = interval;
  report.per_horizon.resize(D);

  for (std::size_t h = 0; h < D; ++h) {
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    std::size_t cells = 0, pct_cells = 0;
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t e = 0; e < E; ++e) {
        const std::size_t i = (s * E + e) * D + h;
        const double err = predictions.data[i] - truth.data[i];
        abs_sum += std::abs(err);
        sq_sum += err * err;
        ++cells;
        if (truth.data[i] != 0.0) {
          pct_sum += std::abs(err) / std::abs(truth.data[i]);
          ++pct_cells;
        }
      }
    }
    MetricValues& m = report.per_horizon[h];
    m.cells = cells;
    m.masked_cells = cells - pct_cells;
    m.mae = abs_sum / static_cast<double>(cells);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(cells));
    m.mape_defined = pct_cells > 0;
    m.mape = m.mape_defined ? pct_sum / static_cast<double>(pct_cells) * 100.0 : 0.0;
  }

  MetricValues& o = report.overall;
  std::size_t mape_terms = 0;
  for (const MetricValues& m : report.per_horizon) {
    o.mae += m.mae;
    o.rmse += m.rmse;
    o.cells += m.cells;
    o.masked_cells += m.masked_cells;
    if (m.mape_defined) {
      o.mape += m.mape;
      ++mape_terms;
    }
  }
  o.mae /= static_cast<double>(D);
  o.rmse /= static_cast<double>(D);
  o.mape_defined = mape_terms == D;
  o.mape = o.mape_defined ? o.mape / static_cast<double>(D) : 0.0;
  return report;
}

namespace {

IrValue single_ir(double without_value, double with_value, bool defined) {
  IrValue out;
  if (!defined || without_value == 0.0) return out;
  out.value = (without_value - with_value) / without_value * 100.0;
  out.defined = true;
  return out;
}

IrTriple triple_ir(const MetricValues& without_m, const MetricValues& with_m) {
  IrTriple out;
  out.mae = single_ir(without_m.mae, with_m.mae, true);
  out.rmse = single_ir(without_m.rmse, with_m.rmse, true);
  out.mape = single_ir(without_m.mape, with_m.mape,
                       without_m.mape_defined && with_m.mape_defined);
  return out;
}

}  // namespace

ImprovementRatios improvement_ratio(const MetricsReport& without_model,
                                    const MetricsReport& with_model) {
  if (without_model.per_horizon.size() != with_model.per_horizon.size())
    throw std::invalid_argument("metrics: reports cover different horizons");
  ImprovementRatios out;
  for (std::size_t h = 0; h < without_model.per_horizon.size(); ++h)
    out.per_horizon.push_back(triple_ir(without_model.per_horizon[h], with_model.per_horizon[h]));
  out.overall = triple_ir(without_model.overall, with_model.overall);
  return out;
}

namespace {

MetricValues mean_values(const std::vector<const MetricValues*>& terms) {
  MetricValues out;
  std::size_t mape_terms = 0;
  for (const MetricValues* m : terms) {
    out.mae += m->mae;
    out.rmse += m->rmse;
    out.cells += m->cells;
    out.masked_cells += m->masked_cells;
    if (m->mape_defined) {
      out.mape += m->mape;
      ++mape_terms;
    }
  }
  const double n = static_cast<double>(terms.size());
  out.mae /= n;
  out.rmse /= n;
  out.cells /= terms.size();
  out.masked_cells /= terms.size();
  out.mape_defined = mape_terms == terms.size();
  out.mape = out.mape_defined ? out.mape / n : 0.0;
  return out;
}

}  // namespace

MetricsReport mean_report(const std::vector<MetricsReport>& runs) {
  if (runs.empty()) throw std::invalid_argument("metrics: no reports to average");
  const std::size_t D = runs[0].per_horizon.size();
  for (const MetricsReport& r : runs)
    if (r.per_horizon.size() != D)
      throw std::invalid_argument("metrics: reports cover different horizons");

  MetricsReport out;
  out.samples = runs[0].samples;
  out.entities = runs[0].entities;
  out.interval = runs[0].interval;
  out.per_horizon.resize(D);
  std::vector<const MetricValues*> terms(runs.size());
  for (std::size_t h = 0; h < D; ++h) {
    for (std::size_t i = 0; i < runs.size(); ++i) terms[i] = &runs[i].per_horizon[h];
    out.per_horizon[h] = mean_values(terms);
  }
  for (std::size_t i = 0; i < runs.size(); ++i) terms[i] = &runs[i].overall;
  out.overall = mean_values(terms);
  return out;
}

}  // namespace telto
