#include "telto/experiments.hpp"

#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace telto {

namespace {

WindowedDataset baseline_window(const WindowedDataset& data, const RoadTopology& topology) {
  WindowedDataset out;
  out.t_in = data.t_in;
  out.t_out = data.t_out;
  out.split = data.split;
  out.targets = data.targets;
  if (data.sample_count() == 0) return out;

  const std::size_t S = data.inputs.shape[0], T = data.inputs.shape[2];
  const std::size_t M = topology.route_count();
  out.inputs = Tensor<double>({S, M, T}, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t r = 0; r < M; ++r) {
      const std::size_t seg = static_cast<std::size_t>(topology.routes[r].start_segment);
      const double* src = &data.inputs.data[(s * data.inputs.shape[1] + seg) * T];
      double* dst = &out.inputs.data[(s * M + r) * T];
      for (std::size_t t = 0; t < T; ++t) dst[t] = src[t];
    }
  }
  return out;
}

}  // namespace

DatasetSplits baseline_dataset(const DatasetSplits& data, const RoadTopology& topology) {
  if (data.train.sample_count() == 0)
    throw std::invalid_argument("baseline: empty train split");
  if (data.train.inputs.shape[1] != topology.segment_count())
    throw std::invalid_argument("baseline: inputs must cover the topology segments");
  if (data.train.targets.shape[1] != topology.route_count())
    throw std::invalid_argument("baseline: targets must cover the topology routes");
  DatasetSplits out;
  out.train = baseline_window(data.train, topology);
  out.test = baseline_window(data.test, topology);
  out.valid = baseline_window(data.valid, topology);
  return out;
}

template <typename T>
ComparisonResult run_comparison(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                const RoadTopology& topology, const ExperimentConfig& config) {
  if (config.runs == 0) throw std::invalid_argument("comparison: runs must be positive");
  if (data.test.sample_count() == 0)
    throw std::invalid_argument("comparison: empty test split");

  const DatasetSplits base_data = baseline_dataset(data, topology);
  BackboneConfig base_cfg = config.backbone;
  base_cfg.input_channels = 1;

  ComparisonResult result;
  result.runs = config.runs;
  for (std::size_t run = 0; run < config.runs; ++run) {
    TrainConfig tc = config.train;
    tc.seed = config.base_seed + run;

    BackboneTrainResult<T> base =
        train_backbone<T>(base_data, topology.route_adjacency, base_cfg, tc);
    const GraphOps<T> route_graph = make_graph_ops<T>(topology.route_adjacency);
    const Tensor<double> base_pred = backbone_predict_all(
        base.backbone, route_graph, base_data.test.inputs, base.input_stats, base.target_stats);
    result.baseline_runs.push_back(
        compute_metrics(base_pred, data.test.targets, config.interval));

    FrameworkModel<T> model =
        train_framework<T>(stage1, data, topology, config.framework, tc);
    const Tensor<double> pred = framework_predict_all(model, data.test.inputs);
    result.framework_runs.push_back(compute_metrics(pred, data.test.targets, config.interval));
  }

  result.baseline = mean_report(result.baseline_runs);
  result.framework = mean_report(result.framework_runs);
  result.ir = improvement_ratio(result.baseline, result.framework);
  return result;
}

template <typename T>
std::vector<AblationRow> run_ablations(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                       const RoadTopology& topology,
                                       const ExperimentConfig& config) {
  if (config.runs == 0) throw std::invalid_argument("ablation: runs must be positive");
  if (data.test.sample_count() == 0) throw std::invalid_argument("ablation: empty test split");

  std::vector<AblationFlags> settings(5);
  settings[1].no_stage1_features = true;
  settings[2].no_transform = true;
  settings[3].no_enhance = true;
  settings[4].no_stage2 = true;

  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : settings) {
    AblationRow row;
    row.flags = flags;
    row.name = flags.label();
    try {
      for (std::size_t run = 0; run < config.runs; ++run) {
        TrainConfig tc = config.train;
        tc.seed = config.base_seed + run;
        FrameworkConfig fc = config.framework;
        fc.ablation = flags;
        FrameworkModel<T> model = train_framework<T>(stage1, data, topology, fc, tc);
        const Tensor<double> pred = framework_predict_all(model, data.test.inputs);
        row.runs.push_back(compute_metrics(pred, data.test.targets, config.interval));
      }
      row.mean = mean_report(row.runs);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

using nlohmann::json;

json values_json(const MetricValues& m) {
  json j;
  j["mae"] = m.mae;
  j["rmse"] = m.rmse;
  j["mape"] = m.mape_defined ? json(m.mape) : json(nullptr);
  j["cells"] = m.cells;
  j["masked_cells"] = m.masked_cells;
  return j;
}

json report_json(const MetricsReport& r) {
  json j;
  j["samples"] = r.samples;
  j["entities"] = r.entities;
  j["interval"] = r.interval;
  json horizons = json::array();
  for (std::size_t h = 0; h < r.per_horizon.size(); ++h) {
    json row = values_json(r.per_horizon[h]);
    row["horizon"] = h + 1;
    row["label"] = r.horizon_label(h);
    horizons.push_back(std::move(row));
  }
  j["per_horizon"] = std::move(horizons);
  j["overall"] = values_json(r.overall);
  return j;
}

json ir_json(const IrValue& v) { return v.defined ? json(v.value) : json(nullptr); }

json ir_triple_json(const IrTriple& t) {
  json j;
  j["mae"] = ir_json(t.mae);
  j["rmse"] = ir_json(t.rmse);
  j["mape"] = ir_json(t.mape);
  return j;
}

json ratios_json(const ImprovementRatios& ir) {
  json j;
  json horizons = json::array();
  for (std::size_t h = 0; h < ir.per_horizon.size(); ++h) {
    json row = ir_triple_json(ir.per_horizon[h]);
    row["horizon"] = h + 1;
    horizons.push_back(std::move(row));
  }
  j["per_horizon"] = std::move(horizons);
  j["overall"] = ir_triple_json(ir.overall);
  return j;
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << v;
  return out.str();
}

std::string opt_num(double v, bool defined) { return defined ? num(v) : "n/a"; }

std::string metric_of(const MetricValues& m, std::size_t metric) {
  switch (metric) {
    case 0: return num(m.mae);
    case 1: return num(m.rmse);
    default: return opt_num(m.mape, m.mape_defined);
  }
}

const char* kMetricNames[3] = {"MAE", "RMSE", "MAPE (%)"};

}  // namespace

std::string metrics_json(const MetricsReport& report) { return report_json(report).dump(2) + "\n"; }

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream out;
  out << "horizon,label,mae,rmse,mape,cells,masked_cells\n";
  auto row = [&out, &report](const std::string& horizon, const std::string& label,
                             const MetricValues& m) {
    out << horizon << "," << label << "," << num(m.mae) << "," << num(m.rmse) << ","
        << (m.mape_defined ? num(m.mape) : "") << "," << m.cells << "," << m.masked_cells << "\n";
  };
  for (std::size_t h = 0; h < report.per_horizon.size(); ++h)
    row(std::to_string(h + 1), report.horizon_label(h), report.per_horizon[h]);
  row("overall", "overall", report.overall);
  return out.str();
}

std::string metrics_markdown(const MetricsReport& report) {
  std::ostringstream out;
  out << "| Metric |";
  for (std::size_t h = 0; h < report.per_horizon.size(); ++h)
    out << " " << report.horizon_label(h) << " |";
  out << " Overall |\n|---|";
  for (std::size_t h = 0; h <= report.per_horizon.size(); ++h) out << "---|";
  out << "\n";
  for (std::size_t metric = 0; metric < 3; ++metric) {
    out << "| " << kMetricNames[metric] << " |";
    for (const MetricValues& m : report.per_horizon) out << " " << metric_of(m, metric) << " |";
    out << " " << metric_of(report.overall, metric) << " |\n";
  }
  return out.str();
}

std::string comparison_json(const ComparisonResult& result) {
  json j;
  j["runs"] = result.runs;
  j["baseline"] = report_json(result.baseline);
  j["framework"] = report_json(result.framework);
  j["improvement_ratio"] = ratios_json(result.ir);
  json base_runs = json::array(), frame_runs = json::array();
  for (const MetricsReport& r : result.baseline_runs) base_runs.push_back(report_json(r));
  for (const MetricsReport& r : result.framework_runs) frame_runs.push_back(report_json(r));
  j["baseline_runs"] = std::move(base_runs);
  j["framework_runs"] = std::move(frame_runs);
  return j.dump(2) + "\n";
}

std::string comparison_csv(const ComparisonResult& result) {
  std::ostringstream out;
  out << "metric,horizon,label,baseline,framework,ir_percent\n";
  const std::size_t D = result.baseline.per_horizon.size();
  for (std::size_t metric = 0; metric < 3; ++metric) {
    for (std::size_t h = 0; h <= D; ++h) {
      const bool overall = h == D;
      const MetricValues& b = overall ? result.baseline.overall : result.baseline.per_horizon[h];
      const MetricValues& f = overall ? result.framework.overall : result.framework.per_horizon[h];
      const IrTriple& ir = overall ? result.ir.overall : result.ir.per_horizon[h];
      const IrValue& irv = metric == 0 ? ir.mae : metric == 1 ? ir.rmse : ir.mape;
      out << kMetricNames[metric] << "," << (overall ? "overall" : std::to_string(h + 1)) << ","
          << (overall ? "overall" : result.baseline.horizon_label(h)) << ","
          << metric_of(b, metric) << "," << metric_of(f, metric) << ","
          << (irv.defined ? num(irv.value) : "") << "\n";
    }
  }
  return out.str();
}

std::string comparison_markdown(const ComparisonResult& result) {
  std::ostringstream out;
  const std::size_t D = result.baseline.per_horizon.size();
  out << "| Metric | Model |";
  for (std::size_t h = 0; h < D; ++h) out << " " << result.baseline.horizon_label(h) << " |";
  out << " Overall |\n|---|---|";
  for (std::size_t h = 0; h <= D; ++h) out << "---|";
  out << "\n";
  for (std::size_t metric = 0; metric < 3; ++metric) {
    out << "| " << kMetricNames[metric] << " | w/o framework |";
    for (const MetricValues& m : result.baseline.per_horizon)
      out << " " << metric_of(m, metric) << " |";
    out << " " << metric_of(result.baseline.overall, metric) << " |\n";
    out << "| " << kMetricNames[metric] << " | with framework |";
    for (const MetricValues& m : result.framework.per_horizon)
      out << " " << metric_of(m, metric) << " |";
    out << " " << metric_of(result.framework.overall, metric) << " |\n";
    out << "| " << kMetricNames[metric] << " | IR (%) |";
    for (const IrTriple& t : result.ir.per_horizon) {
      const IrValue& v = metric == 0 ? t.mae : metric == 1 ? t.rmse : t.mape;
      out << " " << opt_num(v.value, v.defined) << " |";
    }
    const IrValue& ov =
        metric == 0 ? result.ir.overall.mae : metric == 1 ? result.ir.overall.rmse
                                                          : result.ir.overall.mape;
    out << " " << opt_num(ov.value, ov.defined) << " |\n";
  }
  return out.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows) {
  json j = json::array();
  for (const AblationRow& row : rows) {
    json r;
    r["name"] = row.name;
    r["failed"] = row.failed;
    if (row.failed) {
      r["error"] = row.error;
    } else {
      r["mean"] = report_json(row.mean);
      json runs = json::array();
      for (const MetricsReport& m : row.runs) runs.push_back(report_json(m));
      r["runs"] = std::move(runs);
    }
    j.push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,mae,rmse,mape,failed\n";
  for (const AblationRow& row : rows) {
    if (row.failed) {
      out << row.name << ",,,," << "true\n";
    } else {
      const MetricValues& m = row.mean.overall;
      out << row.name << "," << num(m.mae) << "," << num(m.rmse) << ","
          << (m.mape_defined ? num(m.mape) : "") << ",false\n";
    }
  }
  return out.str();
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "| Variant | MAE | RMSE | MAPE (%) |\n|---|---|---|---|\n";
  for (const AblationRow& row : rows) {
    if (row.failed) {
      out << "| " << row.name << " | failed | failed | failed |\n";
    } else {
      const MetricValues& m = row.mean.overall;
      out << "| " << row.name << " | " << num(m.mae) << " | " << num(m.rmse) << " | "
          << opt_num(m.mape, m.mape_defined) << " |\n";
    }
  }
  return out.str();
}

template ComparisonResult run_comparison<float>(const Stage1Model<float>&, const DatasetSplits&,
                                                const RoadTopology&, const ExperimentConfig&);
template ComparisonResult run_comparison<double>(const Stage1Model<double>&, const DatasetSplits&,
                                                 const RoadTopology&, const ExperimentConfig&);
template std::vector<AblationRow> run_ablations<float>(const Stage1Model<float>&,
                                                       const DatasetSplits&, const RoadTopology&,
                                                       const ExperimentConfig&);
template std::vector<AblationRow> run_ablations<double>(const Stage1Model<double>&,
                                                        const DatasetSplits&, const RoadTopology&,
                                                        const ExperimentConfig&);

}  // namespace telto
