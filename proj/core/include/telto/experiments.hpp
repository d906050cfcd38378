#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/framework.hpp"
#include "telto/metrics.hpp"
#include "telto/topology.hpp"
#include "telto/train.hpp"
#include "telto/windows.hpp"

namespace telto {

struct ExperimentConfig {
  BackboneConfig backbone;     // baseline arm; should match the stage-1 architecture
  FrameworkConfig framework;
  TrainConfig train;           // shared by both arms; seeds are matched per run
  std::size_t runs = 5;
  std::uint64_t base_seed = 1;
  std::int64_t interval = 900;
};

/// Route-level baseline view of a framework dataset: every route carries its
/// start segment's GCT series as input and keeps the mobility targets.
DatasetSplits baseline_dataset(const DatasetSplits& data, const RoadTopology& topology);

struct ComparisonResult {
  std::size_t runs = 0;
  MetricsReport baseline;   // mean over runs, backbone without the framework
  MetricsReport framework;  // mean over runs
  ImprovementRatios ir;     // computed on the mean reports
  std::vector<MetricsReport> baseline_runs;
  std::vector<MetricsReport> framework_runs;
};

/// Trains both arms `runs` times with matched seeds (base_seed + run) and the
/// same budget, evaluates on the test split, and averages.
template <typename T>
ComparisonResult run_comparison(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                const RoadTopology& topology, const ExperimentConfig& config);

struct AblationRow {
  std::string name;
  AblationFlags flags;
  MetricsReport mean;
  std::vector<MetricsReport> runs;
  bool failed = false;
  std::string error;
};

/// The full model plus the four single-component ablations, trained with
/// matched seeds and budgets. A failure in one setting is recorded on its row
/// and does not abort the others.
template <typename T>
std::vector<AblationRow> run_ablations(const Stage1Model<T>& stage1, const DatasetSplits& data,
                                       const RoadTopology& topology,
                                       const ExperimentConfig& config);

std::string metrics_json(const MetricsReport& report);
std::string metrics_csv(const MetricsReport& report);
std::string metrics_markdown(const MetricsReport& report);
std::string comparison_json(const ComparisonResult& result);
std::string comparison_csv(const ComparisonResult& result);
std::string comparison_markdown(const ComparisonResult& result);
std::string ablation_json(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_markdown(const std::vector<AblationRow>& rows);

extern template ComparisonResult run_comparison<float>(const Stage1Model<float>&,
                                                       const DatasetSplits&, const RoadTopology&,
                                                       const ExperimentConfig&);
extern template ComparisonResult run_comparison<double>(const Stage1Model<double>&,
                                                        const DatasetSplits&, const RoadTopology&,
                                                        const ExperimentConfig&);
extern template std::vector<AblationRow> run_ablations<float>(const Stage1Model<float>&,
                                                              const DatasetSplits&,
                                                              const RoadTopology&,
                                                              const ExperimentConfig&);
extern template std::vector<AblationRow> run_ablations<double>(const Stage1Model<double>&,
                                                               const DatasetSplits&,
                                                               const RoadTopology&,
                                                               const ExperimentConfig&);

}  // namespace telto
