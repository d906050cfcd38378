#pragma once

#include <cstdint>
#include <vector>

#include "telto/flow.hpp"
#include "telto/topology.hpp"

namespace telto {

/// Knobs for the synthetic traffic simulator. Defaults are calibrated so a
/// 31-day run over the demo topology lands near the reference dataset's
/// grand means (GCT ~159.9, mobility ~12.9).
struct GeneratorConfig {
  int days = 31;
  std::int64_t interval = 900;
  /// 2022-08-28 00:00 UTC, a Sunday, so weekday profiles align.
  std::int64_t start_timestamp = 1661644800;

  double gct_mean = 159.9;
  double mob_mean = 12.9;

  /// Strength of the commute bumps (0 = no rush hours).
  double commute_amplitude = 1.0;
  /// Day/night swing (0 = flat base profile).
  double diurnal_strength = 1.0;
  /// Weekend level relative to weekdays.
  double weekend_factor = 0.6;

  /// Lognormal AR(1) rate jitter per entity; 0 switches sampling from
  /// Poisson to deterministic rounded counts.
  double noise_level = 0.1;

  /// Probability a finished traversal continues onto a downstream route.
  double propagation = 0.55;
  /// Upper bound on the dwell between consecutive legs, seconds.
  std::int64_t propagation_delay = 450;

  /// Lognormal sigma of per-entity level multipliers (right-skews means).
  double entity_spread = 0.6;
  /// Relative per-entity levels; empty = draw lognormal multipliers.
  std::vector<double> segment_level_overrides;
  std::vector<double> route_level_overrides;

  /// When false, the record list is left empty; flows are unchanged.
  bool emit_records = true;
};

struct SyntheticData {
  std::vector<GctRecord> records;  // sorted by timestamp
  FlowSeries gct;
  FlowSeries mob;
};

/// Simulates route traversals (paired records on both endpoint segments plus
/// chained downstream continuations) and stationary background pings
/// (records without mobility). Deterministic per seed. The emitted flows are
/// exactly what pair_records + aggregate_flows reconstruct from the records.
SyntheticData generate_synthetic(const RoadTopology& topology, const GeneratorConfig& config,
                                 std::uint64_t seed);

}  // namespace telto
