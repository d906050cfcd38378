#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/tensor.hpp"
#include "telto/topology.hpp"

namespace telto {

/// One cellular activity record, already resolved to a road segment.
struct GctRecord {
  std::string user_hash;
  std::int64_t timestamp = 0;  // seconds since epoch
  int segment_id = 0;
};

/// Two records of the same user on a route's start then end segment within
/// the pairing window; a proxy for one vehicular traversal.
struct GctPairing {
  std::string user_hash;
  int route_id = 0;
  std::int64_t start_time = 0;
  std::int64_t end_time = 0;
};

enum class FlowKind { gct, mobility };

std::string flow_kind_name(FlowKind kind);
FlowKind flow_kind_from_name(const std::string& name);

/// Timestamped count matrix, [entity_count, T]. Entities are segments for
/// gct series and routes for mobility series.
struct FlowSeries {
  FlowKind kind = FlowKind::gct;
  std::size_t entity_count = 0;
  std::int64_t interval = 900;
  std::int64_t start_timestamp = 0;
  Tensor<double> values;

  std::size_t steps() const { return entity_count == 0 ? 0 : values.shape.at(1); }
  std::int64_t end_timestamp() const {
    return start_timestamp + static_cast<std::int64_t>(steps()) * interval;
  }
};

constexpr std::int64_t kDefaultPairingWindow = 900;

/// Matches, per user and per route, a record on the start segment with a
/// later record on the end segment no more than `pairing_window` seconds
/// apart. Greedy earliest-match; each record is used at most once per route.
/// Records must be sorted by timestamp. Output sorted by start_time.
std::vector<GctPairing> pair_records(const std::vector<GctRecord>& records,
                                     const RoadTopology& topology,
                                     std::int64_t pairing_window = kDefaultPairingWindow);

/// Buckets record timestamps into per-segment interval counts over
/// [start, end). `end - start` must be a positive multiple of `interval`.
FlowSeries aggregate_flows(const std::vector<GctRecord>& records, const RoadTopology& topology,
                           std::int64_t interval, std::int64_t start, std::int64_t end);

/// Buckets pairing start times into per-route interval counts over [start, end).
FlowSeries aggregate_flows(const std::vector<GctPairing>& pairings, const RoadTopology& topology,
                           std::int64_t interval, std::int64_t start, std::int64_t end);

/// Column names for flow CSV files: segment labels, or "start_end" per route.
std::vector<std::string> entity_labels(const RoadTopology& topology, FlowKind kind);

}  // namespace telto
