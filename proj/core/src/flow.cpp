#include "telto/flow.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

namespace telto {

std::string flow_kind_name(FlowKind kind) {
  return kind == FlowKind::gct ? "gct" : "mobility";
}

FlowKind flow_kind_from_name(const std::string& name) {
  if (name == "gct") return FlowKind::gct;
  if (name == "mobility") return FlowKind::mobility;
  throw std::invalid_argument("unknown flow kind: " + name);
}

std::vector<GctPairing> pair_records(const std::vector<GctRecord>& records,
                                     const RoadTopology& topology, std::int64_t pairing_window) {
  if (pairing_window <= 0) throw std::invalid_argument("pair_records: pairing_window must be > 0");
  const int n = static_cast<int>(topology.segment_count());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].segment_id < 0 || records[i].segment_id >= n)
      throw std::invalid_argument("pair_records: unknown segment_id " +
                                  std::to_string(records[i].segment_id));
    if (i > 0 && records[i].timestamp < records[i - 1].timestamp)
      throw std::invalid_argument("pair_records: records not sorted by timestamp");
  }

  // Per user, per segment, the record times in ascending order.
  std::unordered_map<std::string, std::unordered_map<int, std::vector<std::int64_t>>> by_user;
  for (const GctRecord& rec : records) by_user[rec.user_hash][rec.segment_id].push_back(rec.timestamp);

  std::vector<GctPairing> out;
  for (const auto& [user, by_segment] : by_user) {
    for (const Route& route : topology.routes) {
      auto s_it = by_segment.find(route.start_segment);
      auto e_it = by_segment.find(route.end_segment);
      if (s_it == by_segment.end() || e_it == by_segment.end()) continue;
      const std::vector<std::int64_t>& starts = s_it->second;
      const std::vector<std::int64_t>& ends = e_it->second;
      // Greedy earliest-match: walk starts in order, pairing each with the
      // earliest unused end inside (start, start + window]. Ends at or before
      // the current start can never match a later start either.
      std::size_t e = 0;
      for (std::int64_t s : starts) {
        while (e < ends.size() && ends[e] <= s) ++e;
        if (e == ends.size()) break;
        if (ends[e] - s <= pairing_window) {
          out.push_back({user, route.id, s, ends[e]});
          ++e;
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const GctPairing& a, const GctPairing& b) {
    return std::tie(a.start_time, a.route_id, a.end_time, a.user_hash) <
           std::tie(b.start_time, b.route_id, b.end_time, b.user_hash);
  });
  return out;
}

namespace {

FlowSeries make_series(FlowKind kind, std::size_t entities, std::int64_t interval,
                       std::int64_t start, std::int64_t end) {
  if (interval <= 0) throw std::invalid_argument("aggregate_flows: interval must be > 0");
  if (start >= end || (end - start) % interval != 0)
    throw std::invalid_argument("aggregate_flows: [start,end) must be a positive multiple of interval");
  FlowSeries series;
  series.kind = kind;
  series.entity_count = entities;
  series.interval = interval;
  series.start_timestamp = start;
  series.values = Tensor<double>({entities, static_cast<std::size_t>((end - start) / interval)}, 0.0);
  return series;
}

}  // namespace

FlowSeries aggregate_flows(const std::vector<GctRecord>& records, const RoadTopology& topology,
                           std::int64_t interval, std::int64_t start, std::int64_t end) {
  FlowSeries series = make_series(FlowKind::gct, topology.segment_count(), interval, start, end);
  const std::size_t T = series.steps();
  for (const GctRecord& rec : records) {
    if (rec.segment_id < 0 || rec.segment_id >= static_cast<int>(series.entity_count))
      throw std::invalid_argument("aggregate_flows: unknown segment_id " +
                                  std::to_string(rec.segment_id));
    if (rec.timestamp < start || rec.timestamp >= end) continue;
    const std::size_t t = static_cast<std::size_t>((rec.timestamp - start) / interval);
    series.values.data[rec.segment_id * T + t] += 1.0;
  }
  return series;
}

FlowSeries aggregate_flows(const std::vector<GctPairing>& pairings, const RoadTopology& topology,
                           std::int64_t interval, std::int64_t start, std::int64_t end) {
  FlowSeries series = make_series(FlowKind::mobility, topology.route_count(), interval, start, end);
  const std::size_t T = series.steps();
  for (const GctPairing& p : pairings) {
    if (p.route_id < 0 || p.route_id >= static_cast<int>(series.entity_count))
      throw std::invalid_argument("aggregate_flows: unknown route_id " + std::to_string(p.route_id));
    if (p.start_time < start || p.start_time >= end) continue;
    const std::size_t t = static_cast<std::size_t>((p.start_time - start) / interval);
    series.values.data[p.route_id * T + t] += 1.0;
  }
  return series;
}

std::vector<std::string> entity_labels(const RoadTopology& topology, FlowKind kind) {
  std::vector<std::string> labels;
  if (kind == FlowKind::gct) {
    for (const Segment& s : topology.segments) labels.push_back(s.label);
  } else {
    for (const Route& r : topology.routes)
      labels.push_back(std::to_string(r.start_segment) + "_" + std::to_string(r.end_segment));
  }
  return labels;
}

}  // namespace telto
