#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/flow.hpp"

namespace telto {

/// Accepts epoch seconds or ISO-8601 ("YYYY-MM-DD HH:MM:SS", 'T' separator
/// and trailing 'Z' allowed; treated as UTC).
std::int64_t parse_timestamp(const std::string& text);

/// Header: user_hash,timestamp,segment_id
void write_records_csv(const std::string& path, const std::vector<GctRecord>& records);
std::vector<GctRecord> read_records_csv(const std::string& path);

/// Header: timestamp,<entity_0>,...  One row per interval.
void write_flows_csv(const std::string& path, const FlowSeries& series,
                     const std::vector<std::string>& labels);
/// Interval inferred from consecutive row timestamps (default 900 for a
/// single-row file); rows must be uniformly spaced.
FlowSeries read_flows_csv(const std::string& path, FlowKind kind);

/// Generic rectangular output with a header row, used for predictions and
/// analysis artifacts.
void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows);

}  // namespace telto
