#include "telto/csv.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace telto {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

std::string trimmed(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  std::string s = trimmed(text);
  if (s.empty()) throw std::invalid_argument("timestamp: empty field");
  bool numeric = true;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i])) && !(i == 0 && s[i] == '-')) {
      numeric = false;
      break;
    }
  if (numeric) return std::stoll(s);

  if (!s.empty() && (s.back() == 'Z' || s.back() == 'z')) s.pop_back();
  int y, mo, d, h = 0, mi = 0;
  double sec = 0.0;
  char sep;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%lf", &y, &mo, &d, &sep, &h, &mi, &sec) >= 3) {
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 ||
        sec >= 61)
      throw std::invalid_argument("timestamp: out-of-range field in '" + text + "'");
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 +
           static_cast<std::int64_t>(sec);
  }
  throw std::invalid_argument("timestamp: cannot parse '" + text + "'");
}

void write_records_csv(const std::string& path, const std::vector<GctRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  out << "user_hash,timestamp,segment_id\n";
  for (const GctRecord& r : records)
    out << r.user_hash << ',' << r.timestamp << ',' << r.segment_id << '\n';
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

std::vector<GctRecord> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
  std::vector<GctRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (fields.size() != 3)
      throw std::runtime_error("csv: " + path + ":" + std::to_string(line_no) +
                               ": expected 3 fields");
    GctRecord r;
    r.user_hash = trimmed(fields[0]);
    r.timestamp = parse_timestamp(fields[1]);
    r.segment_id = std::stoi(trimmed(fields[2]));
    records.push_back(std::move(r));
  }
  return records;
}

void write_flows_csv(const std::string& path, const FlowSeries& series,
                     const std::vector<std::string>& labels) {
  if (labels.size() != series.entity_count)
    throw std::invalid_argument("csv: label count does not match entity count");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  out << "timestamp";
  for (const std::string& label : labels) out << ',' << label;
  out << '\n';
  const std::size_t T = series.steps();
  char buf[32];
  for (std::size_t t = 0; t < T; ++t) {
    out << series.start_timestamp + static_cast<std::int64_t>(t) * series.interval;
    for (std::size_t e = 0; e < series.entity_count; ++e) {
      std::snprintf(buf, sizeof(buf), "%.17g", series.values.data[e * T + t]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

FlowSeries read_flows_csv(const std::string& path, FlowKind kind) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: empty file " + path);
  const std::vector<std::string> header = split_line(line);
  if (header.size() < 2 || trimmed(header[0]) != "timestamp")
    throw std::runtime_error("csv: " + path + ": expected 'timestamp,<entities...>' header");
  const std::size_t entities = header.size() - 1;

  std::vector<std::int64_t> timestamps;
  std::vector<double> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trimmed(line).empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    if (fields.size() != entities + 1)
      throw std::runtime_error("csv: " + path + ":" + std::to_string(line_no) +
                               ": expected " + std::to_string(entities + 1) + " fields");
    timestamps.push_back(parse_timestamp(fields[0]));
    for (std::size_t e = 0; e < entities; ++e) cells.push_back(std::stod(fields[e + 1]));
  }
  if (timestamps.empty()) throw std::runtime_error("csv: " + path + ": no data rows");

  FlowSeries series;
  series.kind = kind;
  series.entity_count = entities;
  series.start_timestamp = timestamps[0];
  series.interval = timestamps.size() > 1 ? timestamps[1] - timestamps[0] : 900;
  if (series.interval <= 0) throw std::runtime_error("csv: " + path + ": non-increasing timestamps");
  for (std::size_t t = 1; t < timestamps.size(); ++t)
    if (timestamps[t] - timestamps[t - 1] != series.interval)
      throw std::runtime_error("csv: " + path + ": rows not uniformly spaced at row " +
                               std::to_string(t + 1));
  const std::size_t T = timestamps.size();
  series.values = Tensor<double>({entities, T}, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t e = 0; e < entities; ++e)
      series.values.data[e * T + t] = cells[t * entities + e];
  return series;
}

void write_table_csv(const std::string& path, const std::vector<std::string>& header,
                     const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  char buf[32];
  for (const std::vector<double>& row : rows) {
    if (row.size() != header.size())
      throw std::invalid_argument("csv: row width does not match header");
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("csv: write failed for " + path);
}

}  // namespace telto
