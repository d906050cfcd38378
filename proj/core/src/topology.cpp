#include "telto/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace telto {
namespace {

using nlohmann::json;

void check_segments(const std::vector<Segment>& segments) {
  const int n = static_cast<int>(segments.size());
  std::vector<bool> seen(segments.size(), false);
  for (const Segment& s : segments) {
    if (s.id < 0 || s.id >= n)
      throw std::invalid_argument("topology: segment id " + std::to_string(s.id) +
                                  " outside dense range [0," + std::to_string(n) + ")");
    if (seen[s.id]) throw std::invalid_argument("topology: duplicate segment id " + std::to_string(s.id));
    seen[s.id] = true;
    if (s.latitude < -90.0 || s.latitude > 90.0 || s.longitude < -180.0 || s.longitude > 180.0)
      throw std::invalid_argument("topology: segment " + std::to_string(s.id) +
                                  " has out-of-range coordinates");
  }
}

void check_routes(const std::vector<Route>& routes, std::size_t n_segments) {
  const int m = static_cast<int>(routes.size());
  std::vector<bool> seen(routes.size(), false);
  std::set<std::pair<int, int>> pairs;
  for (const Route& r : routes) {
    if (r.id < 0 || r.id >= m)
      throw std::invalid_argument("topology: route id " + std::to_string(r.id) +
                                  " outside dense range [0," + std::to_string(m) + ")");
    if (seen[r.id]) throw std::invalid_argument("topology: duplicate route id " + std::to_string(r.id));
    seen[r.id] = true;
    if (r.start_segment == r.end_segment)
      throw std::invalid_argument("topology: route " + std::to_string(r.id) +
                                  " starts and ends on segment " + std::to_string(r.start_segment));
    for (int endpoint : {r.start_segment, r.end_segment})
      if (endpoint < 0 || endpoint >= static_cast<int>(n_segments))
        throw std::invalid_argument("topology: route " + std::to_string(r.id) +
                                    " references missing segment " + std::to_string(endpoint));
    if (!pairs.insert({r.start_segment, r.end_segment}).second)
      throw std::invalid_argument("topology: route " + std::to_string(r.id) + " duplicates pair (" +
                                  std::to_string(r.start_segment) + "," +
                                  std::to_string(r.end_segment) + ")");
  }
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

void hash_string(std::uint64_t& h, const std::string& s) {
  hash_bytes(h, s.data(), s.size());
  hash_bytes(h, "\x1f", 1);
}

}  // namespace

RoadTopology build_topology(std::vector<Segment> segments, std::vector<Route> routes,
                            TopologyOptions options) {
  check_segments(segments);
  check_routes(routes, segments.size());
  std::sort(segments.begin(), segments.end(),
            [](const Segment& a, const Segment& b) { return a.id < b.id; });
  std::sort(routes.begin(), routes.end(), [](const Route& a, const Route& b) { return a.id < b.id; });

  RoadTopology topo;
  topo.segments = std::move(segments);
  topo.routes = std::move(routes);
  topo.options = options;

  const std::size_t n = topo.segments.size();
  const std::size_t m = topo.routes.size();

  topo.segment_adjacency = Tensor<double>({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) topo.segment_adjacency.at(i, i) = 1.0;
  for (const Route& r : topo.routes) {
    topo.segment_adjacency.at(r.start_segment, r.end_segment) = 1.0;
    topo.segment_adjacency.at(r.end_segment, r.start_segment) = 1.0;
  }

  topo.route_adjacency = Tensor<double>({m, m}, 0.0);
  for (std::size_t a = 0; a < m; ++a) {
    topo.route_adjacency.at(a, a) = 1.0;
    for (std::size_t b = 0; b < m; ++b)
      if (topo.routes[a].end_segment == topo.routes[b].start_segment)
        topo.route_adjacency.at(a, b) = 1.0;
  }

  topo.upstream_map.resize(m);
  for (std::size_t r = 0; r < m; ++r) {
    const Route& route = topo.routes[r];
    for (std::size_t q = 0; q < m; ++q) {
      const Route& cand = topo.routes[q];
      if (cand.end_segment != route.start_segment) continue;
      if (options.exclude_reverse && cand.start_segment == route.end_segment &&
          cand.end_segment == route.start_segment)
        continue;
      topo.upstream_map[r].push_back(cand.id);
    }
    std::sort(topo.upstream_map[r].begin(), topo.upstream_map[r].end());
  }
  return topo;
}

RoadTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("topology: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("topology: malformed JSON in " + path + ": " + e.what());
  }
  if (!j.contains("segments") || !j.contains("routes"))
    throw std::runtime_error("topology: " + path + " missing 'segments' or 'routes'");

  std::vector<Segment> segments;
  for (const json& js : j.at("segments")) {
    Segment s;
    s.id = js.at("id").get<int>();
    s.label = js.at("label").get<std::string>();
    s.latitude = js.at("lat").get<double>();
    s.longitude = js.at("lon").get<double>();
    segments.push_back(std::move(s));
  }
  std::vector<Route> routes;
  for (const json& jr : j.at("routes")) {
    Route r;
    r.id = jr.at("id").get<int>();
    r.start_segment = jr.at("start").get<int>();
    r.end_segment = jr.at("end").get<int>();
    routes.push_back(r);
  }
  TopologyOptions options;
  if (j.contains("options") && j.at("options").contains("exclude_reverse"))
    options.exclude_reverse = j.at("options").at("exclude_reverse").get<bool>();
  return build_topology(std::move(segments), std::move(routes), options);
}

void save_topology(const RoadTopology& topology, const std::string& path) {
  json j;
  j["segments"] = json::array();
  for (const Segment& s : topology.segments)
    j["segments"].push_back({{"id", s.id}, {"label", s.label}, {"lat", s.latitude}, {"lon", s.longitude}});
  j["routes"] = json::array();
  for (const Route& r : topology.routes)
    j["routes"].push_back({{"id", r.id}, {"start", r.start_segment}, {"end", r.end_segment}});
  j["options"] = {{"exclude_reverse", topology.options.exclude_reverse}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("topology: cannot write " + path);
  out << j.dump(2) << "\n";
}

std::uint64_t topology_hash(const RoadTopology& topology) {
  std::uint64_t h = 1469598103934665603ULL;
  char buf[64];
  for (const Segment& s : topology.segments) {
    std::snprintf(buf, sizeof(buf), "%d|%.17g|%.17g", s.id, s.latitude, s.longitude);
    hash_string(h, buf);
    hash_string(h, s.label);
  }
  for (const Route& r : topology.routes) {
    std::snprintf(buf, sizeof(buf), "%d|%d|%d", r.id, r.start_segment, r.end_segment);
    hash_string(h, buf);
  }
  hash_string(h, topology.options.exclude_reverse ? "xr1" : "xr0");
  return h;
}

Tensor<double> row_normalized(const Tensor<double>& adjacency) {
  if (adjacency.shape.size() != 2 || adjacency.shape[0] != adjacency.shape[1])
    throw std::invalid_argument("row_normalized: need a square matrix");
  const std::size_t n = adjacency.shape[0];
  Tensor<double> out = adjacency;
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += adjacency.at(i, j);
    if (deg <= 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= deg;
  }
  return out;
}

Tensor<double> transposed(const Tensor<double>& matrix) {
  if (matrix.shape.size() != 2) throw std::invalid_argument("transposed: need a matrix");
  Tensor<double> out({matrix.shape[1], matrix.shape[0]}, 0.0);
  for (std::size_t i = 0; i < matrix.shape[0]; ++i)
    for (std::size_t j = 0; j < matrix.shape[1]; ++j) out.at(j, i) = matrix.at(i, j);
  return out;
}

RoadTopology make_ring_topology(int n_segments, int n_chords, bool full_reverse) {
  if (n_segments < 3) throw std::invalid_argument("make_ring_topology: need at least 3 segments");
  if (n_chords > n_segments) throw std::invalid_argument("make_ring_topology: too many chords");
  std::vector<Segment> segments;
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n_segments; ++i) {
    const double theta = 2.0 * pi * i / n_segments;
    segments.push_back({i, "s" + std::to_string(i), 24.99 + 0.004 * std::sin(theta),
                        121.45 + 0.004 * std::cos(theta)});
  }
  std::vector<Route> routes;
  int next_id = 0;
  for (int i = 0; i < n_segments; ++i) routes.push_back({next_id++, i, (i + 1) % n_segments});
  if (full_reverse)
    for (int i = 0; i < n_segments; ++i) routes.push_back({next_id++, (i + 1) % n_segments, i});
  for (int i = 0; i < n_chords; ++i) routes.push_back({next_id++, i, (i + 2) % n_segments});
  return build_topology(std::move(segments), std::move(routes));
}

RoadTopology make_demo_topology() {
  const int n = 12;
  std::vector<Segment> segments;
  const double pi = 3.14159265358979323846;
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * pi * i / n;
    segments.push_back({i, "s" + std::to_string(i), 24.99 + 0.004 * std::sin(theta),
                        121.45 + 0.004 * std::cos(theta)});
  }
  std::vector<Route> routes;
  int next_id = 0;
  for (int i = 0; i < n; ++i) routes.push_back({next_id++, i, (i + 1) % n});
  for (int i = 0; i < 8; ++i) routes.push_back({next_id++, i + 1, i});
  return build_topology(std::move(segments), std::move(routes));
}

}  // namespace telto
