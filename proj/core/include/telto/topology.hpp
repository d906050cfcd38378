#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "telto/tensor.hpp"

namespace telto {

/// A 20m x 20m road area acting as a graph node.
struct Segment {
  int id = 0;
  std::string label;
  double latitude = 0.0;
  double longitude = 0.0;
};

/// Directed pathway from a start segment to an end segment.
struct Route {
  int id = 0;
  int start_segment = 0;
  int end_segment = 0;
};

struct TopologyOptions {
  /// Drop a route's own reverse from its upstream set.
  bool exclude_reverse = true;
};

/// Segments, directed routes, and the derived graph structures used by both
/// model stages. Immutable after construction.
struct RoadTopology {
  std::vector<Segment> segments;
  std::vector<Route> routes;
  TopologyOptions options;

  /// N x N binary, symmetric, unit diagonal.
  Tensor<double> segment_adjacency;
  /// M x M binary, directed (a feeds b), unit diagonal.
  Tensor<double> route_adjacency;
  /// Per route, 1-hop upstream route ids sorted ascending.
  std::vector<std::vector<int>> upstream_map;

  std::size_t segment_count() const { return segments.size(); }
  std::size_t route_count() const { return routes.size(); }
};

/// Validates inputs and derives adjacencies plus the upstream map.
/// Throws std::invalid_argument naming the offending route on dangling
/// references, duplicate (start,end) pairs, or degenerate routes.
RoadTopology build_topology(std::vector<Segment> segments, std::vector<Route> routes,
                            TopologyOptions options = {});

RoadTopology load_topology(const std::string& path);
void save_topology(const RoadTopology& topology, const std::string& path);

/// FNV-1a over a canonical serialization; used to bind checkpoints to the
/// topology they were trained on.
std::uint64_t topology_hash(const RoadTopology& topology);

/// Row-normalized transition matrix P = D^-1 A (rows with zero degree stay zero).
Tensor<double> row_normalized(const Tensor<double>& adjacency);
Tensor<double> transposed(const Tensor<double>& matrix);

/// Small ring-with-chords network used by tests and as the generator default:
/// a bidirectional ring plus forward chords. Deterministic.
RoadTopology make_ring_topology(int n_segments, int n_chords = 0, bool full_reverse = true);

/// Default desk-scale network: 12 segments, 20 routes (forward ring plus a
/// partial reverse ring), commute-friendly chain structure.
RoadTopology make_demo_topology();

}  // namespace telto
