#pragma once

#include <cstddef>
#include <vector>

#include "flowtrack/graph.hpp"

namespace flowtrack {

struct Path {
  std::vector<DetId> det_ids;
  bool operator==(const Path&) const = default;
  auto operator<=>(const Path&) const = default;
};

struct PathSet {
  std::vector<Path> paths;
  double total_cost = 0.0;

  std::size_t size() const { return paths.size(); }
  bool empty() const { return paths.empty(); }
};

// Equality of the path collections, ignoring order and costs.
bool same_paths(const PathSet& a, const PathSet& b);

// Transition costs along `p` plus entrance and exit costs. Throws
// std::invalid_argument if a consecutive pair is not a link.
double path_cost(const Path& p, const TrackingGraph& g);
double path_set_cost(const PathSet& ps, const TrackingGraph& g);

// Throws std::invalid_argument unless paths are nonempty, node-disjoint and
// follow links of `g`.
void validate_path_set(const PathSet& ps, const TrackingGraph& g);

struct FlowRecord {
  std::size_t arc = 0;  // index into TrackingGraph::arcs()
  int flow = 0;
  double reduced_cost = 0.0;
};

struct SolveStats {
  std::vector<double> augmentation_costs;  // nondecreasing, all < 0
  double rejected_cost = 0.0;              // first augmentation not taken (>= 0)
  std::vector<FlowRecord> flow;            // filled when requested
};

// Minimum-cost set of node-disjoint s-t paths by successive shortest paths.
// Paths are ordered by their first det_id; total_cost <= 0.
PathSet track_by_ssp(const TrackingGraph& g, SolveStats* stats = nullptr, bool record_flow = false);

// Exhaustive enumeration of node-disjoint path sets; refuses graphs with more
// than `max_detections` detections (hard cap 30).
PathSet brute_force_oracle(const TrackingGraph& g, std::size_t max_detections = 14);

// Number of paths in `ps` with positive cost, plus one if the total is positive.
int count_nonpositive_violations(const PathSet& ps, const TrackingGraph& g, double tol = 1e-9);

}  // namespace flowtrack
