#include "flowtrack/ssp.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "flowtrack/errors.hpp"

namespace flowtrack {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ResidualArc {
  int to;
  int cap;
  double cost;
  int rev;  // index of the paired arc in adj[to]
};

// Residual network of the tracking graph with per-node potentials.
class Residual {
 public:
  explicit Residual(const TrackingGraph& g) : adj_(g.num_nodes()), arc_pos_(g.arcs().size()) {
    for (std::size_t a = 0; a < g.arcs().size(); ++a) {
      const auto& arc = g.arcs()[a];
      if (!std::isfinite(arc.cost)) {
        throw NumericError("track_by_ssp: non-finite cost on arc " + std::to_string(a));
      }
      const int fi = static_cast<int>(adj_[arc.from].size());
      const int ri = static_cast<int>(adj_[arc.to].size()) + (arc.from == arc.to ? 1 : 0);
      adj_[arc.from].push_back({arc.to, arc.capacity, arc.cost, ri});
      adj_[arc.to].push_back({arc.from, 0, -arc.cost, fi});
      arc_pos_[a] = {arc.from, fi};
    }
  }

  std::size_t num_nodes() const { return adj_.size(); }
  std::vector<ResidualArc>& out(int u) { return adj_[u]; }

  int flow(std::size_t arc) const {
    const auto [u, k] = arc_pos_[arc];
    const ResidualArc& fwd = adj_[u][k];
    return adj_[fwd.to][fwd.rev].cap;
  }
  const ResidualArc& forward(std::size_t arc) const {
    return adj_[arc_pos_[arc].first][arc_pos_[arc].second];
  }

 private:
  std::vector<std::vector<ResidualArc>> adj_;
  std::vector<std::pair<int, int>> arc_pos_;
};

std::vector<int> topological_order(const TrackingGraph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<int>> succ(n);
  std::vector<int> indeg(n, 0);
  for (const auto& a : g.arcs()) {
    succ[a.from].push_back(a.to);
    ++indeg[a.to];
  }
  // Min-heap on node id keeps the order deterministic.
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indeg[v] == 0) ready.push(static_cast<int>(v));
  }
  std::vector<int> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int u = ready.top();
    ready.pop();
    order.push_back(u);
    for (int v : succ[u]) {
      if (--indeg[v] == 0) ready.push(v);
    }
  }
  if (order.size() != n) throw std::invalid_argument("tracking graph is not acyclic");
  return order;
}

}  // namespace

bool same_paths(const PathSet& a, const PathSet& b) {
  if (a.paths.size() != b.paths.size()) return false;
  auto pa = a.paths;
  auto pb = b.paths;
  std::sort(pa.begin(), pa.end());
  std::sort(pb.begin(), pb.end());
  return pa == pb;
}

double path_cost(const Path& p, const TrackingGraph& g) {
  if (p.det_ids.empty()) throw std::invalid_argument("path_cost: empty path");
  double cost = g.entrance_cost() + g.exit_cost();
  if (g.det_index(p.det_ids.front()) < 0) {
    throw std::invalid_argument("path_cost: unknown det_id " + std::to_string(p.det_ids.front()));
  }
  for (std::size_t k = 1; k < p.det_ids.size(); ++k) {
    const int link = g.transition_index(p.det_ids[k - 1], p.det_ids[k]);
    if (link < 0) {
      throw std::invalid_argument("path_cost: " + std::to_string(p.det_ids[k - 1]) + " -> " +
                                  std::to_string(p.det_ids[k]) + " is not a link");
    }
    cost += g.transition_cost(link);
  }
  return cost;
}

double path_set_cost(const PathSet& ps, const TrackingGraph& g) {
  double total = 0.0;
  for (const auto& p : ps.paths) total += path_cost(p, g);
  return total;
}

void validate_path_set(const PathSet& ps, const TrackingGraph& g) {
  std::unordered_set<DetId> seen;
  for (const auto& p : ps.paths) {
    path_cost(p, g);
    for (DetId id : p.det_ids) {
      if (!seen.insert(id).second) {
        throw std::invalid_argument("path set: det_id " + std::to_string(id) +
                                    " appears in more than one position");
      }
    }
  }
}

int count_nonpositive_violations(const PathSet& ps, const TrackingGraph& g, double tol) {
  int violations = 0;
  double total = 0.0;
  for (const auto& p : ps.paths) {
    const double c = path_cost(p, g);
    total += c;
    if (c > tol) ++violations;
  }
  if (total > tol) ++violations;
  return violations;
}

PathSet track_by_ssp(const TrackingGraph& g, SolveStats* stats, bool record_flow) {
  Residual res(g);
  const std::size_t n = res.num_nodes();
  constexpr int s = TrackingGraph::kSource;
  constexpr int t = TrackingGraph::kTerminal;

  // Initial potentials: exact shortest distances on the DAG (costs may be negative).
  std::vector<double> pot(n, kInf);
  pot[s] = 0.0;
  for (int u : topological_order(g)) {
    if (pot[u] == kInf) continue;
    for (const auto& a : res.out(u)) {
      if (a.cap > 0 && pot[u] + a.cost < pot[a.to]) pot[a.to] = pot[u] + a.cost;
    }
  }

  std::vector<double> dist(n);
  std::vector<int> parent_node(n);
  std::vector<int> parent_arc(n);
  std::vector<char> done(n);
  using Item = std::pair<double, int>;
  double previous = -kInf;

  while (pot[t] < kInf) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(done.begin(), done.end(), 0);
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[s] = 0.0;
    heap.push({0.0, s});
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (done[u]) continue;
      done[u] = 1;
      auto& arcs = res.out(u);
      for (int k = 0; k < static_cast<int>(arcs.size()); ++k) {
        const auto& a = arcs[k];
        if (a.cap <= 0 || pot[a.to] == kInf) continue;
        // Round-off can leave reduced costs a hair below zero.
        const double rc = std::max(0.0, a.cost + pot[u] - pot[a.to]);
        const double nd = d + rc;
        if (nd < dist[a.to]) {
          dist[a.to] = nd;
          parent_node[a.to] = u;
          parent_arc[a.to] = k;
          heap.push({nd, a.to});
        }
      }
    }
    if (dist[t] == kInf) break;
    const double path_cost_true = dist[t] + pot[t] - pot[s];
    if (path_cost_true >= -1e-12) {
      if (stats) stats->rejected_cost = path_cost_true;
      break;
    }
    assert(path_cost_true >= previous - 1e-9 && "augmenting path costs must be nondecreasing");
    previous = path_cost_true;
    if (stats) stats->augmentation_costs.push_back(path_cost_true);

    for (int v = t; v != s; v = parent_node[v]) {
      auto& a = res.out(parent_node[v])[parent_arc[v]];
      a.cap -= 1;
      res.out(a.to)[a.rev].cap += 1;
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] < kInf) pot[v] += dist[v];
    }
  }

  // Unit twin capacities make the flow decompose into node-disjoint paths.
  PathSet out;
  const std::size_t num_det = g.num_detections();
  std::vector<int> next(num_det, -1);  // successor detection, -2 for terminal
  std::vector<char> starts(num_det, 0);
  for (std::size_t a = 0; a < g.arcs().size(); ++a) {
    if (res.flow(a) <= 0) continue;
    const auto& arc = g.arcs()[a];
    switch (arc.kind) {
      case TrackingGraph::ArcKind::Entrance:
        starts[TrackingGraph::det_index_of(arc.to)] = 1;
        break;
      case TrackingGraph::ArcKind::Exit:
        next[TrackingGraph::det_index_of(arc.from)] = -2;
        break;
      case TrackingGraph::ArcKind::Transition:
        next[TrackingGraph::det_index_of(arc.from)] = TrackingGraph::det_index_of(arc.to);
        break;
      case TrackingGraph::ArcKind::Twin:
        break;
    }
  }
  for (std::size_t u = 0; u < num_det; ++u) {
    if (!starts[u]) continue;
    Path p;
    for (int v = static_cast<int>(u); v >= 0; v = next[v]) p.det_ids.push_back(g.det_id(v));
    out.paths.push_back(std::move(p));
  }
  std::sort(out.paths.begin(), out.paths.end(),
            [](const Path& a, const Path& b) { return a.det_ids.front() < b.det_ids.front(); });
  out.total_cost = path_set_cost(out, g);

  if (stats && record_flow) {
    stats->flow.clear();
    for (std::size_t a = 0; a < g.arcs().size(); ++a) {
      const auto& arc = g.arcs()[a];
      const double rc = (pot[arc.from] < kInf && pot[arc.to] < kInf)
                            ? arc.cost + pot[arc.from] - pot[arc.to]
                            : kInf;
      stats->flow.push_back({a, res.flow(a), rc});
    }
  }
  return out;
}

PathSet brute_force_oracle(const TrackingGraph& g, std::size_t max_detections) {
  const std::size_t n = g.num_detections();
  if (n > max_detections || n > 30) {
    throw std::invalid_argument("brute_force_oracle: " + std::to_string(n) +
                                " detections exceed the bound of " +
                                std::to_string(std::min<std::size_t>(max_detections, 30)));
  }
  // Successor lists among detections and a topological order over them.
  std::vector<std::vector<std::pair<int, double>>> succ(n);
  std::vector<int> indeg(n, 0);
  for (std::size_t e = 0; e < g.num_transitions(); ++e) {
    const auto& key = g.transition_key(e);
    const int u = g.det_index(key.from);
    const int v = g.det_index(key.to);
    succ[u].push_back({v, g.transition_cost(e)});
    ++indeg[v];
  }
  std::vector<int> order;
  for (std::size_t u = 0; u < n; ++u) {
    if (indeg[u] == 0) order.push_back(static_cast<int>(u));
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    for (const auto& [v, c] : succ[order[k]]) {
      if (--indeg[v] == 0) order.push_back(v);
    }
  }

  const double c_en = g.entrance_cost();
  const double c_ex = g.exit_cost();
  std::vector<int> next(n, -1);  // -1 unused, -2 path end, else successor
  std::vector<char> has_pred(n, 0);
  std::vector<int> best_next(n, -1);
  double best = 0.0;  // the empty set

  // Each used detection either has a predecessor or opens a path, and either
  // closes its path or hands it to an unclaimed successor.
  auto visit = [&](auto&& self, std::size_t k, double cost) -> void {
    if (k == n) {
      if (cost < best) {
        best = cost;
        best_next = next;
      }
      return;
    }
    const int u = order[k];
    const double base = has_pred[u] ? cost : cost + c_en;
    if (!has_pred[u]) {
      next[u] = -1;
      self(self, k + 1, cost);
    }
    next[u] = -2;
    self(self, k + 1, base + c_ex);
    for (const auto& [v, c] : succ[u]) {
      if (has_pred[v]) continue;
      has_pred[v] = 1;
      next[u] = v;
      self(self, k + 1, base + c);
      has_pred[v] = 0;
    }
    next[u] = -1;
  };
  visit(visit, 0, 0.0);

  std::vector<char> is_target(n, 0);
  for (std::size_t u = 0; u < n; ++u) {
    if (best_next[u] >= 0) is_target[best_next[u]] = 1;
  }
  PathSet out;
  for (std::size_t u = 0; u < n; ++u) {
    if (best_next[u] == -1 || is_target[u]) continue;
    Path p;
    for (int v = static_cast<int>(u); v >= 0; v = best_next[v]) p.det_ids.push_back(g.det_id(v));
    out.paths.push_back(std::move(p));
  }
  std::sort(out.paths.begin(), out.paths.end(),
            [](const Path& a, const Path& b) { return a.det_ids.front() < b.det_ids.front(); });
  out.total_cost = path_set_cost(out, g);
  return out;
}

}  // namespace flowtrack
