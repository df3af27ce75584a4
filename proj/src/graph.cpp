#include "flowtrack/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "flowtrack/errors.hpp"

namespace flowtrack {

int DetectionGraph::reid_dim() const {
  return nodes_.empty() ? 0 : static_cast<int>(nodes_.front().reid.size());
}

int DetectionGraph::node_index(DetId det_id) const {
  auto it = node_of_.find(det_id);
  return it == node_of_.end() ? -1 : it->second;
}

int DetectionGraph::link_index(DetId from, DetId to) const {
  auto it = link_of_.find({from, to});
  return it == link_of_.end() ? -1 : it->second;
}

void DetectionGraph::index() {
  out_.assign(nodes_.size(), {});
  in_.assign(nodes_.size(), {});
  node_of_.clear();
  link_of_.clear();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!node_of_.emplace(nodes_[i].det_id, static_cast<int>(i)).second) {
      throw std::invalid_argument("detection graph: duplicate det_id " +
                                  std::to_string(nodes_[i].det_id));
    }
  }
  for (std::size_t e = 0; e < links_.size(); ++e) {
    out_[links_[e].from].push_back(static_cast<int>(e));
    in_[links_[e].to].push_back(static_cast<int>(e));
    if (!link_of_.emplace(key(static_cast<int>(e)), static_cast<int>(e)).second) {
      throw std::invalid_argument("detection graph: duplicate link");
    }
  }
}

DetectionGraph DetectionGraph::from_parts(std::vector<GraphNode> nodes, std::vector<Link> links,
                                          int max_gap, double gate_speed) {
  DetectionGraph g;
  g.nodes_ = std::move(nodes);
  g.links_ = std::move(links);
  g.max_gap_ = max_gap;
  g.gate_speed_ = gate_speed;
  const int n = static_cast<int>(g.nodes_.size());
  for (const Link& l : g.links_) {
    if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n) {
      throw std::invalid_argument("detection graph: link endpoint out of range");
    }
    const GraphNode& a = g.nodes_[l.from];
    const GraphNode& b = g.nodes_[l.to];
    const int gap = b.frame - a.frame;
    if (gap <= 0) throw std::invalid_argument("detection graph: link not forward in time");
    if (gap > max_gap) throw std::invalid_argument("detection graph: link exceeds max gap");
    if ((b.position - a.position).norm() > gate_speed * gap) {
      throw std::invalid_argument("detection graph: link violates gate");
    }
  }
  g.index();
  return g;
}

DetectionGraph build_detection_graph(std::span<const Detection> detections, int max_gap,
                                     double gate_speed) {
  if (max_gap < 1) throw ConfigError("graph.max_gap must be >= 1");
  if (!(gate_speed > 0.0)) throw ConfigError("graph.gate_speed must be > 0");

  std::vector<GraphNode> nodes;
  nodes.reserve(detections.size());
  for (const Detection& d : detections) nodes.push_back({d.det_id, d.frame, d.position, d.reid});
  std::sort(nodes.begin(), nodes.end(), [](const GraphNode& a, const GraphNode& b) {
    return a.frame != b.frame ? a.frame < b.frame : a.det_id < b.det_id;
  });

  std::vector<Link> links;
  const int n = static_cast<int>(nodes.size());
  int frame_begin = 0;
  for (int i = 0; i < n; ++i) {
    const GraphNode& a = nodes[i];
    while (frame_begin < n && nodes[frame_begin].frame <= a.frame) ++frame_begin;
    for (int j = frame_begin; j < n; ++j) {
      const GraphNode& b = nodes[j];
      const int gap = b.frame - a.frame;
      if (gap > max_gap) break;
      if ((b.position - a.position).norm() <= gate_speed * gap) links.push_back({i, j});
    }
  }
  DetectionGraph g = DetectionGraph::from_parts(std::move(nodes), std::move(links), max_gap,
                                                gate_speed);
  return g;
}

double default_gate_speed(const ScenarioConfig& config) {
  double axis_speed_sigma = 0.0;
  if (const auto* cv = std::get_if<ConstantVelocity>(&config.motion)) {
    axis_speed_sigma = std::sqrt(cv->initial_speed_sigma * cv->initial_speed_sigma +
                                 cv->process_noise_psd * config.num_frames * config.frame_dt);
  } else {
    const auto& ou = std::get<OrnsteinUhlenbeck>(config.motion);
    if (ou.reversion_rate > 0.0) {
      axis_speed_sigma = std::sqrt(ou.diffusion / (2.0 * ou.reversion_rate));
    } else {
      axis_speed_sigma = std::sqrt(ou.diffusion * config.num_frames * config.frame_dt);
    }
  }
  // exp(-8): speed magnitude of a 2D isotropic Gaussian exceeds 4 sigma w.p. 3e-4.
  const double v_max_est = 4.0 * axis_speed_sigma * config.frame_dt;
  const double gate = v_max_est + 4.0 * config.meas_sigma / config.frame_dt;
  return gate > 0.0 ? gate : 1e-6;
}

int default_max_gap(const ScenarioConfig& config) { return config.detect_prob >= 1.0 ? 1 : 3; }

int TrackingGraph::det_index(DetId id) const {
  auto it = det_of_.find(id);
  return it == det_of_.end() ? -1 : it->second;
}

int TrackingGraph::transition_index(DetId from, DetId to) const {
  auto it = transition_of_.find({from, to});
  return it == transition_of_.end() ? -1 : it->second;
}

TrackingGraph build_tracking_graph(const DetectionGraph& g, double c_en, double c_ex) {
  if (!(c_en > 0.0) || !(c_ex > 0.0)) {
    throw ConfigError("tracking graph: entrance and exit costs must be > 0");
  }
  TrackingGraph t;
  t.c_en_ = c_en;
  t.c_ex_ = c_ex;
  const int n = static_cast<int>(g.num_nodes());
  t.det_ids_.reserve(n);
  for (const auto& node : g.nodes()) t.det_ids_.push_back(node.det_id);
  for (int u = 0; u < n; ++u) t.det_of_.emplace(t.det_ids_[u], u);

  using K = TrackingGraph::ArcKind;
  t.arcs_.reserve(3 * n + g.num_links());
  for (int u = 0; u < n; ++u) {
    t.arcs_.push_back({TrackingGraph::in_node(u), TrackingGraph::out_node(u), 0.0, 1, K::Twin});
  }
  for (int u = 0; u < n; ++u) {
    t.arcs_.push_back({TrackingGraph::kSource, TrackingGraph::in_node(u), c_en,
                       TrackingGraph::kUnbounded, K::Entrance});
  }
  for (int u = 0; u < n; ++u) {
    t.arcs_.push_back({TrackingGraph::out_node(u), TrackingGraph::kTerminal, c_ex,
                       TrackingGraph::kUnbounded, K::Exit});
  }
  t.transition_keys_.reserve(g.num_links());
  for (std::size_t e = 0; e < g.num_links(); ++e) {
    const Link& l = g.links()[e];
    t.arcs_.push_back(
        {TrackingGraph::out_node(l.from), TrackingGraph::in_node(l.to), 0.0, 1, K::Transition});
    t.transition_keys_.push_back(g.key(static_cast<int>(e)));
    t.transition_of_.emplace(t.transition_keys_.back(), static_cast<int>(e));
  }
  return t;
}

TrackingGraph TrackingGraph::with_costs(const EdgeCosts& costs) const {
  if (costs.values.size() != transition_keys_.size() ||
      costs.keys.size() != transition_keys_.size()) {
    throw IncompatibleError("transfer_costs: expected " + std::to_string(transition_keys_.size()) +
                            " link costs, got " + std::to_string(costs.values.size()));
  }
  TrackingGraph out = *this;
  for (std::size_t e = 0; e < transition_keys_.size(); ++e) {
    if (!(costs.keys[e] == transition_keys_[e])) {
      throw IncompatibleError("transfer_costs: link " + std::to_string(e) +
                              " does not match the tracking graph (" +
                              std::to_string(costs.keys[e].from) + "->" +
                              std::to_string(costs.keys[e].to) + ")");
    }
    if (!std::isfinite(costs.values[e])) {
      throw NumericError("transfer_costs: non-finite cost on link " + std::to_string(e));
    }
    out.arcs_[transition_arc(e)].cost = costs.values[e];
  }
  return out;
}

TrackingGraph transfer_costs(const EdgeCosts& costs, const TrackingGraph& g_trk) {
  return g_trk.with_costs(costs);
}

}  // namespace flowtrack
