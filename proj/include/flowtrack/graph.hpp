#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "flowtrack/scenario.hpp"

namespace flowtrack {

struct GraphNode {
  DetId det_id = 0;
  int frame = 1;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::VectorXd reid;
};

// Time-forward link between node indices: frame(from) < frame(to).
struct Link {
  int from = 0;
  int to = 0;
  bool operator==(const Link&) const = default;
};

// Link identified by detection ids; stable across node storage orders.
struct LinkKey {
  DetId from = 0;
  DetId to = 0;
  bool operator==(const LinkKey&) const = default;
  auto operator<=>(const LinkKey&) const = default;
};

struct LinkKeyHash {
  std::size_t operator()(const LinkKey& k) const noexcept {
    return std::hash<DetId>{}(k.from) * 0x9E3779B97F4A7C15ull ^ std::hash<DetId>{}(k.to);
  }
};

class DetectionGraph {
 public:
  DetectionGraph() = default;

  // Validates the parts (forward links, gap, gate, no duplicates) and keeps the
  // given storage order.
  static DetectionGraph from_parts(std::vector<GraphNode> nodes, std::vector<Link> links,
                                   int max_gap, double gate_speed);

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_links() const { return links_.size(); }
  int max_gap() const { return max_gap_; }
  double gate_speed() const { return gate_speed_; }
  int reid_dim() const;

  const std::vector<int>& out_links(int node) const { return out_[node]; }
  const std::vector<int>& in_links(int node) const { return in_[node]; }

  // -1 when absent.
  int node_index(DetId det_id) const;
  int link_index(DetId from, DetId to) const;
  LinkKey key(int link) const { return {nodes_[links_[link].from].det_id, nodes_[links_[link].to].det_id}; }

 private:
  void index();

  std::vector<GraphNode> nodes_;
  std::vector<Link> links_;
  std::vector<std::vector<int>> out_;
  std::vector<std::vector<int>> in_;
  std::unordered_map<DetId, int> node_of_;
  std::unordered_map<LinkKey, int, LinkKeyHash> link_of_;
  int max_gap_ = 1;
  double gate_speed_ = 0.0;
};

// Nodes sorted by (frame, det_id); links sorted by (from, to).
DetectionGraph build_detection_graph(std::span<const Detection> detections, int max_gap,
                                     double gate_speed);

// Speed gate admitting true links with high probability:
// v_max_est + 4 * meas_sigma / frame_dt.
double default_gate_speed(const ScenarioConfig& config);
// 1 when every target is always detected, otherwise 3.
int default_max_gap(const ScenarioConfig& config);

// Scalar per link, aligned with the link order of the graph it was computed on.
struct EdgeCosts {
  std::vector<LinkKey> keys;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

class TrackingGraph {
 public:
  enum class ArcKind { Twin, Entrance, Exit, Transition };

  struct Arc {
    int from = 0;
    int to = 0;
    double cost = 0.0;
    int capacity = 1;
    ArcKind kind = ArcKind::Twin;
  };

  static constexpr int kSource = 0;
  static constexpr int kTerminal = 1;
  static constexpr int kUnbounded = 1 << 30;

  TrackingGraph() = default;

  std::size_t num_detections() const { return det_ids_.size(); }
  std::size_t num_nodes() const { return 2 * det_ids_.size() + 2; }
  std::size_t num_transitions() const { return transition_keys_.size(); }
  const std::vector<Arc>& arcs() const { return arcs_; }
  double entrance_cost() const { return c_en_; }
  double exit_cost() const { return c_ex_; }

  static int in_node(int det_index) { return 2 + 2 * det_index; }
  static int out_node(int det_index) { return 3 + 2 * det_index; }
  // Detection index of a twin node; -1 for s/t.
  static int det_index_of(int node) { return node < 2 ? -1 : (node - 2) / 2; }

  DetId det_id(int det_index) const { return det_ids_[det_index]; }
  const std::vector<DetId>& det_ids() const { return det_ids_; }
  int det_index(DetId id) const;

  // Arc layout: [twin x n][entrance x n][exit x n][transition x links].
  std::size_t transition_arc(std::size_t link) const { return 3 * det_ids_.size() + link; }
  const LinkKey& transition_key(std::size_t link) const { return transition_keys_[link]; }
  double transition_cost(std::size_t link) const { return arcs_[transition_arc(link)].cost; }
  // -1 when the pair is not a transition.
  int transition_index(DetId from, DetId to) const;

  // Copy with transition costs replaced; twin/entrance/exit costs unchanged.
  TrackingGraph with_costs(const EdgeCosts& costs) const;

  friend TrackingGraph build_tracking_graph(const DetectionGraph& g, double c_en, double c_ex);

 private:
  std::vector<DetId> det_ids_;
  std::vector<LinkKey> transition_keys_;
  std::vector<Arc> arcs_;
  std::unordered_map<DetId, int> det_of_;
  std::unordered_map<LinkKey, int, LinkKeyHash> transition_of_;
  double c_en_ = 1.0;
  double c_ex_ = 1.0;
};

TrackingGraph build_tracking_graph(const DetectionGraph& g, double c_en, double c_ex);

// Throws IncompatibleError if `costs` was not computed on the graph's link set.
TrackingGraph transfer_costs(const EdgeCosts& costs, const TrackingGraph& g_trk);

}  // namespace flowtrack
