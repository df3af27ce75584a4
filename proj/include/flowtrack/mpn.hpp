#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "flowtrack/graph.hpp"
#include "flowtrack/neural.hpp"

namespace flowtrack {

enum class ReadoutMode { Cost, Belief };

struct MpnConfig {
  int num_layers = 4;
  int hidden_dim = 64;
  ReadoutMode readout = ReadoutMode::Cost;
  int mlp_hidden_layers = 1;  // hidden layers inside every component MLP
  bool zero_readout_output = true;  // readout's last layer starts at zero

  void validate() const;
};

// Segment names inside the parameter store.
namespace mpn_segment {
inline constexpr const char* kNodeEncoder = "node_encoder";
inline constexpr const char* kEdgeEncoder = "edge_encoder";
inline constexpr const char* kEdgeUpdate = "edge_update";
inline constexpr const char* kMessagePast = "message_past";
inline constexpr const char* kMessageFuture = "message_future";
inline constexpr const char* kNodeUpdate = "node_update";
inline constexpr const char* kReadout = "readout";
}  // namespace mpn_segment

inline constexpr int kEdgeFeatureWidth = 4;  // frame gap, dx, dy, |reid difference|
inline int node_feature_width(int reid_dim) { return 2 + reid_dim; }

// Parameter layout for all component functions, He-initialized from `seed`.
ParamStore make_mpn_params(const MpnConfig& cfg, int reid_dim, std::uint64_t seed);

// Raw features, one column per node / per link (in graph order).
Eigen::MatrixXd raw_node_features(const DetectionGraph& g);
Eigen::MatrixXd raw_edge_features(const DetectionGraph& g);

class MpnTape;

struct MpnOutput {
  // Costs (Cost mode) or beliefs in (0, 1) (Belief mode), one per link.
  EdgeCosts scores;
  // Readout pre-activation; equals scores in Cost mode.
  std::vector<double> logits;
  // Final directed link embeddings (hidden_dim x links), time-forward and reverse.
  Eigen::MatrixXd forward_embedding;
  Eigen::MatrixXd backward_embedding;
};

// Records into `tape` when given.
MpnOutput mpn_forward(const DetectionGraph& g, const ParamStore& params, const MpnConfig& cfg,
                      MpnTape* tape = nullptr);

enum class UpstreamSpace { Score, Logit };

// Gradient of sum_e upstream[e] * score_e with respect to theta. `upstream` is
// aligned with the graph's link order. In Logit space the readout's output
// activation is bypassed.
Eigen::VectorXd mpn_backward(MpnTape& tape, std::span<const double> upstream,
                             UpstreamSpace space = UpstreamSpace::Score);

// Keyed variant; links absent from the map contribute zero. Unknown keys throw
// IncompatibleError.
Eigen::VectorXd mpn_backward(MpnTape& tape, const std::map<LinkKey, double>& upstream,
                             UpstreamSpace space = UpstreamSpace::Score);

class MpnTape {
 public:
  MpnTape();
  ~MpnTape();
  MpnTape(MpnTape&&) noexcept;
  MpnTape& operator=(MpnTape&&) noexcept;

  bool recorded() const;

 private:
  friend MpnOutput mpn_forward(const DetectionGraph&, const ParamStore&, const MpnConfig&,
                               MpnTape*);
  friend Eigen::VectorXd mpn_backward(MpnTape&, std::span<const double>, UpstreamSpace);
  friend Eigen::VectorXd mpn_backward(MpnTape&, const std::map<LinkKey, double>&,
                                      UpstreamSpace);
  struct State;
  std::unique_ptr<State> state_;
};

}  // namespace flowtrack
