#include "flowtrack/mpn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "flowtrack/errors.hpp"

namespace flowtrack {

namespace seg = mpn_segment;

void MpnConfig::validate() const {
  if (num_layers < 0) throw ConfigError("mpn.num_layers must be >= 0");
  if (hidden_dim < 1) throw ConfigError("mpn.hidden_dim must be >= 1");
  if (mlp_hidden_layers < 0) throw ConfigError("mpn.mlp_hidden_layers must be >= 0");
}

namespace {

MlpSpec component(int in, int hidden, int out, int hidden_layers,
                  OutputActivation act = OutputActivation::Identity) {
  MlpSpec s;
  s.widths.push_back(in);
  for (int k = 0; k < hidden_layers; ++k) s.widths.push_back(hidden);
  s.widths.push_back(out);
  s.output = act;
  return s;
}

// Identity-output copy of the readout spec; beliefs are produced from logits.
MlpSpec as_logit_spec(MlpSpec s) {
  s.output = OutputActivation::Identity;
  return s;
}

}  // namespace

ParamStore make_mpn_params(const MpnConfig& cfg, int reid_dim, std::uint64_t seed) {
  cfg.validate();
  const int h = cfg.hidden_dim;
  const int d = cfg.mlp_hidden_layers;
  ParamStore store;
  store.add_segment(seg::kNodeEncoder, component(node_feature_width(reid_dim), h, h, d));
  store.add_segment(seg::kEdgeEncoder, component(kEdgeFeatureWidth, h, h, d));
  store.add_segment(seg::kEdgeUpdate, component(3 * h, h, h, d));
  store.add_segment(seg::kMessagePast, component(2 * h, h, h, d));
  store.add_segment(seg::kMessageFuture, component(2 * h, h, h, d));
  store.add_segment(seg::kNodeUpdate, component(2 * h, h, h, d));
  store.add_segment(seg::kReadout,
                    component(2 * h, h, 1, d,
                              cfg.readout == ReadoutMode::Belief ? OutputActivation::Logistic
                                                                 : OutputActivation::Identity));
  store.init_he_uniform(seed);
  if (cfg.zero_readout_output) {
    // Every link starts at cost 0 (belief 0.5).
    const auto& ro = store.segment(seg::kReadout);
    const std::size_t last = static_cast<std::size_t>(ro.spec.widths[ro.spec.num_layers() - 1]) + 1;
    store.theta.segment(static_cast<Eigen::Index>(ro.offset + ro.size() - last),
                        static_cast<Eigen::Index>(last))
        .setZero();
  }
  return store;
}

Eigen::MatrixXd raw_node_features(const DetectionGraph& g) {
  const int rd = g.reid_dim();
  Eigen::MatrixXd x(node_feature_width(rd), static_cast<Eigen::Index>(g.num_nodes()));
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const auto& n = g.nodes()[i];
    x.col(i).head<2>() = n.position;
    x.col(i).tail(rd) = n.reid;
  }
  if (g.num_nodes() > 1) {
    const Eigen::Vector2d mean = x.topRows<2>().rowwise().mean();
    x.topRows<2>().colwise() -= mean;
    const double sd = std::sqrt(x.topRows<2>().squaredNorm() / (2.0 * g.num_nodes()));
    if (sd > 0.0) x.topRows<2>() /= sd;
  }
  return x;
}

Eigen::MatrixXd raw_edge_features(const DetectionGraph& g) {
  Eigen::MatrixXd x(kEdgeFeatureWidth, static_cast<Eigen::Index>(g.num_links()));
  for (std::size_t e = 0; e < g.num_links(); ++e) {
    const auto& a = g.nodes()[g.links()[e].from];
    const auto& b = g.nodes()[g.links()[e].to];
    x(0, e) = b.frame - a.frame;
    x.block<2, 1>(1, e) = b.position - a.position;
    x(3, e) = (b.reid - a.reid).norm();
  }
  return x;
}

struct MpnTape::State {
  Eigen::VectorXd theta;
  std::vector<ParamStore::Segment> segments;
  MpnConfig cfg;
  std::vector<int> src;  // active-node index of each link's earlier endpoint
  std::vector<int> dst;
  std::vector<LinkKey> keys;
  Eigen::Index num_active = 0;
  Eigen::VectorXd beliefs;  // Belief mode only

  MlpTape node_encoder, edge_encoder, readout;
  struct Layer {
    MlpTape edge_update, message_past, message_future, node_update;
  };
  std::vector<Layer> layers;
  bool consumed = false;

  const ParamStore::Segment& segment(const char* name) const {
    for (const auto& s : segments) {
      if (s.name == name) return s;
    }
    throw std::out_of_range(std::string("mpn: missing parameter segment ") + name);
  }
  std::span<const double> params(const ParamStore::Segment& s) const {
    return {theta.data() + s.offset, s.size()};
  }
};

MpnTape::MpnTape() = default;
MpnTape::~MpnTape() = default;
MpnTape::MpnTape(MpnTape&&) noexcept = default;
MpnTape& MpnTape::operator=(MpnTape&&) noexcept = default;
bool MpnTape::recorded() const { return state_ != nullptr; }

MpnOutput mpn_forward(const DetectionGraph& g, const ParamStore& params, const MpnConfig& cfg,
                      MpnTape* tape) {
  cfg.validate();
  const int h = cfg.hidden_dim;
  const auto n_links = static_cast<Eigen::Index>(g.num_links());
  const auto& node_enc = params.segment(seg::kNodeEncoder);
  if (!g.nodes().empty() && node_enc.spec.input_width() != node_feature_width(g.reid_dim())) {
    throw IncompatibleError("mpn: model expects ReID dimension " +
                            std::to_string(node_enc.spec.input_width() - 2) + ", graph has " +
                            std::to_string(g.reid_dim()));
  }
  if (node_enc.spec.output_width() != h) {
    throw IncompatibleError("mpn: parameter hidden width does not match config");
  }

  auto state = std::make_unique<MpnTape::State>();
  state->theta = params.theta;
  state->segments = params.segments();
  state->cfg = cfg;
  MpnTape::State& st = *state;
  const bool record = tape != nullptr;

  // Nodes without links never influence any link score.
  std::vector<int> active_of(g.num_nodes(), -1);
  std::vector<int> active;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    if (!g.out_links(static_cast<int>(i)).empty() || !g.in_links(static_cast<int>(i)).empty()) {
      active_of[i] = static_cast<int>(active.size());
      active.push_back(static_cast<int>(i));
    }
  }
  st.num_active = static_cast<Eigen::Index>(active.size());
  st.src.resize(n_links);
  st.dst.resize(n_links);
  for (Eigen::Index e = 0; e < n_links; ++e) {
    st.src[e] = active_of[g.links()[e].from];
    st.dst[e] = active_of[g.links()[e].to];
  }

  MpnOutput out;
  out.scores.keys.reserve(n_links);
  for (Eigen::Index e = 0; e < n_links; ++e) out.scores.keys.push_back(g.key(static_cast<int>(e)));
  st.keys = out.scores.keys;
  if (n_links == 0) {
    out.forward_embedding.resize(h, 0);
    out.backward_embedding.resize(h, 0);
    if (tape) tape->state_ = std::move(state);
    return out;
  }

  const Eigen::MatrixXd all_nodes = raw_node_features(g);
  Eigen::MatrixXd node_x(all_nodes.rows(), st.num_active);
  for (Eigen::Index a = 0; a < st.num_active; ++a) node_x.col(a) = all_nodes.col(active[a]);

  const auto& s_edge_enc = st.segment(seg::kEdgeEncoder);
  const auto& s_update = st.segment(seg::kEdgeUpdate);
  const auto& s_past = st.segment(seg::kMessagePast);
  const auto& s_future = st.segment(seg::kMessageFuture);
  const auto& s_node = st.segment(seg::kNodeUpdate);
  const auto& s_readout = st.segment(seg::kReadout);

  Eigen::MatrixXd node_h = mlp_forward(node_enc.spec, st.params(st.segment(seg::kNodeEncoder)),
                                       node_x, record ? &st.node_encoder : nullptr);
  Eigen::MatrixXd fwd = mlp_forward(s_edge_enc.spec, st.params(s_edge_enc), raw_edge_features(g),
                                    record ? &st.edge_encoder : nullptr);
  Eigen::MatrixXd bwd = fwd;

  st.layers.resize(cfg.num_layers);
  for (int l = 0; l < cfg.num_layers; ++l) {
    auto& lt = st.layers[l];
    Eigen::MatrixXd edge_in(3 * h, 2 * n_links);
    for (Eigen::Index e = 0; e < n_links; ++e) {
      const int i = st.src[e];
      const int j = st.dst[e];
      edge_in.col(e) << node_h.col(i), node_h.col(j), fwd.col(e);
      edge_in.col(n_links + e) << node_h.col(j), node_h.col(i), bwd.col(e);
    }
    Eigen::MatrixXd updated = mlp_forward(s_update.spec, st.params(s_update), edge_in,
                                          record ? &lt.edge_update : nullptr);
    fwd = updated.leftCols(n_links);
    bwd = updated.rightCols(n_links);

    // Node embeddings of the last layer are never read by the readout.
    if (l + 1 == cfg.num_layers) break;

    // (i, j) reaches j from the past; (j, i) reaches i from the future.
    Eigen::MatrixXd past_in(2 * h, n_links);
    Eigen::MatrixXd future_in(2 * h, n_links);
    for (Eigen::Index e = 0; e < n_links; ++e) {
      past_in.col(e) << node_h.col(st.dst[e]), fwd.col(e);
      future_in.col(e) << node_h.col(st.src[e]), bwd.col(e);
    }
    const Eigen::MatrixXd past_msg = mlp_forward(s_past.spec, st.params(s_past), past_in,
                                                 record ? &lt.message_past : nullptr);
    const Eigen::MatrixXd future_msg = mlp_forward(s_future.spec, st.params(s_future), future_in,
                                                   record ? &lt.message_future : nullptr);
    Eigen::MatrixXd aggregate = Eigen::MatrixXd::Zero(2 * h, st.num_active);
    for (Eigen::Index e = 0; e < n_links; ++e) {
      aggregate.col(st.dst[e]).head(h) += past_msg.col(e);
      aggregate.col(st.src[e]).tail(h) += future_msg.col(e);
    }
    node_h = mlp_forward(s_node.spec, st.params(s_node), aggregate,
                         record ? &lt.node_update : nullptr);
  }

  Eigen::MatrixXd readout_in(2 * h, n_links);
  readout_in.topRows(h) = fwd;
  readout_in.bottomRows(h) = bwd;
  const Eigen::MatrixXd logits = mlp_forward(as_logit_spec(s_readout.spec), st.params(s_readout),
                                             readout_in, record ? &st.readout : nullptr);

  out.logits.assign(logits.data(), logits.data() + n_links);
  out.scores.values.resize(n_links);
  if (cfg.readout == ReadoutMode::Belief) {
    st.beliefs.resize(n_links);
    for (Eigen::Index e = 0; e < n_links; ++e) {
      const double p = 1.0 / (1.0 + std::exp(-logits(0, e)));
      out.scores.values[e] = p;
      st.beliefs[e] = p;
    }
  } else {
    out.scores.values = out.logits;
  }
  out.forward_embedding = std::move(fwd);
  out.backward_embedding = std::move(bwd);
  if (tape) tape->state_ = std::move(state);
  return out;
}

Eigen::VectorXd mpn_backward(MpnTape& tape, std::span<const double> upstream, UpstreamSpace space) {
  if (!tape.state_) throw std::logic_error("mpn_backward: tape holds no forward pass");
  MpnTape::State& st = *tape.state_;
  if (st.consumed) throw std::logic_error("mpn_backward: tape already consumed");
  const auto n_links = static_cast<Eigen::Index>(st.src.size());
  if (static_cast<Eigen::Index>(upstream.size()) != n_links) {
    throw IncompatibleError("mpn_backward: upstream has " + std::to_string(upstream.size()) +
                            " entries for " + std::to_string(n_links) + " links");
  }
  st.consumed = true;

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(st.theta.size());
  if (n_links == 0) return grad;
  auto grad_of = [&](const ParamStore::Segment& s) {
    return std::span<double>(grad.data() + s.offset, s.size());
  };
  const int h = st.cfg.hidden_dim;
  const auto& s_node_enc = st.segment(seg::kNodeEncoder);
  const auto& s_edge_enc = st.segment(seg::kEdgeEncoder);
  const auto& s_update = st.segment(seg::kEdgeUpdate);
  const auto& s_past = st.segment(seg::kMessagePast);
  const auto& s_future = st.segment(seg::kMessageFuture);
  const auto& s_node = st.segment(seg::kNodeUpdate);
  const auto& s_readout = st.segment(seg::kReadout);

  Eigen::MatrixXd d_logit(1, n_links);
  for (Eigen::Index e = 0; e < n_links; ++e) {
    double u = upstream[e];
    if (st.cfg.readout == ReadoutMode::Belief && space == UpstreamSpace::Score) {
      const double p = st.beliefs[e];
      u *= p * (1.0 - p);
    }
    d_logit(0, e) = u;
  }
  const Eigen::MatrixXd d_readout_in = mlp_backward(
      as_logit_spec(s_readout.spec), st.params(s_readout), st.readout, d_logit, grad_of(s_readout));
  Eigen::MatrixXd d_fwd = d_readout_in.topRows(h);
  Eigen::MatrixXd d_bwd = d_readout_in.bottomRows(h);
  Eigen::MatrixXd d_node = Eigen::MatrixXd::Zero(h, st.num_active);

  for (int l = st.cfg.num_layers - 1; l >= 0; --l) {
    auto& lt = st.layers[l];
    // Gradient w.r.t. the node embeddings this layer consumed.
    Eigen::MatrixXd d_prev = Eigen::MatrixXd::Zero(h, st.num_active);
    if (l + 1 < st.cfg.num_layers) {
      // d_node holds the gradient w.r.t. the node embeddings this layer produced.
      const Eigen::MatrixXd d_aggregate =
          mlp_backward(s_node.spec, st.params(s_node), lt.node_update, d_node, grad_of(s_node));
      Eigen::MatrixXd d_past_msg(h, n_links);
      Eigen::MatrixXd d_future_msg(h, n_links);
      for (Eigen::Index e = 0; e < n_links; ++e) {
        d_past_msg.col(e) = d_aggregate.col(st.dst[e]).head(h);
        d_future_msg.col(e) = d_aggregate.col(st.src[e]).tail(h);
      }
      const Eigen::MatrixXd d_past_in = mlp_backward(s_past.spec, st.params(s_past),
                                                     lt.message_past, d_past_msg, grad_of(s_past));
      const Eigen::MatrixXd d_future_in =
          mlp_backward(s_future.spec, st.params(s_future), lt.message_future, d_future_msg,
                       grad_of(s_future));
      for (Eigen::Index e = 0; e < n_links; ++e) {
        d_prev.col(st.dst[e]) += d_past_in.col(e).head(h);
        d_fwd.col(e) += d_past_in.col(e).tail(h);
        d_prev.col(st.src[e]) += d_future_in.col(e).head(h);
        d_bwd.col(e) += d_future_in.col(e).tail(h);
      }
    }
    Eigen::MatrixXd d_updated(h, 2 * n_links);
    d_updated.leftCols(n_links) = d_fwd;
    d_updated.rightCols(n_links) = d_bwd;
    const Eigen::MatrixXd d_edge_in = mlp_backward(s_update.spec, st.params(s_update),
                                                   lt.edge_update, d_updated, grad_of(s_update));
    for (Eigen::Index e = 0; e < n_links; ++e) {
      const int i = st.src[e];
      const int j = st.dst[e];
      d_prev.col(i) += d_edge_in.col(e).segment(0, h);
      d_prev.col(j) += d_edge_in.col(e).segment(h, h);
      d_fwd.col(e) = d_edge_in.col(e).segment(2 * h, h);
      d_prev.col(j) += d_edge_in.col(n_links + e).segment(0, h);
      d_prev.col(i) += d_edge_in.col(n_links + e).segment(h, h);
      d_bwd.col(e) = d_edge_in.col(n_links + e).segment(2 * h, h);
    }
    d_node = std::move(d_prev);
  }

  mlp_backward(s_node_enc.spec, st.params(s_node_enc), st.node_encoder, d_node,
               grad_of(s_node_enc), /*want_input_grad=*/false);
  mlp_backward(s_edge_enc.spec, st.params(s_edge_enc), st.edge_encoder, d_fwd + d_bwd,
               grad_of(s_edge_enc), /*want_input_grad=*/false);
  return grad;
}

Eigen::VectorXd mpn_backward(MpnTape& tape, const std::map<LinkKey, double>& upstream,
                             UpstreamSpace space) {
  if (!tape.state_) throw std::logic_error("mpn_backward: tape holds no forward pass");
  const auto& keys = tape.state_->keys;
  std::vector<double> dense(keys.size(), 0.0);
  std::size_t matched = 0;
  for (std::size_t e = 0; e < keys.size(); ++e) {
    auto it = upstream.find(keys[e]);
    if (it != upstream.end()) {
      dense[e] = it->second;
      ++matched;
    }
  }
  if (matched != upstream.size()) {
    throw IncompatibleError("mpn_backward: upstream references links not in the graph");
  }
  return mpn_backward(tape, dense, space);
}

}  // namespace flowtrack
