#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "flowtrack/edge_belief.hpp"

using namespace flowtrack;

namespace {

Detection det(DetId id, int frame, double x, double y) {
  Detection d;
  d.det_id = id;
  d.frame = frame;
  d.position = {x, y};
  d.reid = Eigen::VectorXd::Zero(2);
  return d;
}

// `rows` parallel chains over `frames` frames; ids are frame-major.
DetectionGraph grid_graph(int rows, int frames, double spacing, double gate) {
  std::vector<Detection> d;
  DetId id = 0;
  for (int f = 1; f <= frames; ++f) {
    for (int r = 0; r < rows; ++r) d.push_back(det(id++, f, 0.0, spacing * r));
  }
  return build_detection_graph(d, 1, gate);
}

PathSet row_paths(int rows, int frames) {
  PathSet ps;
  for (int r = 0; r < rows; ++r) {
    Path p;
    for (int f = 0; f < frames; ++f) p.det_ids.push_back(static_cast<DetId>(f * rows + r));
    ps.paths.push_back(p);
  }
  return ps;
}

// Independent greedy: accept kept links by descending belief (ties by link
// order) when both endpoints are free, then walk chains and prune short ones.
std::set<std::vector<DetId>> greedy_reference(const DetectionGraph& g, const std::vector<double>& b,
                                              int min_length) {
  std::vector<std::size_t> order(b.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return b[x] > b[y]; });
  std::vector<int> next(g.num_nodes(), -1), prev(g.num_nodes(), -1);
  for (std::size_t e : order) {
    if (!(b[e] > 0.5)) break;
    const auto& l = g.links()[e];
    if (next[l.from] < 0 && prev[l.to] < 0) {
      next[l.from] = l.to;
      prev[l.to] = l.from;
    }
  }
  std::set<std::vector<DetId>> out;
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    if (prev[u] >= 0 || next[u] < 0) continue;
    std::vector<DetId> chain;
    for (int v = static_cast<int>(u); v >= 0; v = next[v]) chain.push_back(g.nodes()[v].det_id);
    if (static_cast<int>(chain.size()) >= min_length) out.insert(chain);
  }
  return out;
}

}  // namespace

TEST_CASE("edge labels") {
  const auto g = grid_graph(2, 4, 1.0, 2.0);
  const auto none = label_edges(g, PathSet{});
  CHECK(none.positives() == 0);
  CHECK(none.values.size() == g.num_links());

  PathSet one{{row_paths(2, 4).paths[0]}, 0.0};
  CHECK(label_edges(g, one).positives() == 3);

  const auto both = label_edges(g, row_paths(2, 4));
  CHECK(both.positives() == 6);
  // Each node has at most one positive out-link and one positive in-link.
  std::vector<int> out(g.num_nodes(), 0), in(g.num_nodes(), 0);
  for (std::size_t e = 0; e < g.num_links(); ++e) {
    CHECK(both.keys[e] == g.key(static_cast<int>(e)));
    if (both.values[e]) {
      ++out[g.links()[e].from];
      ++in[g.links()[e].to];
    }
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    CHECK(out[v] <= 1);
    CHECK(in[v] <= 1);
  }
}

TEST_CASE("weighted cross-entropy matches the direct formula and its derivative") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (bool reweight : {false, true}) {
    EdgeLabels labels;
    std::vector<double> z(20);
    for (int e = 0; e < 20; ++e) {
      z[e] = 3.0 * n01(rng);
      labels.keys.push_back({e, e + 100});
      labels.values.push_back(e % 5 == 0 ? 1 : 0);
    }
    const double wp = reweight ? 16.0 / 4.0 : 1.0;
    double num = 0.0, den = 0.0;
    for (int e = 0; e < 20; ++e) {
      const double p = 1.0 / (1.0 + std::exp(-z[e]));
      const double w = labels.values[e] ? wp : 1.0;
      num += -w * (labels.values[e] ? std::log(p) : std::log(1.0 - p));
      den += w;
    }
    std::vector<double> grad;
    const double loss = belief_loss(z, labels, reweight, &grad);
    CHECK(loss == doctest::Approx(num / den).epsilon(1e-12));
    const double h = 1e-6;
    for (int e = 0; e < 20; ++e) {
      auto zp = z, zm = z;
      zp[e] += h;
      zm[e] -= h;
      const double fd = (belief_loss(zp, labels, reweight, nullptr) - belief_loss(zm, labels, reweight, nullptr)) / (2 * h);
      CHECK(grad[e] == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
  }
  // Extreme logits stay finite.
  EdgeLabels l{{{0, 1}, {0, 2}}, {1, 0}};
  const std::vector<double> extreme{-800.0, 800.0};
  CHECK(std::isfinite(belief_loss(extreme, l, false, nullptr)));
}

TEST_CASE("greedy extraction rules") {
  const auto g = grid_graph(2, 4, 1.0, 2.0);
  std::vector<double> low(g.num_links(), 0.2);
  CHECK(paths_from_beliefs(g, low).empty());

  // Only the first row's first link is confident: a 2-detection chain is pruned.
  std::vector<double> b(g.num_links(), 0.1);
  b[g.link_index(0, 2)] = 0.9;
  CHECK(paths_from_beliefs(g, b).empty());
  CHECK(paths_from_beliefs(g, b, 2).size() == 1);

  // Two confident links into node 4: only the stronger survives.
  std::vector<double> c(g.num_links(), 0.1);
  c[g.link_index(0, 2)] = 0.95;
  c[g.link_index(2, 4)] = 0.9;
  c[g.link_index(3, 4)] = 0.8;
  c[g.link_index(1, 3)] = 0.85;
  const auto ps = paths_from_beliefs(g, c, 2);
  std::set<std::vector<DetId>> got;
  for (const auto& p : ps.paths) got.insert(p.det_ids);
  CHECK(got == std::set<std::vector<DetId>>{{0, 2, 4}, {1, 3}});
}

TEST_CASE("greedy extraction agrees with an independent implementation") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto g = grid_graph(4, 6, 1.0, 2.5);
    std::vector<double> b(g.num_links());
    for (double& v : b) v = u(rng);
    const int min_len = 1 + trial % 4;
    const auto ps = paths_from_beliefs(g, b, min_len);
    std::set<std::vector<DetId>> got;
    std::set<DetId> used;
    for (const auto& p : ps.paths) {
      got.insert(p.det_ids);
      for (DetId id : p.det_ids) CHECK(used.insert(id).second);
      for (std::size_t k = 1; k < p.det_ids.size(); ++k) CHECK(g.link_index(p.det_ids[k - 1], p.det_ids[k]) >= 0);
    }
    CHECK(got == greedy_reference(g, b, min_len));
  }
}

TEST_CASE("cost and belief readouts share the embedding computation") {
  const auto g = grid_graph(3, 4, 1.0, 2.5);
  MpnConfig cost;
  cost.num_layers = 2;
  cost.hidden_dim = 8;
  cost.zero_readout_output = false;
  MpnConfig belief = cost;
  belief.readout = ReadoutMode::Belief;
  const ParamStore p = make_mpn_params(cost, 2, 4);
  const auto a = mpn_forward(g, p, cost);
  const auto b = mpn_forward(g, p, belief);
  CHECK(a.forward_embedding == b.forward_embedding);
  CHECK(a.backward_embedding == b.backward_embedding);
  CHECK(a.logits == b.logits);
  for (double v : b.scores.values) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("separable toy graph: training drives the loss down and beliefs to the right side") {
  // Rows 3 apart, gate wide enough for diagonal links: the label is a function of dy.
  const auto g = grid_graph(3, 6, 3.0, 5.0);
  const TrainingExample ex{g, row_paths(3, 6)};
  TrainConfig c;
  c.mpn.num_layers = 1;
  c.mpn.hidden_dim = 16;
  c.stage1_max_iters = 100;
  c.stage2_max_epochs = 200;
  c.learning_rate = 1e-2;
  c.seed = 1;
  int steps = 0;
  EdgeBeliefOptions opts;
  opts.on_step = [&](int, double, const ParamStore&) { ++steps; };
  const auto r = train_edge_belief(std::span(&ex, 1), c, opts);
  CHECK(r.loss_history.size() == 300);
  CHECK(steps == 300);
  CHECK(r.loss_history.back() < 0.01);
  CHECK(r.loss_history.back() < r.loss_history.front());
  MpnConfig m = c.mpn;
  m.readout = ReadoutMode::Belief;
  const auto out = mpn_forward(g, r.params, m);
  const auto labels = label_edges(g, ex.gt);
  for (std::size_t e = 0; e < g.num_links(); ++e) CHECK((out.scores.values[e] > 0.5) == (labels.values[e] == 1));
  const auto ps = infer_edge_belief(g, r.params, m);
  CHECK(same_paths(ps, ex.gt));
}
