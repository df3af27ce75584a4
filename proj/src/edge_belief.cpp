#include "flowtrack/edge_belief.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace flowtrack {

int EdgeLabels::positives() const { return std::accumulate(values.begin(), values.end(), 0); }

EdgeLabels label_edges(const DetectionGraph& g, const PathSet& gt) {
  EdgeLabels labels;
  labels.keys.reserve(g.num_links());
  for (std::size_t e = 0; e < g.num_links(); ++e) labels.keys.push_back(g.key(static_cast<int>(e)));
  labels.values.assign(g.num_links(), 0);
  for (const auto& p : gt.paths) {
    for (std::size_t k = 1; k < p.det_ids.size(); ++k) {
      const int e = g.link_index(p.det_ids[k - 1], p.det_ids[k]);
      if (e < 0) throw std::invalid_argument("label_edges: ground-truth step is not a link");
      labels.values[e] = 1;
    }
  }
  return labels;
}

double belief_loss(std::span<const double> logits, const EdgeLabels& labels, bool reweight,
                   std::vector<double>* grad_logits) {
  if (logits.size() != labels.values.size()) {
    throw std::invalid_argument("belief_loss: logits and labels differ in length");
  }
  const std::size_t n = logits.size();
  if (grad_logits) grad_logits->assign(n, 0.0);
  if (n == 0) return 0.0;
  const int pos = labels.positives();
  const int neg = static_cast<int>(n) - pos;
  const double w_pos = (reweight && pos > 0 && neg > 0) ? static_cast<double>(neg) / pos : 1.0;
  double total_w = 0.0;
  for (int y : labels.values) total_w += y ? w_pos : 1.0;
  double loss = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    const double z = logits[e];
    const int y = labels.values[e];
    const double w = y ? w_pos : 1.0;
    // softplus(z) - y z, evaluated stably.
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += w * (softplus - y * z);
    if (grad_logits) {
      const double sig = 1.0 / (1.0 + std::exp(-z));
      (*grad_logits)[e] = w * (sig - y) / total_w;
    }
  }
  return loss / total_w;
}

EdgeBeliefResult train_edge_belief(std::span<const TrainingExample> examples,
                                   const TrainConfig& cfg, const EdgeBeliefOptions& opts) {
  cfg.validate();
  if (examples.empty()) throw ConfigError("train: training set is empty");
  MpnConfig mpn = cfg.mpn;
  mpn.readout = ReadoutMode::Belief;
  EdgeBeliefResult result;
  result.params = make_mpn_params(mpn, examples.front().graph.reid_dim(), cfg.seed);
  std::vector<EdgeLabels> labels;
  for (const auto& ex : examples) labels.push_back(label_edges(ex.graph, ex.gt));

  const int passes = cfg.stage1_max_iters + cfg.stage2_max_epochs;
  std::vector<double> grad_logits;
  for (int it = 1; it <= passes; ++it) {
    double sum = 0.0;
    for (std::size_t k = 0; k < examples.size(); ++k) {
      MpnTape tape;
      const MpnOutput out = mpn_forward(examples[k].graph, result.params, mpn, &tape);
      const double loss = belief_loss(out.logits, labels[k], opts.reweight_positives, &grad_logits);
      if (!std::isfinite(loss)) throw TrainingAborted("edge belief: non-finite loss", result.params);
      sum += loss;
      if (grad_logits.empty()) continue;
      const Eigen::VectorXd grad = mpn_backward(tape, grad_logits, UpstreamSpace::Logit);
      const ParamStore before = result.params;
      try {
        adam_step(result.params, grad, cfg.learning_rate);
      } catch (const NumericError& e) {
        throw TrainingAborted(std::string("edge belief: ") + e.what(), before);
      }
    }
    const double mean = sum / static_cast<double>(examples.size());
    result.loss_history.push_back(mean);
    if (opts.on_step) opts.on_step(it, mean, result.params);
  }
  return result;
}

PathSet paths_from_beliefs(const DetectionGraph& g, std::span<const double> beliefs,
                           int min_length) {
  if (beliefs.size() != g.num_links()) {
    throw std::invalid_argument("paths_from_beliefs: one belief per link expected");
  }
  std::vector<int> kept;
  for (std::size_t e = 0; e < beliefs.size(); ++e) {
    if (beliefs[e] > 0.5) kept.push_back(static_cast<int>(e));
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [&](int a, int b) { return beliefs[a] > beliefs[b]; });
  const std::size_t n = g.num_nodes();
  std::vector<int> next(n, -1);
  std::vector<char> has_in(n, 0);
  for (int e : kept) {
    const auto& link = g.links()[e];
    if (next[link.from] >= 0 || has_in[link.to]) continue;
    next[link.from] = link.to;
    has_in[link.to] = 1;
  }
  PathSet out;
  for (std::size_t u = 0; u < n; ++u) {
    if (has_in[u] || next[u] < 0) continue;
    Path p;
    for (int v = static_cast<int>(u); v >= 0; v = next[v]) p.det_ids.push_back(g.nodes()[v].det_id);
    if (static_cast<int>(p.det_ids.size()) >= min_length) out.paths.push_back(std::move(p));
  }
  std::sort(out.paths.begin(), out.paths.end(),
            [](const Path& a, const Path& b) { return a.det_ids.front() < b.det_ids.front(); });
  return out;
}

PathSet infer_edge_belief(const DetectionGraph& g, const ParamStore& params, const MpnConfig& mpn,
                          int min_length) {
  MpnConfig belief = mpn;
  belief.readout = ReadoutMode::Belief;
  const MpnOutput out = mpn_forward(g, params, belief);
  return paths_from_beliefs(g, out.scores.values, min_length);
}

}  // namespace flowtrack
