#include "flowtrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace flowtrack {
namespace {

void add_path_links(const Path& p, double weight, std::map<LinkKey, double>& grad) {
  for (std::size_t k = 1; k < p.det_ids.size(); ++k) {
    grad[{p.det_ids[k - 1], p.det_ids[k]}] += weight;
  }
}

void drop_zeros(std::map<LinkKey, double>& grad) {
  std::erase_if(grad, [](const auto& kv) { return kv.second == 0.0; });
}

bool is_valid_path(const DetectionGraph& g, const std::vector<DetId>& ids) {
  if (ids.empty()) return false;
  for (std::size_t k = 1; k < ids.size(); ++k) {
    if (g.link_index(ids[k - 1], ids[k]) < 0) return false;
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(margin >= 0.0)) throw ConfigError("train.margin must be >= 0");
  if (num_negatives < 1) throw ConfigError("train.num_negatives must be >= 1");
  if (stage1_max_iters < 0) throw ConfigError("train.stage1_max_iters must be >= 0");
  if (!(stage2_epsilon >= 0.0)) throw ConfigError("train.stage2_epsilon must be >= 0");
  if (stage2_max_epochs < 0) throw ConfigError("train.stage2_max_epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (!(c_en > 0.0)) throw ConfigError("train.c_en must be > 0");
  if (!(c_ex > 0.0)) throw ConfigError("train.c_ex must be > 0");
  mpn.validate();
}

PathSet extract_gt_paths(const Scenario& scenario, const DetectionGraph& g) {
  PathSet out;
  for (const auto& track : scenario.truth.tracks) {
    Path current;
    for (const auto& pt : track.points) {
      if (!pt.det_id || g.node_index(*pt.det_id) < 0) continue;
      const DetId id = *pt.det_id;
      if (!current.det_ids.empty() && g.link_index(current.det_ids.back(), id) < 0) {
        out.paths.push_back(std::move(current));
        current = {};
      }
      current.det_ids.push_back(id);
    }
    if (!current.det_ids.empty()) out.paths.push_back(std::move(current));
  }
  std::sort(out.paths.begin(), out.paths.end(),
            [](const Path& a, const Path& b) { return a.det_ids.front() < b.det_ids.front(); });
  return out;
}

PathSet trainable_paths(const PathSet& gt) {
  PathSet out;
  for (const auto& p : gt.paths) {
    if (p.det_ids.size() >= 2) out.paths.push_back(p);
  }
  return out;
}

LossReport set_loss(const PathSet& gt, const PathSet& star, const TrackingGraph& g) {
  LossReport r;
  double c_gt = 0.0;
  for (const auto& p : gt.paths) {
    const double c = path_cost(p, g);
    c_gt += c;
    if (c > 0.0) {
      r.l2 += c;
      add_path_links(p, 1.0, r.grad);
    }
  }
  const double c_star = path_set_cost(star, g);
  r.l1 = std::max(0.0, c_gt - c_star);
  if (r.l1 > 0.0) {
    for (const auto& p : gt.paths) add_path_links(p, 1.0, r.grad);
    for (const auto& p : star.paths) add_path_links(p, -1.0, r.grad);
  }
  drop_zeros(r.grad);
  r.total = r.l1 + r.l2;
  return r;
}

const char* to_string(PerturbMove move) {
  switch (move) {
    case PerturbMove::TailSwap: return "tail_swap";
    case PerturbMove::Substitute: return "substitute";
    case PerturbMove::Truncate: return "truncate";
    case PerturbMove::Extend: return "extend";
  }
  return "unknown";
}

PerturbResult perturb_paths(const DetectionGraph& g, const PathSet& gt, int count,
                            std::uint64_t seed) {
  if (count < 1) throw ConfigError("perturb_paths: count must be >= 1");
  std::mt19937_64 rng(seed);
  std::unordered_set<DetId> on_gt;
  for (const auto& p : gt.paths) on_gt.insert(p.det_ids.begin(), p.det_ids.end());
  std::set<std::vector<DetId>> gt_seqs;
  for (const auto& p : gt.paths) gt_seqs.insert(p.det_ids);

  auto successors = [&](DetId id) {
    std::vector<DetId> out;
    for (int e : g.out_links(g.node_index(id))) out.push_back(g.nodes()[g.links()[e].to].det_id);
    return out;
  };
  auto predecessors = [&](DetId id) {
    std::vector<DetId> out;
    for (int e : g.in_links(g.node_index(id))) out.push_back(g.nodes()[g.links()[e].from].det_id);
    return out;
  };

  // Enumerate every candidate per move once; sampling then draws from these pools.
  std::vector<std::vector<std::vector<DetId>>> pools(4);
  std::vector<std::vector<int>> sources(4);
  auto& swaps = pools[static_cast<int>(PerturbMove::TailSwap)];
  auto& subs = pools[static_cast<int>(PerturbMove::Substitute)];
  auto& truncs = pools[static_cast<int>(PerturbMove::Truncate)];
  auto& extends = pools[static_cast<int>(PerturbMove::Extend)];

  for (std::size_t a = 0; a < gt.paths.size(); ++a) {
    const auto& pa = gt.paths[a].det_ids;
    for (std::size_t b = 0; b < gt.paths.size(); ++b) {
      if (a == b) continue;
      const auto& pb = gt.paths[b].det_ids;
      for (std::size_t i = 0; i < pa.size(); ++i) {
        for (std::size_t j = 1; j < pb.size(); ++j) {
          if (g.link_index(pa[i], pb[j]) < 0) continue;
          std::vector<DetId> seq(pa.begin(), pa.begin() + static_cast<std::ptrdiff_t>(i) + 1);
          seq.insert(seq.end(), pb.begin() + static_cast<std::ptrdiff_t>(j), pb.end());
          swaps.push_back(std::move(seq));
          sources[0].push_back(static_cast<int>(a));
        }
      }
    }
  }
  for (std::size_t gi = 0; gi < gt.paths.size(); ++gi) {
    const auto& p = gt.paths[gi].det_ids;
    const int src = static_cast<int>(gi);
    const int len = static_cast<int>(p.size());
    for (int i = 0; i < len; ++i) {
      const int frame = g.nodes()[g.node_index(p[i])].frame;
      std::vector<DetId> cands;
      if (i > 0) {
        cands = successors(p[i - 1]);
      } else if (i + 1 < len) {
        cands = predecessors(p[i + 1]);
      }
      for (DetId v : cands) {
        if (on_gt.count(v) || g.nodes()[g.node_index(v)].frame != frame) continue;
        auto seq = p;
        seq[i] = v;
        if (is_valid_path(g, seq)) {
          subs.push_back(std::move(seq));
          sources[1].push_back(src);
        }
      }
    }
    for (int k = 1; k <= std::min(3, len - 1); ++k) {
      truncs.emplace_back(p.begin() + k, p.end());
      truncs.emplace_back(p.begin(), p.end() - k);
      sources[2].push_back(src);
      sources[2].push_back(src);
    }
    for (DetId v : successors(p.back())) {
      if (on_gt.count(v)) continue;
      auto seq = p;
      seq.push_back(v);
      extends.push_back(std::move(seq));
      sources[3].push_back(src);
    }
    for (DetId v : predecessors(p.front())) {
      if (on_gt.count(v)) continue;
      std::vector<DetId> seq{v};
      seq.insert(seq.end(), p.begin(), p.end());
      extends.push_back(std::move(seq));
      sources[3].push_back(src);
    }
  }

  std::vector<int> available;
  for (int m = 0; m < 4; ++m) {
    if (!pools[m].empty()) available.push_back(m);
  }
  PerturbResult result;
  std::set<std::vector<DetId>> taken;
  std::size_t total = 0;
  for (const auto& pool : pools) total += pool.size();
  const int max_attempts = 50 * count + 100;
  for (int attempt = 0; attempt < max_attempts && !available.empty() &&
                        static_cast<int>(result.negatives.size()) < count;
       ++attempt) {
    const int move = available[std::uniform_int_distribution<std::size_t>(0, available.size() - 1)(rng)];
    const auto& pool = pools[move];
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng);
    const auto& seq = pool[pick];
    if (gt_seqs.count(seq) || !taken.insert(seq).second) continue;
    result.negatives.push_back({Path{seq}, static_cast<PerturbMove>(move), sources[move][pick]});
  }
  if (static_cast<int>(result.negatives.size()) < count) {
    result.warning = "perturb_paths: produced " + std::to_string(result.negatives.size()) +
                     " of " + std::to_string(count) + " requested negatives (" +
                     std::to_string(total) + " candidates)";
  }
  return result;
}

LossReport stage1_loss(const PathSet& gt, std::span<const Path> negatives, const TrackingGraph& g,
                       double margin) {
  LossReport r;
  for (const auto& p : gt.paths) {
    const double c = path_cost(p, g);
    if (c > 0.0) {
      r.l2 += c;
      add_path_links(p, 1.0, r.grad);
    }
  }
  if (!gt.paths.empty() && !negatives.empty()) {
    std::vector<double> neg_cost;
    neg_cost.reserve(negatives.size());
    for (const auto& n : negatives) neg_cost.push_back(path_cost(n, g));
    const double w = 1.0 / (static_cast<double>(gt.paths.size()) * negatives.size());
    double hinge = 0.0;
    for (const auto& p : gt.paths) {
      const double cp = path_cost(p, g);
      for (std::size_t k = 0; k < negatives.size(); ++k) {
        const double v = cp - neg_cost[k] + margin;
        if (v <= 0.0) continue;
        hinge += v;
        add_path_links(p, w, r.grad);
        add_path_links(negatives[k], -w, r.grad);
      }
    }
    r.l1 = hinge * w;
  }
  drop_zeros(r.grad);
  r.total = r.l1 + r.l2;
  return r;
}

LossReport stage1_loss_sourced(const PathSet& gt, std::span<const NegativePath> negatives,
                               const TrackingGraph& g, double margin) {
  LossReport r;
  std::vector<double> gt_cost;
  for (const auto& p : gt.paths) {
    const double c = path_cost(p, g);
    gt_cost.push_back(c);
    if (c > 0.0) {
      r.l2 += c;
      add_path_links(p, 1.0, r.grad);
    }
  }
  if (!negatives.empty()) {
    const double w = 1.0 / static_cast<double>(negatives.size());
    double hinge = 0.0;
    for (const auto& n : negatives) {
      const double v = gt_cost[n.source] - path_cost(n.path, g) + margin;
      if (v <= 0.0) continue;
      hinge += v;
      add_path_links(gt.paths[n.source], w, r.grad);
      add_path_links(n.path, -w, r.grad);
    }
    r.l1 = hinge * w;
  }
  drop_zeros(r.grad);
  r.total = r.l1 + r.l2;
  return r;
}

PathSet track_with_model(const DetectionGraph& g, const ParamStore& params, const MpnConfig& mpn,
                         double c_en, double c_ex, SolveStats* stats) {
  MpnConfig cost_cfg = mpn;
  cost_cfg.readout = ReadoutMode::Cost;
  const MpnOutput out = mpn_forward(g, params, cost_cfg);
  const TrackingGraph trk = build_tracking_graph(g, c_en, c_ex);
  return track_by_ssp(transfer_costs(out.scores, trk), stats);
}

namespace {

struct Prepared {
  const TrainingExample* example;
  PathSet gt;  // trainable paths only
  TrackingGraph base;
  std::vector<NegativePath> negatives;
};

void check_finite(const LossReport& r, const ParamStore& params, const char* stage) {
  if (!std::isfinite(r.total)) {
    throw TrainingAborted(std::string(stage) + ": non-finite loss", params);
  }
}

void step(ParamStore& params, MpnTape& tape, const LossReport& r, const TrainConfig& cfg,
          const char* stage) {
  if (r.grad.empty()) return;
  const ParamStore before = params;
  const Eigen::VectorXd grad = mpn_backward(tape, r.grad, UpstreamSpace::Score);
  try {
    adam_step(params, grad, cfg.learning_rate);
  } catch (const NumericError& e) {
    throw TrainingAborted(std::string(stage) + ": " + e.what(), before);
  }
  if (!params.theta.allFinite()) {
    throw TrainingAborted(std::string(stage) + ": parameters became non-finite", before);
  }
}

}  // namespace

TrainResult train_from(ParamStore params, std::span<const TrainingExample> examples,
                       const TrainConfig& cfg, int stage1_iters, const TrainHooks& hooks) {
  cfg.validate();
  if (examples.empty()) throw ConfigError("train: training set is empty");
  MpnConfig mpn = cfg.mpn;
  mpn.readout = ReadoutMode::Cost;

  std::vector<Prepared> prepared;
  prepared.reserve(examples.size());
  for (std::size_t k = 0; k < examples.size(); ++k) {
    const auto& ex = examples[k];
    Prepared p{&ex, trainable_paths(ex.gt), build_tracking_graph(ex.graph, cfg.c_en, cfg.c_ex), {}};
    validate_path_set(p.gt, p.base);
    if (stage1_iters > 0 && !p.gt.empty()) {
      auto neg = perturb_paths(ex.graph, p.gt, cfg.num_negatives, cfg.seed * 7919 + k + 1);
      p.negatives = std::move(neg.negatives);
    }
    prepared.push_back(std::move(p));
  }

  TrainResult result;
  for (int it = 0; it < stage1_iters; ++it) {
    double sum = 0.0;
    for (auto& p : prepared) {
      if (p.gt.empty()) continue;
      MpnTape tape;
      const MpnOutput out = mpn_forward(p.example->graph, params, mpn, &tape);
      const TrackingGraph g = transfer_costs(out.scores, p.base);
      const LossReport r = stage1_loss_sourced(p.gt, p.negatives, g, cfg.margin);
      check_finite(r, params, "stage I");
      sum += r.total;
      step(params, tape, r, cfg, "stage I");
    }
    const double mean = sum / static_cast<double>(prepared.size());
    result.stage1_losses.push_back(mean);
    if (hooks.on_stage1) hooks.on_stage1(it + 1, mean);
  }

  for (int epoch = 1; epoch <= cfg.stage2_max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<double> losses;
    for (auto& p : prepared) {
      MpnTape tape;
      const MpnOutput out = mpn_forward(p.example->graph, params, mpn, &tape);
      const TrackingGraph g = transfer_costs(out.scores, p.base);
      const PathSet star = track_by_ssp(g);
      ++result.solver_calls;
      result.positive_cost_solutions += count_nonpositive_violations(star, g);
      const LossReport r = set_loss(p.gt, star, g);
      check_finite(r, params, "stage II");
      if (path_set_cost(star, g) > path_set_cost(p.gt, g) + 1e-9) {
        throw std::logic_error("stage II: solver returned a path set costlier than ground truth");
      }
      losses.push_back(r.total);
      rec.mean_l1 += r.l1;
      rec.mean_l2 += r.l2;
      // A graph already inside the tolerance is left alone so that Adam momentum
      // from other graphs does not drift it.
      if (r.total >= cfg.stage2_epsilon && r.total > 0.0) {
        step(params, tape, r, cfg, "stage II");
        ++rec.updates;
      }
    }
    const double n = static_cast<double>(losses.size());
    for (double v : losses) rec.mean_loss += v;
    rec.mean_loss /= n;
    rec.mean_l1 /= n;
    rec.mean_l2 /= n;
    double var = 0.0;
    for (double v : losses) var += (v - rec.mean_loss) * (v - rec.mean_loss);
    rec.std_loss = std::sqrt(var / n);
    result.history.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec, params);
    if (rec.mean_loss < cfg.stage2_epsilon) {
      result.converged = true;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

TrainResult train(std::span<const TrainingExample> examples, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (examples.empty()) throw ConfigError("train: training set is empty");
  MpnConfig mpn = cfg.mpn;
  mpn.readout = ReadoutMode::Cost;
  ParamStore params = make_mpn_params(mpn, examples.front().graph.reid_dim(), cfg.seed);
  return train_from(std::move(params), examples, cfg, cfg.stage1_max_iters, hooks);
}

}  // namespace flowtrack
