#include "flowtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace flowtrack {
namespace {

std::unordered_map<DetId, const Detection*> index_detections(const Scenario& s) {
  std::unordered_map<DetId, const Detection*> idx;
  idx.reserve(s.detections.size());
  for (const auto& d : s.detections) idx.emplace(d.det_id, &d);
  return idx;
}

// positions[frame - 1] holds one entry per path alive at that frame.
std::vector<std::vector<Eigen::Vector2d>> positions_by_frame(const PathSet& pred,
                                                             const Scenario& s) {
  const auto idx = index_detections(s);
  std::vector<std::vector<Eigen::Vector2d>> out(static_cast<std::size_t>(s.config.num_frames));
  for (const auto& p : pred.paths) {
    const Detection* prev = nullptr;
    for (DetId id : p.det_ids) {
      auto it = idx.find(id);
      if (it == idx.end()) {
        throw std::invalid_argument("det_id " + std::to_string(id) + " is not in the scenario");
      }
      const Detection* d = it->second;
      if (prev) {
        const int gap = d->frame - prev->frame;
        for (int f = prev->frame + 1; f < d->frame; ++f) {
          const double w = static_cast<double>(f - prev->frame) / gap;
          out[f - 1].push_back((1.0 - w) * prev->position + w * d->position);
        }
      }
      if (d->frame >= 1 && d->frame <= s.config.num_frames) out[d->frame - 1].push_back(d->position);
      prev = d;
    }
  }
  return out;
}

std::vector<std::vector<Eigen::Vector2d>> truth_by_frame(const GroundTruth& truth, int num_frames) {
  std::vector<std::vector<Eigen::Vector2d>> out(static_cast<std::size_t>(num_frames));
  for (const auto& t : truth.tracks) {
    for (const auto& pt : t.points) {
      if (pt.frame >= 1 && pt.frame <= num_frames) out[pt.frame - 1].push_back(pt.position);
    }
  }
  return out;
}

}  // namespace

MotReport mota(const PathSet& pred, const Scenario& scenario) {
  const auto idx = index_detections(scenario);
  // Identity of the predicted path covering each detection.
  std::unordered_map<DetId, int> covered;
  MotReport r;
  for (std::size_t k = 0; k < pred.paths.size(); ++k) {
    for (DetId id : pred.paths[k].det_ids) {
      auto it = idx.find(id);
      if (it == idx.end()) {
        throw std::invalid_argument("mota: det_id " + std::to_string(id) + " is not in the scenario");
      }
      if (!covered.emplace(id, static_cast<int>(k)).second) {
        throw std::invalid_argument("mota: det_id " + std::to_string(id) + " is predicted twice");
      }
      if (it->second->source.is_target()) {
        ++r.tp;
      } else {
        ++r.fp;
      }
    }
  }
  for (const auto& d : scenario.detections) {
    if (d.source.is_target()) ++r.num_gt;
  }
  r.fn = r.num_gt - r.tp;

  // Walk each target's detections in frame order.
  std::unordered_map<int, std::vector<const Detection*>> per_target;
  for (const auto& d : scenario.detections) {
    if (d.source.is_target()) per_target[d.source.target_id].push_back(&d);
  }
  for (auto& [id, dets] : per_target) {
    std::sort(dets.begin(), dets.end(),
              [](const Detection* a, const Detection* b) { return a->frame < b->frame; });
    int last = -1;
    for (const Detection* d : dets) {
      auto it = covered.find(d->det_id);
      if (it == covered.end()) continue;
      if (last >= 0 && it->second != last) ++r.ids;
      last = it->second;
    }
  }

  const double denom = static_cast<double>(std::max<std::int64_t>(1, r.num_gt));
  r.fp_rate = static_cast<double>(r.fp) / denom;
  r.fn_rate = static_cast<double>(r.fn) / denom;
  r.ids_rate = static_cast<double>(r.ids) / denom;
  r.mota = 1.0 - (r.fp_rate + r.fn_rate + r.ids_rate);
  return r;
}

std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() != cost.cols()) throw std::invalid_argument("solve_assignment: matrix not square");
  const int n = static_cast<int>(cost.rows());
  if (n == 0) return {};
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // Shortest augmenting path with row/column potentials (1-based, column 0 is a sentinel).
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

GospaReport gospa_frame(const std::vector<Eigen::Vector2d>& truth,
                        const std::vector<Eigen::Vector2d>& estimate, double c, double p) {
  if (!(c > 0.0)) throw std::invalid_argument("gospa: cutoff c must be > 0");
  if (!(p >= 1.0)) throw std::invalid_argument("gospa: order p must be >= 1");
  GospaReport r;
  r.c = c;
  r.p = p;
  const int n = static_cast<int>(truth.size());
  const int m = static_cast<int>(estimate.size());
  const double half = std::pow(c, p) / 2.0;
  // Rows: truth then dummies; columns: estimates then dummies.
  Eigen::MatrixXd cost = Eigen::MatrixXd::Zero(n + m, n + m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      cost(i, j) = std::pow(std::min((truth[i] - estimate[j]).norm(), c), p);
    }
    for (int j = m; j < n + m; ++j) cost(i, j) = half;
  }
  for (int i = n; i < n + m; ++i) {
    for (int j = 0; j < m; ++j) cost(i, j) = half;
  }
  const auto assign = solve_assignment(cost);
  int matched = 0;
  for (int i = 0; i < n; ++i) {
    const int j = assign[i];
    if (j < m && (truth[i] - estimate[j]).norm() < c) {
      r.localization += cost(i, j);
      ++matched;
    }
  }
  r.missed = half * (n - matched);
  r.false_tracks = half * (m - matched);
  r.distance = std::pow(r.localization + r.missed + r.false_tracks, 1.0 / p);
  return r;
}

GospaReport gospa(const PathSet& pred, const GroundTruth& truth, const Scenario& scenario, double c,
                  double p) {
  const auto est = positions_by_frame(pred, scenario);
  const auto gt = truth_by_frame(truth, scenario.config.num_frames);
  GospaReport total;
  total.c = c;
  total.p = p;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    const GospaReport r = gospa_frame(gt[f], est[f], c, p);
    total.distance += r.distance;
    total.localization += r.localization;
    total.missed += r.missed;
    total.false_tracks += r.false_tracks;
  }
  return total;
}

std::vector<Eigen::Vector2d> predicted_positions(const PathSet& pred, const Scenario& scenario,
                                                 int frame) {
  if (frame < 1 || frame > scenario.config.num_frames) return {};
  return positions_by_frame(pred, scenario)[frame - 1];
}

SiapReport siap(const PathSet& pred, const GroundTruth& truth, const Scenario& scenario,
                double assoc_radius) {
  if (!(assoc_radius > 0.0)) throw std::invalid_argument("siap: association radius must be > 0");
  const auto est = positions_by_frame(pred, scenario);
  const auto gt = truth_by_frame(truth, scenario.config.num_frames);
  double n_gt = 0, n_gt_covered = 0, n_assoc = 0, n_tracks = 0, n_spurious = 0, err = 0;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    std::vector<int> hits(gt[f].size(), 0);
    for (const auto& x : est[f]) {
      int best = -1;
      double best_d = assoc_radius;
      for (std::size_t i = 0; i < gt[f].size(); ++i) {
        const double d = (gt[f][i] - x).norm();
        if (d <= best_d) {
          best_d = d;
          best = static_cast<int>(i);
        }
      }
      if (best < 0) {
        ++n_spurious;
      } else {
        ++hits[best];
        ++n_assoc;
        err += best_d;
      }
    }
    n_tracks += static_cast<double>(est[f].size());
    n_gt += static_cast<double>(gt[f].size());
    for (int h : hits) n_gt_covered += h > 0 ? 1 : 0;
  }
  SiapReport r;
  r.completeness = n_gt > 0 ? n_gt_covered / n_gt : 0.0;
  r.ambiguity_defined = n_gt_covered > 0;
  r.ambiguity = r.ambiguity_defined ? n_assoc / n_gt_covered : 0.0;
  r.spuriousness = n_tracks > 0 ? n_spurious / n_tracks : 0.0;
  r.positional_error = n_assoc > 0 ? err / n_assoc : 0.0;
  return r;
}

std::string metrics_csv_header() {
  return "run_id,scenario_id,tracker,seed,mota,fp_rate,fn_rate,ids_rate,tp,fp,fn,ids,num_gt,"
         "gospa,gospa_localization,gospa_missed,gospa_false,gospa_c,gospa_p,"
         "siap_completeness,siap_ambiguity,siap_ambiguity_defined,siap_spuriousness,"
         "siap_positional_error";
}

std::string metrics_csv_row(const MetricsKey& key, const MotReport& mot, const GospaReport& g,
                            const SiapReport& s) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << key.run_id << ',' << key.scenario_id << ',' << key.tracker << ',' << key.seed << ','
     << mot.mota << ',' << mot.fp_rate << ',' << mot.fn_rate << ',' << mot.ids_rate << ','
     << mot.tp << ',' << mot.fp << ',' << mot.fn << ',' << mot.ids << ',' << mot.num_gt << ','
     << g.distance << ',' << g.localization << ',' << g.missed << ',' << g.false_tracks << ','
     << g.c << ',' << g.p << ',' << s.completeness << ',' << s.ambiguity << ','
     << (s.ambiguity_defined ? 1 : 0) << ',' << s.spuriousness << ',' << s.positional_error;
  return os.str();
}

}  // namespace flowtrack
