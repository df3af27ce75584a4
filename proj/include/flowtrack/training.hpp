#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flowtrack/errors.hpp"
#include "flowtrack/graph.hpp"
#include "flowtrack/mpn.hpp"
#include "flowtrack/neural.hpp"
#include "flowtrack/scenario.hpp"
#include "flowtrack/ssp.hpp"

namespace flowtrack {

struct TrainConfig {
  double margin = 1.0;
  int num_negatives = 32;
  int stage1_max_iters = 200;
  double stage2_epsilon = 1e-3;
  int stage2_max_epochs = 300;
  double learning_rate = 1e-3;
  double c_en = 20.0;
  double c_ex = 20.0;
  MpnConfig mpn{};
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct LossReport {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  // d loss / d link cost; links absent from the map have zero subgradient.
  std::map<LinkKey, double> grad;
};

// One path per maximal run of a target's detections joined by graph links.
PathSet extract_gt_paths(const Scenario& scenario, const DetectionGraph& g);

// Paths with at least two detections. A single-detection path costs
// c_en + c_ex > 0 whatever the model does, so it cannot be a solver output.
PathSet trainable_paths(const PathSet& gt);

// l1 = max(0, c(gt) - c(star)), l2 = sum of max(0, c(p)) over gt paths.
LossReport set_loss(const PathSet& gt, const PathSet& star, const TrackingGraph& g);

enum class PerturbMove { TailSwap, Substitute, Truncate, Extend };

const char* to_string(PerturbMove move);

struct NegativePath {
  Path path;
  PerturbMove move = PerturbMove::Truncate;
  int source = -1;  // index of the gt path it was derived from
};

struct PerturbResult {
  std::vector<NegativePath> negatives;
  std::string warning;  // nonempty when fewer than the requested count exist
};

// Distinct valid detection-graph paths, none equal to a gt path. A node on no
// gt path counts as clutter for the substitution and extension moves.
PerturbResult perturb_paths(const DetectionGraph& g, const PathSet& gt, int count,
                            std::uint64_t seed);

// Mean pairwise hinge max(0, c(p+) - c(p-) + margin) plus l2(gt).
LossReport stage1_loss(const PathSet& gt, std::span<const Path> negatives, const TrackingGraph& g,
                       double margin);
// Pairs each negative only with its source gt path.
LossReport stage1_loss_sourced(const PathSet& gt, std::span<const NegativePath> negatives,
                               const TrackingGraph& g, double margin);

struct TrainingExample {
  DetectionGraph graph;
  PathSet gt;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double std_loss = 0.0;
  double mean_l1 = 0.0;
  double mean_l2 = 0.0;
  int updates = 0;  // graphs that received a parameter step
};

struct TrainResult {
  ParamStore params;
  std::vector<double> stage1_losses;  // mean over graphs, per iteration
  std::vector<EpochRecord> history;   // stage II
  bool converged = false;             // epoch mean fell below epsilon
  int solver_calls = 0;
  int positive_cost_solutions = 0;  // solved path sets with a positive-cost member or total
};

// Raised on a non-finite loss or gradient; carries the parameters at the last
// finite state.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, ParamStore snapshot)
      : NumericError(what), snapshot_(std::move(snapshot)) {}
  const ParamStore& snapshot() const { return snapshot_; }

 private:
  ParamStore snapshot_;
};

struct TrainHooks {
  std::function<void(int iter, double loss)> on_stage1;
  std::function<void(const EpochRecord&, const ParamStore&)> on_epoch;
};

TrainResult train(std::span<const TrainingExample> examples, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

// Continues from existing parameters (stage II only when stage1_iters == 0).
TrainResult train_from(ParamStore params, std::span<const TrainingExample> examples,
                       const TrainConfig& cfg, int stage1_iters, const TrainHooks& hooks = {});

// Costs from the model transferred onto the tracking graph, then solved.
PathSet track_with_model(const DetectionGraph& g, const ParamStore& params, const MpnConfig& mpn,
                         double c_en, double c_ex, SolveStats* stats = nullptr);

}  // namespace flowtrack
