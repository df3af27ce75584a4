#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flowtrack/graph.hpp"
#include "flowtrack/mpn.hpp"
#include "flowtrack/ssp.hpp"
#include "flowtrack/training.hpp"

namespace flowtrack {

// 1 on links joining consecutive detections of a ground-truth path, else 0.
// Aligned with the graph's link order.
struct EdgeLabels {
  std::vector<LinkKey> keys;
  std::vector<int> values;

  int positives() const;
};

EdgeLabels label_edges(const DetectionGraph& g, const PathSet& gt);

struct EdgeBeliefOptions {
  bool reweight_positives = true;  // positive weight = negatives / positives
  std::function<void(int step, double loss, const ParamStore& params)> on_step;
};

struct EdgeBeliefResult {
  ParamStore params;
  std::vector<double> loss_history;  // mean weighted cross-entropy per pass over graphs
};

// Trains the belief readout for stage1_max_iters + stage2_max_epochs passes,
// one Adam step per graph per pass.
EdgeBeliefResult train_edge_belief(std::span<const TrainingExample> examples,
                                   const TrainConfig& cfg, const EdgeBeliefOptions& opts = {});

// Weighted binary cross-entropy on logits and its gradient per link.
double belief_loss(std::span<const double> logits, const EdgeLabels& labels, bool reweight,
                   std::vector<double>* grad_logits);

// Greedy node-disjoint chains over links with belief > 0.5, taken in descending
// belief; chains shorter than `min_length` detections are dropped.
PathSet paths_from_beliefs(const DetectionGraph& g, std::span<const double> beliefs,
                           int min_length = 3);

PathSet infer_edge_belief(const DetectionGraph& g, const ParamStore& params, const MpnConfig& mpn,
                          int min_length = 3);

}  // namespace flowtrack
