#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "flowtrack/scenario.hpp"
#include "flowtrack/ssp.hpp"

namespace flowtrack {

struct MotReport {
  double mota = 1.0;
  double fp_rate = 0.0;
  double fn_rate = 0.0;
  double ids_rate = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t ids = 0;
  std::int64_t num_gt = 0;  // target-originated detections
};

// Identity-based matching: a predicted detection is a true positive iff it came
// from a target. Throws std::invalid_argument for unknown or repeated det_ids.
MotReport mota(const PathSet& pred, const Scenario& scenario);

// Minimum-cost perfect matching of a square cost matrix; returns the column
// assigned to each row.
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

struct GospaReport {
  double distance = 0.0;      // sum over frames of the per-frame GOSPA value
  double localization = 0.0;  // p-powered, summed over frames
  double missed = 0.0;
  double false_tracks = 0.0;
  double c = 10.0;
  double p = 2.0;
  double alpha = 2.0;
};

// Per-frame GOSPA between interpolated predicted track positions and true
// target positions.
GospaReport gospa(const PathSet& pred, const GroundTruth& truth, const Scenario& scenario,
                  double c = 10.0, double p = 2.0);

// GOSPA of two point sets (alpha = 2); the building block of gospa().
GospaReport gospa_frame(const std::vector<Eigen::Vector2d>& truth,
                        const std::vector<Eigen::Vector2d>& estimate, double c, double p);

struct SiapReport {
  double completeness = 0.0;
  double ambiguity = 0.0;
  bool ambiguity_defined = false;  // false when nothing was associated
  double spuriousness = 0.0;
  double positional_error = 0.0;
};

SiapReport siap(const PathSet& pred, const GroundTruth& truth, const Scenario& scenario,
                double assoc_radius);

inline double default_siap_radius(const ScenarioConfig& config) { return 5.0 * config.meas_sigma; }

// Position of each predicted path at `frame`, linear between its detections.
std::vector<Eigen::Vector2d> predicted_positions(const PathSet& pred, const Scenario& scenario,
                                                 int frame);

struct MetricsKey {
  std::string run_id;
  std::string scenario_id;
  std::string tracker;
  std::uint64_t seed = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsKey& key, const MotReport& mot, const GospaReport& g,
                            const SiapReport& s);

}  // namespace flowtrack
