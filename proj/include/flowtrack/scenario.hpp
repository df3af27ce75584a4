#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace flowtrack {

using DetId = std::int64_t;

struct Box2 {
  Eigen::Vector2d min{0.0, 0.0};
  Eigen::Vector2d max{25.0, 25.0};

  double width() const { return max.x() - min.x(); }
  double height() const { return max.y() - min.y(); }
  double area() const { return width() * height(); }
};

// Nearly-constant-velocity dynamics: white-noise acceleration with the given
// power spectral density; initial velocity ~ N(0, initial_speed_sigma^2) per axis.
struct ConstantVelocity {
  double process_noise_psd = 1e-4;
  double initial_speed_sigma = 0.05;
};

// Integrated Ornstein-Uhlenbeck velocity process:
//   dv = -reversion_rate * v dt + sqrt(diffusion) dW
// Initial velocity is drawn from the stationary law N(0, diffusion / (2 k)).
struct OrnsteinUhlenbeck {
  double reversion_rate = 0.1;
  double diffusion = 0.0016;

  // Diffusion such that the RMS displacement over `num_frames` is
  // `spread_fraction` of the scene width.
  static OrnsteinUhlenbeck with_spread(double scene_width, int num_frames, double frame_dt,
                                       double reversion_rate = 0.1, double spread_fraction = 0.2);
};

using MotionModel = std::variant<ConstantVelocity, OrnsteinUhlenbeck>;

struct LifespanPolicy {
  enum class Kind { FullWindow, Random };
  Kind kind = Kind::Random;
  double birth_window = 0.4;  // births uniform in the first fraction of frames
  double death_window = 0.4;  // deaths uniform in the last fraction of frames
  int min_lifespan = 10;
};

// Named ReID strength categories, as KL divergence in nats between a target's
// feature distribution and the clutter distribution.
namespace reid_strength {
inline constexpr double kVeryWeak = 0.02;
inline constexpr double kWeak = 0.5;
inline constexpr double kModerate = 3.125;
inline constexpr double kStrong = 12.5;
}  // namespace reid_strength

struct ReidConfig {
  int dim = 2;
  double strength_kl_nats = reid_strength::kModerate;
  double feature_sigma = 1.0;
  int noisy_extra_dims = 0;
  // Seeds the per-target component means. Scenarios sharing it share the
  // feature mixture, so a model trained on one transfers to the others.
  std::uint64_t mixture_seed = 0;

  int total_dim() const { return dim + noisy_extra_dims; }
};

struct ScenarioConfig {
  int num_frames = 100;
  double frame_dt = 1.0;
  Box2 bounds{};
  int num_targets = 3;
  MotionModel motion = OrnsteinUhlenbeck{};
  LifespanPolicy lifespan{};
  double detect_prob = 1.0;
  double meas_sigma = 0.2;
  double fa_rate = 20.0;
  ReidConfig reid{};
  std::uint64_t seed = 0;
};

// Throws ConfigError naming the offending field.
void validate(const ScenarioConfig& config);

struct Source {
  enum class Kind { Target, Clutter };
  Kind kind = Kind::Clutter;
  int target_id = -1;

  static Source target(int id) { return {Kind::Target, id}; }
  static Source clutter() { return {Kind::Clutter, -1}; }
  bool is_target() const { return kind == Kind::Target; }
  bool operator==(const Source&) const = default;
};

struct Detection {
  DetId det_id = 0;
  int frame = 1;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::VectorXd reid;
  // Ground-truth metadata. Only metrics and GT-path extraction may read it.
  Source source{};
};

struct TrackPoint {
  int frame = 1;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  std::optional<DetId> det_id;
};

struct TargetTrack {
  int target_id = 0;
  std::vector<TrackPoint> points;  // strictly increasing frames, contiguous lifespan
};

struct GroundTruth {
  std::vector<TargetTrack> tracks;     // indexed by target_id
  std::vector<int> targets_per_frame;  // index frame - 1
};

struct Scenario {
  ScenarioConfig config;
  GroundTruth truth;
  std::vector<Detection> detections;  // sorted by (frame, det_id)
};

GroundTruth simulate_targets(const ScenarioConfig& config);

// Mean separation between a target's ReID component and the background
// component realizing `kl_nats` for isotropic Gaussians of std `feature_sigma`.
double reid_separation(double kl_nats, double feature_sigma);

// Fills detection ids into `truth` and returns the complete scenario.
Scenario generate_detections(GroundTruth truth, const ScenarioConfig& config);

Scenario make_scenario(const ScenarioConfig& config);

// Per-target ReID component means (background mean is the origin), drawn from
// reid.mixture_seed.
std::vector<Eigen::VectorXd> sample_reid_means(const ScenarioConfig& config);

}  // namespace flowtrack
