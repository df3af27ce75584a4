#include "flowtrack/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "flowtrack/errors.hpp"

namespace flowtrack {
namespace {

// Independent RNG streams derived from the scenario seed.
enum class Stream : std::uint32_t { Dynamics = 1, Detections = 2, ReidMeans = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("scenario." + field + " " + what);
}

// Per-axis discrete-time transition for position/velocity pairs.
struct AxisTransition {
  double f01 = 0.0;  // position <- velocity
  double f11 = 1.0;  // velocity <- velocity
  // Lower Cholesky factor of the 2x2 process noise.
  double l00 = 0.0, l10 = 0.0, l11 = 0.0;
};

AxisTransition cholesky_transition(double f01, double f11, double q00, double q01, double q11) {
  AxisTransition t;
  t.f01 = f01;
  t.f11 = f11;
  if (q00 > 0.0) {
    t.l00 = std::sqrt(q00);
    t.l10 = q01 / t.l00;
    t.l11 = std::sqrt(std::max(0.0, q11 - t.l10 * t.l10));
  } else {
    t.l11 = std::sqrt(std::max(0.0, q11));
  }
  return t;
}

AxisTransition constant_velocity_transition(double q, double dt) {
  return cholesky_transition(dt, 1.0, q * dt * dt * dt / 3.0, q * dt * dt / 2.0, q * dt);
}

AxisTransition transition_for(const MotionModel& model, double dt) {
  if (const auto* cv = std::get_if<ConstantVelocity>(&model)) {
    return constant_velocity_transition(cv->process_noise_psd, dt);
  }
  const auto& ou = std::get<OrnsteinUhlenbeck>(model);
  const double k = ou.reversion_rate;
  const double q = ou.diffusion;
  if (k * dt < 1e-9) return constant_velocity_transition(q, dt);
  const double a = std::exp(-k * dt);
  const double q00 = q / (k * k) * (dt - 2.0 * (1.0 - a) / k + (1.0 - a * a) / (2.0 * k));
  const double q01 = q * (1.0 - a) * (1.0 - a) / (2.0 * k * k);
  const double q11 = q * (1.0 - a * a) / (2.0 * k);
  return cholesky_transition((1.0 - a) / k, a, q00, q01, q11);
}

double initial_speed_sigma(const MotionModel& model) {
  if (const auto* cv = std::get_if<ConstantVelocity>(&model)) return cv->initial_speed_sigma;
  const auto& ou = std::get<OrnsteinUhlenbeck>(model);
  if (ou.reversion_rate <= 0.0) return 0.0;
  return std::sqrt(ou.diffusion / (2.0 * ou.reversion_rate));
}

std::pair<int, int> sample_lifespan(const LifespanPolicy& policy, int num_frames,
                                    std::mt19937_64& rng) {
  if (policy.kind == LifespanPolicy::Kind::FullWindow) return {1, num_frames};
  const int birth_hi =
      std::max(1, static_cast<int>(std::floor(policy.birth_window * num_frames)));
  const int death_span =
      std::max(1, static_cast<int>(std::floor(policy.death_window * num_frames)));
  const int death_lo = std::max(1, num_frames - death_span + 1);
  const int min_len = std::clamp(policy.min_lifespan, 1, num_frames);
  std::uniform_int_distribution<int> birth_dist(1, std::min(birth_hi, num_frames));
  std::uniform_int_distribution<int> death_dist(death_lo, num_frames);
  int birth = 1, death = num_frames;
  for (int attempt = 0; attempt < 100; ++attempt) {
    birth = birth_dist(rng);
    death = death_dist(rng);
    if (death - birth + 1 >= min_len) return {birth, death};
  }
  birth = std::min(birth, num_frames - min_len + 1);
  return {birth, std::max(death, birth + min_len - 1)};
}

}  // namespace

OrnsteinUhlenbeck OrnsteinUhlenbeck::with_spread(double scene_width, int num_frames,
                                                 double frame_dt, double reversion_rate,
                                                 double spread_fraction) {
  // Var[x(T) - x(0)] = q / k^3 * (kT - 1 + exp(-kT)) with a stationary start.
  const double k = reversion_rate;
  const double kt = k * num_frames * frame_dt;
  const double spread = spread_fraction * scene_width;
  OrnsteinUhlenbeck ou;
  ou.reversion_rate = k;
  ou.diffusion = spread * spread * k * k * k / (kt - 1.0 + std::exp(-kt));
  return ou;
}

void validate(const ScenarioConfig& c) {
  require(c.num_frames >= 1, "num_frames", "must be >= 1");
  require(c.frame_dt > 0.0, "frame_dt", "must be > 0");
  require(c.num_targets >= 0, "num_targets", "must be >= 0");
  require(c.detect_prob >= 0.0 && c.detect_prob <= 1.0, "detect_prob", "must be in [0, 1]");
  require(c.meas_sigma >= 0.0, "meas_sigma", "must be >= 0");
  require(c.fa_rate >= 0.0, "fa_rate", "must be >= 0");
  require(c.reid.dim >= 1, "reid.dim", "must be >= 1");
  require(c.reid.strength_kl_nats >= 0.0, "reid.strength_kl_nats", "must be >= 0");
  require(c.reid.feature_sigma > 0.0, "reid.feature_sigma", "must be > 0");
  require(c.reid.noisy_extra_dims >= 0, "reid.noisy_extra_dims", "must be >= 0");
  require(c.lifespan.birth_window >= 0.0 && c.lifespan.birth_window <= 1.0,
          "lifespan.birth_window", "must be in [0, 1]");
  require(c.lifespan.death_window >= 0.0 && c.lifespan.death_window <= 1.0,
          "lifespan.death_window", "must be in [0, 1]");
  require(c.lifespan.min_lifespan >= 1, "lifespan.min_lifespan", "must be >= 1");
  if (const auto* cv = std::get_if<ConstantVelocity>(&c.motion)) {
    require(cv->process_noise_psd >= 0.0, "motion.process_noise_psd", "must be >= 0");
    require(cv->initial_speed_sigma >= 0.0, "motion.initial_speed_sigma", "must be >= 0");
  } else {
    const auto& ou = std::get<OrnsteinUhlenbeck>(c.motion);
    require(ou.reversion_rate >= 0.0, "motion.reversion_rate", "must be >= 0");
    require(ou.diffusion >= 0.0, "motion.diffusion", "must be >= 0");
  }
  for (int axis = 0; axis < 2; ++axis) {
    require(std::isfinite(c.bounds.min[axis]) && std::isfinite(c.bounds.max[axis]), "bounds",
            "must be finite");
  }
}

GroundTruth simulate_targets(const ScenarioConfig& config) {
  validate(config);
  if (!(config.bounds.width() > 0.0 && config.bounds.height() > 0.0)) {
    throw ConfigError("scenario.bounds must have positive area");
  }
  auto rng = make_rng(config.seed, Stream::Dynamics);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const AxisTransition tr = transition_for(config.motion, config.frame_dt);
  const double v0_sigma = initial_speed_sigma(config.motion);

  GroundTruth truth;
  truth.targets_per_frame.assign(config.num_frames, 0);
  truth.tracks.reserve(config.num_targets);
  for (int id = 0; id < config.num_targets; ++id) {
    const auto [birth, death] = sample_lifespan(config.lifespan, config.num_frames, rng);
    Eigen::Vector2d pos(config.bounds.min.x() + unit(rng) * config.bounds.width(),
                        config.bounds.min.y() + unit(rng) * config.bounds.height());
    Eigen::Vector2d vel(v0_sigma * normal(rng), v0_sigma * normal(rng));

    TargetTrack track;
    track.target_id = id;
    for (int frame = birth; frame <= death; ++frame) {
      if (frame > birth) {
        for (int axis = 0; axis < 2; ++axis) {
          const double n0 = normal(rng);
          const double n1 = normal(rng);
          const double p = pos[axis] + tr.f01 * vel[axis] + tr.l00 * n0;
          const double v = tr.f11 * vel[axis] + tr.l10 * n0 + tr.l11 * n1;
          pos[axis] = p;
          vel[axis] = v;
        }
      }
      track.points.push_back({frame, pos, vel, std::nullopt});
      ++truth.targets_per_frame[frame - 1];
    }
    truth.tracks.push_back(std::move(track));
  }
  return truth;
}

double reid_separation(double kl_nats, double feature_sigma) {
  // KL(N(m1, s^2 I) || N(m0, s^2 I)) = |m1 - m0|^2 / (2 s^2)
  return feature_sigma * std::sqrt(2.0 * kl_nats);
}

std::vector<Eigen::VectorXd> sample_reid_means(const ScenarioConfig& config) {
  auto rng = make_rng(config.reid.mixture_seed, Stream::ReidMeans);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sep = reid_separation(config.reid.strength_kl_nats, config.reid.feature_sigma);
  std::vector<Eigen::VectorXd> means;
  means.reserve(config.num_targets);
  for (int id = 0; id < config.num_targets; ++id) {
    Eigen::VectorXd dir(config.reid.dim);
    do {
      for (int d = 0; d < config.reid.dim; ++d) dir[d] = normal(rng);
    } while (dir.norm() < 1e-12);
    means.push_back(sep * dir.normalized());
  }
  return means;
}

Scenario generate_detections(GroundTruth truth, const ScenarioConfig& config) {
  validate(config);
  auto rng = make_rng(config.seed, Stream::Detections);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::poisson_distribution<int> clutter_count(config.fa_rate > 0.0 ? config.fa_rate : 1.0);
  const auto means = sample_reid_means(config);
  const int reid_dim = config.reid.dim;
  const int total_dim = config.reid.total_dim();
  const double fs = config.reid.feature_sigma;

  auto draw_reid = [&](const Eigen::VectorXd* mean) {
    Eigen::VectorXd f(total_dim);
    for (int d = 0; d < reid_dim; ++d) f[d] = (mean ? (*mean)[d] : 0.0) + fs * normal(rng);
    for (int d = reid_dim; d < total_dim; ++d) f[d] = normal(rng);
    return f;
  };

  // Cursor into each track's point list, advanced frame by frame.
  std::vector<std::size_t> cursor(truth.tracks.size(), 0);
  Scenario out;
  out.config = config;
  DetId next_id = 0;
  for (int frame = 1; frame <= config.num_frames; ++frame) {
    for (auto& track : truth.tracks) {
      auto& at = cursor[track.target_id];
      if (at >= track.points.size() || track.points[at].frame != frame) continue;
      TrackPoint& pt = track.points[at++];
      if (unit(rng) >= config.detect_prob) continue;
      Detection det;
      det.det_id = next_id++;
      det.frame = frame;
      det.position = pt.position + config.meas_sigma * Eigen::Vector2d(normal(rng), normal(rng));
      det.reid = draw_reid(&means[track.target_id]);
      det.source = Source::target(track.target_id);
      pt.det_id = det.det_id;
      out.detections.push_back(std::move(det));
    }
    const int n_clutter = config.fa_rate > 0.0 ? clutter_count(rng) : 0;
    for (int k = 0; k < n_clutter; ++k) {
      Detection det;
      det.det_id = next_id++;
      det.frame = frame;
      det.position = Eigen::Vector2d(config.bounds.min.x() + unit(rng) * config.bounds.width(),
                                     config.bounds.min.y() + unit(rng) * config.bounds.height());
      det.reid = draw_reid(nullptr);
      det.source = Source::clutter();
      out.detections.push_back(std::move(det));
    }
  }
  out.truth = std::move(truth);
  return out;
}

Scenario make_scenario(const ScenarioConfig& config) {
  return generate_detections(simulate_targets(config), config);
}

}  // namespace flowtrack
