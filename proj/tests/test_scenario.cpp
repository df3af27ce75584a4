#include <doctest.h>

#include <array>
#include <cmath>
#include <map>
#include <set>

#include "flowtrack/errors.hpp"
#include "flowtrack/io.hpp"
#include "flowtrack/scenario.hpp"

using namespace flowtrack;

namespace {

ScenarioConfig small_config(std::uint64_t seed) {
  ScenarioConfig c;
  c.num_frames = 100;
  c.num_targets = 3;
  c.fa_rate = 5.0;
  c.seed = seed;
  return c;
}

// Log density of an isotropic Gaussian, up to the shared normalizer.
double log_iso(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, double var) {
  return -(x - mean).squaredNorm() / (2.0 * var);
}

}  // namespace

TEST_CASE("reid_separation closed form") {
  CHECK(reid_separation(12.5, 1.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(reid_separation(0.0, 1.0) == 0.0);
  CHECK(reid_separation(0.5, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(reid_separation(3.125, 2.0) == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("named strength categories") {
  CHECK(reid_strength::kVeryWeak == 0.02);
  CHECK(reid_strength::kWeak == 0.5);
  CHECK(reid_strength::kModerate == 3.125);
  CHECK(reid_strength::kStrong == 12.5);
}

TEST_CASE("zero-noise dynamics give a stationary trajectory") {
  ScenarioConfig c = small_config(3);
  SUBCASE("constant velocity") { c.motion = ConstantVelocity{0.0, 0.0}; }
  SUBCASE("ornstein-uhlenbeck") { c.motion = OrnsteinUhlenbeck{0.0, 0.0}; }
  const GroundTruth gt = simulate_targets(c);
  REQUIRE(gt.tracks.size() == 3);
  for (const auto& t : gt.tracks) {
    for (const auto& p : t.points) CHECK(p.position == t.points.front().position);
  }
}

TEST_CASE("random lifespans are contiguous intervals inside the window") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ScenarioConfig c = small_config(seed);
    const GroundTruth gt = simulate_targets(c);
    REQUIRE(gt.tracks.size() == 3);
    std::vector<int> per_frame(c.num_frames, 0);
    for (const auto& t : gt.tracks) {
      REQUIRE_FALSE(t.points.empty());
      CHECK(t.points.front().frame >= 1);
      CHECK(t.points.back().frame <= c.num_frames);
      CHECK(static_cast<int>(t.points.size()) >= c.lifespan.min_lifespan);
      for (std::size_t k = 1; k < t.points.size(); ++k) CHECK(t.points[k].frame == t.points[k - 1].frame + 1);
      for (const auto& p : t.points) ++per_frame[p.frame - 1];
    }
    CHECK(per_frame == gt.targets_per_frame);
  }
}

TEST_CASE("same config and seed reproduce the scenario byte for byte") {
  const ScenarioConfig c = small_config(11);
  const std::string a = dump_json(to_json(make_scenario(c)));
  const std::string b = dump_json(to_json(make_scenario(c)));
  CHECK(a == b);
  ScenarioConfig other = c;
  other.seed = 12;
  CHECK(dump_json(to_json(make_scenario(other))) != a);
}

TEST_CASE("noise-free limit reproduces the true positions") {
  ScenarioConfig c = small_config(5);
  c.detect_prob = 1.0;
  c.fa_rate = 0.0;
  c.meas_sigma = 0.0;
  const Scenario s = make_scenario(c);
  std::size_t alive = 0;
  for (const auto& t : s.truth.tracks) alive += t.points.size();
  CHECK(s.detections.size() == alive);
  std::map<DetId, const Detection*> by_id;
  for (const auto& d : s.detections) by_id[d.det_id] = &d;
  for (const auto& t : s.truth.tracks) {
    for (const auto& p : t.points) {
      REQUIRE(p.det_id.has_value());
      const Detection* d = by_id.at(*p.det_id);
      CHECK(d->position == p.position);
      CHECK(d->frame == p.frame);
      CHECK(d->source == Source::target(t.target_id));
    }
  }
}

TEST_CASE("clutter count is Poisson with the configured rate") {
  // 20 scenarios x 100 frames at rate 20: total mean 2000 per scenario.
  const int runs = 20;
  double sum = 0.0;
  for (int r = 0; r < runs; ++r) {
    ScenarioConfig c = small_config(100 + r);
    c.fa_rate = 20.0;
    const Scenario s = make_scenario(c);
    for (const auto& d : s.detections) sum += d.source.is_target() ? 0.0 : 1.0;
  }
  const double mean = sum / runs;
  const double sigma_of_mean = std::sqrt(2000.0 / runs);
  CHECK(std::abs(mean - 2000.0) < 3.0 * sigma_of_mean);
}

TEST_CASE("detection probability sets the per-target detection fraction") {
  double detected = 0.0, alive = 0.0;
  for (int r = 0; r < 10; ++r) {
    ScenarioConfig c = small_config(200 + r);
    c.detect_prob = 0.8;
    const Scenario s = make_scenario(c);
    for (const auto& t : s.truth.tracks) {
      for (const auto& p : t.points) {
        alive += 1.0;
        detected += p.det_id ? 1.0 : 0.0;
      }
    }
  }
  const double frac = detected / alive;
  const double se = std::sqrt(0.8 * 0.2 / alive);
  CHECK(std::abs(frac - 0.8) < 4.0 * se);
}

TEST_CASE("det_id present iff detected, ids ordered by frame with clutter after targets") {
  ScenarioConfig c = small_config(9);
  c.detect_prob = 0.7;
  const Scenario s = make_scenario(c);
  std::set<DetId> target_ids;
  for (const auto& t : s.truth.tracks) {
    for (const auto& p : t.points) {
      if (p.det_id) target_ids.insert(*p.det_id);
    }
  }
  std::size_t target_dets = 0;
  for (std::size_t k = 0; k < s.detections.size(); ++k) {
    const auto& d = s.detections[k];
    CHECK(d.det_id == static_cast<DetId>(k));
    CHECK(d.frame >= 1);
    CHECK(d.frame <= c.num_frames);
    if (d.source.is_target()) {
      ++target_dets;
      CHECK(target_ids.count(d.det_id) == 1);
    }
    if (k > 0 && s.detections[k - 1].frame == d.frame) {
      // Within a frame no target detection follows a clutter detection.
      CHECK_FALSE((!s.detections[k - 1].source.is_target() && d.source.is_target()));
    }
  }
  CHECK(target_dets == target_ids.size());
}

TEST_CASE("noisy extra dimensions are appended") {
  ScenarioConfig c = small_config(4);
  c.reid.noisy_extra_dims = 10;
  const Scenario s = make_scenario(c);
  for (const auto& d : s.detections) CHECK(d.reid.size() == 12);
}

TEST_CASE("empirical foreground/background KL matches the category") {
  for (double kl : {reid_strength::kModerate, reid_strength::kStrong}) {
    ScenarioConfig c;
    c.num_frames = 50000;
    c.num_targets = 1;
    c.lifespan.kind = LifespanPolicy::Kind::FullWindow;
    c.fa_rate = 2.0;
    c.reid.strength_kl_nats = kl;
    c.seed = 77;
    const Scenario s = make_scenario(c);
    std::vector<Eigen::VectorXd> fg, bg;
    for (const auto& d : s.detections) (d.source.is_target() ? fg : bg).push_back(d.reid);
    REQUIRE(fg.size() + bg.size() >= 100000);
    auto fit = [](const std::vector<Eigen::VectorXd>& xs, Eigen::VectorXd& mean, double& var) {
      mean = Eigen::VectorXd::Zero(xs.front().size());
      for (const auto& x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      var = 0.0;
      for (const auto& x : xs) var += (x - mean).squaredNorm();
      var /= static_cast<double>(xs.size() * mean.size());
    };
    Eigen::VectorXd m1, m0;
    double v1 = 0, v0 = 0;
    fit(fg, m1, v1);
    fit(bg, m0, v0);
    // Monte-Carlo average of the log density ratio over foreground samples.
    const double dim = static_cast<double>(m1.size());
    double est = 0.0;
    for (const auto& x : fg) est += log_iso(x, m1, v1) - log_iso(x, m0, v0) + 0.5 * dim * std::log(v0 / v1);
    est /= static_cast<double>(fg.size());
    CHECK(std::abs(est - kl) < 0.1 * kl);
  }
}

TEST_CASE("clutter positions are uniform over the scene (chi-square, 4x4)") {
  ScenarioConfig c = small_config(31);
  c.num_targets = 0;
  c.fa_rate = 100.0;
  const Scenario s = make_scenario(c);
  std::array<double, 16> counts{};
  double n = 0;
  for (const auto& d : s.detections) {
    const auto rel = (d.position - c.bounds.min).cwiseQuotient(c.bounds.max - c.bounds.min);
    REQUIRE(rel.minCoeff() >= 0.0);
    REQUIRE(rel.maxCoeff() <= 1.0);
    const int ix = std::min(3, static_cast<int>(rel.x() * 4));
    const int iy = std::min(3, static_cast<int>(rel.y() * 4));
    counts[4 * iy + ix] += 1.0;
    n += 1.0;
  }
  REQUIRE(n > 9000);
  double chi2 = 0.0;
  for (double k : counts) chi2 += (k - n / 16) * (k - n / 16) / (n / 16);
  // Upper 0.001 quantile of chi-square with 15 degrees of freedom.
  CHECK(chi2 < 37.697);
}

TEST_CASE("invalid configs are rejected naming the field") {
  ScenarioConfig c = small_config(1);
  c.detect_prob = 1.5;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("detect_prob"), ConfigError);
  c = small_config(1);
  c.bounds.max = c.bounds.min;
  CHECK_THROWS_AS(simulate_targets(c), ConfigError);
  c = small_config(1);
  c.num_frames = 0;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("num_frames"), ConfigError);
  c = small_config(1);
  c.fa_rate = -1.0;
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("fa_rate"), ConfigError);
}

TEST_CASE("OU spread helper hits the requested displacement variance") {
  const auto ou = OrnsteinUhlenbeck::with_spread(20.0, 100, 1.0, 0.1, 0.2);
  const double k = 0.1, T = 100.0;
  const double var = ou.diffusion / (k * k * k) * (k * T - 1.0 + std::exp(-k * T));
  CHECK(std::sqrt(var) == doctest::Approx(4.0).epsilon(1e-12));
}
