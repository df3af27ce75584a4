#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "flowtrack/errors.hpp"
#include "flowtrack/io.hpp"
#include "flowtrack/neural.hpp"

using namespace flowtrack;

namespace {

Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> n01;
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v[k] = scale * n01(rng);
  return v;
}

MlpSpec random_spec(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> width(1, 6), depth(1, 3), coin(0, 1);
  MlpSpec s;
  const int layers = depth(rng);
  for (int l = 0; l <= layers; ++l) s.widths.push_back(width(rng));
  s.output = coin(rng) ? OutputActivation::Logistic : OutputActivation::Identity;
  return s;
}

// Scalar readout r(theta, X) = sum(U .* mlp(X)).
double readout(const MlpSpec& spec, const Eigen::VectorXd& theta, const Eigen::MatrixXd& x,
               const Eigen::MatrixXd& u) {
  return (u.array() * mlp_forward(spec, {theta.data(), static_cast<std::size_t>(theta.size())}, x).array()).sum();
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

}  // namespace

TEST_CASE("zero parameters map any input to zero") {
  MlpSpec s{{3, 5, 2}, OutputActivation::Identity};
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.num_params()));
  Eigen::VectorXd x(3);
  x << 1.0, -2.0, 7.0;
  CHECK(mlp_forward(s, {theta.data(), s.num_params()}, x).isZero());
}

TEST_CASE("identity single layer passes input through; input gradient is W^T u") {
  MlpSpec s{{3, 3}, OutputActivation::Identity};
  CHECK(s.num_params() == 12);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(12);
  Eigen::Map<Eigen::MatrixXd>(theta.data(), 3, 3) = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd x(3);
  x << 0.5, -1.5, 4.0;
  CHECK(mlp_forward(s, {theta.data(), 12}, x) == x);

  std::mt19937_64 rng(1);
  Eigen::VectorXd w = random_vector(rng, 12);
  const Eigen::MatrixXd W = Eigen::Map<Eigen::MatrixXd>(w.data(), 3, 3);
  MlpTape tape;
  mlp_forward(s, {w.data(), 12}, Eigen::MatrixXd(x), &tape);
  Eigen::MatrixXd u = random_vector(rng, 3);
  std::vector<double> grad(12, 0.0);
  const Eigen::MatrixXd dx = mlp_backward(s, {w.data(), 12}, tape, u, grad);
  CHECK((dx - W.transpose() * u).norm() < 1e-14);
}

TEST_CASE("zero upstream accumulates nothing") {
  std::mt19937_64 rng(2);
  MlpSpec s{{4, 6, 3}, OutputActivation::Logistic};
  Eigen::VectorXd theta = random_vector(rng, static_cast<Eigen::Index>(s.num_params()));
  MlpTape tape;
  mlp_forward(s, {theta.data(), s.num_params()}, Eigen::MatrixXd(random_vector(rng, 4)), &tape);
  std::vector<double> grad(s.num_params(), 0.0);
  mlp_backward(s, {theta.data(), s.num_params()}, tape, Eigen::MatrixXd::Zero(3, 1), grad);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("tape gradients agree with central differences on 50 random draws") {
  std::mt19937_64 rng(2024);
  const double h = 1e-5;
  int checked = 0;
  for (int draw = 0; draw < 50; ++draw) {
    const MlpSpec s = random_spec(rng);
    const auto n = static_cast<Eigen::Index>(s.num_params());
    Eigen::VectorXd theta = random_vector(rng, n, 0.7);
    const Eigen::Index batch = 1 + draw % 4;
    Eigen::MatrixXd x(s.input_width(), batch), u(s.output_width(), batch);
    for (Eigen::Index c = 0; c < batch; ++c) {
      x.col(c) = random_vector(rng, s.input_width());
      u.col(c) = random_vector(rng, s.output_width());
    }
    MlpTape tape;
    mlp_forward(s, {theta.data(), s.num_params()}, x, &tape);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n);
    const Eigen::MatrixXd dx =
        mlp_backward(s, {theta.data(), s.num_params()}, tape, u, {grad.data(), s.num_params()});

    Eigen::VectorXd fd(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp[k] += h;
      tm[k] -= h;
      fd[k] = (readout(s, tp, x, u) - readout(s, tm, x, u)) / (2 * h);
    }
    CHECK(rel_err(grad, fd) <= 1e-6);

    Eigen::VectorXd fdx(x.size()), gx = Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      Eigen::MatrixXd xp = x, xm = x;
      xp.data()[k] += h;
      xm.data()[k] -= h;
      fdx[k] = (readout(s, theta, xp, u) - readout(s, theta, xm, u)) / (2 * h);
    }
    CHECK(rel_err(gx, fdx) <= 1e-6);
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("pre-activation upstream bypasses the logistic output") {
  std::mt19937_64 rng(9);
  MlpSpec logistic{{3, 4, 2}, OutputActivation::Logistic};
  MlpSpec identity{{3, 4, 2}, OutputActivation::Identity};
  Eigen::VectorXd theta = random_vector(rng, static_cast<Eigen::Index>(logistic.num_params()));
  const Eigen::MatrixXd x = random_vector(rng, 3);
  const Eigen::MatrixXd u = random_vector(rng, 2);
  MlpTape t1, t2;
  mlp_forward(logistic, {theta.data(), logistic.num_params()}, x, &t1);
  mlp_forward(identity, {theta.data(), identity.num_params()}, x, &t2);
  std::vector<double> g1(logistic.num_params(), 0.0), g2(logistic.num_params(), 0.0);
  mlp_backward(logistic, {theta.data(), logistic.num_params()}, t1, u, g1, true, true);
  mlp_backward(identity, {theta.data(), identity.num_params()}, t2, u, g2);
  for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g1[k] == doctest::Approx(g2[k]).epsilon(1e-14));
}

TEST_CASE("dimension mismatch and tape reuse are errors") {
  MlpSpec s{{2, 3, 1}, OutputActivation::Identity};
  Eigen::VectorXd theta = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s.num_params()));
  CHECK_THROWS(mlp_forward(s, {theta.data(), s.num_params()}, Eigen::VectorXd(Eigen::VectorXd::Ones(3))));
  MlpTape tape;
  mlp_forward(s, {theta.data(), s.num_params()}, Eigen::MatrixXd(Eigen::MatrixXd::Ones(2, 1)), &tape);
  std::vector<double> grad(s.num_params(), 0.0);
  mlp_backward(s, {theta.data(), s.num_params()}, tape, Eigen::MatrixXd::Ones(1, 1), grad);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(mlp_backward(s, {theta.data(), s.num_params()}, tape, Eigen::MatrixXd::Ones(1, 1), grad),
                  std::logic_error);
  CHECK_THROWS(MlpSpec{{3}}.validate());
  CHECK_THROWS(MlpSpec{{3, 0, 1}}.validate());
}

TEST_CASE("param store segments partition theta; init is seed-deterministic") {
  ParamStore a;
  a.add_segment("enc", MlpSpec{{4, 8, 8}});
  a.add_segment("out", MlpSpec{{8, 8, 1}});
  CHECK(a.segments()[0].offset == 0);
  CHECK(a.segments()[1].offset == a.segments()[0].size());
  CHECK(a.size() == a.segments()[0].size() + a.segments()[1].size());
  CHECK(a.adam_m.size() == a.theta.size());
  CHECK(a.adam_v.size() == a.theta.size());
  CHECK_THROWS(a.add_segment("enc", MlpSpec{{1, 1}}));
  CHECK_THROWS(a.segment("missing"));

  ParamStore b = a;
  a.init_he_uniform(17);
  b.init_he_uniform(17);
  CHECK(a.theta == b.theta);
  b.init_he_uniform(18);
  CHECK(a.theta != b.theta);
  // Weights within the fan-in bound, biases zero.
  const auto& enc = a.segment("enc");
  const auto p = a.params(enc);
  for (std::size_t k = 0; k < 32; ++k) CHECK(std::abs(p[k]) <= std::sqrt(6.0 / 4));
  for (std::size_t k = 32; k < 40; ++k) CHECK(p[k] == 0.0);
}

TEST_CASE("theta survives a JSON round trip bit for bit") {
  ParamStore a;
  a.add_segment("f", MlpSpec{{5, 7, 3}});
  a.init_he_uniform(3);
  std::vector<double> flat(a.theta.data(), a.theta.data() + a.theta.size());
  const Json back = Json::parse(dump_json(Json{{"theta", flat}}));
  const auto restored = back.at("theta").get<std::vector<double>>();
  REQUIRE(restored.size() == flat.size());
  CHECK(std::memcmp(restored.data(), flat.data(), flat.size() * sizeof(double)) == 0);
}

TEST_CASE("adam: zero gradient is a no-op, first step has magnitude lr") {
  ParamStore s;
  s.add_segment("w", MlpSpec{{1, 1}});
  s.theta << 0.3, -0.2;
  const Eigen::VectorXd before = s.theta;
  adam_step(s, Eigen::VectorXd::Zero(2), 0.01);
  CHECK(s.theta == before);
  CHECK(s.step == 1);

  for (double g : {1e-6, 0.5, 300.0, -42.0}) {
    ParamStore t;
    t.add_segment("w", MlpSpec{{1, 1}});
    t.theta << 1.0, 0.0;
    Eigen::VectorXd grad(2);
    grad << g, 0.0;
    adam_step(t, grad, 0.001);
    const double expected = 0.001 * std::abs(g) / (std::abs(g) + 1e-8);
    CHECK(std::abs(t.theta[0] - 1.0) == doctest::Approx(expected).epsilon(1e-9));
    CHECK((t.theta[0] - 1.0) * g < 0.0);
  }
}

TEST_CASE("adam matches a scalar reference implementation") {
  std::mt19937_64 rng(5);
  ParamStore s;
  s.add_segment("w", MlpSpec{{2, 2}});
  s.theta = random_vector(rng, 6);
  Eigen::VectorXd x = s.theta, m = Eigen::VectorXd::Zero(6), v = Eigen::VectorXd::Zero(6);
  for (int t = 1; t <= 25; ++t) {
    const Eigen::VectorXd g = random_vector(rng, 6);
    adam_step(s, g, 0.01);
    for (int k = 0; k < 6; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(0.9, t));
      const double vh = v[k] / (1 - std::pow(0.999, t));
      x[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK((s.theta - x).norm() < 1e-12);
  CHECK(s.step == 25);
}

TEST_CASE("adam drives a convex quadratic below 1e-3 of its initial value in 200 steps") {
  ParamStore s;
  s.add_segment("w", MlpSpec{{2, 1}});
  s.theta << 1.0, -2.0, 0.5;
  Eigen::VectorXd a(3);
  a << 1.0, 4.0, 0.25;
  auto loss = [&] { return 0.5 * (a.array() * s.theta.array().square()).sum(); };
  const double initial = loss();
  for (int t = 0; t < 200; ++t) adam_step(s, a.cwiseProduct(s.theta), 0.05);
  CHECK(loss() < 1e-3 * initial);
}

TEST_CASE("adam rejects non-finite gradients") {
  ParamStore s;
  s.add_segment("w", MlpSpec{{1, 1}});
  Eigen::VectorXd g(2);
  g << 1.0, std::nan("");
  CHECK_THROWS_AS(adam_step(s, g, 0.001), NumericError);
  CHECK_THROWS(adam_step(s, Eigen::VectorXd::Zero(3), 0.001));
}
