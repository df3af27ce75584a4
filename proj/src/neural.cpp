#include "flowtrack/neural.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "flowtrack/errors.hpp"

namespace flowtrack {
namespace {

using MatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;

struct LayerOffsets {
  std::size_t weight;
  std::size_t bias;
};

LayerOffsets layer_offsets(const MlpSpec& spec, int layer) {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(spec.widths[l]) * spec.widths[l + 1] + spec.widths[l + 1];
  }
  return {off, off + static_cast<std::size_t>(spec.widths[layer]) * spec.widths[layer + 1]};
}

}  // namespace

std::size_t MlpSpec::num_params() const {
  std::size_t n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    n += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
  }
  return n;
}

void MlpSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("mlp: need at least one layer");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("mlp: layer widths must be >= 1");
  }
}

Eigen::MatrixXd mlp_forward(const MlpSpec& spec, std::span<const double> params,
                            const Eigen::MatrixXd& x, MlpTape* tape) {
  if (x.rows() != spec.input_width()) {
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(x.rows()) +
                                " rows, expected " + std::to_string(spec.input_width()));
  }
  if (params.size() != spec.num_params()) {
    throw std::invalid_argument("mlp_forward: parameter view has wrong size");
  }
  if (tape) {
    tape->inputs_.clear();
    tape->consumed_ = false;
  }
  Eigen::MatrixXd act = x;
  const int n_layers = spec.num_layers();
  for (int l = 0; l < n_layers; ++l) {
    const auto off = layer_offsets(spec, l);
    MatMap w(params.data() + off.weight, spec.widths[l + 1], spec.widths[l]);
    VecMap b(params.data() + off.bias, spec.widths[l + 1]);
    Eigen::MatrixXd z = w * act;
    z.colwise() += b;
    if (l + 1 < n_layers) {
      z = z.cwiseMax(0.0);
    } else if (spec.output == OutputActivation::Logistic) {
      z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    }
    if (tape) {
      tape->inputs_.push_back(std::move(act));
    }
    act = std::move(z);
  }
  if (tape) tape->output_ = act;
  return act;
}

Eigen::VectorXd mlp_forward(const MlpSpec& spec, std::span<const double> params,
                            const Eigen::VectorXd& x, MlpTape* tape) {
  Eigen::MatrixXd in = x;
  Eigen::MatrixXd out = mlp_forward(spec, params, in, tape);
  return out.col(0);
}

Eigen::MatrixXd mlp_backward(const MlpSpec& spec, std::span<const double> params, MlpTape& tape,
                             const Eigen::MatrixXd& upstream, std::span<double> grad,
                             bool want_input_grad, bool upstream_is_preactivation) {
  if (!tape.recorded()) throw std::logic_error("mlp_backward: tape holds no forward pass");
  if (tape.consumed_) throw std::logic_error("mlp_backward: tape already consumed");
  if (upstream.rows() != tape.output_.rows() || upstream.cols() != tape.output_.cols()) {
    throw std::invalid_argument("mlp_backward: upstream shape mismatch");
  }
  if (grad.size() != spec.num_params()) {
    throw std::invalid_argument("mlp_backward: gradient view has wrong size");
  }
  tape.consumed_ = true;

  Eigen::MatrixXd delta = upstream;
  if (!upstream_is_preactivation && spec.output == OutputActivation::Logistic) {
    delta = delta.cwiseProduct(tape.output_.cwiseProduct((1.0 - tape.output_.array()).matrix()));
  }
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const auto off = layer_offsets(spec, l);
    const int out_w = spec.widths[l + 1];
    const int in_w = spec.widths[l];
    MatMap w(params.data() + off.weight, out_w, in_w);
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + off.weight, out_w, in_w);
    Eigen::Map<Eigen::VectorXd> gb(grad.data() + off.bias, out_w);
    const Eigen::MatrixXd& in = tape.inputs_[l];
    gw.noalias() += delta * in.transpose();
    gb += delta.rowwise().sum();
    if (l == 0 && !want_input_grad) {
      tape.inputs_.clear();
      return {};
    }
    Eigen::MatrixXd prev = w.transpose() * delta;
    if (l > 0) {
      // inputs_[l] = relu(z_{l-1}); derivative is the positivity mask.
      prev = (in.array() > 0.0).select(prev, 0.0);
    }
    delta = std::move(prev);
  }
  tape.inputs_.clear();
  return delta;
}

std::size_t ParamStore::add_segment(std::string name, MlpSpec spec) {
  spec.validate();
  for (const auto& s : segments_) {
    if (s.name == name) throw std::invalid_argument("param store: duplicate segment " + name);
  }
  Segment seg{std::move(name), size(), std::move(spec)};
  const auto new_size = static_cast<Eigen::Index>(seg.offset + seg.size());
  theta.conservativeResize(new_size);
  adam_m.conservativeResize(new_size);
  adam_v.conservativeResize(new_size);
  const auto old = static_cast<Eigen::Index>(seg.offset);
  theta.tail(new_size - old).setZero();
  adam_m.tail(new_size - old).setZero();
  adam_v.tail(new_size - old).setZero();
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

const ParamStore::Segment& ParamStore::segment(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("param store: no segment " + std::string(name));
}

void ParamStore::init_he_uniform(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& s : segments_) {
    std::size_t off = s.offset;
    for (int l = 0; l < s.spec.num_layers(); ++l) {
      const int in_w = s.spec.widths[l];
      const int out_w = s.spec.widths[l + 1];
      const double limit = std::sqrt(6.0 / in_w);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (int k = 0; k < in_w * out_w; ++k) theta[static_cast<Eigen::Index>(off++)] = dist(rng);
      for (int k = 0; k < out_w; ++k) theta[static_cast<Eigen::Index>(off++)] = 0.0;
    }
  }
  adam_m.setZero();
  adam_v.setZero();
  step = 0;
}

void adam_step(ParamStore& store, const Eigen::VectorXd& grad, double lr, const AdamConfig& cfg) {
  if (grad.size() != store.theta.size()) {
    throw std::invalid_argument("adam_step: gradient length " + std::to_string(grad.size()) +
                                " != parameter length " + std::to_string(store.theta.size()));
  }
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k])) {
      throw NumericError("adam_step: non-finite gradient at index " + std::to_string(k) +
                         " (value " + std::to_string(grad[k]) + ")");
    }
  }
  ++store.step;
  const double t = static_cast<double>(store.step);
  store.adam_m = cfg.beta1 * store.adam_m + (1.0 - cfg.beta1) * grad;
  store.adam_v = cfg.beta2 * store.adam_v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  store.theta.array() -=
      lr * (store.adam_m.array() / bc1) / ((store.adam_v.array() / bc2).sqrt() + cfg.eps);
}

}  // namespace flowtrack
