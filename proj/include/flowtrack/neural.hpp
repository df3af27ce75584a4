#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace flowtrack {

enum class OutputActivation { Identity, Logistic };

// Fully connected stack: linear -> ReLU -> ... -> linear -> output activation.
// Parameters per layer are stored as W (out x in, column-major) then b (out).
struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output
  OutputActivation output = OutputActivation::Identity;

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_width() const { return widths.front(); }
  int output_width() const { return widths.back(); }
  std::size_t num_params() const;
  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

// Forward intermediates of one batched MLP evaluation. Columns are samples.
class MlpTape {
 public:
  bool recorded() const { return !inputs_.empty(); }
  bool consumed() const { return consumed_; }
  const Eigen::MatrixXd& output() const { return output_; }

 private:
  friend Eigen::MatrixXd mlp_forward(const MlpSpec&, std::span<const double>,
                                     const Eigen::MatrixXd&, MlpTape*);
  friend Eigen::MatrixXd mlp_backward(const MlpSpec&, std::span<const double>, MlpTape&,
                                      const Eigen::MatrixXd&, std::span<double>, bool, bool);

  std::vector<Eigen::MatrixXd> inputs_;  // input of each linear layer
  Eigen::MatrixXd output_;
  bool consumed_ = false;
};

// Batched forward pass; `x` is input_width x batch. Records into `tape` if given.
Eigen::MatrixXd mlp_forward(const MlpSpec& spec, std::span<const double> params,
                            const Eigen::MatrixXd& x, MlpTape* tape = nullptr);

Eigen::VectorXd mlp_forward(const MlpSpec& spec, std::span<const double> params,
                            const Eigen::VectorXd& x, MlpTape* tape = nullptr);

// Accumulates d(sum(upstream .* output))/d(params) into `grad` and returns the
// gradient with respect to the input (empty when `want_input_grad` is false).
// With `upstream_is_preactivation`, `upstream` is taken with respect to the
// last linear layer's output, bypassing the output activation.
Eigen::MatrixXd mlp_backward(const MlpSpec& spec, std::span<const double> params, MlpTape& tape,
                             const Eigen::MatrixXd& upstream, std::span<double> grad,
                             bool want_input_grad = true, bool upstream_is_preactivation = false);

// Flat parameter vector with named segments and Adam state.
class ParamStore {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    MlpSpec spec;
    std::size_t size() const { return spec.num_params(); }
  };

  // Appends a segment; theta and the moments grow accordingly (zero-filled).
  std::size_t add_segment(std::string name, MlpSpec spec);

  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::string_view name) const;
  std::size_t size() const { return static_cast<std::size_t>(theta.size()); }

  std::span<const double> params(const Segment& s) const {
    return {theta.data() + s.offset, s.size()};
  }
  std::span<double> params(const Segment& s) { return {theta.data() + s.offset, s.size()}; }

  // Uniform He fan-in initialization of weights, zero biases.
  void init_he_uniform(std::uint64_t seed);

  Eigen::VectorXd theta;
  Eigen::VectorXd adam_m;
  Eigen::VectorXd adam_v;
  std::int64_t step = 0;

 private:
  std::vector<Segment> segments_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Throws NumericError on non-finite gradient entries.
void adam_step(ParamStore& store, const Eigen::VectorXd& grad, double lr,
               const AdamConfig& cfg = {});

}  // namespace flowtrack
