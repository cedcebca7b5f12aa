#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mglow/linalg.hpp"
#include "mglow/rng.hpp"

namespace mglow {

// Visits every learnable tensor as (name, matrix). Non-const visits may mutate.
using ParamVisitor = std::function<void(const std::string&, MatrixXd&)>;
using ConstParamVisitor = std::function<void(const std::string&, const MatrixXd&)>;

enum class Activation { Identity, Tanh, Relu };

struct Dense {
  MatrixXd w;  // out x in
  MatrixXd b;  // out x 1
  Activation act = Activation::Identity;
};

class Network;

// Primal values recorded by Network::forward. Columns are independent samples.
struct GradientTape {
  const Network* net = nullptr;
  std::uint64_t version = 0;
  std::vector<MatrixXd> inputs;   // input to each layer
  std::vector<MatrixXd> outputs;  // activated output of each layer
};

// Feedforward stack of affine maps and pointwise activations, applied to
// the columns of its input.
class Network {
 public:
  Network() = default;
  // Hidden layers use `hidden_act`; the output layer is linear and, when
  // `zero_final` is set, starts at exactly zero.
  Network(int in, const std::vector<int>& hidden, int out, Activation hidden_act, bool zero_final, Rng& rng);
  explicit Network(std::vector<Dense> layers);

  int in_dim() const;
  int out_dim() const;
  const std::vector<Dense>& layers() const { return layers_; }
  std::size_t param_count() const;

  MatrixXd forward(const MatrixXd& input, GradientTape* tape = nullptr) const;

  // Accumulates parameter gradients into `grad` (same architecture) and
  // returns the cotangent of the input.
  MatrixXd backward(const GradientTape& tape, const MatrixXd& out_bar, Network& grad) const;

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;

  // Same architecture, all parameters zero.
  Network zeros_like() const;
  std::uint64_t version() const { return version_; }
  void touch();

 private:
  std::vector<Dense> layers_;
  std::uint64_t version_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, Eigen::Index size);

  // Throws NumericalError on a nonfinite gradient (parameters untouched).
  void step(VectorXd& params, const VectorXd& grads);

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  const VectorXd& m() const { return m_; }
  const VectorXd& v() const { return v_; }
  void restore(long t, VectorXd m, VectorXd v);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  VectorXd m_, v_;
};

// Scales g in place so that its norm is at most max_norm; returns the original norm.
double clip_global_norm(VectorXd& g, double max_norm);

}  // namespace mglow
