#include "mglow/nn.hpp"

#include <atomic>
#include <cmath>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

std::atomic<std::uint64_t> g_versions{1};

void activate(MatrixXd& z, Activation a) {
  switch (a) {
    case Activation::Identity: break;
    case Activation::Tanh: z = z.array().tanh(); break;
    case Activation::Relu: z = z.cwiseMax(0.0); break;
  }
}

// d act / d pre, expressed through the activated output.
MatrixXd activation_grad(const MatrixXd& out, Activation a) {
  switch (a) {
    case Activation::Identity: return MatrixXd::Ones(out.rows(), out.cols());
    case Activation::Tanh: return (1.0 - out.array().square()).matrix();
    case Activation::Relu: return (out.array() > 0.0).cast<double>().matrix();
  }
  return {};
}

}  // namespace

Network::Network(int in, const std::vector<int>& hidden, int out, Activation hidden_act, bool zero_final, Rng& rng) {
  int prev = in;
  std::vector<int> widths = hidden;
  widths.push_back(out);
  for (size_t l = 0; l < widths.size(); ++l) {
    const bool last = l + 1 == widths.size();
    Dense d;
    d.w = MatrixXd::Zero(widths[l], prev);
    d.b = MatrixXd::Zero(widths[l], 1);
    d.act = last ? Activation::Identity : hidden_act;
    if (!(last && zero_final)) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(prev));
      for (Eigen::Index j = 0; j < d.w.cols(); ++j)
        for (Eigen::Index i = 0; i < d.w.rows(); ++i) d.w(i, j) = sd * rng.normal();
    }
    layers_.push_back(std::move(d));
    prev = widths[l];
  }
  touch();
}

Network::Network(std::vector<Dense> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("network needs at least one layer");
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Dense& d = layers_[l];
    if (d.b.rows() != d.w.rows() || d.b.cols() != 1) throw ShapeError("bias does not match weight rows");
    if (l > 0 && d.w.cols() != layers_[l - 1].w.rows()) throw ShapeError("layer widths do not chain");
  }
  touch();
}

int Network::in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().w.cols()); }
int Network::out_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().w.rows()); }

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& d : layers_) n += d.w.size() + d.b.size();
  return n;
}

void Network::touch() { version_ = g_versions.fetch_add(1); }

MatrixXd Network::forward(const MatrixXd& input, GradientTape* tape) const {
  if (input.rows() != in_dim())
    throw ShapeError("network input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(in_dim()));
  if (tape) {
    tape->net = this;
    tape->version = version_;
    tape->inputs.clear();
    tape->outputs.clear();
  }
  MatrixXd h = input;
  for (const auto& d : layers_) {
    MatrixXd z = d.w * h;
    z.colwise() += d.b.col(0);
    activate(z, d.act);
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->outputs.push_back(z);
    }
    h = std::move(z);
  }
  return h;
}

MatrixXd Network::backward(const GradientTape& tape, const MatrixXd& out_bar, Network& grad) const {
  if (tape.net != this || tape.version != version_)
    throw StaleTapeError("tape was recorded against different or since-modified parameters");
  if (grad.layers_.size() != layers_.size()) throw ShapeError("gradient network has a different architecture");
  MatrixXd g = out_bar;
  for (size_t l = layers_.size(); l-- > 0;) {
    const Dense& d = layers_[l];
    if (g.rows() != d.w.rows() || g.cols() != tape.outputs[l].cols()) throw ShapeError("cotangent shape mismatch");
    if (d.act != Activation::Identity) g = g.cwiseProduct(activation_grad(tape.outputs[l], d.act));
    grad.layers_[l].w.noalias() += g * tape.inputs[l].transpose();
    grad.layers_[l].b.col(0) += g.rowwise().sum();
    g = d.w.transpose() * g;
  }
  return g;
}

void Network::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t l = 0; l < layers_.size(); ++l) {
    f(prefix + ".l" + std::to_string(l) + ".w", layers_[l].w);
    f(prefix + ".l" + std::to_string(l) + ".b", layers_[l].b);
  }
  touch();
}

void Network::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  for (size_t l = 0; l < layers_.size(); ++l) {
    f(prefix + ".l" + std::to_string(l) + ".w", layers_[l].w);
    f(prefix + ".l" + std::to_string(l) + ".b", layers_[l].b);
  }
}

Network Network::zeros_like() const {
  Network z;
  z.layers_ = layers_;
  for (auto& d : z.layers_) {
    d.w.setZero();
    d.b.setZero();
  }
  z.touch();
  return z;
}

// ---------------------------------------------------------------------------

Adam::Adam(AdamConfig cfg, Eigen::Index size) : cfg_(cfg), m_(VectorXd::Zero(size)), v_(VectorXd::Zero(size)) {}

void Adam::step(VectorXd& params, const VectorXd& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("Adam: size mismatch");
  if (!grads.allFinite()) throw NumericalError("Adam: nonfinite gradient");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grads;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
  }
}

void Adam::restore(long t, VectorXd m, VectorXd v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam: restored moments have the wrong size");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

double clip_global_norm(VectorXd& g, double max_norm) {
  const double n = g.norm();
  if (n > max_norm && max_norm > 0.0) g *= max_norm / n;
  return n;
}

}  // namespace mglow
