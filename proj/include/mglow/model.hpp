#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "mglow/errors.hpp"
#include "mglow/layers.hpp"

namespace mglow {

struct FlowArch {
  int levels = 3;
  int blocks_per_level = 2;
  bool squeeze = true;
  bool split = true;
  CouplingSpec coupling;  // parity is assigned per block
  bool actnorm_per_location = false;
  double sigma0 = 0.0;       // actnorm target spread; 0 picks a per-manifold default
  double conv_init = 1.0;    // std of the initial rotation generator entries
};

// Actnorm target spread used when FlowArch::sigma0 is 0. Pole-log latents
// must stay inside the injectivity ball, so the sphere uses a smaller value.
double default_sigma0(const Manifold& m);

struct LatentShape {
  Extents extents;
  int channels;
};

struct FlowBlock {
  Actnorm actnorm;
  Conv1x1 conv;
  Coupling coupling;
};

struct FlowStep {
  enum Kind { Squeeze, Block, Split } kind;
  Extents in_extents;
  int in_channels = 0;
  int block = -1;  // index into FlowModel::blocks
};

// Primal inputs of every layer, recorded by FlowModel::forward.
struct FlowTape {
  std::vector<CoordField> inputs;  // one per step, three per block
};

struct FlowOutput {
  std::vector<CoordField> latents;  // emitted slices in order, final output last
  double log_det = 0.0;
};

// Multiscale GLOW over one manifold: every level squeezes, runs its blocks
// (actnorm, 1x1 convolution, coupling), and all but the last level split off
// half of the channels as a latent slice. Everything runs in the manifold's
// global chart.
class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(const Manifold& m, const Extents& extents, int channels, const FlowArch& arch, std::uint64_t seed);

  const Manifold& manifold() const { return *manifold_; }
  const Extents& extents() const { return extents_; }
  int channels() const { return channels_; }
  const FlowArch& arch() const { return arch_; }
  const std::vector<FlowStep>& steps() const { return steps_; }
  const std::vector<LatentShape>& latent_shapes() const { return latent_shapes_; }
  // Total latent chart dimension.
  int latent_dim() const;

  std::vector<FlowBlock> blocks;

  FlowOutput forward(const CoordField& x, FlowTape* tape = nullptr) const;
  CoordField inverse(const std::vector<CoordField>& latents) const;
  // Given cotangents of the latents and of log_det, accumulates parameter
  // gradients into `grad` and returns the cotangent of the input.
  CoordField backward(const FlowTape& tape, const std::vector<CoordField>& latent_bars, double log_det_bar,
                      FlowModel& grad) const;

  // Data-dependent actnorm initialization, level by level.
  void initialize(const std::vector<CoordField>& batch);

  // Standard Gaussian prior at the chart origin.
  const Coords& prior_mean() const { return prior_mean_; }
  double log_prior(const std::vector<CoordField>& latents) const;
  std::vector<CoordField> log_prior_grad(const std::vector<CoordField>& latents) const;

  double nll(const CoordField& x) const;

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;
  void visit(const ParamVisitor& f) { visit("flow", f); }
  void visit_const(const ConstParamVisitor& f) const { visit_const("flow", f); }
  FlowModel zeros_like() const;
  std::size_t param_count() const;
  std::size_t coupling_param_count() const;

 private:
  std::shared_ptr<const Manifold> manifold_;
  Extents extents_;
  int channels_ = 0;
  FlowArch arch_;
  std::vector<FlowStep> steps_;
  std::vector<LatentShape> latent_shapes_;
  Coords prior_mean_;
};

// Field-level wrappers.
std::pair<std::vector<Field>, double> flow_forward(const FlowModel& model, const Field& x);
Field flow_inverse(const FlowModel& model, const std::vector<Field>& latents);
double nll(const FlowModel& model, const Field& x);

// Same architecture with slice-mode couplings whose network is shared by all
// tau slice pairs.
FlowModel nanoflow_share(const FlowModel& model, int tau, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Maps source latents to a diagonal Gaussian over the target latents. Works
// scale by scale and location by location with one residual MLP per scale
// whose weights are shared across locations.
struct TransferArch {
  int hidden = 128;
  int blocks = 3;
};

struct TransferScale {
  Network in_proj;
  std::vector<Network> residual;
  Network head_mean;
  Network head_logvar;
};

struct TransferTape {
  std::vector<GradientTape> in_proj;
  std::vector<std::vector<GradientTape>> residual;
  std::vector<GradientTape> head_mean, head_logvar;
  std::vector<MatrixXd> raw_logvar;
};

struct TransferOutput {
  std::vector<CoordField> mean;
  std::vector<CoordField> logvar;
};

class LatentTransfer {
 public:
  // log-variances are squashed into (-kLogVarBound, kLogVarBound): variances in (1e-8, 1e8).
  inline static const double kLogVarBound = 18.420680743952367;

  LatentTransfer() = default;
  LatentTransfer(const FlowModel& source, const FlowModel& target, const TransferArch& arch, std::uint64_t seed);

  std::vector<TransferScale> scales;

  TransferOutput forward(const std::vector<CoordField>& z_src, TransferTape* tape = nullptr) const;
  std::vector<CoordField> backward(const std::vector<CoordField>& z_src, const TransferTape& tape,
                                   const std::vector<CoordField>& mean_bar, const std::vector<CoordField>& logvar_bar,
                                   LatentTransfer& grad) const;

  // Data-dependent start: sets the head biases to the per-coordinate mean
  // and log-variance of the target latents, so the initial conditional
  // matches their marginal spread.
  void initialize(const std::vector<std::vector<CoordField>>& target_latents);

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;
  void visit(const ParamVisitor& f) { visit("transfer", f); }
  void visit_const(const ConstParamVisitor& f) const { visit_const("transfer", f); }
  LatentTransfer zeros_like() const;
  std::size_t param_count() const;

 private:
  std::vector<LatentShape> src_shapes_, tgt_shapes_;
  int src_dim_ = 0, tgt_dim_ = 0;
  Coords tgt_origin_;  // mean head output is an offset from the target chart origin
};

// Gaussian per target latent point: mean Phi^{-1}(F_M), covariance diag(exp F_S).
std::vector<std::vector<ManifoldGaussian>> transfer_params(const LatentTransfer& t, const FlowModel& target,
                                                           const std::vector<CoordField>& z_src);

// Diagonal Gaussian log-density in chart coordinates, summed over all points.
double diag_gaussian_logpdf(const std::vector<CoordField>& z, const TransferOutput& dist);

// ---------------------------------------------------------------------------
// Two-stream model: `source` encodes the conditioning field (manifold N),
// `target` the generated field (manifold M).
struct ConditionalModel {
  FlowModel source;
  FlowModel target;
  LatentTransfer transfer;
  double source_weight = 1.0;
  double target_weight = 1.0;
  bool detach_source = false;
  // Training penalty w * sum max(0, |z| - fraction * pi)^2 over pole-log
  // latent points of both streams. Zero disables it.
  double boundary_weight = 0.0;
  double boundary_fraction = 0.5;

  void visit(const ParamVisitor& f);
  void visit_const(const ConstParamVisitor& f) const;
  ConditionalModel zeros_like() const;
  std::size_t param_count() const;
};

struct ConditionalLoss {
  double total = 0.0;
  double source_nll = 0.0;  // -[log p(z_y) + logdet_y]
  double target_nll = 0.0;  // -[log p(z_x | z_y) + logdet_x]
  double boundary = 0.0;    // chart-boundary penalty, included in total
};

// Any log-det or log-density term beyond this magnitude aborts with NumericalError.
inline constexpr double kNumericalFloor = 1e6;

ConditionalLoss conditional_nll(const ConditionalModel& model, const CoordField& x_target, const CoordField& y_source);
// Same value; accumulates the gradient of `total` into `grad` when non-null.
ConditionalLoss conditional_loss_grad(const ConditionalModel& model, const CoordField& x_target,
                                      const CoordField& y_source, ConditionalModel* grad);

// Samples z_x ~ N(M, temperature^2 Sigma) per latent point (rejecting draws
// outside the chart) and inverts the target flow.
CoordField generate_conditional(const ConditionalModel& model, const CoordField& y_source, double temperature,
                                std::uint64_t seed);
Field generate_conditional(const ConditionalModel& model, const Field& y_source, double temperature,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Flat parameter vectors (visit order).

template <class M>
VectorXd flatten_params(const M& m) {
  std::vector<double> out;
  m.visit_const([&](const std::string&, const MatrixXd& t) { out.insert(out.end(), t.data(), t.data() + t.size()); });
  return Eigen::Map<VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

template <class M>
void unflatten_params(M& m, const VectorXd& v) {
  Eigen::Index off = 0;
  m.visit([&](const std::string&, MatrixXd& t) {
    if (off + t.size() > v.size()) throw ShapeError("parameter vector is too short");
    t = Eigen::Map<const MatrixXd>(v.data() + off, t.rows(), t.cols());
    off += t.size();
  });
  if (off != v.size()) throw ShapeError("parameter vector is too long");
}

}  // namespace mglow
