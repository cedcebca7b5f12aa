#include "mglow/model.hpp"

#include <cmath>
#include <numbers>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_floor(double v, const char* what) {
  if (!std::isfinite(v) || std::abs(v) > kNumericalFloor)
    throw NumericalError(std::string(what) + " = " + std::to_string(v) + " is beyond the numerical floor");
}

}  // namespace

double default_sigma0(const Manifold& m) {
  if (m.kind() == ManifoldKind::Sphere)
    return std::min(1.0, std::numbers::pi / (16.0 * std::sqrt(static_cast<double>(m.dim()))));
  return 1.0;
}

FlowModel::FlowModel(const Manifold& m, const Extents& extents, int channels, const FlowArch& arch,
                     std::uint64_t seed)
    : manifold_(std::make_shared<Manifold>(m)), extents_(extents), channels_(channels), arch_(arch) {
  if (arch.levels < 1 || arch.blocks_per_level < 1) throw ValidationError("flow needs at least one level and block");
  if (arch_.sigma0 <= 0.0) arch_.sigma0 = default_sigma0(m);
  Rng rng(seed);
  Extents ext = extents;
  int ch = channels;
  int b = 0;
  for (int l = 0; l < arch.levels; ++l) {
    if (arch.squeeze) {
      int factor = 1;
      const Extents next = squeezed_extents(ext, &factor);
      if (factor > 1) {
        steps_.push_back({FlowStep::Squeeze, ext, ch, -1});
        ext = next;
        ch *= factor;
      }
    }
    for (int k = 0; k < arch.blocks_per_level; ++k, ++b) {
      FlowBlock blk;
      blk.actnorm = Actnorm(m, ch, volume(ext), arch.actnorm_per_location);
      blk.conv = Conv1x1(m, ch);
      for (Eigen::Index i = 0; i < blk.conv.generator.rows(); ++i)
        blk.conv.generator(i, 0) = arch.conv_init * rng.normal();
      CouplingSpec cs = arch.coupling;
      cs.parity = b % 2;
      blk.coupling = Coupling(m, ext, ch, cs, rng);
      blocks.push_back(std::move(blk));
      steps_.push_back({FlowStep::Block, ext, ch, b});
    }
    if (l + 1 < arch.levels && arch.split) {
      if (ch % 2 != 0) throw ShapeError("cannot split " + std::to_string(ch) + " channels after level " +
                                        std::to_string(l));
      steps_.push_back({FlowStep::Split, ext, ch, -1});
      latent_shapes_.push_back({ext, ch / 2});
      ch /= 2;
    }
  }
  latent_shapes_.push_back({ext, ch});
  prior_mean_ = m.chart_forward(m.origin());
}

int FlowModel::latent_dim() const {
  int d = 0;
  for (const auto& s : latent_shapes_) d += volume(s.extents) * s.channels * manifold_->dim();
  return d;
}

FlowOutput FlowModel::forward(const CoordField& x, FlowTape* tape) const {
  if (x.extents != extents_ || x.channels != channels_ || x.dim != manifold_->dim())
    throw ShapeError("flow input shape " + extents_to_string(x.extents) + "x" + std::to_string(x.channels) +
                     " does not match the model (" + extents_to_string(extents_) + "x" + std::to_string(channels_) +
                     ")");
  if (tape) tape->inputs.clear();
  FlowOutput out;
  CoordField h = x;
  for (const auto& st : steps_) {
    switch (st.kind) {
      case FlowStep::Squeeze:
        if (tape) tape->inputs.push_back(h);
        h = squeeze(h);
        break;
      case FlowStep::Block: {
        const FlowBlock& blk = blocks[st.block];
        const int base = 3 * st.block;
        if (tape) tape->inputs.push_back(h);
        h = blk.actnorm.forward(h, out.log_det, base);
        if (tape) tape->inputs.push_back(h);
        h = blk.conv.forward(h, out.log_det, base + 1);
        if (tape) tape->inputs.push_back(h);
        h = blk.coupling.forward(h, out.log_det, base + 2);
        break;
      }
      case FlowStep::Split: {
        if (tape) tape->inputs.push_back(h);
        auto [kept, emitted] = split_latent(h);
        out.latents.push_back(std::move(emitted));
        h = std::move(kept);
        break;
      }
    }
  }
  out.latents.push_back(std::move(h));
  return out;
}

CoordField FlowModel::inverse(const std::vector<CoordField>& latents) const {
  if (latents.size() != latent_shapes_.size()) throw ShapeError("wrong number of latent slices");
  for (size_t i = 0; i < latents.size(); ++i)
    if (latents[i].extents != latent_shapes_[i].extents || latents[i].channels != latent_shapes_[i].channels ||
        latents[i].dim != manifold_->dim())
      throw ShapeError("latent slice " + std::to_string(i) + " has the wrong shape");
  CoordField h = latents.back();
  int ei = static_cast<int>(latents.size()) - 2;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    switch (it->kind) {
      case FlowStep::Squeeze:
        h = unsqueeze(h, it->in_extents);
        break;
      case FlowStep::Block: {
        const FlowBlock& blk = blocks[it->block];
        const int base = 3 * it->block;
        h = blk.coupling.inverse(h, base + 2);
        h = blk.conv.inverse(h, base + 1);
        h = blk.actnorm.inverse(h, base);
        break;
      }
      case FlowStep::Split:
        h = merge_latent(h, latents[ei--]);
        break;
    }
  }
  return h;
}

CoordField FlowModel::backward(const FlowTape& tape, const std::vector<CoordField>& latent_bars, double log_det_bar,
                               FlowModel& grad) const {
  if (latent_bars.size() != latent_shapes_.size()) throw ShapeError("wrong number of latent cotangents");
  CoordField h_bar = latent_bars.back();
  int ti = static_cast<int>(tape.inputs.size());
  int ei = static_cast<int>(latent_bars.size()) - 2;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    switch (it->kind) {
      case FlowStep::Squeeze:
        --ti;
        h_bar = unsqueeze(h_bar, it->in_extents);
        break;
      case FlowStep::Block: {
        const FlowBlock& blk = blocks[it->block];
        FlowBlock& g = grad.blocks[it->block];
        h_bar = blk.coupling.backward(tape.inputs[--ti], h_bar, log_det_bar, g.coupling);
        h_bar = blk.conv.backward(tape.inputs[--ti], h_bar, log_det_bar, g.conv);
        h_bar = blk.actnorm.backward(tape.inputs[--ti], h_bar, log_det_bar, g.actnorm);
        break;
      }
      case FlowStep::Split:
        --ti;
        h_bar = merge_latent(h_bar, latent_bars[ei--]);
        break;
    }
  }
  return h_bar;
}

void FlowModel::initialize(const std::vector<CoordField>& batch) {
  std::vector<CoordField> states = batch;
  for (const auto& st : steps_) {
    switch (st.kind) {
      case FlowStep::Squeeze:
        for (auto& s : states) s = squeeze(s);
        break;
      case FlowStep::Block: {
        FlowBlock& blk = blocks[st.block];
        blk.actnorm.initialize(states, arch_.sigma0);
        const int base = 3 * st.block;
        double ld = 0.0;
        for (auto& s : states) {
          s = blk.actnorm.forward(s, ld, base);
          s = blk.conv.forward(s, ld, base + 1);
          s = blk.coupling.forward(s, ld, base + 2);
        }
        break;
      }
      case FlowStep::Split:
        for (auto& s : states) s = split_latent(s).first;
        break;
    }
  }
}

double FlowModel::log_prior(const std::vector<CoordField>& latents) const {
  double lp = 0.0;
  const int m = manifold_->dim();
  for (const auto& z : latents)
    for (int p = 0; p < z.points(); ++p) lp += -0.5 * (z.point(p) - prior_mean_).squaredNorm() - 0.5 * m * kLog2Pi;
  return lp;
}

std::vector<CoordField> FlowModel::log_prior_grad(const std::vector<CoordField>& latents) const {
  std::vector<CoordField> g = latents;
  for (auto& z : g)
    for (int p = 0; p < z.points(); ++p) z.point(p) = prior_mean_ - z.point(p);
  return g;
}

double FlowModel::nll(const CoordField& x) const {
  const FlowOutput out = forward(x);
  return -(log_prior(out.latents) + out.log_det);
}

void FlowModel::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = prefix + ".b" + std::to_string(b);
    blocks[b].actnorm.visit(p + ".actnorm", f);
    blocks[b].conv.visit(p + ".conv", f);
    blocks[b].coupling.visit(p + ".coupling", f);
  }
}

void FlowModel::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string p = prefix + ".b" + std::to_string(b);
    blocks[b].actnorm.visit_const(p + ".actnorm", f);
    blocks[b].conv.visit_const(p + ".conv", f);
    blocks[b].coupling.visit_const(p + ".coupling", f);
  }
}

FlowModel FlowModel::zeros_like() const {
  FlowModel z = *this;
  for (auto& b : z.blocks) {
    b.actnorm = b.actnorm.zeros_like();
    b.conv = b.conv.zeros_like();
    b.coupling = b.coupling.zeros_like();
  }
  return z;
}

std::size_t FlowModel::param_count() const {
  std::size_t n = 0;
  visit_const("", [&](const std::string&, const MatrixXd& t) { n += t.size(); });
  return n;
}

std::size_t FlowModel::coupling_param_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.coupling.param_count();
  return n;
}

std::pair<std::vector<Field>, double> flow_forward(const FlowModel& model, const Field& x) {
  const FlowOutput out = model.forward(to_coords(x));
  std::vector<Field> latents;
  for (const auto& z : out.latents) latents.push_back(from_coords(model.manifold(), z));
  return {std::move(latents), out.log_det};
}

Field flow_inverse(const FlowModel& model, const std::vector<Field>& latents) {
  std::vector<CoordField> z;
  for (const auto& l : latents) z.push_back(to_coords(l));
  return from_coords(model.manifold(), model.inverse(z));
}

double nll(const FlowModel& model, const Field& x) { return model.nll(to_coords(x)); }

FlowModel nanoflow_share(const FlowModel& model, int tau, std::uint64_t seed) {
  FlowArch a = model.arch();
  a.coupling.mode = CouplingMode::Slice;
  a.coupling.tau = tau;
  a.coupling.shared = true;
  return FlowModel(model.manifold(), model.extents(), model.channels(), a, seed);
}

// ---------------------------------------------------------------------------

LatentTransfer::LatentTransfer(const FlowModel& source, const FlowModel& target, const TransferArch& arch,
                               std::uint64_t seed)
    : src_shapes_(source.latent_shapes()),
      tgt_shapes_(target.latent_shapes()),
      src_dim_(source.manifold().dim()),
      tgt_dim_(target.manifold().dim()),
      tgt_origin_(target.prior_mean()) {
  if (src_shapes_.size() != tgt_shapes_.size())
    throw ShapeError("source and target flows emit different numbers of latent scales");
  for (size_t s = 0; s < src_shapes_.size(); ++s)
    if (src_shapes_[s].extents != tgt_shapes_[s].extents)
      throw ShapeError("source and target latent grids differ at scale " + std::to_string(s));
  if (arch.hidden < 1 || arch.blocks < 0) throw ValidationError("invalid latent transfer architecture");
  Rng rng(seed);
  for (size_t s = 0; s < src_shapes_.size(); ++s) {
    const int in = src_shapes_[s].channels * src_dim_;
    const int out = tgt_shapes_[s].channels * tgt_dim_;
    TransferScale sc;
    sc.in_proj = Network(in, {}, arch.hidden, Activation::Identity, false, rng);
    for (int b = 0; b < arch.blocks; ++b)
      sc.residual.emplace_back(arch.hidden, std::vector<int>{arch.hidden}, arch.hidden, Activation::Tanh, true, rng);
    sc.head_mean = Network(arch.hidden, {}, out, Activation::Identity, true, rng);
    sc.head_logvar = Network(arch.hidden, {}, out, Activation::Identity, true, rng);
    scales.push_back(std::move(sc));
  }
}

TransferOutput LatentTransfer::forward(const std::vector<CoordField>& z_src, TransferTape* tape) const {
  if (z_src.size() != scales.size()) throw ShapeError("transfer: wrong number of source latent scales");
  TransferOutput out;
  if (tape) {
    tape->in_proj.assign(scales.size(), {});
    tape->residual.assign(scales.size(), {});
    tape->head_mean.assign(scales.size(), {});
    tape->head_logvar.assign(scales.size(), {});
    tape->raw_logvar.assign(scales.size(), {});
  }
  for (size_t s = 0; s < scales.size(); ++s) {
    const CoordField& z = z_src[s];
    if (z.extents != src_shapes_[s].extents || z.channels != src_shapes_[s].channels || z.dim != src_dim_)
      throw ShapeError("transfer: source latent " + std::to_string(s) + " has the wrong shape");
    const TransferScale& sc = scales[s];
    const Eigen::Map<const MatrixXd> xin(z.data.data(), z.channels * z.dim, z.locations());
    MatrixXd h = sc.in_proj.forward(xin, tape ? &tape->in_proj[s] : nullptr);
    if (tape) tape->residual[s].resize(sc.residual.size());
    for (size_t b = 0; b < sc.residual.size(); ++b)
      h += sc.residual[b].forward(h, tape ? &tape->residual[s][b] : nullptr);
    MatrixXd mean = sc.head_mean.forward(h, tape ? &tape->head_mean[s] : nullptr);
    for (Eigen::Index c = 0; c < mean.cols(); ++c)
      mean.col(c).reshaped(tgt_dim_, mean.rows() / tgt_dim_).colwise() += tgt_origin_;
    const MatrixXd raw = sc.head_logvar.forward(h, tape ? &tape->head_logvar[s] : nullptr);
    const MatrixXd lv = kLogVarBound * (raw / kLogVarBound).array().tanh();
    if (tape) tape->raw_logvar[s] = raw;
    CoordField mf(tgt_shapes_[s].extents, tgt_shapes_[s].channels, tgt_dim_);
    CoordField lf = mf;
    mf.data = Eigen::Map<const VectorXd>(mean.data(), mean.size());
    lf.data = Eigen::Map<const VectorXd>(lv.data(), lv.size());
    out.mean.push_back(std::move(mf));
    out.logvar.push_back(std::move(lf));
  }
  return out;
}

std::vector<CoordField> LatentTransfer::backward(const std::vector<CoordField>& z_src, const TransferTape& tape,
                                                 const std::vector<CoordField>& mean_bar,
                                                 const std::vector<CoordField>& logvar_bar,
                                                 LatentTransfer& grad) const {
  std::vector<CoordField> z_bar;
  for (size_t s = 0; s < scales.size(); ++s) {
    const TransferScale& sc = scales[s];
    TransferScale& g = grad.scales[s];
    const auto cols = static_cast<Eigen::Index>(z_src[s].locations());
    const Eigen::Map<const MatrixXd> mb(mean_bar[s].data.data(), mean_bar[s].channels * mean_bar[s].dim, cols);
    const Eigen::Map<const MatrixXd> lb(logvar_bar[s].data.data(), logvar_bar[s].channels * logvar_bar[s].dim, cols);
    const MatrixXd th = (tape.raw_logvar[s] / kLogVarBound).array().tanh();
    const MatrixXd raw_bar = lb.cwiseProduct((1.0 - th.array().square()).matrix());
    MatrixXd h_bar = sc.head_mean.backward(tape.head_mean[s], mb, g.head_mean);
    h_bar += sc.head_logvar.backward(tape.head_logvar[s], raw_bar, g.head_logvar);
    for (size_t b = sc.residual.size(); b-- > 0;)
      h_bar += sc.residual[b].backward(tape.residual[s][b], h_bar, g.residual[b]);
    const MatrixXd x_bar = sc.in_proj.backward(tape.in_proj[s], h_bar, g.in_proj);
    CoordField zb(z_src[s].extents, z_src[s].channels, z_src[s].dim);
    zb.data = Eigen::Map<const VectorXd>(x_bar.data(), x_bar.size());
    z_bar.push_back(std::move(zb));
  }
  return z_bar;
}

void LatentTransfer::initialize(const std::vector<std::vector<CoordField>>& target_latents) {
  if (target_latents.empty()) throw DegenerateError("transfer initialization needs at least one sample");
  for (size_t s = 0; s < scales.size(); ++s) {
    const int rows = tgt_shapes_[s].channels * tgt_dim_;
    VectorXd sum = VectorXd::Zero(rows), sq = VectorXd::Zero(rows);
    long count = 0;
    for (const auto& lat : target_latents) {
      const CoordField& z = lat.at(s);
      const Eigen::Map<const MatrixXd> cols(z.data.data(), rows, z.locations());
      sum += cols.rowwise().sum();
      sq += cols.array().square().matrix().rowwise().sum();
      count += z.locations();
    }
    const VectorXd mean = sum / count;
    const VectorXd var = (sq / count - mean.cwiseAbs2()).cwiseMax(1e-8);
    VectorXd mean_bias(rows), logvar_bias(rows);
    for (int r = 0; r < rows; ++r) {
      mean_bias[r] = mean[r] - tgt_origin_[r % tgt_dim_];
      const double lv = std::clamp(std::log(var[r]), -0.99 * kLogVarBound, 0.99 * kLogVarBound);
      logvar_bias[r] = kLogVarBound * std::atanh(lv / kLogVarBound);
    }
    auto set_bias = [](Network& net, const VectorXd& b) {
      net.visit("h", [&](const std::string& name, MatrixXd& t) {
        if (name == "h.l0.b") t = b;
      });
    };
    set_bias(scales[s].head_mean, mean_bias);
    set_bias(scales[s].head_logvar, logvar_bias);
  }
}

void LatentTransfer::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t s = 0; s < scales.size(); ++s) {
    const std::string p = prefix + ".s" + std::to_string(s);
    scales[s].in_proj.visit(p + ".in", f);
    for (size_t b = 0; b < scales[s].residual.size(); ++b) scales[s].residual[b].visit(p + ".res" + std::to_string(b), f);
    scales[s].head_mean.visit(p + ".mean", f);
    scales[s].head_logvar.visit(p + ".logvar", f);
  }
}

void LatentTransfer::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  for (size_t s = 0; s < scales.size(); ++s) {
    const std::string p = prefix + ".s" + std::to_string(s);
    scales[s].in_proj.visit_const(p + ".in", f);
    for (size_t b = 0; b < scales[s].residual.size(); ++b)
      scales[s].residual[b].visit_const(p + ".res" + std::to_string(b), f);
    scales[s].head_mean.visit_const(p + ".mean", f);
    scales[s].head_logvar.visit_const(p + ".logvar", f);
  }
}

LatentTransfer LatentTransfer::zeros_like() const {
  LatentTransfer z = *this;
  for (auto& s : z.scales) {
    s.in_proj = s.in_proj.zeros_like();
    for (auto& r : s.residual) r = r.zeros_like();
    s.head_mean = s.head_mean.zeros_like();
    s.head_logvar = s.head_logvar.zeros_like();
  }
  return z;
}

std::size_t LatentTransfer::param_count() const {
  std::size_t n = 0;
  visit_const("", [&](const std::string&, const MatrixXd& t) { n += t.size(); });
  return n;
}

std::vector<std::vector<ManifoldGaussian>> transfer_params(const LatentTransfer& t, const FlowModel& target,
                                                           const std::vector<CoordField>& z_src) {
  const TransferOutput o = t.forward(z_src);
  const Manifold& m = target.manifold();
  std::vector<std::vector<ManifoldGaussian>> out(o.mean.size());
  for (size_t s = 0; s < o.mean.size(); ++s)
    for (int p = 0; p < o.mean[s].points(); ++p) {
      const VectorXd var = o.logvar[s].point(p).array().exp();
      out[s].emplace_back(m, m.chart_inverse(o.mean[s].point(p)), MatrixXd(var.asDiagonal()));
    }
  return out;
}

double diag_gaussian_logpdf(const std::vector<CoordField>& z, const TransferOutput& dist) {
  if (z.size() != dist.mean.size()) throw ShapeError("latent and distribution scale counts differ");
  double lp = 0.0;
  for (size_t s = 0; s < z.size(); ++s) {
    if (!z[s].same_shape(dist.mean[s])) throw ShapeError("latent and distribution shapes differ");
    const auto d = (z[s].data - dist.mean[s].data).array();
    const auto lv = dist.logvar[s].data.array();
    lp += -0.5 * (d.square() * (-lv).exp() + lv + kLog2Pi).sum();
  }
  return lp;
}

// ---------------------------------------------------------------------------

void ConditionalModel::visit(const ParamVisitor& f) {
  source.visit("source", f);
  target.visit("target", f);
  transfer.visit("transfer", f);
}

void ConditionalModel::visit_const(const ConstParamVisitor& f) const {
  source.visit_const("source", f);
  target.visit_const("target", f);
  transfer.visit_const("transfer", f);
}

ConditionalModel ConditionalModel::zeros_like() const {
  ConditionalModel z = *this;
  z.source = source.zeros_like();
  z.target = target.zeros_like();
  z.transfer = transfer.zeros_like();
  return z;
}

std::size_t ConditionalModel::param_count() const {
  return source.param_count() + target.param_count() + transfer.param_count();
}

ConditionalLoss conditional_nll(const ConditionalModel& model, const CoordField& x_target, const CoordField& y_source) {
  return conditional_loss_grad(model, x_target, y_source, nullptr);
}

namespace {

// Penalty on pole-log latent points beyond fraction * pi; adds w * d/dz to `bars` when given.
double boundary_penalty(const Manifold& m, const std::vector<CoordField>& latents, double w, double fraction,
                        std::vector<CoordField>* bars) {
  if (w == 0.0 || m.chart() != ChartKind::PoleLog) return 0.0;
  const double r0 = fraction * std::numbers::pi;
  double total = 0.0;
  for (size_t s = 0; s < latents.size(); ++s)
    for (int p = 0; p < latents[s].points(); ++p) {
      const auto z = latents[s].point(p);
      const double r = z.norm();
      if (r <= r0) continue;
      total += w * (r - r0) * (r - r0);
      if (bars) (*bars)[s].point(p) += (2.0 * w * (r - r0) / r) * z;
    }
  return total;
}

}  // namespace

ConditionalLoss conditional_loss_grad(const ConditionalModel& model, const CoordField& x_target,
                                      const CoordField& y_source, ConditionalModel* grad) {
  FlowTape ts, tt;
  TransferTape tr;
  const FlowOutput oy = model.source.forward(y_source, grad ? &ts : nullptr);
  const FlowOutput ox = model.target.forward(x_target, grad ? &tt : nullptr);
  const TransferOutput dist = model.transfer.forward(oy.latents, grad ? &tr : nullptr);
  const double lp_y = model.source.log_prior(oy.latents);
  const double lp_x = diag_gaussian_logpdf(ox.latents, dist);
  check_floor(oy.log_det, "source log-det");
  check_floor(ox.log_det, "target log-det");
  check_floor(lp_y, "source log-density");
  check_floor(lp_x, "target log-density");
  ConditionalLoss loss;
  loss.source_nll = -(lp_y + oy.log_det);
  loss.target_nll = -(lp_x + ox.log_det);
  const double bw = model.boundary_weight, bf = model.boundary_fraction;
  loss.boundary = boundary_penalty(model.source.manifold(), oy.latents, bw, bf, nullptr) +
                  boundary_penalty(model.target.manifold(), ox.latents, bw, bf, nullptr);
  loss.total = model.source_weight * loss.source_nll + model.target_weight * loss.target_nll + loss.boundary;
  if (!grad) return loss;

  const double wt = model.target_weight, ws = model.source_weight;
  std::vector<CoordField> zx_bar = ox.latents, mean_bar = ox.latents, lv_bar = ox.latents;
  for (size_t s = 0; s < ox.latents.size(); ++s) {
    const VectorXd inv_var = (-dist.logvar[s].data.array()).exp();
    const VectorXd d = ox.latents[s].data - dist.mean[s].data;
    zx_bar[s].data = wt * d.cwiseProduct(inv_var);
    mean_bar[s].data = -zx_bar[s].data;
    lv_bar[s].data = (wt * 0.5 * (1.0 - d.array().square() * inv_var.array())).matrix();
  }
  boundary_penalty(model.target.manifold(), ox.latents, bw, bf, &zx_bar);
  model.target.backward(tt, zx_bar, -wt, grad->target);
  const std::vector<CoordField> zy_from_transfer =
      model.transfer.backward(oy.latents, tr, mean_bar, lv_bar, grad->transfer);
  std::vector<CoordField> zy_bar = model.source.log_prior_grad(oy.latents);
  for (size_t s = 0; s < zy_bar.size(); ++s) {
    zy_bar[s].data *= -ws;
    if (!model.detach_source) zy_bar[s].data += zy_from_transfer[s].data;
  }
  boundary_penalty(model.source.manifold(), oy.latents, bw, bf, &zy_bar);
  model.source.backward(ts, zy_bar, -ws, grad->source);
  return loss;
}

CoordField generate_conditional(const ConditionalModel& model, const CoordField& y_source, double temperature,
                                std::uint64_t seed) {
  if (!(temperature >= 0.0)) throw ValidationError("temperature must be nonnegative");
  const FlowOutput oy = model.source.forward(y_source);
  const TransferOutput dist = model.transfer.forward(oy.latents);
  const Manifold& m = model.target.manifold();
  if (temperature == 0.0) {
    for (const auto& mu : dist.mean)
      for (int p = 0; p < mu.points(); ++p) m.check_chart_domain(mu.point(p));
    return model.target.inverse(dist.mean);
  }
  Rng rng(seed);
  // Draws are rejected per point when they leave the chart image, and the
  // whole latent is redrawn when the inverse flow leaves it.
  for (int field_attempt = 0; field_attempt < kMaxRejections; ++field_attempt) {
    std::vector<CoordField> z = dist.mean;
    for (size_t s = 0; s < z.size(); ++s)
      for (int p = 0; p < z[s].points(); ++p) {
        const VectorXd mu = dist.mean[s].point(p);
        const VectorXd sd = (0.5 * dist.logvar[s].point(p).array()).exp();
        int attempt = 0;
        for (;; ++attempt) {
          if (attempt >= kMaxRejections)
            throw RejectionExhaustedError("generation: 10000 latent draws fell outside the chart domain");
          VectorXd v(mu.size());
          for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = mu[i] + temperature * sd[i] * rng.normal();
          if (m.in_chart_domain(v)) {
            z[s].point(p) = v;
            break;
          }
        }
      }
    try {
      return model.target.inverse(z);
    } catch (const ChartDomainError&) {
    }
  }
  throw RejectionExhaustedError("generation: 10000 latent draws left the chart domain in the inverse flow");
}

Field generate_conditional(const ConditionalModel& model, const Field& y_source, double temperature,
                           std::uint64_t seed) {
  return from_coords(model.target.manifold(),
                     generate_conditional(model, to_coords(y_source), temperature, seed));
}

}  // namespace mglow
