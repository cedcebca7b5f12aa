#include "mglow/layers.hpp"

#include <atomic>
#include <cmath>

#include "mglow/errors.hpp"

namespace mglow {

namespace {
std::atomic<Fault> g_fault{Fault::None};
}  // namespace

void set_fault(Fault f) { g_fault = f; }
Fault current_fault() { return g_fault.load(); }

Coords affine_point_forward(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& u,
                            double& log_det) {
  const Coords w = log_s.array().exp().matrix().cwiseProduct(u);
  double act = 0.0;
  Coords y = act_coords(m, g, w, &act);
  log_det += log_s.sum() + act;
  return y;
}

Coords affine_point_inverse(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& y) {
  const Coords w = act_coords_inverse(m, g, y);
  return w.cwiseProduct((-log_s).array().exp().matrix());
}

void affine_point_backward(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& u,
                           const Coords& y_bar, double log_det_bar, Eigen::Ref<VectorXd> u_bar, VectorXd& log_s_bar,
                           VectorXd& group_bar) {
  const VectorXd s = log_s.array().exp();
  const Coords w = s.cwiseProduct(u);
  Coords w_bar = Coords::Zero(w.size());
  act_coords_vjp(m, g, w, y_bar, log_det_bar, w_bar, group_bar);
  u_bar += s.cwiseProduct(w_bar);
  log_s_bar.array() += w_bar.cwiseProduct(w).array() + log_det_bar;
}

void check_domain(const Manifold& m, const CoordField& x, int layer) {
  for (int p = 0; p < x.points(); ++p) m.check_chart_domain(x.point(p), layer);
}

// ---------------------------------------------------------------------------

Actnorm::Actnorm(const Manifold& m, int channels, int locations, bool per_location)
    : manifold_(std::make_shared<Manifold>(m)), per_location_(per_location) {
  const int rows = per_location ? channels * locations : channels;
  log_scale = MatrixXd::Zero(rows, m.dim());
  shift = MatrixXd::Zero(rows, m.group_dim());
}

VectorXd Actnorm::effective_log_scale(int row) const {
  return log_scale.row(row).transpose().cwiseMax(kMinLogScale).cwiseMin(kMaxLogScale);
}

CoordField Actnorm::forward(const CoordField& x, double& log_det, int layer) const {
  const Manifold& m = *manifold_;
  const int need = per_location_ ? x.points() : x.channels;
  if (x.dim != m.dim() || rows() != need) throw ShapeError("actnorm: field shape does not match parameters");
  std::vector<VectorXd> ls(rows());
  std::vector<GroupElement> gs(rows());
  for (int r = 0; r < rows(); ++r) {
    ls[r] = effective_log_scale(r);
    gs[r] = group_from_params(m, shift.row(r).transpose());
  }
  CoordField y = x;
  double ld = 0.0;
  for (int loc = 0; loc < x.locations(); ++loc)
    for (int ch = 0; ch < x.channels; ++ch) {
      const int p = loc * x.channels + ch;
      const int r = row_of(loc, ch, x.channels);
      y.point(p) = affine_point_forward(m, ls[r], gs[r], x.point(p), ld);
    }
  check_domain(m, y, layer);
  log_det += ld;
  return y;
}

CoordField Actnorm::inverse(const CoordField& y, int layer) const {
  const Manifold& m = *manifold_;
  const int need = per_location_ ? y.points() : y.channels;
  if (y.dim != m.dim() || rows() != need) throw ShapeError("actnorm: field shape does not match parameters");
  std::vector<VectorXd> ls(rows());
  std::vector<GroupElement> gs(rows());
  for (int r = 0; r < rows(); ++r) {
    ls[r] = effective_log_scale(r);
    gs[r] = group_from_params(m, shift.row(r).transpose());
  }
  CoordField x = y;
  for (int loc = 0; loc < y.locations(); ++loc)
    for (int ch = 0; ch < y.channels; ++ch) {
      const int p = loc * y.channels + ch;
      const int r = row_of(loc, ch, y.channels);
      x.point(p) = affine_point_inverse(m, ls[r], gs[r], y.point(p));
    }
  check_domain(m, x, layer);
  return x;
}

CoordField Actnorm::backward(const CoordField& x, const CoordField& y_bar, double log_det_bar, Actnorm& grad) const {
  const Manifold& m = *manifold_;
  std::vector<VectorXd> ls(rows()), ls_bar(rows()), g_bar(rows());
  std::vector<GroupElement> gs(rows());
  for (int r = 0; r < rows(); ++r) {
    ls[r] = effective_log_scale(r);
    gs[r] = group_from_params(m, shift.row(r).transpose());
    ls_bar[r] = VectorXd::Zero(m.dim());
    g_bar[r] = VectorXd::Zero(m.group_dim());
  }
  CoordField x_bar(x.extents, x.channels, x.dim);
  for (int loc = 0; loc < x.locations(); ++loc)
    for (int ch = 0; ch < x.channels; ++ch) {
      const int p = loc * x.channels + ch;
      const int r = row_of(loc, ch, x.channels);
      affine_point_backward(m, ls[r], gs[r], x.point(p), y_bar.point(p), log_det_bar, x_bar.point(p), ls_bar[r],
                            g_bar[r]);
    }
  for (int r = 0; r < rows(); ++r) {
    for (int i = 0; i < m.dim(); ++i)
      if (log_scale(r, i) > kMinLogScale && log_scale(r, i) < kMaxLogScale) grad.log_scale(r, i) += ls_bar[r][i];
    grad.shift.row(r) += g_bar[r].transpose();
  }
  return x_bar;
}

void Actnorm::initialize(const std::vector<CoordField>& batch, double sigma0) {
  if (batch.empty()) throw DegenerateError("actnorm init needs a nonempty batch");
  const Manifold& m = *manifold_;
  const int d = m.dim();
  const bool translate = m.kind() == ManifoldKind::PositiveReals;
  MatrixXd sum = MatrixXd::Zero(rows(), d), sq = MatrixXd::Zero(rows(), d);
  VectorXd count = VectorXd::Zero(rows());
  for (const auto& x : batch) {
    if (x.dim != d || rows() != (per_location_ ? x.points() : x.channels))
      throw ShapeError("actnorm init: batch shape does not match parameters");
    for (int loc = 0; loc < x.locations(); ++loc)
      for (int ch = 0; ch < x.channels; ++ch) {
        const int r = row_of(loc, ch, x.channels);
        const auto v = x.point(loc * x.channels + ch);
        sum.row(r) += v.transpose();
        sq.row(r) += v.cwiseProduct(v).transpose();
        count[r] += 1.0;
      }
  }
  shift.setZero();
  for (int r = 0; r < rows(); ++r)
    for (int i = 0; i < d; ++i) {
      const double mean = sum(r, i) / count[r];
      const double ms = sq(r, i) / count[r];
      const double spread = translate ? std::sqrt(std::max(0.0, ms - mean * mean)) : std::sqrt(ms);
      if (!(spread >= 1e-8))
        throw DegenerateError("actnorm init: coordinate " + std::to_string(i) + " of row " + std::to_string(r) +
                              " has spread " + std::to_string(spread) + " < 1e-8");
      const double s = sigma0 / spread;
      log_scale(r, i) = std::log(s);
      if (translate) shift(r, 0) = -mean * s;
    }
}

void Actnorm::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".log_scale", log_scale);
  if (shift.size() > 0) f(prefix + ".shift", shift);
}

void Actnorm::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  f(prefix + ".log_scale", log_scale);
  if (shift.size() > 0) f(prefix + ".shift", shift);
}

Actnorm Actnorm::zeros_like() const {
  Actnorm z = *this;
  z.log_scale.setZero();
  z.shift.setZero();
  return z;
}

// ---------------------------------------------------------------------------

Conv1x1::Conv1x1(const Manifold& m, int channels) : manifold_(std::make_shared<Manifold>(m)), channels_(channels) {
  generator = MatrixXd::Zero(skew_param_count(channels), 1);
}

Conv1x1 Conv1x1::from_rotation(const Manifold& m, const MatrixXd& r) {
  const auto k = r.rows();
  if (r.cols() != k) throw ShapeError("rotation must be square");
  if ((r.transpose() * r - MatrixXd::Identity(k, k)).norm() > 1e-10 || std::abs(r.determinant() - 1.0) > 1e-10)
    throw InvalidPointError("1x1 convolution needs a rotation in SO(c)");
  Conv1x1 c(m, static_cast<int>(k));
  const MatrixXd a = inverse_cayley(r);
  int idx = 0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) c.generator(idx++, 0) = a(i, j);
  return c;
}

MatrixXd Conv1x1::rotation() const { return cayley(skew_from_params(generator.col(0), channels_)); }

CoordField Conv1x1::forward(const CoordField& x, double& log_det, int layer) const {
  if (x.channels != channels_ || x.dim != manifold_->dim()) throw ShapeError("conv1x1: channel count mismatch");
  // Cayley rotations have det +1, so the log-det contribution is exactly 0.
  (void)log_det;
  if (channels_ == 1) return x;
  const MatrixXd r = rotation();
  CoordField y(x.extents, x.channels, x.dim);
  for (int loc = 0; loc < x.locations(); ++loc) y.at(loc).noalias() = r * x.at(loc);
  check_domain(*manifold_, y, layer);
  return y;
}

CoordField Conv1x1::inverse(const CoordField& y, int layer) const {
  if (y.channels != channels_ || y.dim != manifold_->dim()) throw ShapeError("conv1x1: channel count mismatch");
  if (channels_ == 1) return y;
  const MatrixXd rt = rotation().transpose();
  CoordField x(y.extents, y.channels, y.dim);
  for (int loc = 0; loc < y.locations(); ++loc) x.at(loc).noalias() = rt * y.at(loc);
  check_domain(*manifold_, x, layer);
  return x;
}

CoordField Conv1x1::backward(const CoordField& x, const CoordField& y_bar, double, Conv1x1& grad) const {
  if (channels_ == 1) return y_bar;
  const MatrixXd a = skew_from_params(generator.col(0), channels_);
  const MatrixXd r = cayley(a);
  CoordField x_bar(x.extents, x.channels, x.dim);
  MatrixXd r_bar = MatrixXd::Zero(channels_, channels_);
  for (int loc = 0; loc < x.locations(); ++loc) {
    x_bar.at(loc).noalias() = r.transpose() * y_bar.at(loc);
    r_bar.noalias() += y_bar.at(loc) * x.at(loc).transpose();
  }
  grad.generator.col(0) += skew_params_grad(cayley_vjp(a, r, r_bar));
  return x_bar;
}

void Conv1x1::visit(const std::string& prefix, const ParamVisitor& f) {
  if (generator.size() > 0) f(prefix + ".generator", generator);
}

void Conv1x1::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  if (generator.size() > 0) f(prefix + ".generator", generator);
}

Conv1x1 Conv1x1::zeros_like() const {
  Conv1x1 z = *this;
  z.generator.setZero();
  return z;
}

// ---------------------------------------------------------------------------

CouplingLayout make_coupling_layout(const Extents& extents, int channels, CouplingMode mode, int tau, bool shared,
                                    int parity) {
  CouplingLayout lay;
  const int locations = volume(extents);
  if (mode == CouplingMode::Channel) {
    if (channels < 2) {
      lay.nets = 0;
      return lay;
    }
    const int ca = channels / 2;
    const int cb = channels - ca;
    lay.columns = locations;
    lay.cond_per_column = ca;
    lay.target_per_column = cb;
    lay.nets = 1;
    lay.net_columns.assign(1, {});
    for (int loc = 0; loc < locations; ++loc) {
      for (int j = 0; j < ca; ++j) lay.cond.push_back(loc * channels + j);
      for (int j = 0; j < cb; ++j) lay.target.push_back(loc * channels + ca + j);
      lay.net_columns[0].push_back(loc);
    }
    return lay;
  }
  if (tau < 1) throw ValidationError("nanoflow tau must be >= 1");
  const int lead = extents[0];
  if (lead % (2 * tau) != 0)
    throw ShapeError("sliced axis extent " + std::to_string(lead) + " is not divisible by 2*tau = " +
                     std::to_string(2 * tau));
  const int h = lead / (2 * tau);
  const int rest = locations / lead;
  const int per_slice = h * rest;
  lay.columns = tau * per_slice;
  lay.cond_per_column = channels;
  lay.target_per_column = channels;
  lay.nets = shared ? 1 : tau;
  lay.net_columns.assign(lay.nets, {});
  int col = 0;
  for (int k = 0; k < tau; ++k) {
    const int sc = 2 * k + (parity & 1);
    const int st = 2 * k + 1 - (parity & 1);
    for (int l = 0; l < per_slice; ++l, ++col) {
      const int a = l / rest, r = l % rest;
      const int lc = (sc * h + a) * rest + r;
      const int lt = (st * h + a) * rest + r;
      for (int ch = 0; ch < channels; ++ch) {
        lay.cond.push_back(lc * channels + ch);
        lay.target.push_back(lt * channels + ch);
      }
      lay.net_columns[shared ? 0 : k].push_back(col);
    }
  }
  return lay;
}

Coupling::Coupling(const Manifold& m, const Extents& extents, int channels, const CouplingSpec& spec, Rng& rng)
    : manifold_(std::make_shared<Manifold>(m)), spec_(spec), extents_(extents), channels_(channels) {
  layout_ = make_coupling_layout(extents, channels, spec.mode, spec.tau, spec.shared, spec.parity);
  const int in = layout_.cond_per_column * m.dim();
  const int out = layout_.target_per_column * (m.dim() + m.group_dim());
  for (int k = 0; k < layout_.nets; ++k) nets.emplace_back(in, spec.hidden, out, Activation::Tanh, true, rng);
}

std::size_t Coupling::param_count() const {
  std::size_t n = 0;
  for (const auto& net : nets) n += net.param_count();
  return n;
}

MatrixXd Coupling::gather(const CoordField& x, int net) const {
  const int d = x.dim;
  const auto& cols = layout_.net_columns[net];
  MatrixXd in(layout_.cond_per_column * d, static_cast<Eigen::Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j)
    for (int i = 0; i < layout_.cond_per_column; ++i)
      in.block(i * d, static_cast<Eigen::Index>(j), d, 1) =
          x.point(layout_.cond[static_cast<size_t>(cols[j]) * layout_.cond_per_column + i]);
  return in;
}

namespace {

struct RawSplit {
  VectorXd log_s;      // clamped: enters the log-det
  VectorXd log_s_map;  // applied to the point (differs only under fault injection)
  VectorXd raw_s;
  GroupElement g;
};

RawSplit split_raw(const Manifold& m, const Eigen::Ref<const VectorXd>& raw, double bound) {
  RawSplit r;
  const int d = m.dim();
  r.raw_s = raw.head(d);
  r.log_s = bound * (r.raw_s / bound).array().tanh();
  r.log_s_map = current_fault() == Fault::NoScaleClamp ? r.raw_s : r.log_s;
  r.g = group_from_params(m, raw.tail(m.group_dim()));
  return r;
}

}  // namespace

CoordField Coupling::forward(const CoordField& x, double& log_det, int layer) const {
  if (!active()) return x;
  const Manifold& m = *manifold_;
  if (x.extents != extents_ || x.channels != channels_ || x.dim != m.dim())
    throw ShapeError("coupling: field shape does not match the layer");
  const int d = m.dim(), w = d + m.group_dim();
  CoordField y = x;
  double ld = 0.0;
  for (int k = 0; k < layout_.nets; ++k) {
    const MatrixXd out = nets[k].forward(gather(x, k));
    if (out.rows() != layout_.target_per_column * w) throw ShapeError("coupling network output width is wrong");
    const auto& cols = layout_.net_columns[k];
    for (size_t j = 0; j < cols.size(); ++j)
      for (int t = 0; t < layout_.target_per_column; ++t) {
        const int p = layout_.target[static_cast<size_t>(cols[j]) * layout_.target_per_column + t];
        const RawSplit rs = split_raw(m, out.block(t * w, static_cast<Eigen::Index>(j), w, 1), spec_.scale_bound);
        double pt = 0.0;
        y.point(p) = affine_point_forward(m, rs.log_s_map, rs.g, x.point(p), pt);
        ld += current_fault() == Fault::None ? pt : pt - rs.log_s_map.sum() + rs.log_s.sum();
      }
  }
  check_domain(m, y, layer);
  log_det += ld;
  return y;
}

CoordField Coupling::inverse(const CoordField& y, int layer) const {
  if (!active()) return y;
  const Manifold& m = *manifold_;
  if (y.extents != extents_ || y.channels != channels_ || y.dim != m.dim())
    throw ShapeError("coupling: field shape does not match the layer");
  const int w = m.dim() + m.group_dim();
  CoordField x = y;
  for (int k = 0; k < layout_.nets; ++k) {
    const MatrixXd out = nets[k].forward(gather(y, k));
    if (out.rows() != layout_.target_per_column * w) throw ShapeError("coupling network output width is wrong");
    const auto& cols = layout_.net_columns[k];
    for (size_t j = 0; j < cols.size(); ++j)
      for (int t = 0; t < layout_.target_per_column; ++t) {
        const int p = layout_.target[static_cast<size_t>(cols[j]) * layout_.target_per_column + t];
        const RawSplit rs = split_raw(m, out.block(t * w, static_cast<Eigen::Index>(j), w, 1), spec_.scale_bound);
        x.point(p) = affine_point_inverse(m, rs.log_s_map, rs.g, y.point(p));
      }
  }
  check_domain(m, x, layer);
  return x;
}

CoordField Coupling::backward(const CoordField& x, const CoordField& y_bar, double log_det_bar, Coupling& grad) const {
  if (!active()) return y_bar;
  const Manifold& m = *manifold_;
  const int d = m.dim(), q = m.group_dim(), w = d + q;
  CoordField x_bar = y_bar;
  for (int k = 0; k < layout_.nets; ++k) {
    GradientTape tape;
    const MatrixXd out = nets[k].forward(gather(x, k), &tape);
    MatrixXd out_bar = MatrixXd::Zero(out.rows(), out.cols());
    const auto& cols = layout_.net_columns[k];
    for (size_t j = 0; j < cols.size(); ++j)
      for (int t = 0; t < layout_.target_per_column; ++t) {
        const int p = layout_.target[static_cast<size_t>(cols[j]) * layout_.target_per_column + t];
        const auto jj = static_cast<Eigen::Index>(j);
        const RawSplit rs = split_raw(m, out.block(t * w, jj, w, 1), spec_.scale_bound);
        VectorXd ls_bar = VectorXd::Zero(d);
        VectorXd g_bar = VectorXd::Zero(q);
        x_bar.point(p).setZero();
        affine_point_backward(m, rs.log_s, rs.g, x.point(p), y_bar.point(p), log_det_bar, x_bar.point(p), ls_bar,
                              g_bar);
        const VectorXd th = (rs.raw_s / spec_.scale_bound).array().tanh();
        out_bar.block(t * w, jj, d, 1) = ls_bar.cwiseProduct((1.0 - th.array().square()).matrix());
        out_bar.block(t * w + d, jj, q, 1) = g_bar;
      }
    const MatrixXd in_bar = nets[k].backward(tape, out_bar, grad.nets[k]);
    for (size_t j = 0; j < cols.size(); ++j)
      for (int i = 0; i < layout_.cond_per_column; ++i)
        x_bar.point(layout_.cond[static_cast<size_t>(cols[j]) * layout_.cond_per_column + i]) +=
            in_bar.block(i * d, static_cast<Eigen::Index>(j), d, 1);
  }
  return x_bar;
}

void Coupling::visit(const std::string& prefix, const ParamVisitor& f) {
  for (size_t k = 0; k < nets.size(); ++k) nets[k].visit(prefix + ".net" + std::to_string(k), f);
}

void Coupling::visit_const(const std::string& prefix, const ConstParamVisitor& f) const {
  for (size_t k = 0; k < nets.size(); ++k) nets[k].visit_const(prefix + ".net" + std::to_string(k), f);
}

Coupling Coupling::zeros_like() const {
  Coupling z = *this;
  for (auto& n : z.nets) n = n.zeros_like();
  return z;
}

// ---------------------------------------------------------------------------

std::pair<Field, double> actnorm_forward(const Actnorm& a, const Field& x) {
  double ld = 0.0;
  const CoordField y = a.forward(to_coords(x), ld);
  return {from_coords(x.manifold(), y), ld};
}

Field actnorm_inverse(const Actnorm& a, const Field& y) {
  return from_coords(y.manifold(), a.inverse(to_coords(y)));
}

Actnorm actnorm_init(const std::vector<Field>& batch, bool per_location, double sigma0) {
  if (batch.empty()) throw DegenerateError("actnorm init needs a nonempty batch");
  const Field& f = batch.front();
  Actnorm a(f.manifold(), f.channels(), f.locations(), per_location);
  std::vector<CoordField> coords;
  coords.reserve(batch.size());
  for (const auto& x : batch) coords.push_back(to_coords(x));
  a.initialize(coords, sigma0);
  return a;
}

std::pair<Field, double> conv1x1_forward(const Conv1x1& c, const Field& x) {
  double ld = 0.0;
  const CoordField y = c.forward(to_coords(x), ld);
  return {from_coords(x.manifold(), y), ld};
}

Field conv1x1_inverse(const Conv1x1& c, const Field& y) { return from_coords(y.manifold(), c.inverse(to_coords(y))); }

std::pair<Field, double> coupling_forward(const Coupling& c, const Field& x) {
  double ld = 0.0;
  const CoordField y = c.forward(to_coords(x), ld);
  return {from_coords(x.manifold(), y), ld};
}

Field coupling_inverse(const Coupling& c, const Field& y) { return from_coords(y.manifold(), c.inverse(to_coords(y))); }

}  // namespace mglow
