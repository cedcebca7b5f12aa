#include "mglow/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

constexpr double kPi = std::numbers::pi;

// sin(r)/r and its derivative divided by r, both with series near zero.
double sinc(double r) {
  if (std::abs(r) < 1e-4) return 1.0 - r * r / 6.0 + r * r * r * r / 120.0;
  return std::sin(r) / r;
}

double sinc_prime_over_r(double r) {
  if (std::abs(r) < 1e-3) return -1.0 / 3.0 + r * r / 30.0;
  return (r * std::cos(r) - std::sin(r)) / (r * r * r);
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

MatrixXd gram_schmidt_tangent_basis(const VectorXd& pole) {
  const auto n = pole.size();
  std::vector<VectorXd> basis{pole};
  for (Eigen::Index k = 0; k < n && static_cast<Eigen::Index>(basis.size()) < n; ++k) {
    VectorXd e = VectorXd::Unit(n, k);
    // two passes of modified Gram-Schmidt
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) e -= b.dot(e) * b;
    const double norm = e.norm();
    if (norm > 1e-6) basis.push_back(e / norm);
  }
  MatrixXd out(n, n - 1);
  for (Eigen::Index j = 1; j < n; ++j) out.col(j - 1) = basis[j];
  return out;
}

// log|det| of vech(L) -> vech_sqrt2(logm(L L^T)).
double spd_cholesky_to_matrix_log_logdet(const MatrixXd& x) {
  const int n = static_cast<int>(x.rows());
  const MatrixXd l = cholesky_lower(x);
  double out = n * std::log(2.0);
  for (int i = 0; i < n; ++i) out += (n - i) * std::log(l(i, i));
  out += 0.25 * n * (n - 1) * std::log(2.0);
  const SymEigen e = sym_eigen(x);
  const MatrixXd k = divided_differences(
      e.values, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
  for (int i = 0; i < n; ++i) {
    out += std::log(k(i, i));
    for (int j = 0; j < i; ++j) out += std::log(std::abs(k(i, j)));
  }
  return out;
}

}  // namespace

std::string to_string(ManifoldKind k) {
  switch (k) {
    case ManifoldKind::Sphere: return "sphere";
    case ManifoldKind::PositiveReals: return "positive_reals";
    case ManifoldKind::Spd: return "spd";
  }
  return "?";
}

std::string to_string(ChartKind c) {
  switch (c) {
    case ChartKind::PoleLog: return "pole_log";
    case ChartKind::ScalarLog: return "scalar_log";
    case ChartKind::Cholesky: return "cholesky";
    case ChartKind::MatrixLog: return "matrix_log";
  }
  return "?";
}

ManifoldKind parse_manifold_kind(const std::string& s) {
  if (s == "sphere") return ManifoldKind::Sphere;
  if (s == "positive_reals") return ManifoldKind::PositiveReals;
  if (s == "spd") return ManifoldKind::Spd;
  throw ValidationError("unknown manifold '" + s + "'");
}

ChartKind parse_chart_kind(const std::string& s) {
  if (s == "pole_log") return ChartKind::PoleLog;
  if (s == "scalar_log") return ChartKind::ScalarLog;
  if (s == "cholesky") return ChartKind::Cholesky;
  if (s == "matrix_log") return ChartKind::MatrixLog;
  throw ValidationError("unknown chart '" + s + "'");
}

// ---------------------------------------------------------------------------

Manifold Manifold::sphere(int n) {
  if (n < 2) throw ValidationError("Sphere(n) requires n >= 2");
  return sphere(VectorXd::Unit(n, 0));
}

Manifold Manifold::sphere(const VectorXd& pole) {
  if (pole.size() < 2) throw ValidationError("Sphere(n) requires n >= 2");
  const double norm = pole.norm();
  if (!(norm > 0.0) || !pole.allFinite()) throw ValidationError("sphere pole must be a nonzero finite vector");
  Manifold m;
  m.kind_ = ManifoldKind::Sphere;
  m.chart_ = ChartKind::PoleLog;
  m.n_ = static_cast<int>(pole.size());
  m.pole_ = pole / norm;
  m.basis_ = gram_schmidt_tangent_basis(m.pole_);
  return m;
}

Manifold Manifold::positive_reals() {
  Manifold m;
  m.kind_ = ManifoldKind::PositiveReals;
  m.chart_ = ChartKind::ScalarLog;
  m.n_ = 1;
  return m;
}

Manifold Manifold::spd(int n, ChartKind chart) {
  if (n < 2) throw ValidationError("Spd(n) requires n >= 2");
  if (chart != ChartKind::Cholesky && chart != ChartKind::MatrixLog)
    throw ValidationError("SPD manifolds take the cholesky or matrix_log chart");
  Manifold m;
  m.kind_ = ManifoldKind::Spd;
  m.chart_ = chart;
  m.n_ = n;
  return m;
}

Manifold Manifold::make(ManifoldKind kind, int n, ChartKind chart, const std::optional<VectorXd>& pole) {
  switch (kind) {
    case ManifoldKind::Sphere:
      if (chart != ChartKind::PoleLog) throw ValidationError("sphere manifolds take the pole_log chart");
      if (pole) {
        if (pole->size() != n) throw ValidationError("sphere pole dimension does not match n");
        return sphere(*pole);
      }
      return sphere(n);
    case ManifoldKind::PositiveReals:
      if (chart != ChartKind::ScalarLog) throw ValidationError("positive_reals takes the scalar_log chart");
      if (n != 1) throw ValidationError("positive_reals has n = 1");
      return positive_reals();
    case ManifoldKind::Spd:
      return spd(n, chart);
  }
  throw ValidationError("unknown manifold kind");
}

int Manifold::ambient_size() const {
  switch (kind_) {
    case ManifoldKind::Sphere: return n_;
    case ManifoldKind::PositiveReals: return 1;
    case ManifoldKind::Spd: return n_ * n_;
  }
  return 0;
}

int Manifold::dim() const {
  switch (kind_) {
    case ManifoldKind::Sphere: return n_ - 1;
    case ManifoldKind::PositiveReals: return 1;
    case ManifoldKind::Spd: return vech_size(n_);
  }
  return 0;
}

int Manifold::group_dim() const {
  switch (kind_) {
    case ManifoldKind::Sphere: return skew_param_count(n_ - 1);
    case ManifoldKind::PositiveReals: return 1;
    case ManifoldKind::Spd: return skew_param_count(n_);
  }
  return 0;
}

std::string Manifold::name() const {
  switch (kind_) {
    case ManifoldKind::Sphere: return "Sphere(" + std::to_string(n_) + ")";
    case ManifoldKind::PositiveReals: return "PositiveReals";
    case ManifoldKind::Spd: return "Spd(" + std::to_string(n_) + ")/" + to_string(chart_);
  }
  return "?";
}

bool Manifold::same_chart(const Manifold& o) const {
  if (kind_ != o.kind_ || n_ != o.n_ || chart_ != o.chart_) return false;
  if (kind_ == ManifoldKind::Sphere) return pole_ == o.pole_;
  return true;
}

MatrixXd Manifold::as_matrix(const Ambient& x, int n) {
  return Eigen::Map<const RowMatrixXd>(x.data(), n, n);
}

Ambient Manifold::from_matrix(const MatrixXd& m) {
  Ambient x(m.size());
  Eigen::Map<RowMatrixXd>(x.data(), m.rows(), m.cols()) = m;
  return x;
}

void Manifold::validate(const Ambient& x) const {
  if (x.size() != ambient_size())
    throw InvalidPointError(name() + ": expected " + std::to_string(ambient_size()) + " ambient values, got " +
                            std::to_string(x.size()));
  if (!all_finite(x)) throw InvalidPointError(name() + ": non-finite point");
  switch (kind_) {
    case ManifoldKind::Sphere: {
      const double dev = std::abs(x.norm() - 1.0);
      if (dev >= kTol.unit_norm)
        throw InvalidPointError(name() + ": point is not unit norm (deviation " + std::to_string(dev) + ")");
      break;
    }
    case ManifoldKind::PositiveReals:
      if (!(x[0] > 0.0)) throw InvalidPointError("PositiveReals: value must be > 0");
      break;
    case ManifoldKind::Spd: {
      const MatrixXd m = as_matrix(x, n_);
      const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
      if ((m - m.transpose()).cwiseAbs().maxCoeff() > kTol.symmetry * scale)
        throw InvalidPointError(name() + ": matrix is not symmetric");
      const double lmin = sym_eigen(m).values.minCoeff();
      if (!(lmin > kTol.min_eigenvalue))
        throw InvalidPointError(name() + ": smallest eigenvalue " + std::to_string(lmin) + " is not positive");
      break;
    }
  }
}

bool Manifold::is_valid(const Ambient& x) const {
  try {
    validate(x);
    return true;
  } catch (const InvalidPointError&) {
    return false;
  }
}

double Manifold::distance(const Ambient& x, const Ambient& y) const {
  validate(x);
  validate(y);
  switch (kind_) {
    case ManifoldKind::Sphere: {
      const double c = x.dot(y);
      if (std::abs(c) > 1.0 + kTol.arccos_window) throw DomainError("arccos argument outside [-1, 1]");
      // arccos(x^T y) written through the chord length for accuracy near 0.
      return 2.0 * std::asin(std::min(1.0, 0.5 * (x - y).norm()));
    }
    case ManifoldKind::PositiveReals:
      return std::abs(std::log(x[0]) - std::log(y[0]));
    case ManifoldKind::Spd: {
      // Canonical argument order keeps d(x, y) == d(y, x) bitwise.
      const bool swap = std::lexicographical_compare(y.data(), y.data() + y.size(), x.data(), x.data() + x.size());
      const MatrixXd xm = symmetrize(as_matrix(swap ? y : x, n_));
      const MatrixXd ym = symmetrize(as_matrix(swap ? x : y, n_));
      Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> es(ym, xm);
      if (es.info() != Eigen::Success) throw NumericalError("generalized eigensolver failed");
      return es.eigenvalues().array().log().matrix().norm();
    }
  }
  return 0.0;
}

Coords Manifold::chart_forward(const Ambient& x) const {
  validate(x);
  switch (kind_) {
    case ManifoldKind::Sphere: {
      const double a = pole_.dot(x);
      const VectorXd w = x - a * pole_;
      const double s = w.norm();
      const double theta = std::atan2(s, a);
      if (theta >= kPi - kTol.chart_margin)
        throw ChartDomainError(name() + ": point lies within the cut-locus margin of the pole");
      const double k = s > 0.0 ? theta / s : 1.0 / a;
      return k * (basis_.transpose() * w);
    }
    case ManifoldKind::PositiveReals: {
      Coords v(1);
      v[0] = std::log(x[0]);
      return v;
    }
    case ManifoldKind::Spd: {
      const MatrixXd m = symmetrize(as_matrix(x, n_));
      if (chart_ == ChartKind::Cholesky) return vech(cholesky_lower(m));
      return vech(sym_logm(m), kSqrt2);
    }
  }
  return {};
}

bool Manifold::in_chart_domain(const Coords& v) const {
  if (v.size() != dim() || !v.allFinite()) return false;
  switch (kind_) {
    case ManifoldKind::Sphere:
      return v.norm() < kPi - kTol.chart_margin;
    case ManifoldKind::PositiveReals:
      return std::abs(v[0]) < 700.0;
    case ManifoldKind::Spd:
      if (chart_ == ChartKind::Cholesky) {
        int idx = 0;
        for (int i = 0; i < n_; ++i) {
          idx += i;
          if (!(v[idx] > 0.0)) return false;
          ++idx;
        }
        return true;
      }
      return v.cwiseAbs().maxCoeff() < 700.0;
  }
  return false;
}

void Manifold::check_chart_domain(const Coords& v, int layer) const {
  if (v.size() != dim()) throw ShapeError(name() + ": coordinate vector has the wrong length");
  if (!in_chart_domain(v)) {
    if (kind_ == ManifoldKind::Sphere)
      throw ChartDomainError(name() + ": chart coordinates outside the injectivity ball (|v| = " +
                                 std::to_string(v.norm()) + ")",
                             layer);
    throw ChartDomainError(name() + ": coordinates outside the chart image", layer);
  }
}

Ambient Manifold::chart_inverse(const Coords& v) const {
  if (v.size() != dim()) throw ShapeError(name() + ": coordinate vector has the wrong length");
  if (!v.allFinite()) throw DomainError(name() + ": non-finite chart coordinates");
  switch (kind_) {
    case ManifoldKind::Sphere: {
      const double r = v.norm();
      if (r >= kPi) throw ChartDomainError(name() + ": |v| >= pi is outside the pole-log chart");
      Ambient x = pole_ * std::cos(r) + (basis_ * v) * sinc(r);
      return x / x.norm();
    }
    case ManifoldKind::PositiveReals: {
      Ambient x(1);
      x[0] = std::exp(v[0]);
      return x;
    }
    case ManifoldKind::Spd: {
      if (chart_ == ChartKind::Cholesky) {
        const MatrixXd l = unvech_lower(v, n_);
        if (!(l.diagonal().minCoeff() > 0.0))
          throw ChartDomainError(name() + ": Cholesky coordinates need a positive diagonal");
        return from_matrix(l * l.transpose());
      }
      return from_matrix(sym_expm(unvech_sym(v, n_, kSqrt2)));
    }
  }
  return {};
}

Ambient Manifold::chart_forward_vjp(const Ambient& x, const Coords& v_bar) const {
  switch (kind_) {
    case ManifoldKind::Sphere: {
      // v = k(x) B^T x with k = theta / s, s = |x - (p.x) p|, theta = atan2(s, p.x)
      const double a = pole_.dot(x);
      const VectorXd w = x - a * pole_;
      const double s = w.norm();
      const double theta = std::atan2(s, a);
      const double k = s > 0.0 ? theta / s : 1.0 / a;
      const VectorXd btx = basis_.transpose() * x;
      const double denom = a * a + s * s;
      double cw;  // coefficient of w in grad k
      if (s < 1e-4) {
        cw = -2.0 / (3.0 * a * a * a);
      } else {
        cw = a / (denom * s * s) - theta / (s * s * s);
      }
      const VectorXd grad_k = cw * w - pole_ / denom;
      return k * (basis_ * v_bar) + v_bar.dot(btx) * grad_k;
    }
    case ManifoldKind::PositiveReals: {
      Ambient g(1);
      g[0] = v_bar[0] / x[0];
      return g;
    }
    case ManifoldKind::Spd: {
      const MatrixXd m = symmetrize(as_matrix(x, n_));
      if (chart_ == ChartKind::Cholesky) {
        const MatrixXd l = cholesky_lower(m);
        return from_matrix(cholesky_vjp(l, unvech_lower(v_bar, n_)));
      }
      const MatrixXd g = unvech_sym(v_bar, n_, kSqrt2);
      return from_matrix(sym_logm_vjp(m, g));
    }
  }
  return {};
}

Coords Manifold::chart_inverse_vjp(const Coords& v, const Ambient& x_bar) const {
  switch (kind_) {
    case ManifoldKind::Sphere: {
      // x = p cos r + B v sinc(r); the final renormalization is the identity on the sphere.
      const double r = v.norm();
      const VectorXd btx = basis_.transpose() * x_bar;
      const double sc = sinc(r);
      return -sc * pole_.dot(x_bar) * v + sc * btx + sinc_prime_over_r(r) * v.dot(btx) * v;
    }
    case ManifoldKind::PositiveReals: {
      Coords g(1);
      g[0] = x_bar[0] * std::exp(v[0]);
      return g;
    }
    case ManifoldKind::Spd: {
      const MatrixXd xb = symmetrize(as_matrix(x_bar, n_));
      if (chart_ == ChartKind::Cholesky) {
        const MatrixXd l = unvech_lower(v, n_);
        const MatrixXd lb = (2.0 * xb * l).triangularView<Eigen::Lower>();
        return vech(lb);
      }
      const MatrixXd vm = unvech_sym(v, n_, kSqrt2);
      return unvech_sym_adjoint(sym_expm_vjp(vm, xb), kSqrt2);
    }
  }
  return {};
}

Ambient Manifold::origin() const {
  switch (kind_) {
    case ManifoldKind::Sphere: return pole_;
    case ManifoldKind::PositiveReals: return Ambient::Ones(1);
    case ManifoldKind::Spd: return from_matrix(MatrixXd::Identity(n_, n_));
  }
  return {};
}

// ---------------------------------------------------------------------------

GroupElement GroupElement::identity(const Manifold& m) {
  GroupElement g;
  g.kind = m.kind();
  switch (m.kind()) {
    case ManifoldKind::PositiveReals: break;
    case ManifoldKind::Sphere:
      g.rotation = MatrixXd::Identity(m.n() - 1, m.n() - 1);
      g.generator = MatrixXd::Zero(m.n() - 1, m.n() - 1);
      break;
    case ManifoldKind::Spd:
      g.rotation = MatrixXd::Identity(m.n(), m.n());
      g.generator = MatrixXd::Zero(m.n(), m.n());
      break;
  }
  return g;
}

void validate_group_element(const Manifold& m, const GroupElement& g) {
  if (g.kind != m.kind()) throw ShapeError("group element belongs to a different manifold kind");
  if (m.kind() == ManifoldKind::PositiveReals) {
    if (!(g.scalar > 0.0) || !std::isfinite(g.scalar))
      throw InvalidPointError("R+ group element must be a positive finite scalar");
    return;
  }
  const int k = m.kind() == ManifoldKind::Sphere ? m.n() - 1 : m.n();
  if (g.rotation.rows() != k || g.rotation.cols() != k) throw ShapeError("rotation has the wrong size");
  const double orth = (g.rotation.transpose() * g.rotation - MatrixXd::Identity(k, k)).norm();
  if (!(orth < kTol.rotation)) throw InvalidPointError("rotation is not orthogonal");
  if (!(std::abs(g.rotation.determinant() - 1.0) < kTol.rotation))
    throw InvalidPointError("rotation does not have determinant +1");
}

Ambient group_apply(const Manifold& m, const GroupElement& g, const Ambient& x) {
  validate_group_element(m, g);
  m.validate(x);
  switch (m.kind()) {
    case ManifoldKind::PositiveReals: {
      Ambient y(1);
      y[0] = g.scalar * x[0];
      return y;
    }
    case ManifoldKind::Sphere: {
      const MatrixXd& b = m.tangent_basis();
      Ambient y = m.pole() * m.pole().dot(x) + b * (g.rotation * (b.transpose() * x));
      const double drift = std::abs(y.norm() - 1.0);
      if (drift > kTol.reproject) throw InvalidPointError("group action drifted off the sphere");
      return y / y.norm();
    }
    case ManifoldKind::Spd: {
      const MatrixXd xm = Manifold::as_matrix(x, m.n());
      const MatrixXd ym = g.rotation * xm * g.rotation.transpose();
      const double scale = std::max(1.0, ym.cwiseAbs().maxCoeff());
      if ((ym - ym.transpose()).cwiseAbs().maxCoeff() > kTol.reproject * scale)
        throw InvalidPointError("group action drifted off the SPD cone");
      return Manifold::from_matrix(symmetrize(ym));
    }
  }
  return x;
}

GroupElement group_inverse(const GroupElement& g) {
  GroupElement inv = g;
  if (g.kind == ManifoldKind::PositiveReals) {
    inv.scalar = 1.0 / g.scalar;
  } else {
    inv.rotation = g.rotation.transpose();
    if (g.generator.size() > 0) inv.generator = -g.generator;
  }
  return inv;
}

GroupElement group_from_params(const Manifold& m, const VectorXd& params) {
  if (params.size() != m.group_dim()) throw ShapeError("group parameter vector has the wrong length");
  GroupElement g;
  g.kind = m.kind();
  if (m.kind() == ManifoldKind::PositiveReals) {
    g.scalar = std::exp(params[0]);
    return g;
  }
  const int k = m.kind() == ManifoldKind::Sphere ? m.n() - 1 : m.n();
  g.generator = skew_from_params(params, k);
  g.rotation = cayley(g.generator);
  return g;
}

Coords act_coords(const Manifold& m, const GroupElement& g, const Coords& u, double* log_det) {
  if (log_det) *log_det = 0.0;
  switch (m.kind()) {
    case ManifoldKind::PositiveReals: {
      Coords y(1);
      y[0] = u[0] + std::log(g.scalar);
      return y;
    }
    case ManifoldKind::Sphere:
      return g.rotation * u;
    case ManifoldKind::Spd: {
      const int n = m.n();
      // The identity must be exact: zero-initialized couplings rely on it.
      if (g.rotation == MatrixXd::Identity(n, n)) return u;
      if (m.chart() == ChartKind::MatrixLog) {
        const MatrixXd um = unvech_sym(u, n, kSqrt2);
        return vech(g.rotation * um * g.rotation.transpose(), kSqrt2);
      }
      const MatrixXd l = unvech_lower(u, n);
      if (!(l.diagonal().minCoeff() > 0.0))
        throw ChartDomainError(m.name() + ": Cholesky coordinates need a positive diagonal");
      const MatrixXd y = g.rotation * (l * l.transpose()) * g.rotation.transpose();
      const MatrixXd l2 = cholesky_lower(y);
      if (log_det) {
        double ld = 0.0;
        for (int i = 0; i < n; ++i) ld += (n - i) * (std::log(l(i, i)) - std::log(l2(i, i)));
        *log_det = ld;
      }
      return vech(l2);
    }
  }
  return u;
}

Coords act_coords_inverse(const Manifold& m, const GroupElement& g, const Coords& y) {
  return act_coords(m, group_inverse(g), y);
}

void act_coords_vjp(const Manifold& m, const GroupElement& g, const Coords& u, const Coords& y_bar,
                    double log_det_bar, Coords& u_bar, VectorXd& params_bar) {
  switch (m.kind()) {
    case ManifoldKind::PositiveReals:
      u_bar[0] += y_bar[0];
      params_bar[0] += y_bar[0];
      return;
    case ManifoldKind::Sphere: {
      u_bar += g.rotation.transpose() * y_bar;
      const MatrixXd q_bar = y_bar * u.transpose();
      params_bar += skew_params_grad(cayley_vjp(g.generator, g.rotation, q_bar));
      return;
    }
    case ManifoldKind::Spd: {
      const int n = m.n();
      const MatrixXd& q = g.rotation;
      if (m.chart() == ChartKind::MatrixLog) {
        const MatrixXd um = unvech_sym(u, n, kSqrt2);
        const MatrixXd gm = unvech_sym(y_bar, n, kSqrt2);
        u_bar += unvech_sym_adjoint(q.transpose() * gm * q, kSqrt2);
        const MatrixXd q_bar = 2.0 * gm * q * um;
        params_bar += skew_params_grad(cayley_vjp(g.generator, q, q_bar));
        return;
      }
      const MatrixXd l = unvech_lower(u, n);
      const MatrixXd x = l * l.transpose();
      const MatrixXd y = q * x * q.transpose();
      const MatrixXd l2 = cholesky_lower(y);
      MatrixXd l2_bar = unvech_lower(y_bar, n);
      for (int i = 0; i < n; ++i) l2_bar(i, i) -= log_det_bar * (n - i) / l2(i, i);
      const MatrixXd y_sym_bar = cholesky_vjp(l2, l2_bar);
      const MatrixXd x_bar = q.transpose() * y_sym_bar * q;
      const MatrixXd q_bar = 2.0 * y_sym_bar * q * x;
      MatrixXd l_bar = (2.0 * x_bar * l).triangularView<Eigen::Lower>();
      for (int i = 0; i < n; ++i) l_bar(i, i) += log_det_bar * (n - i) / l(i, i);
      u_bar += vech(l_bar);
      params_bar += skew_params_grad(cayley_vjp(g.generator, q, q_bar));
      return;
    }
  }
}

double chart_transition_logdet(const Manifold& src, const Manifold& dst, const Ambient& at) {
  if (src.kind() != dst.kind() || src.n() != dst.n())
    throw ShapeError("chart transition requires two charts of the same manifold");
  if (src.same_chart(dst)) return 0.0;
  switch (src.kind()) {
    case ManifoldKind::PositiveReals:
      return 0.0;
    case ManifoldKind::Sphere: {
      // Both charts are log maps; |det d exp_p(v)| = (sin r / r)^{m-1}.
      const int m = src.dim();
      // Throws on the cut locus of either pole.
      const double r1 = src.chart_forward(at).norm();
      const double r2 = dst.chart_forward(at).norm();
      return (m - 1) * (std::log(sinc(r1)) - std::log(sinc(r2)));
    }
    case ManifoldKind::Spd: {
      src.validate(at);
      const MatrixXd x = symmetrize(Manifold::as_matrix(at, src.n()));
      const double forward = spd_cholesky_to_matrix_log_logdet(x);
      return src.chart() == ChartKind::Cholesky ? forward : -forward;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------

ManifoldGaussian::ManifoldGaussian(Manifold manifold, Ambient mean, MatrixXd covariance)
    : manifold_(std::move(manifold)), mean_(std::move(mean)), cov_(std::move(covariance)) {
  const int m = manifold_.dim();
  if (cov_.rows() != m || cov_.cols() != m) throw ShapeError("covariance must be m x m");
  mean_coords_ = manifold_.chart_forward(mean_);
  const double scale = std::max(1e-300, cov_.cwiseAbs().maxCoeff());
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidPointError("covariance is not symmetric");
  Eigen::LLT<MatrixXd> llt(symmetrize(cov_));
  if (llt.info() != Eigen::Success) throw DegenerateError("covariance is not positive definite");
  chol_ = llt.matrixL();
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  if (!(log_det_ >= std::log(kTol.singular_covariance))) throw DegenerateError("singular covariance (|Sigma| < 1e-30)");
}

double gaussian_logpdf(const ManifoldGaussian& dist, const Ambient& z) {
  const Coords d = dist.manifold_.chart_forward(z) - dist.mean_coords_;
  const VectorXd y = dist.chol_.triangularView<Eigen::Lower>().solve(d);
  const int m = dist.manifold_.dim();
  return -0.5 * y.squaredNorm() - 0.5 * m * std::log(2.0 * kPi) - 0.5 * dist.log_det_;
}

Ambient gaussian_sample(const ManifoldGaussian& dist, Rng& rng) {
  const int m = dist.manifold_.dim();
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    VectorXd xi(m);
    for (int i = 0; i < m; ++i) xi[i] = rng.normal();
    const Coords v = dist.mean_coords_ + dist.chol_ * xi;
    if (dist.manifold_.in_chart_domain(v)) return dist.manifold_.chart_inverse(v);
  }
  throw RejectionExhaustedError("gaussian_sample: 10000 draws fell outside the chart domain");
}

}  // namespace mglow
