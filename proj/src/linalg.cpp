#include "mglow/linalg.hpp"

#include <atomic>
#include <cmath>

#include "mglow/errors.hpp"

namespace mglow {

namespace {
std::atomic<long> g_conditioning_warnings{0};
}  // namespace

MatrixXd skew_from_params(const VectorXd& theta, int k) {
  if (theta.size() != skew_param_count(k)) throw ShapeError("skew generator size mismatch");
  MatrixXd a = MatrixXd::Zero(k, k);
  int idx = 0;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      a(i, j) = theta[idx];
      a(j, i) = -theta[idx];
      ++idx;
    }
  }
  return a;
}

VectorXd skew_params_grad(const MatrixXd& a_bar) {
  const int k = static_cast<int>(a_bar.rows());
  VectorXd g(skew_param_count(k));
  int idx = 0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) g[idx++] = a_bar(i, j) - a_bar(j, i);
  return g;
}

MatrixXd cayley(const MatrixXd& a) {
  const auto n = a.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  return (id - a).partialPivLu().solve(id + a);
}

MatrixXd inverse_cayley(const MatrixXd& q) {
  const auto n = q.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  Eigen::FullPivLU<MatrixXd> lu((q + id).transpose());
  if (!lu.isInvertible()) throw DomainError("rotation has eigenvalue -1; no Cayley generator");
  // A (Q + I) = Q - I  <=>  (Q + I)^T A^T = (Q - I)^T
  return lu.solve((q - id).transpose()).transpose();
}

MatrixXd cayley_vjp(const MatrixXd& a, const MatrixXd& q, const MatrixXd& q_bar) {
  // dQ = (I - A)^{-1} dA (Q + I)
  const auto n = a.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  const MatrixXd left = (id - a).transpose().partialPivLu().solve(q_bar);
  return left * (q + id).transpose();
}

VectorXd vech(const MatrixXd& m, double off_scale) {
  const int n = static_cast<int>(m.rows());
  VectorXd v(vech_size(n));
  int idx = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) v[idx++] = (i == j) ? m(i, j) : off_scale * m(i, j);
  return v;
}

MatrixXd unvech_sym(const VectorXd& v, int n, double off_scale) {
  if (v.size() != vech_size(n)) throw ShapeError("vech size mismatch");
  MatrixXd m(n, n);
  int idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double x = (i == j) ? v[idx] : v[idx] / off_scale;
      m(i, j) = x;
      m(j, i) = x;
      ++idx;
    }
  }
  return m;
}

MatrixXd unvech_lower(const VectorXd& v, int n) {
  if (v.size() != vech_size(n)) throw ShapeError("vech size mismatch");
  MatrixXd m = MatrixXd::Zero(n, n);
  int idx = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m(i, j) = v[idx++];
  return m;
}

VectorXd unvech_sym_adjoint(const MatrixXd& g, double off_scale) {
  const int n = static_cast<int>(g.rows());
  VectorXd v(vech_size(n));
  int idx = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) v[idx++] = (i == j) ? g(i, i) : (g(i, j) + g(j, i)) / off_scale;
  return v;
}

SymEigen sym_eigen(const MatrixXd& x) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(x));
  if (es.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

MatrixXd sym_apply(const SymEigen& e, const std::function<double(double)>& f) {
  VectorXd fv = e.values.unaryExpr(f);
  MatrixXd r = e.vectors * fv.asDiagonal() * e.vectors.transpose();
  return symmetrize(r);
}

MatrixXd sym_logm(const MatrixXd& x) {
  const SymEigen e = sym_eigen(x);
  if (e.values.minCoeff() <= 0.0) throw DomainError("matrix logarithm of a non-positive-definite matrix");
  return sym_apply(e, [](double l) { return std::log(l); });
}

MatrixXd sym_expm(const MatrixXd& x) {
  return sym_apply(sym_eigen(x), [](double l) { return std::exp(l); });
}

MatrixXd divided_differences(const VectorXd& lambda, const std::function<double(double)>& f,
                             const std::function<double(double)>& df) {
  const auto n = lambda.size();
  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = df(lambda[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double gap = lambda[i] - lambda[j];
      const double scale = std::max({1.0, std::abs(lambda[i]), std::abs(lambda[j])});
      double v;
      if (std::abs(gap) < 1e-8 * scale) {
        ++g_conditioning_warnings;
        v = df(0.5 * (lambda[i] + lambda[j]));
      } else {
        v = (f(lambda[i]) - f(lambda[j])) / gap;
      }
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

MatrixXd sym_fn_vjp(const SymEigen& e, const MatrixXd& k, const MatrixXd& f_bar) {
  const MatrixXd inner = e.vectors.transpose() * symmetrize(f_bar) * e.vectors;
  return e.vectors * k.cwiseProduct(inner) * e.vectors.transpose();
}

MatrixXd sym_logm_vjp(const MatrixXd& x, const MatrixXd& f_bar) {
  const SymEigen e = sym_eigen(x);
  const MatrixXd k = divided_differences(
      e.values, [](double l) { return std::log(l); }, [](double l) { return 1.0 / l; });
  return sym_fn_vjp(e, k, f_bar);
}

MatrixXd sym_expm_vjp(const MatrixXd& x, const MatrixXd& f_bar) {
  const SymEigen e = sym_eigen(x);
  const MatrixXd k = divided_differences(
      e.values, [](double l) { return std::exp(l); }, [](double l) { return std::exp(l); });
  return sym_fn_vjp(e, k, f_bar);
}

long conditioning_warnings() { return g_conditioning_warnings.load(); }
void reset_conditioning_warnings() { g_conditioning_warnings = 0; }

MatrixXd cholesky_lower(const MatrixXd& x) {
  Eigen::LLT<MatrixXd> llt(symmetrize(x));
  if (llt.info() != Eigen::Success) throw DomainError("Cholesky factorization of a non-positive-definite matrix");
  return llt.matrixL();
}

MatrixXd cholesky_vjp(const MatrixXd& l, const MatrixXd& l_bar) {
  // dL = L Phi(L^{-1} dX L^{-T}), Phi = lower triangle with halved diagonal.
  MatrixXd p = l.transpose() * l_bar.triangularView<Eigen::Lower>().toDenseMatrix();
  p = p.triangularView<Eigen::Lower>().toDenseMatrix();
  p.diagonal() *= 0.5;
  // L^{-T} P L^{-1}
  MatrixXd t = l.transpose().triangularView<Eigen::Upper>().solve(p);
  t = l.transpose().triangularView<Eigen::Upper>().solve(t.transpose()).transpose();
  return symmetrize(t);
}

}  // namespace mglow
