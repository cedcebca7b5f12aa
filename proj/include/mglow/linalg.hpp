#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mglow {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kSqrt2 = 1.41421356237309504880;

// ---------------------------------------------------------------------------
// Skew-symmetric generators and the Cayley transform.
//
// A k x k skew matrix is parameterized by k(k-1)/2 reals, one per (i < j)
// pair in row-major order: A(i, j) = theta, A(j, i) = -theta.

inline int skew_param_count(int k) { return k * (k - 1) / 2; }

MatrixXd skew_from_params(const VectorXd& theta, int k);

// Gradient wrt theta of <Abar, A(theta)>.
VectorXd skew_params_grad(const MatrixXd& a_bar);

// Q = (I - A)^{-1} (I + A); Q is in SO(k) for skew A.
MatrixXd cayley(const MatrixXd& a);

// Inverse Cayley A = (Q - I)(Q + I)^{-1}; requires Q + I invertible.
MatrixXd inverse_cayley(const MatrixXd& q);

// Pullback of Qbar through the Cayley transform (A skew, Q = cayley(A)).
MatrixXd cayley_vjp(const MatrixXd& a, const MatrixXd& q, const MatrixXd& q_bar);

// ---------------------------------------------------------------------------
// Half-vectorization. Lower triangle in row-major order:
// (0,0), (1,0), (1,1), (2,0), (2,1), (2,2), ...

inline int vech_size(int n) { return n * (n + 1) / 2; }

// Lower triangle of m; off-diagonal entries are multiplied by off_scale.
VectorXd vech(const MatrixXd& m, double off_scale = 1.0);

// Symmetric matrix whose vech (with off_scale) is v.
MatrixXd unvech_sym(const VectorXd& v, int n, double off_scale = 1.0);

// Lower-triangular matrix with vech v.
MatrixXd unvech_lower(const VectorXd& v, int n);

// Adjoint of unvech_sym: maps a symmetric cotangent G to the cotangent of v.
VectorXd unvech_sym_adjoint(const MatrixXd& g, double off_scale);

// ---------------------------------------------------------------------------
// Spectral functions of symmetric matrices.

struct SymEigen {
  VectorXd values;   // ascending
  MatrixXd vectors;  // columns
};

SymEigen sym_eigen(const MatrixXd& x);

MatrixXd sym_apply(const SymEigen& e, const std::function<double(double)>& f);

MatrixXd sym_logm(const MatrixXd& x);
MatrixXd sym_expm(const MatrixXd& x);

// Daleckii-Krein first divided differences: K(i,j) = (f(l_i) - f(l_j)) / (l_i - l_j),
// f'(l_i) on coincident pairs. Gaps below 1e-8 (relative) fall back to the
// derivative at the midpoint and bump the conditioning-warning counter.
MatrixXd divided_differences(const VectorXd& lambda, const std::function<double(double)>& f,
                             const std::function<double(double)>& df);

// Pullback through F = f(X) for symmetric X: Xbar = U (K o (U^T Fbar U)) U^T.
MatrixXd sym_fn_vjp(const SymEigen& e, const MatrixXd& k, const MatrixXd& f_bar);

MatrixXd sym_logm_vjp(const MatrixXd& x, const MatrixXd& f_bar);
MatrixXd sym_expm_vjp(const MatrixXd& x, const MatrixXd& f_bar);

// Number of near-degenerate eigenvalue gaps met in divided_differences.
long conditioning_warnings();
void reset_conditioning_warnings();

// ---------------------------------------------------------------------------
// Cholesky.

// Lower factor of a symmetric positive-definite matrix; throws DomainError otherwise.
MatrixXd cholesky_lower(const MatrixXd& x);

// Pullback through L = chol(X): returns the symmetric gradient wrt X.
MatrixXd cholesky_vjp(const MatrixXd& l, const MatrixXd& l_bar);

inline MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace mglow
