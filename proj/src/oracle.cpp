#include "mglow/oracle.hpp"

#include <cmath>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

void check_step(const NumericJacobianConfig& cfg) {
  if (!(cfg.step >= 1e-9 && cfg.step <= 1e-2)) throw ValidationError("finite-difference step must lie in [1e-9, 1e-2]");
}

}  // namespace

MatrixXd fd_jacobian(const VectorMap& f, const VectorXd& at, const NumericJacobianConfig& cfg) {
  check_step(cfg);
  const double h = cfg.step;
  MatrixXd j;
  VectorXd x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    x[i] = at[i] + h;
    const VectorXd fp = f(x);
    x[i] = at[i] - h;
    const VectorXd fm = f(x);
    x[i] = at[i];
    if (j.size() == 0) j.resize(fp.size(), at.size());
    j.col(i) = (fp - fm) / (2.0 * h);
  }
  if (!j.allFinite()) throw NumericalError("finite-difference Jacobian is not finite");
  return j;
}

double logabsdet(const MatrixXd& j) {
  if (j.rows() != j.cols()) throw ShapeError("log-det needs a square Jacobian");
  Eigen::FullPivLU<MatrixXd> lu(j);
  double s = 0.0;
  for (Eigen::Index i = 0; i < j.rows(); ++i) {
    const double u = std::abs(lu.matrixLU()(i, i));
    if (u == 0.0) throw DegenerateError("singular Jacobian");
    s += std::log(u);
  }
  if (s < std::log(1e-300)) throw DegenerateError("singular Jacobian (|det| < 1e-300)");
  return s;
}

double fd_logdet(const VectorMap& f, const VectorXd& at, const NumericJacobianConfig& cfg) {
  return logabsdet(fd_jacobian(f, at, cfg));
}

VectorXd fd_gradient(const ScalarMap& loss, const VectorXd& params, const NumericJacobianConfig& cfg) {
  check_step(cfg);
  const double h = cfg.step;
  VectorXd g(params.size());
  VectorXd p = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    p[i] = params[i] + h;
    const double lp = loss(p);
    p[i] = params[i] - h;
    const double lm = loss(p);
    p[i] = params[i];
    if (!std::isfinite(lp) || !std::isfinite(lm)) throw NumericalError("nonfinite loss during finite differences");
    g[i] = (lp - lm) / (2.0 * h);
  }
  return g;
}

}  // namespace mglow
