#pragma once

#include <functional>

#include "mglow/linalg.hpp"

namespace mglow {

// Brute-force central-difference kernels. They only call the maps they are
// handed and share no code with the analytic derivatives they check.
struct NumericJacobianConfig {
  double step = 1e-5;
};

using VectorMap = std::function<VectorXd(const VectorXd&)>;
using ScalarMap = std::function<double(const VectorXd&)>;

MatrixXd fd_jacobian(const VectorMap& f, const VectorXd& at, const NumericJacobianConfig& cfg = {});

// log|det J| through a fully pivoted LU. Throws DegenerateError if |det| < 1e-300.
double fd_logdet(const VectorMap& f, const VectorXd& at, const NumericJacobianConfig& cfg = {});

// log|det| of a square matrix via full-pivot LU (same singularity rule).
double logabsdet(const MatrixXd& j);

// Per-coordinate central differences. Throws NumericalError on a nonfinite evaluation.
VectorXd fd_gradient(const ScalarMap& loss, const VectorXd& params, const NumericJacobianConfig& cfg = {});

}  // namespace mglow
