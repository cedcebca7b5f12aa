#include <cmath>

#include "doctest.h"
#include "mglow/errors.hpp"
#include "mglow/linalg.hpp"
#include "mglow/oracle.hpp"
#include "support.hpp"

using namespace mglow;
using namespace testing_support;

namespace {

MatrixXd random_sym(Rng& rng, int n) {
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
  return symmetrize(a);
}

VectorXd flat(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

}  // namespace

TEST_CASE("cayley transform yields rotations and inverts") {
  Rng rng(1);
  for (int k : {2, 3, 5}) {
    const MatrixXd a = skew_from_params(normal_vector(rng, skew_param_count(k)), k);
    const MatrixXd q = cayley(a);
    CHECK((q.transpose() * q - MatrixXd::Identity(k, k)).norm() < 1e-12);
    CHECK(std::abs(q.determinant() - 1.0) < 1e-12);
    CHECK((inverse_cayley(q) - a).norm() < 1e-10);
  }
  MatrixXd flip = -MatrixXd::Identity(2, 2);
  CHECK_NOTHROW(inverse_cayley(MatrixXd::Identity(2, 2)));
  CHECK_THROWS_AS(inverse_cayley(flip), DomainError);
}

TEST_CASE("vech layouts") {
  MatrixXd m(3, 3);
  m << 1, 2, 4, 2, 3, 5, 4, 5, 6;
  const VectorXd v = vech(m);
  CHECK(v.isApprox((VectorXd(6) << 1, 2, 3, 4, 5, 6).finished()));
  CHECK(unvech_sym(vech(m, kSqrt2), 3, kSqrt2).isApprox(m));
  CHECK(std::abs(vech(m, kSqrt2).squaredNorm() - m.squaredNorm()) < 1e-12);
}

TEST_CASE("derivative kernels match finite differences") {
  Rng rng(2);
  for (int k : {2, 3, 4}) {
    const VectorXd th = normal_vector(rng, skew_param_count(k));
    const MatrixXd qbar = MatrixXd::Random(k, k);
    auto loss = [&](const VectorXd& t) { return (cayley(skew_from_params(t, k)).array() * qbar.array()).sum(); };
    const MatrixXd a = skew_from_params(th, k);
    const VectorXd g = skew_params_grad(cayley_vjp(a, cayley(a), qbar));
    CHECK((g - fd_gradient(loss, th)).norm() < 1e-7);
  }
  for (int n : {2, 3}) {
    const MatrixXd x = random_sym(rng, n) * 0.5 + 2.0 * MatrixXd::Identity(n, n);
    const MatrixXd fbar = random_sym(rng, n);
    auto log_loss = [&](const VectorXd& v) {
      return (sym_logm(Eigen::Map<const MatrixXd>(v.data(), n, n)).array() * fbar.array()).sum();
    };
    auto exp_loss = [&](const VectorXd& v) {
      return (sym_expm(Eigen::Map<const MatrixXd>(v.data(), n, n)).array() * fbar.array()).sum();
    };
    CHECK((flat(sym_logm_vjp(x, fbar)) - fd_gradient(log_loss, flat(x))).norm() < 1e-6);
    CHECK((flat(sym_expm_vjp(x, fbar)) - fd_gradient(exp_loss, flat(x))).norm() < 1e-5);

    const MatrixXd l = cholesky_lower(x);
    const MatrixXd lbar = MatrixXd(random_sym(rng, n).triangularView<Eigen::Lower>());
    auto chol_loss = [&](const VectorXd& v) {
      return (cholesky_lower(Eigen::Map<const MatrixXd>(v.data(), n, n)).array() * lbar.array()).sum();
    };
    CHECK((flat(cholesky_vjp(l, lbar)) - fd_gradient(chol_loss, flat(x))).norm() < 1e-6);
  }
}

TEST_CASE("matrix log and exp are inverse and flag degenerate gaps") {
  Rng rng(3);
  const MatrixXd s = random_sym(rng, 3);
  CHECK((sym_logm(sym_expm(s)) - s).norm() < 1e-12);
  CHECK_THROWS_AS(sym_logm(-MatrixXd::Identity(2, 2)), DomainError);
  reset_conditioning_warnings();
  sym_logm_vjp(MatrixXd::Identity(3, 3), MatrixXd::Identity(3, 3));
  CHECK(conditioning_warnings() > 0);
}

TEST_CASE("portable RNG") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng c(1);
  double m = 0, s = 0;
  for (int i = 0; i < 20000; ++i) {
    const double x = c.normal();
    m += x;
    s += x * x;
  }
  CHECK(std::abs(m / 20000) < 0.03);
  CHECK(std::abs(s / 20000 - 1.0) < 0.05);
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}
