#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mglow/errors.hpp"
#include "mglow/geometry.hpp"
#include "mglow/oracle.hpp"
#include "support.hpp"

using namespace mglow;
using namespace testing_support;

namespace {

constexpr double kPi = std::numbers::pi;

Ambient scalar(double v) { return Ambient::Constant(1, v); }

// ||logm(X^{-1} Y)||_F from a general (non-symmetric) eigensolver.
double spd_distance_oracle(const MatrixXd& x, const MatrixXd& y) {
  Eigen::EigenSolver<MatrixXd> es(x.inverse() * y);
  double s = 0.0;
  for (int i = 0; i < x.rows(); ++i) s += std::pow(std::log(std::abs(es.eigenvalues()[i].real())), 2);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("manifold construction enforces kind and chart invariants") {
  CHECK_THROWS_AS(Manifold::sphere(1), ValidationError);
  CHECK_THROWS_AS(Manifold::spd(1), ValidationError);
  CHECK_THROWS_AS(Manifold::spd(3, ChartKind::PoleLog), ValidationError);
  CHECK_THROWS_AS(Manifold::make(ManifoldKind::Sphere, 3, ChartKind::Cholesky), ValidationError);
  CHECK(Manifold::sphere(12).dim() == 11);
  CHECK(Manifold::spd(3).dim() == 6);
  CHECK(Manifold::positive_reals().dim() == 1);
}

TEST_CASE("distance examples") {
  const Manifold rp = Manifold::positive_reals();
  CHECK(rp.distance(scalar(2), scalar(2)) == 0.0);

  const Manifold s3 = Manifold::sphere(3);
  CHECK(s3.distance(VectorXd::Unit(3, 0), VectorXd::Unit(3, 1)) == doctest::Approx(kPi / 2).epsilon(1e-14));

  const Manifold spd2 = Manifold::spd(2);
  const MatrixXd i2 = MatrixXd::Identity(2, 2);
  const double oracle = spd_distance_oracle(i2, 4 * i2);
  CHECK(oracle == doctest::Approx(1.96052).epsilon(1e-5));
  CHECK(spd2.distance(Manifold::from_matrix(i2), Manifold::from_matrix(4 * i2)) ==
        doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("SPD distance agrees with the eigen oracle on random pairs") {
  Rng rng(7);
  for (int n : {2, 3}) {
    const Manifold m = Manifold::spd(n);
    for (int t = 0; t < 50; ++t) {
      const Ambient x = random_point(m, rng), y = random_point(m, rng);
      CHECK(m.distance(x, y) ==
            doctest::Approx(spd_distance_oracle(Manifold::as_matrix(x, n), Manifold::as_matrix(y, n))).epsilon(1e-9));
    }
  }
}

TEST_CASE("invalid points are rejected") {
  CHECK_THROWS_AS(Manifold::positive_reals().validate(scalar(-1)), InvalidPointError);
  CHECK_THROWS_AS(Manifold::sphere(3).validate(VectorXd::Constant(3, 1.0)), InvalidPointError);
  MatrixXd a(2, 2);
  a << 1, 0.5, 0.4, 1;
  CHECK_THROWS_AS(Manifold::spd(2).validate(Manifold::from_matrix(a)), InvalidPointError);
  MatrixXd b(2, 2);
  b << 1, 0, 0, -1;
  CHECK_THROWS_AS(Manifold::spd(2).validate(Manifold::from_matrix(b)), InvalidPointError);
  CHECK_THROWS_AS(Manifold::sphere(3).validate(VectorXd::Unit(2, 0)), InvalidPointError);
}

TEST_CASE("chart examples") {
  const Manifold rp = Manifold::positive_reals();
  CHECK(rp.chart_forward(scalar(std::exp(1.0)))[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rp.chart_inverse(VectorXd::Zero(1))[0] == 1.0);

  for (int n : {3, 12}) {
    const Manifold s = Manifold::sphere(n);
    CHECK(s.chart_forward(s.pole()).norm() == 0.0);
    CHECK((s.chart_inverse(VectorXd::Zero(n - 1)) - s.pole()).norm() == 0.0);
  }

  const Manifold chol = Manifold::spd(2, ChartKind::Cholesky);
  const VectorXd v = chol.chart_forward(Manifold::from_matrix(MatrixXd::Identity(2, 2)));
  CHECK(v.isApprox(Eigen::Vector3d(1, 0, 1)));
  CHECK(chol.chart_inverse(Eigen::Vector3d(1, 0, 1)).isApprox(Manifold::from_matrix(MatrixXd::Identity(2, 2))));
}

TEST_CASE("sphere chart uses the series limit near the pole") {
  const Manifold s = Manifold::sphere(4);
  VectorXd v(3);
  v << 1e-12, -2e-12, 5e-13;
  const Ambient x = s.chart_inverse(v);
  CHECK(std::abs(x.norm() - 1.0) < 1e-15);
  CHECK((s.chart_forward(x) - v).norm() < 1e-20);
}

TEST_CASE("chart round trips on 1000 random points per manifold") {
  Rng rng(11);
  for (const Manifold& m : all_manifolds()) {
    double worst_x = 0.0, worst_v = 0.0;
    for (int t = 0; t < 1000; ++t) {
      const Ambient x = random_point(m, rng);
      const Coords v = m.chart_forward(x);
      worst_x = std::max(worst_x, (m.chart_inverse(v) - x).norm());
      worst_v = std::max(worst_v, (m.chart_forward(m.chart_inverse(v)) - v).norm());
    }
    INFO(m.name());
    CHECK(worst_x < 1e-8);
    CHECK(worst_v < 1e-8);
  }
}

TEST_CASE("pole-log chart domain") {
  const Manifold s = Manifold::sphere(3);
  CHECK_THROWS_AS(s.chart_forward(-s.pole()), ChartDomainError);
  VectorXd near_antipode = -s.pole() + 1e-4 * s.tangent_basis().col(0);
  near_antipode /= near_antipode.norm();
  CHECK_THROWS_AS(s.chart_forward(near_antipode), ChartDomainError);
  CHECK_THROWS_AS(s.chart_inverse(Eigen::Vector2d(kPi, 0.0)), DomainError);
  CHECK_THROWS_AS(s.check_chart_domain(Eigen::Vector2d(kPi - 1e-4, 0.0), 5), ChartDomainError);
  try {
    s.check_chart_domain(Eigen::Vector2d(3.2, 0.0), 7);
  } catch (const ChartDomainError& e) {
    CHECK(e.layer() == 7);
  }
}

TEST_CASE("tangent basis is orthonormal and orthogonal to the pole") {
  Rng rng(3);
  for (int n : {2, 3, 12}) {
    VectorXd p = normal_vector(rng, n);
    const Manifold s = Manifold::sphere(p);
    const MatrixXd& b = s.tangent_basis();
    CHECK((b.transpose() * b - MatrixXd::Identity(n - 1, n - 1)).norm() < 1e-12);
    CHECK((b.transpose() * s.pole()).norm() < 1e-12);
  }
}

TEST_CASE("metric axioms on random samples") {
  Rng rng(5);
  for (const Manifold& m : all_manifolds()) {
    for (int t = 0; t < 200; ++t) {
      const Ambient x = random_point(m, rng), y = random_point(m, rng), z = random_point(m, rng);
      CHECK(m.distance(x, y) == m.distance(y, x));
      CHECK(m.distance(x, z) <= m.distance(x, y) + m.distance(y, z) + 1e-10);
      CHECK(m.distance(x, x) < 1e-7);
    }
  }
}

TEST_CASE("group actions are isometries and invert exactly") {
  Rng rng(17);
  for (const Manifold& m : all_manifolds()) {
    double worst_iso = 0.0, worst_inv = 0.0;
    for (int t = 0; t < 100; ++t) {
      const GroupElement g = random_group(m, rng);
      const Ambient x = random_point(m, rng), y = random_point(m, rng);
      const Ambient gx = group_apply(m, g, x), gy = group_apply(m, g, y);
      CHECK(m.is_valid(gx));
      worst_iso = std::max(worst_iso, std::abs(m.distance(gx, gy) - m.distance(x, y)));
      worst_inv = std::max(worst_inv, (group_apply(m, group_inverse(g), gx) - x).norm());
    }
    INFO(m.name());
    CHECK(worst_iso < 1e-10);
    CHECK(worst_inv < 1e-10);
  }
}

TEST_CASE("group examples") {
  const Manifold rp = Manifold::positive_reals();
  GroupElement g = GroupElement::identity(rp);
  g.scalar = 2.0;
  CHECK(group_apply(rp, g, scalar(3))[0] == 6.0);
  g.scalar = 4.0;
  CHECK(group_inverse(g).scalar == 0.25);
  Rng rng(2);
  for (const Manifold& m : all_manifolds()) {
    const Ambient x = random_point(m, rng);
    CHECK((group_apply(m, GroupElement::identity(m), x) - x).norm() < 1e-14);
  }
  const Manifold s = Manifold::sphere(4);
  const GroupElement r = random_group(s, rng);
  CHECK(group_inverse(r).rotation == r.rotation.transpose());
  GroupElement bad = r;
  bad.rotation(0, 0) += 1e-3;
  CHECK_THROWS_AS(validate_group_element(s, bad), InvalidPointError);
}

TEST_CASE("act_coords is the group action read through the chart") {
  Rng rng(23);
  for (const Manifold& m : all_manifolds()) {
    for (int t = 0; t < 20; ++t) {
      const GroupElement g = random_group(m, rng, 0.3);
      const Ambient x = random_point(m, rng);
      const Coords u = m.chart_forward(x);
      Coords expect;
      try {
        expect = m.chart_forward(group_apply(m, g, x));
      } catch (const ChartDomainError&) {
        continue;
      }
      CHECK((act_coords(m, g, u) - expect).norm() < 1e-9);
      CHECK((act_coords_inverse(m, g, act_coords(m, g, u)) - u).norm() < 1e-9);
    }
  }
}

TEST_CASE("chart Jacobian of the group action") {
  Rng rng(29);
  for (const Manifold& m : all_manifolds()) {
    for (int t = 0; t < 10; ++t) {
      const GroupElement g = random_group(m, rng, 0.3);
      const Coords u = m.chart_forward(random_point(m, rng));
      auto f = [&](const VectorXd& v) { return m.chart_forward(group_apply(m, g, m.chart_inverse(v))); };
      const double fd = fd_logdet(f, u);
      double analytic = 0.0;
      act_coords(m, g, u, &analytic);
      INFO(m.name());
      if (m.chart() != ChartKind::Cholesky) {
        CHECK(std::abs(fd) < 1e-5);
        CHECK(analytic == 0.0);
      } else {
        CHECK(std::abs(fd - analytic) < 1e-6);
      }
    }
  }
}

TEST_CASE("chart transition log-determinants") {
  Rng rng(31);
  for (const Manifold& m : all_manifolds()) CHECK(chart_transition_logdet(m, m, random_point(m, rng)) == 0.0);

  const Manifold chol = Manifold::spd(2, ChartKind::Cholesky), mlog = Manifold::spd(2);
  const Ambient eye = Manifold::from_matrix(MatrixXd::Identity(2, 2));
  auto transition = [&](const VectorXd& v) { return mlog.chart_forward(chol.chart_inverse(v)); };
  const double v_star = fd_logdet(transition, chol.chart_forward(eye));
  CHECK(chart_transition_logdet(chol, mlog, eye) == doctest::Approx(v_star).epsilon(1e-8));
  CHECK(chart_transition_logdet(mlog, chol, eye) == doctest::Approx(-v_star).epsilon(1e-8));

  for (int n : {2, 3}) {
    const Manifold c = Manifold::spd(n, ChartKind::Cholesky), l = Manifold::spd(n);
    for (int t = 0; t < 10; ++t) {
      const Ambient x = random_point(c, rng);
      auto tr = [&](const VectorXd& v) { return l.chart_forward(c.chart_inverse(v)); };
      CHECK(std::abs(chart_transition_logdet(c, l, x) - fd_logdet(tr, c.chart_forward(x))) < 1e-5);
    }
  }

  // Sphere(3), two poles, a point equidistant from both.
  const Eigen::Vector3d p1(1, 0, 0), p2(0, 1, 0);
  const Manifold s1 = Manifold::sphere(p1), s2 = Manifold::sphere(p2);
  Eigen::Vector3d at(1, 1, 0.7);
  at.normalize();
  auto sph = [&](const VectorXd& v) { return s2.chart_forward(s1.chart_inverse(v)); };
  const double fd = fd_logdet(sph, s1.chart_forward(at));
  CHECK(std::abs(chart_transition_logdet(s1, s2, at) - fd) < 1e-4);
  CHECK(std::abs(chart_transition_logdet(s1, s2, at)) < 1e-9);  // equidistant: the two sinc terms cancel

  const Eigen::Vector3d off(0.9, 0.2, 0.3);
  auto sph2 = [&](const VectorXd& v) { return s2.chart_forward(s1.chart_inverse(v)); };
  const Ambient x = off.normalized();
  CHECK(std::abs(chart_transition_logdet(s1, s2, x) - fd_logdet(sph2, s1.chart_forward(x))) < 1e-6);
  CHECK_THROWS_AS(chart_transition_logdet(s1, s2, -p2), DomainError);
}

TEST_CASE("gaussian log-density") {
  const Manifold rp = Manifold::positive_reals();
  const ManifoldGaussian g(rp, scalar(1.0), MatrixXd::Identity(1, 1));
  CHECK(gaussian_logpdf(g, scalar(1.0)) == doctest::Approx(-0.5 * std::log(2 * kPi)).epsilon(1e-15));

  // Composite Simpson over t in [-8, 8].
  const int n = 4000;
  const double a = -8.0, h = 16.0 / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = a + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    s += w * std::exp(gaussian_logpdf(g, rp.chart_inverse(VectorXd::Constant(1, t))));
  }
  CHECK(std::abs(s * h / 3.0 - 1.0) < 1e-6);

  // m = 2 on Sphere(3) with a correlated covariance, integrated over the chart.
  const Manifold s3 = Manifold::sphere(3);
  MatrixXd cov(2, 2);
  cov << 0.08, 0.02, 0.02, 0.05;
  const Ambient mean = s3.chart_inverse(Eigen::Vector2d(0.2, -0.1));
  const ManifoldGaussian g2(s3, mean, cov);
  const int k = 400;
  const double lo = -2.5, step = 5.0 / k;
  double total = 0.0;
  for (int i = 0; i <= k; ++i)
    for (int j = 0; j <= k; ++j) {
      const double wi = (i == 0 || i == k) ? 1 : (i % 2 ? 4 : 2);
      const double wj = (j == 0 || j == k) ? 1 : (j % 2 ? 4 : 2);
      const Eigen::Vector2d v(lo + i * step, lo + j * step);
      if (!s3.in_chart_domain(v)) continue;  // density there is below 1e-40
      total += wi * wj * std::exp(gaussian_logpdf(g2, s3.chart_inverse(v)));
    }
  CHECK(std::abs(total * step * step / 9.0 - 1.0) < 1e-6);

  // Even in the offset from the mean.
  const ManifoldGaussian g3(s3, mean, MatrixXd::Identity(2, 2));
  const Eigen::Vector2d mc(0.2, -0.1), u(0.3, 0.4);
  CHECK(gaussian_logpdf(g3, s3.chart_inverse(mc + u)) ==
        doctest::Approx(gaussian_logpdf(g3, s3.chart_inverse(mc - u))).epsilon(1e-12));

  CHECK_THROWS_AS(ManifoldGaussian(Manifold::spd(3), Manifold::from_matrix(MatrixXd::Identity(3, 3)),
                                   1e-6 * MatrixXd::Identity(6, 6)),
                  DegenerateError);
}

TEST_CASE("gaussian sampling") {
  Rng rng(99);
  const Manifold rp = Manifold::positive_reals();
  const ManifoldGaussian g(rp, scalar(1.0), MatrixXd::Identity(1, 1));
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) mean += rp.chart_forward(gaussian_sample(g, rng))[0];
  CHECK(std::abs(mean / 10000) < 0.05);

  const Manifold s3 = Manifold::sphere(3);
  const Ambient m = s3.chart_inverse(Eigen::Vector2d(0.5, 0.1));
  const ManifoldGaussian tight(s3, m, 1e-12 * MatrixXd::Identity(2, 2));
  CHECK((gaussian_sample(tight, rng) - m).norm() < 1e-5);

  const Manifold s12 = Manifold::sphere(12);
  const ManifoldGaussian wide(s12, s12.pole(), MatrixXd::Identity(11, 11));
  for (int i = 0; i < 200; ++i) {
    const Ambient x = gaussian_sample(wide, rng);
    CHECK(std::abs(x.norm() - 1.0) < 1e-10);
  }

  const ManifoldGaussian hopeless(s3, s3.pole(), 1e8 * MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(gaussian_sample(hopeless, rng), RejectionExhaustedError);

  Rng a(5), b(5);
  CHECK(gaussian_sample(wide, a) == gaussian_sample(wide, b));
}

TEST_CASE("chart map pullbacks match finite differences") {
  Rng rng(41);
  for (const Manifold& m : all_manifolds()) {
    for (int t = 0; t < 10; ++t) {
      const Ambient x = random_point(m, rng);
      const Coords v = m.chart_forward(x);
      const MatrixXd j_inv = fd_jacobian([&](const VectorXd& c) { return m.chart_inverse(c); }, v);

      // chart_inverse_vjp = J^T xbar
      VectorXd x_bar = normal_vector(rng, m.ambient_size());
      if (m.kind() == ManifoldKind::Spd) x_bar = Manifold::from_matrix(symmetrize(Manifold::as_matrix(x_bar, m.n())));
      INFO(m.name());
      CHECK((m.chart_inverse_vjp(v, x_bar) - j_inv.transpose() * x_bar).norm() < 1e-6 * (1 + x_bar.norm()));

      // Phi o Phi^{-1} = id, so J_inv^T (forward pullback of vbar) = vbar.
      const VectorXd v_bar = normal_vector(rng, m.dim());
      CHECK((j_inv.transpose() * m.chart_forward_vjp(x, v_bar) - v_bar).norm() < 1e-6 * (1 + v_bar.norm()));
    }
  }
}

TEST_CASE("act_coords pullback matches finite differences") {
  Rng rng(43);
  for (const Manifold& m : all_manifolds()) {
    for (int t = 0; t < 5; ++t) {
      const VectorXd theta = normal_vector(rng, m.group_dim(), 0.4);
      const Coords u = m.chart_forward(random_point(m, rng));
      const VectorXd y_bar = normal_vector(rng, m.dim());
      const double ld_bar = 0.7;
      auto loss = [&](const VectorXd& z) {
        const VectorXd uu = z.head(m.dim()), th = z.tail(m.group_dim());
        double ld = 0.0;
        const Coords y = act_coords(m, group_from_params(m, th), uu, &ld);
        return y.dot(y_bar) + ld_bar * ld;
      };
      VectorXd z(m.dim() + m.group_dim());
      z << u, theta;
      const VectorXd fd = fd_gradient(loss, z);
      Coords u_bar = Coords::Zero(m.dim());
      VectorXd p_bar = VectorXd::Zero(m.group_dim());
      act_coords_vjp(m, group_from_params(m, theta), u, y_bar, ld_bar, u_bar, p_bar);
      INFO(m.name());
      CHECK((u_bar - fd.head(m.dim())).norm() < 1e-6);
      CHECK((p_bar - fd.tail(m.group_dim())).norm() < 1e-6);
    }
  }
}
