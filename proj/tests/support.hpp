#pragma once

#include <numbers>
#include <vector>

#include "mglow/field.hpp"
#include "mglow/geometry.hpp"
#include "mglow/rng.hpp"

namespace testing_support {

using namespace mglow;

inline VectorXd normal_vector(Rng& rng, int n, double sd = 1.0) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = sd * rng.normal();
  return v;
}

inline MatrixXd random_rotation(Rng& rng, int k) {
  const MatrixXd a = skew_from_params(normal_vector(rng, skew_param_count(k)), k);
  return cayley(a);
}

// A random point, kept well inside the chart domain for pole-log charts.
inline Ambient random_point(const Manifold& m, Rng& rng) {
  switch (m.kind()) {
    case ManifoldKind::Sphere: {
      for (;;) {
        VectorXd v = normal_vector(rng, m.n());
        v /= v.norm();
        if (v.dot(m.pole()) > -0.9) return v;
      }
    }
    case ManifoldKind::PositiveReals: {
      Ambient x(1);
      x[0] = std::exp(rng.normal());
      return x;
    }
    case ManifoldKind::Spd: {
      MatrixXd a(m.n(), m.n());
      for (int i = 0; i < m.n(); ++i)
        for (int j = 0; j < m.n(); ++j) a(i, j) = rng.normal();
      MatrixXd x = a * a.transpose() / m.n() + 0.2 * MatrixXd::Identity(m.n(), m.n());
      return Manifold::from_matrix(symmetrize(x));
    }
  }
  return {};
}

inline Field random_field(const Manifold& m, const Extents& ext, int channels, Rng& rng) {
  Field f(m, ext, channels);
  for (int p = 0; p < f.points(); ++p) f.point(p) = random_point(m, rng);
  return f;
}

inline GroupElement random_group(const Manifold& m, Rng& rng, double sd = 0.7) {
  return group_from_params(m, normal_vector(rng, m.group_dim(), sd));
}

inline std::vector<Manifold> all_manifolds() {
  return {Manifold::sphere(3), Manifold::sphere(12), Manifold::positive_reals(), Manifold::spd(2),
          Manifold::spd(3), Manifold::spd(2, ChartKind::Cholesky), Manifold::spd(3, ChartKind::Cholesky)};
}

// Largest per-point geodesic distance between two fields.
inline double max_distance(const Field& a, const Field& b) {
  double worst = 0.0;
  for (int p = 0; p < a.points(); ++p) worst = std::max(worst, a.manifold().distance(a.point(p), b.point(p)));
  return worst;
}

}  // namespace testing_support

#include "mglow/layers.hpp"
#include "mglow/oracle.hpp"

namespace testing_support {

inline void randomize(Network& net, Rng& rng, double sd) {
  net.visit("n", [&](const std::string&, MatrixXd& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = sd * rng.normal();
  });
}

inline void randomize(Coupling& c, Rng& rng, double sd) {
  for (auto& n : c.nets) randomize(n, rng, sd);
}

inline void randomize(Actnorm& a, Rng& rng, double sd) {
  for (Eigen::Index i = 0; i < a.log_scale.size(); ++i) a.log_scale.data()[i] = sd * rng.normal();
  for (Eigen::Index i = 0; i < a.shift.size(); ++i) a.shift.data()[i] = sd * rng.normal();
}

inline void randomize(Conv1x1& c, Rng& rng, double sd) {
  for (Eigen::Index i = 0; i < c.generator.size(); ++i) c.generator.data()[i] = sd * rng.normal();
}

// Chart coordinates of a random field, scaled toward the chart center so
// sphere points stay well inside the injectivity ball after a layer.
inline CoordField random_coords(const Manifold& m, const Extents& ext, int channels, Rng& rng, double shrink = 1.0) {
  CoordField c = to_coords(random_field(m, ext, channels, rng));
  if (m.kind() == ManifoldKind::Sphere) c.data *= shrink;
  return c;
}

// log|det| of a coordinate-field map by central differences over all coordinates.
template <class F>
double fd_field_logdet(F&& forward, const CoordField& x) {
  auto f = [&](const VectorXd& v) {
    CoordField c = x;
    c.data = v;
    return forward(c).data;
  };
  return fd_logdet(f, x.data);
}

}  // namespace testing_support
