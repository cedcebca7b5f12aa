#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mglow/errors.hpp"
#include "mglow/eval.hpp"
#include "support.hpp"

using namespace mglow;
using namespace testing_support;

namespace {

Field rp_field(const std::vector<double>& v) {
  Field f(Manifold::positive_reals(), {static_cast<int>(v.size())}, 1);
  for (size_t i = 0; i < v.size(); ++i) f.point(static_cast<int>(i))[0] = v[i];
  return f;
}

// R+ subjects on V voxels: log value ~ N(shift on planted voxels, 1).
std::vector<Field> rp_group(Rng& rng, int count, int voxels, const std::vector<bool>& planted, double shift) {
  std::vector<Field> g;
  for (int s = 0; s < count; ++s) {
    std::vector<double> v(voxels);
    for (int i = 0; i < voxels; ++i) v[i] = std::exp(rng.normal() + (planted[i] ? shift : 0.0));
    g.push_back(rp_field(v));
  }
  return g;
}

}  // namespace

TEST_CASE("reconstruction error") {
  Rng rng(1);
  for (const Manifold& m : all_manifolds()) {
    const Field x = random_field(m, {2, 2}, 2, rng);
    const Field y = random_field(m, {2, 2}, 2, rng);
    CHECK(reconstruction_error(x, x) < 1e-7);
    CHECK(reconstruction_error(x, y) > 0.0);
    CHECK(reconstruction_error(x, y) == doctest::Approx(reconstruction_error(y, x)).epsilon(1e-12));
  }
  CHECK(reconstruction_error(rp_field({std::numbers::e}), rp_field({1.0})) == doctest::Approx(1.0).epsilon(1e-15));
  Field a(Manifold::sphere(3), {2}, 1), b(Manifold::sphere(3), {2}, 1);
  a.point(0) = VectorXd::Unit(3, 0);
  b.point(0) = VectorXd::Unit(3, 1);
  CHECK(reconstruction_error(a, b) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-14));
  CHECK_THROWS_AS(reconstruction_error(a, rp_field({1.0, 2.0})), ShapeError);
}

TEST_CASE("confusion matrix and dominance") {
  Rng rng(2);
  const Manifold m = Manifold::spd(2);
  std::vector<Field> refs;
  for (int i = 0; i < 5; ++i) refs.push_back(random_field(m, {3}, 1, rng));
  const MatrixXd c = confusion_matrix(refs, refs);
  for (int i = 0; i < 5; ++i) CHECK(c(i, i) < 1e-7);
  CHECK(dominance(c) == 1.0);
  // Permuted references: the diagonal moves to the permutation.
  const std::vector<int> perm = {2, 0, 1, 4, 3};
  std::vector<Field> shuffled;
  for (int j : perm) shuffled.push_back(refs[j]);
  const MatrixXd cp = confusion_matrix(refs, shuffled);
  CHECK(dominance(cp) == 0.0);
  MatrixXd restored(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) restored(i, perm[j]) = cp(i, j);
  CHECK(dominance(restored) == 1.0);
  CHECK(dominance((MatrixXd(2, 2) << 1, 0, 0, 1).finished()) == 0.0);
  CHECK(dominance((MatrixXd(2, 2) << 0, 1, 0, 1).finished()) == 0.5);
  CHECK_THROWS_AS(confusion_matrix(refs, {refs[0]}), ShapeError);
}

TEST_CASE("frechet means") {
  const Manifold rp = Manifold::positive_reals();
  std::vector<Ambient> pts;
  for (double v : {1.0, std::exp(2.0), std::exp(4.0)}) pts.push_back(VectorXd::Constant(1, v));
  CHECK(frechet_mean(rp, pts)[0] == doctest::Approx(std::exp(2.0)).epsilon(1e-12));

  const Manifold s = Manifold::sphere(3);
  const double t = 0.4;
  std::vector<Ambient> sp = {Eigen::Vector3d(std::cos(t), std::sin(t), 0), Eigen::Vector3d(std::cos(t), -std::sin(t), 0),
                             Eigen::Vector3d(std::cos(t), 0, std::sin(t)), Eigen::Vector3d(std::cos(t), 0, -std::sin(t))};
  CHECK((frechet_mean(s, sp) - VectorXd::Unit(3, 0)).norm() < 1e-10);

  // Commuting SPD matrices: elementwise geometric mean of the eigenvalues.
  const Manifold spd = Manifold::spd(2);
  std::vector<Ambient> mats = {Manifold::from_matrix(Eigen::Vector2d(1, 9).asDiagonal().toDenseMatrix()),
                               Manifold::from_matrix(Eigen::Vector2d(4, 1).asDiagonal().toDenseMatrix())};
  const MatrixXd mu = Manifold::as_matrix(frechet_mean(spd, mats), 2);
  CHECK(mu(0, 0) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(mu(1, 1) == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(std::abs(mu(0, 1)) < 1e-12);

  // Mean is a stationary point of the sum of squared distances.
  Rng rng(3);
  std::vector<Ambient> r;
  for (int i = 0; i < 6; ++i) r.push_back(random_point(Manifold::spd(3), rng));
  const Ambient m3 = frechet_mean(Manifold::spd(3), r);
  auto cost = [&](const Ambient& x) {
    double c = 0;
    for (const auto& p : r) c += std::pow(Manifold::spd(3).distance(x, p), 2);
    return c;
  };
  const MatrixXd mm = Manifold::as_matrix(m3, 3);
  for (int k = 0; k < 5; ++k) {
    const MatrixXd e = symmetrize(MatrixXd::Random(3, 3)) * 1e-3;
    CHECK(cost(Manifold::from_matrix(mm + e)) >= cost(m3) - 1e-10);
  }
}

TEST_CASE("permutation test") {
  Rng rng(4);
  const int v = 40;
  std::vector<bool> planted(v, false);
  for (int i = 0; i < 10; ++i) planted[i] = true;
  const std::vector<bool> none(v, false);
  const auto a = rp_group(rng, 10, v, none, 0.0);
  const auto b = rp_group(rng, 10, v, planted, 3.0);

  const auto same = permutation_test(a, a, 200, 1);
  for (double p : same) CHECK(p == 1.0);

  const auto p = permutation_test(a, b, 1000, 7);
  int hits = 0;
  std::vector<double> background;
  for (int i = 0; i < v; ++i) {
    CHECK(p[i] >= 1.0 / 1001);
    CHECK(p[i] <= 1.0);
    if (planted[i]) hits += p[i] < 0.01;
    else background.push_back(p[i]);
  }
  CHECK(hits >= 9);
  std::nth_element(background.begin(), background.begin() + background.size() / 2, background.end());
  CHECK(background[background.size() / 2] > 0.3);

  CHECK(permutation_test(b, a, 1000, 7) == p);
  CHECK(permutation_test(a, b, 1000, 7) == p);
  CHECK_THROWS_AS(permutation_test({a[0]}, b, 1000, 1), DegenerateError);
  CHECK_THROWS_AS(permutation_test(a, b, 50, 1), ValidationError);
}

TEST_CASE("permutation p-values are super-uniform under the null") {
  Rng rng(5);
  const int v = 400;
  const std::vector<bool> none(v, false);
  const auto a = rp_group(rng, 8, v, none, 0.0);
  const auto b = rp_group(rng, 8, v, none, 0.0);
  const auto p = permutation_test(a, b, 500, 3);
  for (double alpha : {0.05, 0.1}) {
    int below = 0;
    for (double x : p) below += x < alpha;
    CHECK(static_cast<double>(below) / v <= alpha + 3 * std::sqrt(alpha * (1 - alpha) / v));
  }
}

TEST_CASE("IoU and multiple comparisons") {
  const std::vector<double> p = {0.01, 0.2, 0.03, 0.5};
  CHECK(iou_significant(p, p) == 1.0);
  CHECK(iou_significant({0.01, 0.5}, {0.5, 0.01}) == 0.0);
  CHECK(iou_significant({0.5, 0.5}, {0.6, 0.9}) == 1.0);
  CHECK(iou_significant({0.01, 0.5}, {0.6, 0.9}) == 0.0);
  CHECK(iou_significant({0.01, 0.01, 0.5}, {0.01, 0.5, 0.01}) == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS(iou_significant({0.1}, {0.1, 0.2}), ShapeError);

  // Hand-evaluated BH at alpha 0.05 over 4 tests: thresholds 0.0125, 0.025, 0.0375, 0.05.
  const auto bh = benjamini_hochberg({0.01, 0.04, 0.03, 0.5}, 0.05);
  CHECK(bh == std::vector<bool>{true, false, false, false});
  const auto bh2 = benjamini_hochberg({0.01, 0.02, 0.03, 0.5}, 0.05);
  CHECK(bh2 == std::vector<bool>{true, true, true, false});
}

TEST_CASE("plots and raw matrices") {
  const std::string h = histogram_svg({0.1, 0.2, 0.2, 0.9}, 4, "errors <a>");
  CHECK(h.find("<svg") == 0);
  CHECK(h.find("errors &lt;a&gt;") != std::string::npos);
  const std::string m = heatmap_svg(MatrixXd::Identity(3, 3), "confusion");
  CHECK(m.find("<rect") != std::string::npos);
  CHECK(encode_matrix(MatrixXd::Ones(2, 3)).size() == 8 + 6 * 8);
}
