#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mglow/errors.hpp"
#include "mglow/layers.hpp"
#include "mglow/oracle.hpp"
#include "support.hpp"

using namespace mglow;
using namespace testing_support;

namespace {

template <class L>
VectorXd layer_params(const L& l) {
  std::vector<double> v;
  l.visit_const("l", [&](const std::string&, const MatrixXd& t) { v.insert(v.end(), t.data(), t.data() + t.size()); });
  return Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class L>
void set_layer_params(L& l, const VectorXd& p) {
  Eigen::Index off = 0;
  l.visit("l", [&](const std::string&, MatrixXd& t) {
    t = Eigen::Map<const MatrixXd>(p.data() + off, t.rows(), t.cols());
    off += t.size();
  });
}

bool fd_close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= std::max(1e-4, 1e-4 * std::abs(numeric));
}

// Checks log-det against finite differences, the inverse round trip, and the
// backward pass (input and parameter gradients) of a scalar probe loss.
template <class L>
void check_layer(const L& layer, const CoordField& x, Rng& rng) {
  double ld = 0.0;
  const CoordField y = layer.forward(x, ld);
  const double fd = fd_field_logdet(
      [&](const CoordField& c) {
        double d = 0.0;
        return layer.forward(c, d);
      },
      x);
  CHECK(fd_close(ld, fd));
  const CoordField back = layer.inverse(y);
  CHECK((back.data - x.data).cwiseAbs().maxCoeff() < 1e-9);

  const VectorXd w = normal_vector(rng, static_cast<int>(y.data.size()));
  const double a = 0.7;
  auto loss_x = [&](const VectorXd& v) {
    CoordField c = x;
    c.data = v;
    double d = 0.0;
    const CoordField out = layer.forward(c, d);
    return w.dot(out.data) + a * d;
  };
  CoordField y_bar = y;
  y_bar.data = w;
  L grad = layer.zeros_like();
  const CoordField x_bar = layer.backward(x, y_bar, a, grad);
  const VectorXd fdx = fd_gradient(loss_x, x.data);
  CHECK((x_bar.data - fdx).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, fdx.cwiseAbs().maxCoeff()));

  const VectorXd theta = layer_params(layer);
  auto loss_p = [&](const VectorXd& p) {
    L l2 = layer;
    set_layer_params(l2, p);
    double d = 0.0;
    const CoordField out = l2.forward(x, d);
    return w.dot(out.data) + a * d;
  };
  if (theta.size() > 0) {
    const VectorXd fdp = fd_gradient(loss_p, theta);
    const VectorXd gp = layer_params(grad);
    CHECK((gp - fdp).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, fdp.cwiseAbs().maxCoeff()));
  }
}

const std::vector<std::pair<Extents, int>> kShapes = {{{1}, 1}, {{2, 2}, 2}, {{2, 2, 2}, 4}, {{2, 1}, 3}};

}  // namespace

TEST_CASE("actnorm worked example on R+") {
  const Manifold rp = Manifold::positive_reals();
  Actnorm a(rp, 1, 1, false);
  a.log_scale(0, 0) = std::log(2.0);
  a.shift(0, 0) = std::log(3.0);
  Field x(rp, {1}, 1);
  x.point(0)[0] = std::numbers::e;
  auto [y, ld] = actnorm_forward(a, x);
  CHECK(y.point(0)[0] == doctest::Approx(3.0 * std::exp(2.0)).epsilon(1e-13));
  CHECK(ld == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(actnorm_inverse(a, y).point(0)[0] == doctest::Approx(std::numbers::e).epsilon(1e-13));

  Actnorm id(rp, 1, 1, false);
  auto [yi, ldi] = actnorm_forward(id, x);
  CHECK(yi.point(0)[0] == x.point(0)[0]);
  CHECK(ldi == 0.0);
}

TEST_CASE("actnorm initialization") {
  const Manifold rp = Manifold::positive_reals();
  std::vector<Field> batch;
  for (double v : {-1.0, 1.0, 3.0}) {
    Field f(rp, {1}, 1);
    f.point(0)[0] = std::exp(v);
    batch.push_back(f);
  }
  const Actnorm a = actnorm_init(batch);
  // Oracle: standardized log values have zero mean and unit population std.
  double mean = 0.0, sq = 0.0;
  for (const Field& f : batch) {
    const double v = std::log(actnorm_forward(a, f).first.point(0)[0]);
    mean += v / 3;
    sq += v * v / 3;
  }
  CHECK(std::abs(mean) < 1e-12);
  CHECK(sq - mean * mean == doctest::Approx(1.0).epsilon(1e-12));

  // Already standardized batch: scale 1, shift identity.
  std::vector<Field> std_batch;
  for (double v : {-std::sqrt(1.5), 0.0, std::sqrt(1.5)}) {
    Field f(rp, {1}, 1);
    f.point(0)[0] = std::exp(v);
    std_batch.push_back(f);
  }
  const Actnorm b = actnorm_init(std_batch);
  CHECK(std::abs(b.log_scale(0, 0)) < 1e-12);
  CHECK(std::abs(b.shift(0, 0)) < 1e-12);

  std::vector<Field> constant(3, batch[0]);
  CHECK_THROWS_AS(actnorm_init(constant), DegenerateError);

  // Sphere: RMS of the initialized coordinates equals sigma0.
  Rng rng(5);
  const Manifold s = Manifold::sphere(4);
  std::vector<Field> sb;
  for (int i = 0; i < 8; ++i) sb.push_back(random_field(s, {2}, 2, rng));
  const Actnorm c = actnorm_init(sb, false, 0.5);
  for (int ch = 0; ch < 2; ++ch) {
    double ss = 0.0;
    int count = 0;
    for (const Field& f : sb) {
      const Field y = actnorm_forward(c, f).first;
      for (int l = 0; l < 2; ++l) {
        ss += s.chart_forward(y.get(l, ch)).squaredNorm();
        count += 3;
      }
    }
    CHECK(std::sqrt(ss / count) == doctest::Approx(0.5).epsilon(1e-10));
  }
}

TEST_CASE("actnorm log-det, inverse and gradients") {
  Rng rng(6);
  for (const Manifold& m : all_manifolds()) {
    for (const auto& [ext, ch] : kShapes) {
      for (bool per_loc : {false, true}) {
        Actnorm a(m, ch, static_cast<int>(volume(ext)), per_loc);
        randomize(a, rng, 0.3);
        check_layer(a, random_coords(m, ext, ch, rng, 0.4), rng);
      }
    }
  }
}

TEST_CASE("actnorm log-scale clamp") {
  const Manifold rp = Manifold::positive_reals();
  Actnorm a(rp, 1, 1, false);
  a.log_scale(0, 0) = 40.0;
  CoordField x({1}, 1, 1);
  x.data[0] = 1e-5;
  double ld = 0.0;
  a.forward(x, ld);
  CHECK(ld == doctest::Approx(Actnorm::kMaxLogScale));
}

TEST_CASE("conv1x1 worked examples") {
  const Manifold rp = Manifold::positive_reals();
  Field x(rp, {1}, 2);
  x.point(0)[0] = std::exp(1.0);
  x.point(1)[0] = std::exp(2.0);
  const Conv1x1 id(rp, 2);
  CHECK(conv1x1_forward(id, x).first.data() == x.data());
  const Conv1x1 rot = Conv1x1::from_rotation(rp, (MatrixXd(2, 2) << 0, 1, -1, 0).finished());
  auto [y, ld] = conv1x1_forward(rot, x);
  CHECK(y.point(0)[0] == doctest::Approx(std::exp(2.0)).epsilon(1e-13));
  CHECK(y.point(1)[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-13));
  CHECK(ld == 0.0);
  CHECK(conv1x1_inverse(rot, y).point(1)[0] == doctest::Approx(std::exp(2.0)).epsilon(1e-13));
  // Non-rotations are rejected.
  CHECK_THROWS(Conv1x1::from_rotation(rp, (MatrixXd(2, 2) << 2, 0, 0, 1).finished()));
}

TEST_CASE("conv1x1 log-det, inverse and gradients") {
  Rng rng(7);
  for (const Manifold& m : all_manifolds()) {
    for (const auto& [ext, ch] : kShapes) {
      Conv1x1 c(m, ch);
      // Rotations mix Cholesky diagonals across channels; keep them small
      // so the image stays inside the positive-diagonal chart.
      randomize(c, rng, m.chart() == ChartKind::Cholesky ? 0.05 : 0.8);
      CHECK((c.rotation().transpose() * c.rotation() - MatrixXd::Identity(ch, ch)).norm() < 1e-12);
      check_layer(c, random_coords(m, ext, ch, rng, 0.4), rng);
    }
  }
}

TEST_CASE("conv1x1 leaving the Cholesky chart image raises ChartDomainError") {
  const Manifold m = Manifold::spd(2, ChartKind::Cholesky);
  const Conv1x1 c = Conv1x1::from_rotation(m, (MatrixXd(2, 2) << 0, 1, -1, 0).finished());
  CoordField x({1}, 2, 3);
  x.data << 1, 0, 1, 1, 0, 1;
  double ld = 0.0;
  CHECK_THROWS_AS(c.forward(x, ld), ChartDomainError);
}

TEST_CASE("coupling is the identity at initialization") {
  Rng rng(8);
  for (const Manifold& m : all_manifolds()) {
    const Coupling c(m, {2, 2}, 4, CouplingSpec{}, rng);
    const CoordField x = random_coords(m, {2, 2}, 4, rng, 0.5);
    double ld = 0.0;
    const CoordField y = c.forward(x, ld);
    CHECK(ld == 0.0);
    CHECK(y.data == x.data);
  }
  const Coupling single(Manifold::positive_reals(), {2}, 1, CouplingSpec{}, rng);
  CHECK_FALSE(single.active());
}

TEST_CASE("coupling log-det, inverse and gradients") {
  Rng rng(9);
  for (const Manifold& m : all_manifolds()) {
    for (const auto& [ext, ch] : kShapes) {
      if (ch < 2) continue;
      for (int parity : {0, 1}) {
        CouplingSpec spec;
        spec.hidden = {6};
        spec.parity = parity;
        Coupling c(m, ext, ch, spec, rng);
        randomize(c, rng, 0.4);
        const CoordField x = random_coords(m, ext, ch, rng, 0.4);
        check_layer(c, x, rng);
        // Conditioning half is passed through bitwise.
        double ld = 0.0;
        const CoordField y = c.forward(x, ld);
        for (int i : c.layout().cond) CHECK(y.point(i) == x.point(i));
      }
    }
  }
}

TEST_CASE("slice coupling") {
  Rng rng(10);
  const Manifold m = Manifold::spd(2, ChartKind::Cholesky);
  for (bool shared : {true, false}) {
    CouplingSpec spec;
    spec.mode = CouplingMode::Slice;
    spec.tau = 2;
    spec.shared = shared;
    spec.hidden = {5};
    Coupling c(m, {4, 2}, 2, spec, rng);
    CHECK(c.nets.size() == (shared ? 1u : 2u));
    randomize(c, rng, 0.4);
    check_layer(c, random_coords(m, {4, 2}, 2, rng), rng);
  }
  CouplingSpec bad;
  bad.mode = CouplingMode::Slice;
  bad.tau = 3;
  CHECK_THROWS_AS(Coupling(m, {4, 2}, 2, bad, rng), ShapeError);
}

TEST_CASE("scale clamp fault is visible to the log-det oracle") {
  Rng rng(11);
  const Manifold m = Manifold::positive_reals();
  CouplingSpec spec;
  spec.hidden = {4};
  spec.scale_bound = 0.5;
  Coupling c(m, {2}, 2, spec, rng);
  randomize(c, rng, 3.0);
  const CoordField x = random_coords(m, {2}, 2, rng);
  auto fwd = [&](const CoordField& v) {
    double d = 0.0;
    return c.forward(v, d);
  };
  double ld = 0.0;
  c.forward(x, ld);
  CHECK(fd_close(ld, fd_field_logdet(fwd, x)));
  set_fault(Fault::NoScaleClamp);
  ld = 0.0;
  c.forward(x, ld);
  const double fd_faulty = fd_field_logdet(fwd, x);
  set_fault(Fault::None);
  CHECK_FALSE(fd_close(ld, fd_faulty));
}

TEST_CASE("sphere layers leave the chart ball with a ChartDomainError") {
  const Manifold s = Manifold::sphere(3);
  Actnorm a(s, 1, 1, false);
  a.log_scale.setConstant(std::log(100.0));
  CoordField x({1}, 1, 2);
  x.data << 0.5, 0.5;
  double ld = 0.0;
  try {
    a.forward(x, ld, 7);
    CHECK(false);
  } catch (const ChartDomainError& e) {
    CHECK(e.layer() == 7);
  }
}
