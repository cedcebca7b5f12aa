#include "mglow/check.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "mglow/errors.hpp"
#include "mglow/model.hpp"
#include "mglow/oracle.hpp"

namespace mglow {

namespace {

std::vector<Manifold> suite_manifolds() {
  return {Manifold::sphere(3), Manifold::sphere(12), Manifold::positive_reals(), Manifold::spd(2),
          Manifold::spd(3), Manifold::spd(2, ChartKind::Cholesky), Manifold::spd(3, ChartKind::Cholesky)};
}

// Points near the chart origin: small sphere angles, SPD matrices with
// moderate spectra, positive reals around 1.
CoordField random_input(const Manifold& m, const Extents& ext, int channels, Rng& rng) {
  Field f(m, ext, channels);
  for (int p = 0; p < f.points(); ++p) {
    Coords v(m.dim());
    for (int i = 0; i < m.dim(); ++i) v[i] = (m.kind() == ManifoldKind::Sphere ? 0.3 : 0.5) * rng.normal();
    if (m.chart() == ChartKind::Cholesky) {
      // Positive diagonal entries of the factor.
      int idx = 0;
      for (int i = 0; i < m.n(); ++i)
        for (int j = 0; j <= i; ++j, ++idx)
          if (i == j) v[idx] = std::exp(0.3 * v[idx]);
    }
    f.point(p) = m.chart_inverse(v);
  }
  return to_coords(f);
}

template <class M>
void perturb(M& model, Rng& rng, double sd) {
  model.visit("p", [&](const std::string&, MatrixXd& t) {
    for (auto& v : t.reshaped()) v += sd * rng.normal();
  });
}

// Relative log-det disagreement in units of the acceptance tolerance.
double logdet_error(double analytic, double fd) {
  return std::abs(analytic - fd) / std::max(1e-4, 1e-4 * std::abs(fd));
}

struct Tracker {
  std::string name;
  double worst = 0.0;
  double tol;
  bool failed = false;
  void add(double v) {
    if (!std::isfinite(v)) failed = true;
    worst = std::max(worst, v);
  }
  CheckResult result() const { return {name, worst, tol, !failed && worst <= tol}; }
};

using LayerMap = std::function<CoordField(const CoordField&, double&)>;
using LayerInv = std::function<CoordField(const CoordField&)>;

void check_map(const LayerMap& fwd, const LayerInv& inv, const CoordField& x, Tracker& rt, Tracker& ld) try {
  double logdet = 0.0;
  const CoordField y = fwd(x, logdet);
  rt.add((inv(y).data - x.data).cwiseAbs().maxCoeff());
  const double fd = fd_logdet(
      [&](const VectorXd& v) {
        CoordField c = x;
        c.data = v;
        double d = 0.0;
        return fwd(c, d).data;
      },
      x.data);
  ld.add(logdet_error(logdet, fd));
} catch (const DomainError&) {
  // Leaving the chart counts as a failure of both properties.
  rt.add(INFINITY);
  ld.add(INFINITY);
}

}  // namespace

std::vector<CheckResult> run_checks(std::uint64_t seed, Fault fault) {
  struct FaultGuard {
    explicit FaultGuard(Fault f) { set_fault(f); }
    ~FaultGuard() { set_fault(Fault::None); }
  } guard(fault);

  Rng rng(seed);
  Tracker layer_rt{"layer round trip (max coordinate error)", 0.0, 1e-7};
  Tracker layer_ld{"layer log-det vs finite differences (units of tolerance)", 0.0, 1.0};
  Tracker model_rt{"model round trip (max coordinate error)", 0.0, 1e-7};
  Tracker model_ld{"model log-det vs finite differences (units of tolerance)", 0.0, 1.0};
  Tracker grad{"nll gradient vs finite differences (relative error)", 0.0, 1e-4};

  const Extents ext{2, 2, 2};
  const int ch = 2;
  for (const Manifold& m : suite_manifolds()) {
    const bool chol = m.chart() == ChartKind::Cholesky;
    for (int trial = 0; trial < 2; ++trial) {
      const CoordField x = random_input(m, ext, ch, rng);

      Actnorm an(m, ch, volume(ext), false);
      perturb(an, rng, 0.3);
      check_map([&](const CoordField& v, double& d) { return an.forward(v, d); },
                [&](const CoordField& v) { return an.inverse(v); }, x, layer_rt, layer_ld);

      Conv1x1 cv(m, ch);
      perturb(cv, rng, chol ? 0.05 : 0.5);
      check_map([&](const CoordField& v, double& d) { return cv.forward(v, d); },
                [&](const CoordField& v) { return cv.inverse(v); }, x, layer_rt, layer_ld);

      CouplingSpec spec;
      spec.hidden = {8};
      spec.parity = trial;
      // A tight bound with large weights drives the scale clamp into its nonlinear range.
      spec.scale_bound = 0.5;
      Coupling cp(m, ext, ch, spec, rng);
      perturb(cp, rng, m.kind() == ManifoldKind::Sphere ? 0.3 : 1.5);
      check_map([&](const CoordField& v, double& d) { return cp.forward(v, d); },
                [&](const CoordField& v) { return cp.inverse(v); }, x, layer_rt, layer_ld);
    }

    FlowArch arch;
    arch.levels = 2;
    arch.blocks_per_level = 1;
    arch.coupling.hidden = {8};
    // Cholesky factors keep a positive diagonal only under small channel rotations.
    arch.conv_init = chol ? 0.0 : 1.0;
    FlowModel f(m, ext, 1, arch, rng.next());
    perturb(f, rng, chol ? 0.03 : 0.1);
    const CoordField x = random_input(m, ext, 1, rng);
    check_map(
        [&](const CoordField& v, double& d) {
          const FlowOutput o = f.forward(v);
          d += o.log_det;
          CoordField flat({static_cast<int>(v.data.size())}, 1, 1);
          Eigen::Index off = 0;
          for (const auto& z : o.latents) {
            flat.data.segment(off, z.data.size()) = z.data;
            off += z.data.size();
          }
          return flat;
        },
        [&](const CoordField& y) {
          std::vector<CoordField> zs;
          Eigen::Index off = 0;
          for (const auto& s : f.latent_shapes()) {
            CoordField z(s.extents, s.channels, m.dim());
            z.data = y.data.segment(off, z.data.size());
            off += z.data.size();
            zs.push_back(z);
          }
          return f.inverse(zs);
        },
        x, model_rt, model_ld);
  }

  // Mean NLL gradient of a two-block R+ model.
  {
    const Manifold rp = Manifold::positive_reals();
    FlowArch arch;
    arch.levels = 1;
    arch.blocks_per_level = 2;
    arch.squeeze = false;
    arch.coupling.hidden = {6};
    FlowModel f(rp, {2, 2}, 2, arch, rng.next());
    perturb(f, rng, 0.2);
    std::vector<CoordField> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_input(rp, {2, 2}, 2, rng));
    FlowModel g = f.zeros_like();
    for (const auto& x : batch) {
      FlowTape tape;
      const FlowOutput out = f.forward(x, &tape);
      std::vector<CoordField> zb = f.log_prior_grad(out.latents);
      for (auto& z : zb) z.data *= -1.0 / batch.size();
      f.backward(tape, zb, -1.0 / batch.size(), g);
    }
    const VectorXd an = flatten_params(g);
    const VectorXd fd = fd_gradient(
        [&](const VectorXd& p) {
          FlowModel f2 = f;
          unflatten_params(f2, p);
          double s = 0.0;
          for (const auto& x : batch) s += f2.nll(x);
          return s / batch.size();
        },
        flatten_params(f));
    grad.add((an - fd).norm() / std::max(fd.norm(), 1e-12));
  }

  return {layer_rt.result(), layer_ld.result(), model_rt.result(), model_ld.result(), grad.result()};
}

std::string format_check(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s  %-58s worst %.3e  tolerance %.1e", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.worst, r.tolerance);
  return buf;
}

}  // namespace mglow
