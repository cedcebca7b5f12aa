#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mglow/linalg.hpp"
#include "mglow/rng.hpp"

namespace mglow {

// Module-wide numerical tolerances.
struct Tolerances {
  double unit_norm = 1e-10;      // sphere points
  double symmetry = 1e-10;       // SPD points (relative to max |entry|)
  double min_eigenvalue = 1e-12; // SPD points
  double round_trip = 1e-8;
  double fd_agreement = 1e-4;
  double rotation = 1e-8;        // group elements: ||Q^T Q - I||, |det Q - 1|
  double arccos_window = 1e-8;
  double reproject = 1e-8;       // max drift repaired after a group action
  double chart_margin = 1e-3;    // epsilon below the injectivity radius pi
  double singular_covariance = 1e-30;
};

inline constexpr Tolerances kTol{};

enum class ManifoldKind : std::uint8_t { Sphere = 0, PositiveReals = 1, Spd = 2 };
enum class ChartKind : std::uint8_t { PoleLog = 0, ScalarLog = 1, Cholesky = 2, MatrixLog = 3 };

std::string to_string(ManifoldKind k);
std::string to_string(ChartKind c);
ManifoldKind parse_manifold_kind(const std::string& s);
ChartKind parse_chart_kind(const std::string& s);

// Points are stored in ambient form: a unit n-vector for the sphere, one
// positive scalar for R+, and an n x n SPD matrix in row-major order.
using Ambient = VectorXd;
using Coords = VectorXd;

// A manifold together with its (global) chart.
//
// Sphere(n) is S^{n-1} in R^n, charted by the log map at a fixed pole and
// expressed in a Gram-Schmidt basis of the pole's tangent space.
// SPD(n) uses either the Cholesky factor or the matrix logarithm; the latter
// scales off-diagonals by sqrt(2) so coordinates are Frobenius-isometric.
class Manifold {
 public:
  static Manifold sphere(int n);
  static Manifold sphere(const VectorXd& pole);
  static Manifold positive_reals();
  static Manifold spd(int n, ChartKind chart = ChartKind::MatrixLog);
  static Manifold make(ManifoldKind kind, int n, ChartKind chart, const std::optional<VectorXd>& pole = {});

  ManifoldKind kind() const { return kind_; }
  ChartKind chart() const { return chart_; }
  int n() const { return n_; }
  int ambient_size() const;
  int dim() const;
  // Parameter count of the group element used as "translation".
  int group_dim() const;
  const VectorXd& pole() const { return pole_; }
  const MatrixXd& tangent_basis() const { return basis_; }
  std::string name() const;

  bool same_chart(const Manifold& other) const;
  bool operator==(const Manifold& other) const { return same_chart(other); }

  void validate(const Ambient& x) const;
  bool is_valid(const Ambient& x) const;

  double distance(const Ambient& x, const Ambient& y) const;

  Coords chart_forward(const Ambient& x) const;
  Ambient chart_inverse(const Coords& v) const;

  // Throws ChartDomainError when v lies outside the chart image.
  void check_chart_domain(const Coords& v, int layer = -1) const;
  bool in_chart_domain(const Coords& v) const;

  // Pullbacks of the chart maps. chart_forward_vjp returns the gradient wrt
  // every ambient entry (SPD charts read the symmetric part of X).
  Ambient chart_forward_vjp(const Ambient& x, const Coords& v_bar) const;
  Coords chart_inverse_vjp(const Coords& v, const Ambient& x_bar) const;

  // Identity point (chart origin for the default charts).
  Ambient origin() const;

  static MatrixXd as_matrix(const Ambient& x, int n);
  static Ambient from_matrix(const MatrixXd& m);

 private:
  Manifold() = default;

  ManifoldKind kind_ = ManifoldKind::PositiveReals;
  ChartKind chart_ = ChartKind::ScalarLog;
  int n_ = 1;
  VectorXd pole_;
  MatrixXd basis_;  // n x (n-1), sphere only
};

// ---------------------------------------------------------------------------
// Isometry group elements.
//
// R+: a positive scalar acting by multiplication. Sphere(n): a rotation of the
// (n-1) pole-tangent coordinates (the pole stabilizer). SPD(n): Q in SO(n)
// acting by conjugation X -> Q X Q^T.
struct GroupElement {
  ManifoldKind kind = ManifoldKind::PositiveReals;
  double scalar = 1.0;
  MatrixXd rotation;
  MatrixXd generator;  // skew generator when built from parameters

  static GroupElement identity(const Manifold& m);
};

void validate_group_element(const Manifold& m, const GroupElement& g);

Ambient group_apply(const Manifold& m, const GroupElement& g, const Ambient& x);
GroupElement group_inverse(const GroupElement& g);

// Group element from unconstrained parameters: exp for R+, Cayley of the
// skew generator otherwise. params.size() == m.group_dim().
GroupElement group_from_params(const Manifold& m, const VectorXd& params);

// The group action read through the chart: y = Phi(g . Phi^{-1}(u)).
// `log_det` receives log|det dy/du| (zero for the default charts).
Coords act_coords(const Manifold& m, const GroupElement& g, const Coords& u, double* log_det = nullptr);
Coords act_coords_inverse(const Manifold& m, const GroupElement& g, const Coords& y);

// Pullback of (y, log_det) = act_coords(g(params), u): given ybar and the
// log-det cotangent, accumulates into u_bar and params_bar.
void act_coords_vjp(const Manifold& m, const GroupElement& g, const Coords& u, const Coords& y_bar,
                    double log_det_bar, Coords& u_bar, VectorXd& params_bar);

// log|det| of the Jacobian of dst o src^{-1} at src(at). Both manifolds must
// be the same space; zero when the charts coincide.
double chart_transition_logdet(const Manifold& src, const Manifold& dst, const Ambient& at);

// ---------------------------------------------------------------------------
// Gaussian induced from chart coordinates.
class ManifoldGaussian {
 public:
  ManifoldGaussian(Manifold manifold, Ambient mean, MatrixXd covariance);

  const Manifold& manifold() const { return manifold_; }
  const Ambient& mean() const { return mean_; }
  const Coords& mean_coords() const { return mean_coords_; }
  const MatrixXd& covariance() const { return cov_; }
  double log_det() const { return log_det_; }

 private:
  Manifold manifold_;
  Ambient mean_;
  Coords mean_coords_;
  MatrixXd cov_;
  MatrixXd chol_;
  double log_det_;

  friend double gaussian_logpdf(const ManifoldGaussian&, const Ambient&);
  friend Ambient gaussian_sample(const ManifoldGaussian&, Rng&);
};

// Density wrt Lebesgue measure in chart coordinates.
double gaussian_logpdf(const ManifoldGaussian& dist, const Ambient& z);

// Draws v ~ N(Phi(M), Sigma) and returns Phi^{-1}(v). Pole-log charts reject
// draws outside the chart ball; 10000 consecutive rejections throw.
Ambient gaussian_sample(const ManifoldGaussian& dist, Rng& rng);

inline constexpr int kMaxRejections = 10000;

}  // namespace mglow
