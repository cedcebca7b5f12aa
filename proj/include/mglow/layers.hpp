#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "mglow/field.hpp"
#include "mglow/nn.hpp"

namespace mglow {

// ---------------------------------------------------------------------------
// Per-point affine action in chart coordinates: y = g . (exp(log_s) * u).
// log_det receives sum(log_s) plus the chart Jacobian of the group action.

Coords affine_point_forward(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& u,
                            double& log_det);
Coords affine_point_inverse(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& y);
// Accumulates into u_bar, log_s_bar and group_bar (cotangent of the group parameters).
void affine_point_backward(const Manifold& m, const VectorXd& log_s, const GroupElement& g, const Coords& u,
                           const Coords& y_bar, double log_det_bar, Eigen::Ref<VectorXd> u_bar, VectorXd& log_s_bar,
                           VectorXd& group_bar);

// Throws ChartDomainError (tagged with `layer`) if any point left the chart image.
void check_domain(const Manifold& m, const CoordField& x, int layer);

// Layer forward passes add their log|det| to the `log_det` argument.

// Fault injection for the verification suite.
enum class Fault { None, NoScaleClamp };
void set_fault(Fault f);
Fault current_fault();

// ---------------------------------------------------------------------------
class Actnorm {
 public:
  inline static const double kMinLogScale = -13.815510557964274;  // ln 1e-6
  inline static const double kMaxLogScale = 13.815510557964274;

  Actnorm() = default;
  // Parameters are per channel, or per (location, channel) when per_location.
  Actnorm(const Manifold& m, int channels, int locations, bool per_location);

  const Manifold& manifold() const { return *manifold_; }
  bool per_location() const { return per_location_; }
  int rows() const { return static_cast<int>(log_scale.rows()); }

  // rows x m log-scales (clamped to [ln 1e-6, ln 1e6] when applied).
  MatrixXd log_scale;
  // rows x group_dim group parameters.
  MatrixXd shift;

  CoordField forward(const CoordField& x, double& log_det, int layer = -1) const;
  CoordField inverse(const CoordField& y, int layer = -1) const;
  CoordField backward(const CoordField& x, const CoordField& y_bar, double log_det_bar, Actnorm& grad) const;

  // Data-dependent initialization on chart coordinates. R+ gets exact
  // standardization (scale 1/std, shift -mean/std); rotation groups cannot
  // translate, so the scale normalizes the RMS to `sigma0` and T = identity.
  void initialize(const std::vector<CoordField>& batch, double sigma0);

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;
  Actnorm zeros_like() const;

 private:
  int row_of(int loc, int ch, int channels) const { return per_location_ ? loc * channels + ch : ch; }
  VectorXd effective_log_scale(int row) const;

  std::shared_ptr<const Manifold> manifold_;
  bool per_location_ = false;
};

// ---------------------------------------------------------------------------
class Conv1x1 {
 public:
  Conv1x1() = default;
  Conv1x1(const Manifold& m, int channels);

  static Conv1x1 from_rotation(const Manifold& m, const MatrixXd& r);

  int channels() const { return channels_; }
  // skew-generator parameters, k(k-1)/2 x 1
  MatrixXd generator;
  MatrixXd rotation() const;

  CoordField forward(const CoordField& x, double& log_det, int layer = -1) const;
  CoordField inverse(const CoordField& y, int layer = -1) const;
  CoordField backward(const CoordField& x, const CoordField& y_bar, double log_det_bar, Conv1x1& grad) const;

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;
  Conv1x1 zeros_like() const;

 private:
  std::shared_ptr<const Manifold> manifold_;
  int channels_ = 0;
};

// ---------------------------------------------------------------------------
// Affine coupling. In channel mode the first floor(c/2) channels condition
// the rest at every location. In slice mode the leading spatial axis is cut
// into 2*tau slices; slice 2k (or 2k+1 on odd parity) conditions its
// neighbour, and the coupling network is either shared by all tau pairs or
// separate per pair.
enum class CouplingMode { Channel, Slice };

struct CouplingLayout {
  int columns = 0;
  int cond_per_column = 0;
  int target_per_column = 0;
  int nets = 1;
  std::vector<int> cond;    // columns * cond_per_column point indices
  std::vector<int> target;  // columns * target_per_column point indices
  std::vector<std::vector<int>> net_columns;  // columns handled by each network
};

CouplingLayout make_coupling_layout(const Extents& extents, int channels, CouplingMode mode, int tau, bool shared,
                                    int parity);

struct CouplingSpec {
  CouplingMode mode = CouplingMode::Channel;
  int tau = 1;
  bool shared = true;
  int parity = 0;
  std::vector<int> hidden{64, 64};
  double scale_bound = 3.0;
};

class Coupling {
 public:
  Coupling() = default;
  Coupling(const Manifold& m, const Extents& extents, int channels, const CouplingSpec& spec, Rng& rng);

  // False in channel mode with a single channel: the layer is the identity.
  bool active() const { return !nets.empty(); }
  const CouplingLayout& layout() const { return layout_; }
  const CouplingSpec& spec() const { return spec_; }
  std::size_t param_count() const;

  std::vector<Network> nets;

  CoordField forward(const CoordField& x, double& log_det, int layer = -1) const;
  CoordField inverse(const CoordField& y, int layer = -1) const;
  CoordField backward(const CoordField& x, const CoordField& y_bar, double log_det_bar, Coupling& grad) const;

  void visit(const std::string& prefix, const ParamVisitor& f);
  void visit_const(const std::string& prefix, const ConstParamVisitor& f) const;
  Coupling zeros_like() const;

 private:
  MatrixXd gather(const CoordField& x, int net) const;

  std::shared_ptr<const Manifold> manifold_;
  CouplingSpec spec_;
  CouplingLayout layout_;
  Extents extents_;
  int channels_ = 0;
};

// ---------------------------------------------------------------------------
// Field-level entry points.

std::pair<Field, double> actnorm_forward(const Actnorm& a, const Field& x);
Field actnorm_inverse(const Actnorm& a, const Field& y);
Actnorm actnorm_init(const std::vector<Field>& batch, bool per_location = false, double sigma0 = 1.0);
std::pair<Field, double> conv1x1_forward(const Conv1x1& c, const Field& x);
Field conv1x1_inverse(const Conv1x1& c, const Field& y);
std::pair<Field, double> coupling_forward(const Coupling& c, const Field& x);
Field coupling_inverse(const Coupling& c, const Field& y);

}  // namespace mglow
