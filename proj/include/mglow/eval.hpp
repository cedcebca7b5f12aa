#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mglow/field.hpp"

namespace mglow {

// Mean geodesic distance over all points of two same-shape fields.
double reconstruction_error(const Field& estimate, const Field& truth);

// entry (i, j) = reconstruction_error(generated[i], references[j]).
MatrixXd confusion_matrix(const std::vector<Field>& generated, const std::vector<Field>& references);
// Fraction of rows whose diagonal entry is the (weak) row minimum.
double dominance(const MatrixXd& confusion);

// Pointwise Karcher mean (Riemannian gradient descent; exact for R+ and sphere
// log/exp, affine-invariant for SPD).
Ambient frechet_mean(const Manifold& m, const std::vector<Ambient>& points, int max_iter = 100, double tol = 1e-12);
Field frechet_mean_field(const std::vector<Field>& fields);

// Per-location p-values for a two-group difference. The statistic at a
// location is the norm of the difference of the group means of all its
// channels' chart coordinates. p = (1 + #{perm >= observed}) / (1 + n_perm);
// the result does not depend on which group is passed first.
std::vector<double> permutation_test(const std::vector<Field>& group_a, const std::vector<Field>& group_b, int n_perm,
                                     std::uint64_t seed);

// IoU of {p < alpha} between two p-maps; 1 when both sets are empty.
double iou_significant(const std::vector<double>& p_a, const std::vector<double>& p_b, double alpha = 0.05);
// Benjamini-Hochberg: locations declared significant at FDR alpha.
std::vector<bool> benjamini_hochberg(const std::vector<double>& p, double alpha);
// Significance mask at level alpha (optionally BH-corrected).
std::vector<bool> significant(const std::vector<double>& p, double alpha, bool bh = false);
double iou(const std::vector<bool>& a, const std::vector<bool>& b);

// SVG plots.
std::string histogram_svg(const std::vector<double>& values, int bins, const std::string& title);
std::string heatmap_svg(const MatrixXd& m, const std::string& title);

// Little-endian float64 dump: u32 rows, u32 cols, then row-major values.
std::string encode_matrix(const MatrixXd& m);

}  // namespace mglow
