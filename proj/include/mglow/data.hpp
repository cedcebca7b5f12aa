#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mglow/field.hpp"

namespace mglow {

// ---------------------------------------------------------------------------
// Field files: "MFLD", u16 version, u8 manifold kind, u16 n, u8 chart,
// u8 rank, u32 extents[rank], u32 channels, then little-endian float64
// ambient values in (spatial..., channel, component) order. The sphere
// pole is not stored: decoded sphere fields use the default pole, and
// rechart() moves a field onto the configured chart.

inline constexpr std::uint16_t kFieldFileVersion = 1;

std::string encode_field(const Field& f);
// Throws FormatError with the byte offset of the first problem, or
// InvalidPointError when a decoded point fails its manifold invariants.
Field decode_field(const std::string& bytes);

void write_field(const std::string& path, const Field& f);
// Same ambient data read through another chart of the same manifold.
Field rechart(const Field& f, const Manifold& m);
Field read_field(const std::string& path);

// Whole-file helpers shared by the binary formats.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

// ---------------------------------------------------------------------------
// Synthetic generators.

struct SpdFieldOptions {
  int n = 3;
  double smoothness = 0.5;  // 1 gives a constant field
  double spread = 0.5;      // std of each log-eigen coordinate
};

// exp of a spatially correlated symmetric Gaussian field, eigenvalues clamped to [0.1, 10].
Field synth_spd_field(std::uint64_t seed, const Extents& grid, int channels, const SpdFieldOptions& opt = {});

// Antipodally symmetric direction set: a Fibonacci lattice on the upper
// hemisphere plus its antipodes. n_dirs must be even and >= 4.
MatrixXd odf_directions(int n_dirs);

// Ground-truth map D -> sqrt((u_k^T D u_k) / sum_j u_j^T D u_j), a unit vector
// with nonnegative entries.
Ambient odf_of_tensor(const MatrixXd& d, const MatrixXd& directions);
Field odf_field(const Field& tensors, const MatrixXd& directions);

// Planted group differences for the group-analysis harness. Group B subjects
// get a traceless anisotropy shift (visible in the target) inside the
// lower-corner box and an isotropic scaling (invisible after normalization)
// inside the upper-corner box. Sizes are in units of the per-coordinate
// inter-subject standard deviation of log D.
struct PlantSpec {
  bool enabled = false;
  double anisotropy_effect = 3.0;
  double scale_effect = 3.0;
};

// Masks of the planted boxes, one entry per location.
std::vector<bool> planted_anisotropy_mask(const Extents& grid);
std::vector<bool> planted_scale_mask(const Extents& grid);

struct PairedSample {
  Field source;
  Field target;
  char group = 'A';
  std::uint64_t seed = 0;
};

struct PairedDataset {
  std::string generator;
  std::uint64_t seed = 0;
  double noise = 0.0;
  std::vector<PairedSample> pairs;
};

struct PairedOptions {
  SpdFieldOptions spd;
  double noise = 0.0;
  PlantSpec plant;
  std::string target_pole = "uniform";  // "uniform" or "first" (e_1)
};

// Spd(3) tensors -> Sphere(n_dirs) ODF surrogates. Subjects alternate A, B.
// Noise is a tangent Gaussian at the clean target of std `noise` per coordinate.
PairedDataset synth_paired(std::uint64_t seed, const Extents& grid, int count, int n_dirs,
                           const PairedOptions& opt = {});

// Manifold of the paired generator's target stream.
Manifold paired_target_manifold(int n_dirs, const std::string& pole = "uniform");

// Positive 3-channel textures (target) with their 3x3-window covariance
// fields regularized by 1e-4 I (source). Grid must be 2-D and at least 8x8.
PairedDataset synth_texture_pair(std::uint64_t seed, const Extents& grid, int count = 1);
// Window covariance of a texture field (exposed for the brute-force oracle).
Field window_covariance(const Field& texture);

// ---------------------------------------------------------------------------
// Dataset split and manifest.

// round(train_fraction * n) training indices; both parts sorted ascending.
std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double train_fraction, std::uint64_t seed);

struct ManifestEntry {
  int index = 0;
  std::string split;  // "train" or "test"
  char group = 'A';
  std::string source;  // paths relative to the manifest directory
  std::string target;
};

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace mglow
