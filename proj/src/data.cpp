#include "mglow/data.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mglow/errors.hpp"

namespace mglow {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'L', 'D'};

void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

// Bounds-checked little-endian reader reporting byte offsets.
class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

  std::uint64_t uint(int bytes, const char* what) {
    need(bytes, what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += bytes;
    return v;
  }
  double f64() { return std::bit_cast<double>(uint(8, "payload value")); }
  void need(std::size_t bytes, const char* what) const {
    if (remaining() < bytes)
      throw FormatError("offset " + std::to_string(pos_) + ": truncated while reading " + what + " (need " +
                        std::to_string(bytes) + " bytes, have " + std::to_string(remaining()) + ")");
  }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

// Separable [1 2 1] / 4 blur along every axis of extent >= 2, replicated edges.
void blur(std::vector<double>& v, const Extents& ext) {
  const int rank = static_cast<int>(ext.size());
  std::vector<int> stride(rank, 1);
  for (int a = rank - 2; a >= 0; --a) stride[a] = stride[a + 1] * ext[a + 1];
  const int total = volume(ext);
  for (int a = 0; a < rank; ++a) {
    if (ext[a] < 2) continue;
    std::vector<double> out(v.size());
    for (int idx = 0; idx < total; ++idx) {
      const int i = (idx / stride[a]) % ext[a];
      const int lo = i > 0 ? idx - stride[a] : idx;
      const int hi = i + 1 < ext[a] ? idx + stride[a] : idx;
      out[idx] = 0.25 * v[lo] + 0.5 * v[idx] + 0.25 * v[hi];
    }
    v.swap(out);
  }
}

// Spatially correlated standard normal field (unit variance away from edges).
std::vector<double> smooth_normal(Rng& rng, const Extents& ext, double smoothness) {
  const int total = volume(ext);
  const double global = rng.normal();
  std::vector<double> local(total);
  for (auto& x : local) x = rng.normal();
  blur(local, ext);
  double var = 1.0;
  for (int e : ext)
    if (e >= 2) var *= 0.375;
  const double a = std::sqrt(smoothness), b = std::sqrt(1.0 - smoothness) / std::sqrt(var);
  std::vector<double> out(total);
  for (int i = 0; i < total; ++i) out[i] = a * global + b * local[i];
  return out;
}

std::vector<int> coords_of(int idx, const Extents& ext) {
  std::vector<int> c(ext.size());
  for (int a = static_cast<int>(ext.size()) - 1; a >= 0; --a) {
    c[a] = idx % ext[a];
    idx /= ext[a];
  }
  return c;
}

MatrixXd clamp_eigenvalues(const MatrixXd& x, double lo, double hi) {
  return sym_apply(sym_eigen(x), [&](double l) { return std::clamp(l, lo, hi); });
}

// Symmetric log-tensors with Frobenius-isometric coordinates of std `spread`.
std::vector<MatrixXd> log_tensor_field(std::uint64_t seed, const Extents& grid, int channels,
                                       const SpdFieldOptions& opt) {
  if (!(opt.smoothness >= 0.0 && opt.smoothness <= 1.0)) throw ValidationError("smoothness must lie in [0, 1]");
  if (opt.n < 2) throw ValidationError("Spd(n) requires n >= 2");
  Rng rng(seed);
  const int total = volume(grid);
  const int comps = vech_size(opt.n);
  std::vector<std::vector<double>> fields;
  for (int c = 0; c < channels * comps; ++c) fields.push_back(smooth_normal(rng, grid, opt.smoothness));
  std::vector<MatrixXd> out;
  out.reserve(static_cast<size_t>(total) * channels);
  for (int loc = 0; loc < total; ++loc)
    for (int ch = 0; ch < channels; ++ch) {
      VectorXd v(comps);
      for (int k = 0; k < comps; ++k) v[k] = opt.spread * fields[ch * comps + k][loc];
      out.push_back(unvech_sym(v, opt.n, kSqrt2));
    }
  return out;
}

Field tensors_to_field(const std::vector<MatrixXd>& logs, const Extents& grid, int channels, int n) {
  Field f(Manifold::spd(n), grid, channels);
  for (int p = 0; p < f.points(); ++p) f.point(p) = Manifold::from_matrix(clamp_eigenvalues(sym_expm(logs[p]), 0.1, 10.0));
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string encode_field(const Field& f) {
  const Manifold& m = f.manifold();
  std::string out(kMagic, 4);
  put_u16(out, kFieldFileVersion);
  put_u8(out, static_cast<std::uint8_t>(m.kind()));
  put_u16(out, static_cast<std::uint16_t>(m.n()));
  put_u8(out, static_cast<std::uint8_t>(m.chart()));
  put_u8(out, static_cast<std::uint8_t>(f.extents().size()));
  for (int e : f.extents()) put_u32(out, static_cast<std::uint32_t>(e));
  put_u32(out, static_cast<std::uint32_t>(f.channels()));
  out.reserve(out.size() + f.data().size() * 8);
  for (double d : f.data()) put_f64(out, d);
  return out;
}

Field decode_field(const std::string& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (bytes.compare(0, 4, kMagic, 4) != 0) throw FormatError("offset 0: bad magic (expected MFLD)");
  r.uint(4, "magic");
  const auto version = r.uint(2, "version");
  if (version != kFieldFileVersion)
    throw FormatError("offset 4: unsupported field file version " + std::to_string(version));
  const std::size_t kind_pos = r.pos();
  const auto kind = r.uint(1, "manifold kind");
  if (kind > 2) throw FormatError("offset " + std::to_string(kind_pos) + ": unknown manifold kind " + std::to_string(kind));
  const std::size_t n_pos = r.pos();
  const auto n = static_cast<int>(r.uint(2, "manifold n"));
  const std::size_t chart_pos = r.pos();
  const auto chart = r.uint(1, "chart");
  if (chart > 3) throw FormatError("offset " + std::to_string(chart_pos) + ": unknown chart " + std::to_string(chart));
  Manifold m = Manifold::positive_reals();
  try {
    m = Manifold::make(static_cast<ManifoldKind>(kind), n, static_cast<ChartKind>(chart));
  } catch (const ValidationError& e) {
    throw FormatError("offset " + std::to_string(n_pos) + ": " + e.what());
  }
  const std::size_t rank_pos = r.pos();
  const auto rank = r.uint(1, "rank");
  if (rank < 1 || rank > 3) throw FormatError("offset " + std::to_string(rank_pos) + ": spatial rank must be 1..3");
  Extents ext;
  std::uint64_t count = 1;
  for (std::uint64_t a = 0; a < rank; ++a) {
    const std::size_t pos = r.pos();
    const auto e = r.uint(4, "extent");
    if (e == 0) throw FormatError("offset " + std::to_string(pos) + ": zero extent");
    ext.push_back(static_cast<int>(e));
    count *= e;
  }
  const std::size_t ch_pos = r.pos();
  const auto channels = r.uint(4, "channels");
  if (channels == 0) throw FormatError("offset " + std::to_string(ch_pos) + ": zero channels");
  count *= channels * static_cast<std::uint64_t>(m.ambient_size());
  if (r.remaining() != count * 8)
    throw FormatError("offset " + std::to_string(r.pos()) + ": payload length " + std::to_string(r.remaining()) +
                      " bytes, expected " + std::to_string(count * 8));
  Field f(m, ext, static_cast<int>(channels));
  for (auto& d : f.data()) d = r.f64();
  f.validate();
  return f;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_field(const std::string& path, const Field& f) { write_file_atomic(path, encode_field(f)); }

Field read_field(const std::string& path) {
  try {
    return decode_field(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Field rechart(const Field& f, const Manifold& m) {
  if (f.manifold().kind() != m.kind() || f.manifold().n() != m.n())
    throw ShapeError("cannot rechart " + f.manifold().name() + " as " + m.name());
  Field out(m, f.extents(), f.channels());
  out.data() = f.data();
  return out;
}

// ---------------------------------------------------------------------------

Field synth_spd_field(std::uint64_t seed, const Extents& grid, int channels, const SpdFieldOptions& opt) {
  return tensors_to_field(log_tensor_field(seed, grid, channels, opt), grid, channels, opt.n);
}

MatrixXd odf_directions(int n_dirs) {
  if (n_dirs < 4 || n_dirs % 2 != 0) throw ValidationError("n_dirs must be even and >= 4");
  const int half = n_dirs / 2;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  MatrixXd u(n_dirs, 3);
  for (int i = 0; i < half; ++i) {
    const double z = (i + 0.5) / half;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * i;
    u.row(i) << r * std::cos(phi), r * std::sin(phi), z;
    u.row(i + half) = -u.row(i);
  }
  return u;
}

Ambient odf_of_tensor(const MatrixXd& d, const MatrixXd& directions) {
  const VectorXd q = (directions * d).cwiseProduct(directions).rowwise().sum();
  return (q / q.sum()).cwiseSqrt();
}

Field odf_field(const Field& tensors, const MatrixXd& directions) {
  Field out(Manifold::sphere(static_cast<int>(directions.rows())), tensors.extents(), tensors.channels());
  const int n = tensors.manifold().n();
  for (int p = 0; p < tensors.points(); ++p) out.point(p) = odf_of_tensor(Manifold::as_matrix(tensors.point(p), n), directions);
  return out;
}

namespace {

std::vector<bool> box_mask(const Extents& grid, bool upper) {
  std::vector<bool> mask(volume(grid));
  for (int idx = 0; idx < volume(grid); ++idx) {
    const auto c = coords_of(idx, grid);
    bool in = true;
    for (size_t a = 0; a < grid.size(); ++a) {
      const int half = grid[a] / 2;
      in = in && (upper ? c[a] >= half : c[a] < std::max(1, half));
    }
    mask[idx] = in;
  }
  return mask;
}

}  // namespace

std::vector<bool> planted_anisotropy_mask(const Extents& grid) { return box_mask(grid, false); }
std::vector<bool> planted_scale_mask(const Extents& grid) { return box_mask(grid, true); }

Manifold paired_target_manifold(int n_dirs, const std::string& pole) {
  if (pole == "uniform") return Manifold::sphere(VectorXd::Constant(n_dirs, 1.0));
  if (pole == "first") return Manifold::sphere(n_dirs);
  throw ValidationError("unknown sphere pole '" + pole + "' (expected uniform or first)");
}

PairedDataset synth_paired(std::uint64_t seed, const Extents& grid, int count, int n_dirs, const PairedOptions& opt) {
  if (count < 1) throw ValidationError("dataset count must be positive");
  if (!(opt.noise >= 0.0)) throw ValidationError("noise must be nonnegative");
  const MatrixXd dirs = odf_directions(n_dirs);
  const Manifold target_m = paired_target_manifold(n_dirs, opt.target_pole);
  const std::vector<bool> aniso = planted_anisotropy_mask(grid), scale = planted_scale_mask(grid);
  const int n = opt.spd.n;
  // Unit-Frobenius traceless anisotropy direction.
  MatrixXd a_dir = MatrixXd::Constant(n, n, 0.0);
  a_dir(0, 0) = n - 1.0;
  for (int i = 1; i < n; ++i) a_dir(i, i) = -1.0;
  a_dir /= a_dir.norm();

  PairedDataset ds;
  ds.generator = "paired";
  ds.seed = seed;
  ds.noise = opt.noise;
  for (int i = 0; i < count; ++i) {
    PairedSample s{Field(Manifold::spd(n), grid, 1), Field(target_m, grid, 1), i % 2 == 0 ? 'A' : 'B',
                   derive_seed(seed, static_cast<std::uint64_t>(i))};
    s.source = synth_spd_field(s.seed, grid, 1, opt.spd);
    // Plants act on the clamped tensors so the isotropic one stays exactly
    // invisible after normalization.
    if (opt.plant.enabled && s.group == 'B')
      for (int loc = 0; loc < volume(grid); ++loc) {
        MatrixXd d = Manifold::as_matrix(s.source.point(loc), n);
        if (aniso[loc]) d = sym_expm(sym_logm(d) + opt.plant.anisotropy_effect * opt.spd.spread * a_dir);
        if (scale[loc]) d *= std::exp(opt.plant.scale_effect * opt.spd.spread / std::sqrt(static_cast<double>(n)));
        s.source.point(loc) = Manifold::from_matrix(d);
      }
    Rng noise_rng(derive_seed(s.seed, 0x6e6f697365ULL));
    for (int p = 0; p < s.source.points(); ++p) {
      VectorXd x = odf_of_tensor(Manifold::as_matrix(s.source.point(p), n), dirs);
      if (opt.noise > 0.0) {
        VectorXd v(n_dirs);
        for (int k = 0; k < n_dirs; ++k) v[k] = opt.noise * noise_rng.normal();
        v -= v.dot(x) * x;
        const double t = v.norm();
        if (t > 0.0) x = std::cos(t) * x + std::sin(t) * (v / t);
        x /= x.norm();
      }
      s.target.point(p) = x;
    }
    ds.pairs.push_back(std::move(s));
  }
  return ds;
}

Field window_covariance(const Field& texture) {
  const Extents& g = texture.extents();
  if (g.size() != 2) throw ShapeError("window covariance needs a 2-D grid");
  const int c = texture.channels();
  Field cov(Manifold::spd(c), g, 1);
  for (int i = 0; i < g[0]; ++i)
    for (int j = 0; j < g[1]; ++j) {
      std::vector<VectorXd> window;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= g[0] || b >= g[1]) continue;
          VectorXd v(c);
          for (int ch = 0; ch < c; ++ch) v[ch] = texture.get(a * g[1] + b, ch)[0];
          window.push_back(v);
        }
      VectorXd mean = VectorXd::Zero(c);
      for (const auto& v : window) mean += v;
      mean /= static_cast<double>(window.size());
      MatrixXd s = MatrixXd::Zero(c, c);
      for (const auto& v : window) s += (v - mean) * (v - mean).transpose();
      s /= static_cast<double>(window.size());
      s += 1e-4 * MatrixXd::Identity(c, c);
      cov.point(i * g[1] + j) = Manifold::from_matrix(symmetrize(s));
    }
  return cov;
}

PairedDataset synth_texture_pair(std::uint64_t seed, const Extents& grid, int count) {
  if (grid.size() != 2 || grid[0] < 8 || grid[1] < 8) throw ValidationError("texture grid must be 2-D and at least 8x8");
  PairedDataset ds;
  ds.generator = "texture";
  ds.seed = seed;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(s);
    Field tex(Manifold::positive_reals(), grid, 3);
    for (int ch = 0; ch < 3; ++ch) {
      const std::vector<double> g = smooth_normal(rng, grid, 0.3);
      for (int loc = 0; loc < volume(grid); ++loc) tex.point(loc * 3 + ch)[0] = std::exp(0.5 * g[loc]);
    }
    ds.pairs.push_back({window_covariance(tex), tex, i % 2 == 0 ? 'A' : 'B', s});
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::pair<std::vector<int>, std::vector<int>> split_dataset(int n, double train_fraction, std::uint64_t seed) {
  if (n < 2) throw ValidationError("splitting needs at least 2 items");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must lie in (0, 1)");
  const int n_train = static_cast<int>(std::llround(train_fraction * n));
  if (n_train == 0 || n_train == n) throw ValidationError("split leaves the train or test set empty");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(static_cast<std::uint64_t>(i) + 1)]);
  std::vector<int> train(idx.begin(), idx.begin() + n_train), test(idx.begin() + n_train, idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream out;
  out << "# mglow manifest v1: index\tsplit\tgroup\tsource\ttarget\n";
  for (const auto& e : entries)
    out << e.index << '\t' << e.split << '\t' << e.group << '\t' << e.source << '\t' << e.target << '\n';
  write_file_atomic(path, out.str());
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string index, group;
    if (!std::getline(ls, index, '\t') || !std::getline(ls, e.split, '\t') || !std::getline(ls, group, '\t') ||
        !std::getline(ls, e.source, '\t') || !std::getline(ls, e.target))
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected 5 tab-separated fields");
    try {
      e.index = std::stoi(index);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad index '" + index + "'");
    }
    if (group.size() != 1) throw FormatError(path + ":" + std::to_string(lineno) + ": bad group '" + group + "'");
    e.group = group[0];
    if (e.split != "train" && e.split != "test")
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad split '" + e.split + "'");
    out.push_back(e);
  }
  return out;
}

}  // namespace mglow
