#include "mglow/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "mglow/errors.hpp"

namespace mglow {

double reconstruction_error(const Field& estimate, const Field& truth) {
  if (estimate.manifold().kind() != truth.manifold().kind() || estimate.manifold().n() != truth.manifold().n() ||
      estimate.extents() != truth.extents() || estimate.channels() != truth.channels())
    throw ShapeError("reconstruction_error: fields differ in manifold or shape");
  const Manifold& m = truth.manifold();
  double s = 0.0;
  for (int p = 0; p < truth.points(); ++p) s += m.distance(estimate.point(p), truth.point(p));
  return s / truth.points();
}

MatrixXd confusion_matrix(const std::vector<Field>& generated, const std::vector<Field>& references) {
  if (generated.size() != references.size() || generated.empty())
    throw ShapeError("confusion_matrix needs equal, nonzero counts");
  const auto k = static_cast<Eigen::Index>(generated.size());
  MatrixXd c(k, k);
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) c(i, j) = reconstruction_error(generated[i], references[j]);
  return c;
}

double dominance(const MatrixXd& c) {
  if (c.rows() != c.cols() || c.rows() == 0) throw ShapeError("dominance needs a nonempty square matrix");
  int hits = 0;
  for (Eigen::Index i = 0; i < c.rows(); ++i) hits += c(i, i) <= c.row(i).minCoeff();
  return static_cast<double>(hits) / static_cast<double>(c.rows());
}

namespace {

// Riemannian log/exp maps used by the Karcher iteration.
VectorXd log_map(const Manifold& m, const Ambient& base, const Ambient& x) {
  switch (m.kind()) {
    case ManifoldKind::PositiveReals:
      return VectorXd::Constant(1, std::log(x[0] / base[0]));
    case ManifoldKind::Sphere: {
      const double c = std::clamp(base.dot(x), -1.0, 1.0);
      VectorXd v = x - c * base;
      const double nv = v.norm();
      if (nv < 1e-300) return VectorXd::Zero(x.size());
      return std::atan2(nv, c) * v / nv;
    }
    case ManifoldKind::Spd: {
      const int n = m.n();
      const MatrixXd b = Manifold::as_matrix(base, n);
      const SymEigen e = sym_eigen(b);
      const MatrixXd s = sym_apply(e, [](double l) { return std::sqrt(l); });
      const MatrixXd si = sym_apply(e, [](double l) { return 1.0 / std::sqrt(l); });
      return Manifold::from_matrix(s * sym_logm(symmetrize(si * Manifold::as_matrix(x, n) * si)) * s);
    }
  }
  return {};
}

Ambient exp_map(const Manifold& m, const Ambient& base, const VectorXd& v) {
  switch (m.kind()) {
    case ManifoldKind::PositiveReals:
      return VectorXd::Constant(1, base[0] * std::exp(v[0]));
    case ManifoldKind::Sphere: {
      const double t = v.norm();
      if (t < 1e-300) return base;
      VectorXd y = std::cos(t) * base + std::sin(t) * v / t;
      return y / y.norm();
    }
    case ManifoldKind::Spd: {
      const int n = m.n();
      const SymEigen e = sym_eigen(Manifold::as_matrix(base, n));
      const MatrixXd s = sym_apply(e, [](double l) { return std::sqrt(l); });
      const MatrixXd si = sym_apply(e, [](double l) { return 1.0 / std::sqrt(l); });
      return Manifold::from_matrix(symmetrize(s * sym_expm(symmetrize(si * Manifold::as_matrix(v, n) * si)) * s));
    }
  }
  return {};
}

}  // namespace

Ambient frechet_mean(const Manifold& m, const std::vector<Ambient>& points, int max_iter, double tol) {
  if (points.empty()) throw DegenerateError("Frechet mean of an empty set");
  Ambient mu = points.front();
  for (int it = 0; it < max_iter; ++it) {
    VectorXd g = VectorXd::Zero(points.front().size());
    for (const auto& x : points) g += log_map(m, mu, x);
    g /= static_cast<double>(points.size());
    mu = exp_map(m, mu, g);
    if (g.norm() < tol) break;
  }
  return mu;
}

Field frechet_mean_field(const std::vector<Field>& fields) {
  if (fields.empty()) throw DegenerateError("Frechet mean of an empty set");
  Field out = fields.front();
  for (const auto& f : fields)
    if (!f.same_shape(out)) throw ShapeError("frechet_mean_field: fields differ in shape");
#pragma omp parallel for schedule(static)
  for (int p = 0; p < out.points(); ++p) {
    std::vector<Ambient> pts;
    for (const auto& f : fields) pts.push_back(f.point(p));
    out.point(p) = frechet_mean(out.manifold(), pts);
  }
  return out;
}

std::vector<double> permutation_test(const std::vector<Field>& group_a, const std::vector<Field>& group_b, int n_perm,
                                     std::uint64_t seed) {
  if (group_a.size() < 2 || group_b.size() < 2) throw DegenerateError("permutation test needs >= 2 members per group");
  if (n_perm < 100) throw ValidationError("permutation test needs n_perm >= 100");
  for (const auto& f : group_a)
    if (!f.same_shape(group_a.front())) throw ShapeError("permutation test: fields differ in shape");
  for (const auto& f : group_b)
    if (!f.same_shape(group_a.front())) throw ShapeError("permutation test: fields differ in shape");

  // Canonical group order so that swapping A and B gives identical p-values.
  const std::vector<Field>* first = &group_a;
  const std::vector<Field>* second = &group_b;
  auto key = [](const std::vector<Field>& g) { return std::make_pair(g.size(), g.front().data()); };
  if (key(group_b) < key(group_a)) std::swap(first, second);

  std::vector<CoordField> subjects;
  for (const auto& f : *first) subjects.push_back(to_coords(f));
  for (const auto& f : *second) subjects.push_back(to_coords(f));
  const int n = static_cast<int>(subjects.size());
  const int na = static_cast<int>(first->size());
  const int locs = subjects.front().locations();
  const int width = subjects.front().channels * subjects.front().dim;

  // data(s) is the location-major coordinate vector of subject s.
  MatrixXd data(locs * width, n);
  for (int s = 0; s < n; ++s) data.col(s) = subjects[s].data;
  const VectorXd total = data.rowwise().sum();

  auto stats = [&](const std::vector<int>& in_a) {
    VectorXd sum_a = VectorXd::Zero(data.rows());
    for (int s : in_a) sum_a += data.col(s);
    const VectorXd diff = sum_a / na - (total - sum_a) / (n - na);
    VectorXd st(locs);
    for (int l = 0; l < locs; ++l) st[l] = diff.segment(static_cast<Eigen::Index>(l) * width, width).norm();
    return st;
  };
  std::vector<int> identity(na);
  for (int i = 0; i < na; ++i) identity[i] = i;
  const VectorXd observed = stats(identity);

  std::vector<long> counts(locs, 0);
#pragma omp parallel
  {
    std::vector<long> local(locs, 0);
#pragma omp for schedule(static)
    for (int k = 0; k < n_perm; ++k) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
      std::vector<int> idx(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(static_cast<std::uint64_t>(i) + 1)]);
      idx.resize(na);
      const VectorXd st = stats(idx);
      for (int l = 0; l < locs; ++l) local[l] += st[l] >= observed[l] * (1.0 - 1e-12);
    }
#pragma omp critical
    for (int l = 0; l < locs; ++l) counts[l] += local[l];
  }
  std::vector<double> p(locs);
  for (int l = 0; l < locs; ++l) p[l] = (1.0 + counts[l]) / (1.0 + n_perm);
  return p;
}

double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw ShapeError("IoU of masks with different sizes");
  int inter = 0, uni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

std::vector<bool> benjamini_hochberg(const std::vector<double>& p, double alpha) {
  const size_t n = p.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return p[a] < p[b]; });
  size_t cutoff = 0;
  for (size_t k = 0; k < n; ++k)
    if (p[order[k]] <= alpha * static_cast<double>(k + 1) / static_cast<double>(n)) cutoff = k + 1;
  std::vector<bool> sig(n, false);
  for (size_t k = 0; k < cutoff; ++k) sig[order[k]] = true;
  return sig;
}

std::vector<bool> significant(const std::vector<double>& p, double alpha, bool bh) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (bh) return benjamini_hochberg(p, alpha);
  std::vector<bool> s(p.size());
  for (size_t i = 0; i < p.size(); ++i) s[i] = p[i] < alpha;
  return s;
}

double iou_significant(const std::vector<double>& p_a, const std::vector<double>& p_b, double alpha) {
  if (p_a.size() != p_b.size()) throw ShapeError("IoU of p-maps with different sizes");
  return iou(significant(p_a, alpha), significant(p_b, alpha));
}

namespace {

std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

}  // namespace

std::string histogram_svg(const std::vector<double>& values, int bins, const std::string& title) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  const double w = 480, h = 300, left = 50, bottom = 40, top = 30;
  double lo = values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
  double hi = values.empty() ? 1.0 : *std::max_element(values.begin(), values.end());
  if (hi <= lo) hi = lo + 1.0;
  std::vector<int> counts(bins, 0);
  for (double v : values) counts[std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins))]++;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  s << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  const double pw = w - left - 20, ph = h - bottom - top;
  for (int b = 0; b < bins; ++b) {
    const double bh = ph * counts[b] / peak;
    s << "<rect x=\"" << left + pw * b / bins << "\" y=\"" << top + ph - bh << "\" width=\"" << pw / bins - 1
      << "\" height=\"" << bh << "\" fill=\"steelblue\"/>\n";
  }
  s << "<text x=\"" << left << "\" y=\"" << h - 15 << "\" font-size=\"11\">" << lo << "</text>\n";
  s << "<text x=\"" << left + pw << "\" y=\"" << h - 15 << "\" font-size=\"11\" text-anchor=\"end\">" << hi
    << "</text>\n";
  s << "<text x=\"5\" y=\"" << top + 10 << "\" font-size=\"11\">" << peak << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

std::string heatmap_svg(const MatrixXd& m, const std::string& title) {
  const double cell = std::max(8.0, 320.0 / std::max<Eigen::Index>(1, std::max(m.rows(), m.cols())));
  const double top = 30, left = 10;
  const double lo = m.size() ? m.minCoeff() : 0.0;
  double hi = m.size() ? m.maxCoeff() : 1.0;
  if (hi <= lo) hi = lo + 1.0;
  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left * 2 + cell * m.cols() << "\" height=\""
    << top + 10 + cell * m.rows() << "\">\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << svg_escape(title) << "</text>\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      // Dark = small value.
      const int g = static_cast<int>(255.0 * (m(i, j) - lo) / (hi - lo));
      s << "<rect x=\"" << left + cell * j << "\" y=\"" << top + cell * i << "\" width=\"" << cell << "\" height=\""
        << cell << "\" fill=\"rgb(" << g << "," << g << ",255)\"/>\n";
    }
  s << "</svg>\n";
  return s.str();
}

std::string encode_matrix(const MatrixXd& m) {
  std::string out;
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put(static_cast<std::uint64_t>(m.rows()), 4);
  put(static_cast<std::uint64_t>(m.cols()), 4);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put(std::bit_cast<std::uint64_t>(m(i, j)), 8);
  return out;
}

}  // namespace mglow
