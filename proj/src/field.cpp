#include "mglow/field.hpp"

#include <sstream>
#include <type_traits>

#include "mglow/errors.hpp"

namespace mglow {

int volume(const Extents& extents) {
  int v = 1;
  for (int e : extents) v *= e;
  return v;
}

std::string extents_to_string(const Extents& extents) {
  std::ostringstream os;
  for (size_t i = 0; i < extents.size(); ++i) os << (i ? "x" : "") << extents[i];
  return os.str();
}

namespace {

void check_extents(const Extents& extents) {
  if (extents.empty() || extents.size() > 3) throw ShapeError("fields have 1 to 3 spatial dimensions");
  for (int e : extents)
    if (e < 1) throw ShapeError("spatial extents must be positive");
}

// src[q] = input point feeding output point q of a squeeze.
std::vector<int> squeeze_sources(const Extents& in, int channels, Extents& out, int& factor) {
  const int rank = static_cast<int>(in.size());
  std::vector<int> f(rank);
  factor = 1;
  out.resize(rank);
  for (int d = 0; d < rank; ++d) {
    if (in[d] == 1) {
      f[d] = 1;
    } else if (in[d] % 2 != 0) {
      throw ShapeError("cannot squeeze odd extent " + std::to_string(in[d]));
    } else {
      f[d] = 2;
    }
    out[d] = in[d] / f[d];
    factor *= f[d];
  }
  const int out_loc = volume(out);
  const int out_ch = channels * factor;
  std::vector<int> src(static_cast<size_t>(out_loc) * out_ch);
  std::vector<int> oc(rank), off(rank);
  for (int lo = 0; lo < out_loc; ++lo) {
    int r = lo;
    for (int d = rank - 1; d >= 0; --d) {
      oc[d] = r % out[d];
      r /= out[d];
    }
    for (int ch = 0; ch < channels; ++ch) {
      for (int sub = 0; sub < factor; ++sub) {
        int s = sub;
        for (int d = rank - 1; d >= 0; --d) {
          off[d] = s % f[d];
          s /= f[d];
        }
        int li = 0;
        for (int d = 0; d < rank; ++d) li = li * in[d] + oc[d] * f[d] + off[d];
        src[static_cast<size_t>(lo) * out_ch + ch * factor + sub] = li * channels + ch;
      }
    }
  }
  return src;
}

template <class Vec>
void permute_points(const Vec& in, Vec& out, const std::vector<int>& src, int stride, bool inverse) {
  for (size_t q = 0; q < src.size(); ++q) {
    const auto a = static_cast<Eigen::Index>(inverse ? src[q] : q) * stride;
    const auto b = static_cast<Eigen::Index>(inverse ? q : src[q]) * stride;
    for (int k = 0; k < stride; ++k) out[a + k] = in[b + k];
  }
}

}  // namespace

CoordField::CoordField(Extents ext, int ch, int d) : extents(std::move(ext)), channels(ch), dim(d) {
  check_extents(extents);
  if (channels < 1 || dim < 1) throw ShapeError("channels and chart dimension must be positive");
  data = VectorXd::Zero(static_cast<Eigen::Index>(points()) * dim);
}

Field::Field(Manifold manifold, Extents extents, int channels)
    : manifold_(std::move(manifold)), extents_(std::move(extents)), channels_(channels) {
  check_extents(extents_);
  if (channels_ < 1) throw ShapeError("channels must be positive");
  stride_ = manifold_.ambient_size();
  data_.resize(static_cast<size_t>(points()) * stride_);
  const Ambient o = manifold_.origin();
  for (int p = 0; p < points(); ++p) point(p) = o;
}

void Field::validate() const {
  for (int p = 0; p < points(); ++p) {
    try {
      manifold_.validate(point(p));
    } catch (const InvalidPointError& e) {
      throw InvalidPointError(std::string(e.what()) + " at location " + std::to_string(p / channels_) +
                              ", channel " + std::to_string(p % channels_));
    }
  }
}

CoordField to_coords(const Field& f) {
  CoordField c(f.extents(), f.channels(), f.manifold().dim());
  for (int p = 0; p < f.points(); ++p) c.point(p) = f.manifold().chart_forward(f.point(p));
  return c;
}

Field from_coords(const Manifold& m, const CoordField& c) {
  if (c.dim != m.dim()) throw ShapeError("coordinate dimension does not match the manifold");
  Field f(m, c.extents, c.channels);
  for (int p = 0; p < c.points(); ++p) f.point(p) = m.chart_inverse(c.point(p));
  return f;
}

Extents squeezed_extents(const Extents& extents, int* factor) {
  Extents out;
  int fac = 1;
  squeeze_sources(extents, 1, out, fac);
  if (factor) *factor = fac;
  return out;
}

CoordField squeeze(const CoordField& x) {
  Extents out;
  int factor;
  const auto src = squeeze_sources(x.extents, x.channels, out, factor);
  CoordField y(out, x.channels * factor, x.dim);
  permute_points(x.data, y.data, src, x.dim, false);
  return y;
}

CoordField unsqueeze(const CoordField& y, const Extents& original_extents) {
  Extents out;
  int factor;
  const Extents sq = squeezed_extents(original_extents, &factor);
  if (sq != y.extents || y.channels % factor != 0) throw ShapeError("unsqueeze: shape does not match the original");
  const auto src = squeeze_sources(original_extents, y.channels / factor, out, factor);
  CoordField x(original_extents, y.channels / factor, y.dim);
  permute_points(y.data, x.data, src, y.dim, true);
  return x;
}

Field squeeze(const Field& x) {
  Extents out;
  int factor;
  const auto src = squeeze_sources(x.extents(), x.channels(), out, factor);
  Field y(x.manifold(), out, x.channels() * factor);
  permute_points(x.data(), y.data(), src, x.manifold().ambient_size(), false);
  return y;
}

Field unsqueeze(const Field& y, const Extents& original_extents) {
  Extents out;
  int factor;
  const Extents sq = squeezed_extents(original_extents, &factor);
  if (sq != y.extents() || y.channels() % factor != 0)
    throw ShapeError("unsqueeze: shape does not match the original");
  const auto src = squeeze_sources(original_extents, y.channels() / factor, out, factor);
  Field x(y.manifold(), original_extents, y.channels() / factor);
  permute_points(y.data(), x.data(), src, y.manifold().ambient_size(), true);
  return x;
}

namespace {

// Copies channels [c0, c0 + n) of every location.
template <class F, class Make>
F take_channels(const F& x, int c0, int n, int stride, int channels, int locations, Make make) {
  F out = make(n);
  auto& od = [&]() -> auto& {
    if constexpr (std::is_same_v<F, CoordField>) return out.data;
    else return out.data();
  }();
  const auto& id = [&]() -> const auto& {
    if constexpr (std::is_same_v<F, CoordField>) return x.data;
    else return x.data();
  }();
  for (int loc = 0; loc < locations; ++loc)
    for (int ch = 0; ch < n; ++ch)
      for (int k = 0; k < stride; ++k)
        od[(static_cast<size_t>(loc) * n + ch) * stride + k] =
            id[(static_cast<size_t>(loc) * channels + c0 + ch) * stride + k];
  return out;
}

}  // namespace

std::pair<CoordField, CoordField> split_latent(const CoordField& x) {
  if (x.channels % 2 != 0) throw ShapeError("split needs an even channel count, got " + std::to_string(x.channels));
  const int h = x.channels / 2;
  auto make = [&](int n) { return CoordField(x.extents, n, x.dim); };
  return {take_channels(x, 0, h, x.dim, x.channels, x.locations(), make),
          take_channels(x, h, h, x.dim, x.channels, x.locations(), make)};
}

CoordField merge_latent(const CoordField& kept, const CoordField& emitted) {
  if (kept.extents != emitted.extents || kept.dim != emitted.dim || kept.channels != emitted.channels)
    throw ShapeError("merge: kept and emitted halves do not match");
  CoordField x(kept.extents, kept.channels * 2, kept.dim);
  const int h = kept.channels;
  for (int loc = 0; loc < x.locations(); ++loc) {
    x.at(loc).topRows(h) = kept.at(loc);
    x.at(loc).bottomRows(h) = emitted.at(loc);
  }
  return x;
}

std::pair<Field, Field> split_latent(const Field& x) {
  if (x.channels() % 2 != 0)
    throw ShapeError("split needs an even channel count, got " + std::to_string(x.channels()));
  const int h = x.channels() / 2;
  auto make = [&](int n) { return Field(x.manifold(), x.extents(), n); };
  const int s = x.manifold().ambient_size();
  return {take_channels(x, 0, h, s, x.channels(), x.locations(), make),
          take_channels(x, h, h, s, x.channels(), x.locations(), make)};
}

Field merge_latent(const Field& kept, const Field& emitted) {
  if (!kept.same_shape(emitted)) throw ShapeError("merge: kept and emitted halves do not match");
  Field x(kept.manifold(), kept.extents(), kept.channels() * 2);
  const int h = kept.channels();
  for (int loc = 0; loc < x.locations(); ++loc)
    for (int ch = 0; ch < h; ++ch) {
      x.set(loc, ch, kept.get(loc, ch));
      x.set(loc, h + ch, emitted.get(loc, ch));
    }
  return x;
}

}  // namespace mglow
