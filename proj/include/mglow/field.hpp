#pragma once

#include <vector>

#include "mglow/geometry.hpp"

namespace mglow {

using Extents = std::vector<int>;

int volume(const Extents& extents);
std::string extents_to_string(const Extents& extents);

// Grid of chart coordinates: point p = loc * channels + ch holds `dim`
// consecutive values, locations in row-major order over the extents.
struct CoordField {
  Extents extents;
  int channels = 0;
  int dim = 0;
  VectorXd data;

  CoordField() = default;
  CoordField(Extents ext, int ch, int d);

  int locations() const { return volume(extents); }
  int points() const { return locations() * channels; }

  Eigen::Map<VectorXd> point(int p) { return {data.data() + static_cast<Eigen::Index>(p) * dim, dim}; }
  Eigen::Map<const VectorXd> point(int p) const { return {data.data() + static_cast<Eigen::Index>(p) * dim, dim}; }

  // channels x dim view of one location.
  Eigen::Map<RowMatrixXd> at(int loc) {
    return {data.data() + static_cast<Eigen::Index>(loc) * channels * dim, channels, dim};
  }
  Eigen::Map<const RowMatrixXd> at(int loc) const {
    return {data.data() + static_cast<Eigen::Index>(loc) * channels * dim, channels, dim};
  }

  bool same_shape(const CoordField& o) const {
    return extents == o.extents && channels == o.channels && dim == o.dim;
  }
};

// A grid of manifold points in ambient form.
class Field {
 public:
  // Every point starts at the manifold origin.
  Field(Manifold manifold, Extents extents, int channels);

  const Manifold& manifold() const { return manifold_; }
  const Extents& extents() const { return extents_; }
  int channels() const { return channels_; }
  int locations() const { return volume(extents_); }
  int points() const { return locations() * channels_; }

  Eigen::Map<VectorXd> point(int p) { return {data_.data() + static_cast<Eigen::Index>(p) * stride_, stride_}; }
  Eigen::Map<const VectorXd> point(int p) const {
    return {data_.data() + static_cast<Eigen::Index>(p) * stride_, stride_};
  }
  Ambient get(int loc, int ch) const { return point(loc * channels_ + ch); }
  void set(int loc, int ch, const Ambient& x) { point(loc * channels_ + ch) = x; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void validate() const;
  bool same_shape(const Field& o) const {
    return manifold_ == o.manifold_ && extents_ == o.extents_ && channels_ == o.channels_;
  }

 private:
  Manifold manifold_;
  Extents extents_;
  int channels_;
  int stride_;
  std::vector<double> data_;
};

CoordField to_coords(const Field& f);
Field from_coords(const Manifold& m, const CoordField& c);

// Squeeze by 2 along every spatial axis of extent >= 2 (extent 1 is left
// alone, odd extents are an error). New channel = ch * F + sub, where sub is
// the row-major index of the point's offset inside its 2 x ... x 2 block.
CoordField squeeze(const CoordField& x);
CoordField unsqueeze(const CoordField& y, const Extents& original_extents);
Field squeeze(const Field& x);
Field unsqueeze(const Field& y, const Extents& original_extents);
Extents squeezed_extents(const Extents& extents, int* factor = nullptr);

// First half of the channels is kept, the second half emitted.
std::pair<CoordField, CoordField> split_latent(const CoordField& x);
CoordField merge_latent(const CoordField& kept, const CoordField& emitted);
std::pair<Field, Field> split_latent(const Field& x);
Field merge_latent(const Field& kept, const Field& emitted);

}  // namespace mglow
