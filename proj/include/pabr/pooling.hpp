#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/types.hpp"

namespace pabr {

/// Axis-aligned grid rectangle, half-open: x in [x0, x1), y in [y0, y1).
struct BoxRegion {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool contains(int x, int y) const {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }
  Eigen::Index area() const {
    return static_cast<Eigen::Index>(x1 - x0) * (y1 - y0);
  }
};

/// K rectangles over an h x w grid; regions may overlap.
struct BoxPartLayout {
  std::vector<BoxRegion> regions;

  void check(int h, int w) const {
    if (regions.empty())
      throw ValidationError("box layout needs at least one region");
    for (std::size_t k = 0; k < regions.size(); ++k) {
      const auto& r = regions[k];
      if (r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h || r.x0 >= r.x1 ||
          r.y0 >= r.y1)
        throw RangeError("box region " + std::to_string(k) +
                         " does not fit the " + std::to_string(w) + "x" +
                         std::to_string(h) + " grid");
    }
  }
};

namespace detail {

template <typename Scalar>
void require_pairable(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& p,
                      const char* op) {
  if (a.role == MapRole::part)
    throw ValidationError(std::string(op) + ": first map has part role");
  if (p.role == MapRole::appearance)
    throw ValidationError(std::string(op) + ": second map has appearance role");
  if (a.h != p.h || a.w != p.w)
    throw DimensionError(std::string(op) + ": maps are " + std::to_string(a.w) +
                         "x" + std::to_string(a.h) + " vs " +
                         std::to_string(p.w) + "x" + std::to_string(p.h));
}

}  // namespace detail

/// vec(a (x) p): block k (length c_A) is p_k * a, blocks ordered by part
/// channel. Column-major flattening of the outer product gives exactly that.
template <typename Scalar>
VectorX<Scalar> local_part_aligned(const Eigen::Ref<const VectorX<Scalar>>& a,
                                   const Eigen::Ref<const VectorX<Scalar>>& p) {
  MatrixX<Scalar> outer = a * p.transpose();
  return outer.reshaped();
}

/// Bilinear transform at every location followed by spatial average pooling.
/// Equals vec(A_mat * P_mat^T) / S with the maps as c x S matrices.
template <typename Scalar>
Embedding<Scalar> bilinear_pool(const FeatureMap<Scalar>& A,
                                const FeatureMap<Scalar>& P) {
  detail::require_pairable(A, P, "bilinear_pool");
  const Scalar s = static_cast<Scalar>(A.locations());
  MatrixX<Scalar> pooled = (A.data * P.data.transpose()) / s;
  return Embedding<Scalar>(pooled.reshaped(),
                           EmbeddingLayout::Exact(A.c, P.c));
}

/// f / ||f||_2. A zero vector has no direction to keep, so it is an error;
/// ranking code treats such samples as matching nothing.
template <typename Scalar>
Embedding<Scalar> normalize(const Embedding<Scalar>& f) {
  const Scalar n = f.values.norm();
  if (n == Scalar(0))
    throw DegenerateEmbeddingError("cannot normalize a zero embedding");
  return Embedding<Scalar>(f.values / n, f.layout, true);
}

/// Part map whose channel k is the membership indicator of region k.
template <typename Scalar>
FeatureMap<Scalar> box_indicator_partmap(const BoxPartLayout& layout, int h,
                                         int w) {
  layout.check(h, w);
  const int k_regions = static_cast<int>(layout.regions.size());
  FeatureMap<Scalar> map(h, w, k_regions, MapRole::part);
  for (int k = 0; k < k_regions; ++k) {
    const auto& r = layout.regions[k];
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        map.data(k, map.location_index(x, y)) = Scalar(1);
  }
  return map;
}

/// Per-channel spatial mean.
template <typename Scalar>
VectorX<Scalar> global_average_pool(const FeatureMap<Scalar>& A) {
  return A.data.rowwise().mean();
}

/// Concatenated per-channel spatial means of the two streams.
template <typename Scalar>
VectorX<Scalar> concat_average_pool(const FeatureMap<Scalar>& A,
                                    const FeatureMap<Scalar>& P) {
  detail::require_pairable(A, P, "concat_average_pool");
  VectorX<Scalar> out(A.c + P.c);
  out.head(A.c) = A.data.rowwise().mean();
  out.tail(P.c) = P.data.rowwise().mean();
  return out;
}

/// Elementwise clamp at zero for part descriptors.
template <typename Scalar>
void clamp_nonnegative(FeatureMap<Scalar>& map) {
  map.data = map.data.cwiseMax(Scalar(0));
}

}  // namespace pabr
