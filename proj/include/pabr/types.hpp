#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pabr/errors.hpp"

namespace pabr {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class MapRole : std::uint8_t { appearance = 0, part = 1, raw = 2 };

inline const char* to_string(MapRole role) {
  switch (role) {
    case MapRole::appearance: return "appearance";
    case MapRole::part: return "part";
    case MapRole::raw: return "raw";
  }
  return "?";
}

/// An h x w grid of c-dimensional descriptors. Stored as a c x (h*w) matrix
/// whose column y*w + x is the descriptor at grid position (x, y); the
/// column-major storage therefore lays values out channel-fastest in
/// (y, x, channel) order, matching the on-disk payload byte for byte.
template <typename Scalar>
struct FeatureMap {
  int h = 0;
  int w = 0;
  int c = 0;
  MapRole role = MapRole::raw;
  MatrixX<Scalar> data;  // c x (h*w)

  FeatureMap() = default;

  FeatureMap(int height, int width, int channels, MapRole r)
      : h(height), w(width), c(channels), role(r) {
    if (h <= 0 || w <= 0 || c <= 0)
      throw ValidationError("feature map dimensions must be positive");
    data = MatrixX<Scalar>::Zero(c, static_cast<Eigen::Index>(h) * w);
  }

  FeatureMap(int height, int width, int channels, MapRole r,
             MatrixX<Scalar> values)
      : h(height), w(width), c(channels), role(r), data(std::move(values)) {
    if (h <= 0 || w <= 0 || c <= 0)
      throw ValidationError("feature map dimensions must be positive");
    if (data.rows() != c || data.cols() != static_cast<Eigen::Index>(h) * w)
      throw ValidationError("feature map data does not match h*w*c");
  }

  Eigen::Index locations() const { return static_cast<Eigen::Index>(h) * w; }

  Eigen::Index location_index(int x, int y) const {
    return static_cast<Eigen::Index>(y) * w + x;
  }
};

/// Descriptor at grid position (x, y), channel order preserved.
template <typename Scalar>
VectorX<Scalar> descriptor_at(const FeatureMap<Scalar>& map, int x, int y) {
  if (x < 0 || x >= map.w || y < 0 || y >= map.h)
    throw RangeError("descriptor_at: position (" + std::to_string(x) + "," +
                     std::to_string(y) + ") outside " + std::to_string(map.w) +
                     "x" + std::to_string(map.h) + " grid");
  return map.data.col(map.location_index(x, y));
}

struct Violation {
  std::string kind;    // "length" or "non-finite"
  std::string detail;
  std::int64_t flat_index = -1;  // flat (y, x, channel) index, when meaningful
};

/// Diagnostic scan; reports every broken invariant instead of throwing.
template <typename Scalar>
std::vector<Violation> validate_map(const FeatureMap<Scalar>& map) {
  std::vector<Violation> out;
  const auto expected = static_cast<Eigen::Index>(map.h) * map.w * map.c;
  const auto actual = map.data.size();
  if (map.h <= 0 || map.w <= 0 || map.c <= 0 ||
      map.data.rows() != map.c || actual != expected) {
    out.push_back({"length",
                   "data holds " + std::to_string(actual) +
                       " values, expected h*w*c = " + std::to_string(expected),
                   -1});
    return out;  // indices below would be meaningless
  }
  const Scalar* p = map.data.data();
  for (Eigen::Index i = 0; i < actual; ++i) {
    if (!std::isfinite(static_cast<double>(p[i]))) {
      out.push_back({"non-finite",
                     "value at flat index " + std::to_string(i) +
                         " is not finite",
                     static_cast<std::int64_t>(i)});
    }
  }
  return out;
}

/// Layout of an embedding vector: either the exact bilinear layout of
/// c_A * c_P part-aligned blocks, or a d-dimensional sketch.
struct EmbeddingLayout {
  enum class Kind : std::uint8_t { exact = 0, sketched = 1 };

  Kind kind = Kind::exact;
  int c_a = 0;  // exact only
  int c_p = 0;  // exact only
  int d = 0;    // sketched only

  static EmbeddingLayout Exact(int c_a, int c_p) {
    if (c_a <= 0 || c_p <= 0)
      throw ValidationError("exact layout requires positive channel counts");
    EmbeddingLayout l;
    l.kind = Kind::exact;
    l.c_a = c_a;
    l.c_p = c_p;
    return l;
  }

  static EmbeddingLayout Sketched(int d) {
    if (d <= 0) throw ValidationError("sketch dimension must be positive");
    EmbeddingLayout l;
    l.kind = Kind::sketched;
    l.d = d;
    return l;
  }

  Eigen::Index length() const {
    return kind == Kind::exact ? static_cast<Eigen::Index>(c_a) * c_p
                               : static_cast<Eigen::Index>(d);
  }

  bool operator==(const EmbeddingLayout& o) const {
    if (kind != o.kind) return false;
    return kind == Kind::exact ? (c_a == o.c_a && c_p == o.c_p) : (d == o.d);
  }
  bool operator!=(const EmbeddingLayout& o) const { return !(*this == o); }
};

template <typename Scalar>
struct Embedding {
  VectorX<Scalar> values;
  EmbeddingLayout layout;
  bool normalized = false;

  Embedding() = default;

  Embedding(VectorX<Scalar> v, EmbeddingLayout l, bool norm = false)
      : values(std::move(v)), layout(l), normalized(norm) {
    if (values.size() != layout.length())
      throw DimensionError("embedding length " + std::to_string(values.size()) +
                           " does not match layout length " +
                           std::to_string(layout.length()));
    if (normalized) {
      const double n = values.template cast<double>().norm();
      if (n != 0.0 && std::abs(n - 1.0) > 1e-6)
        throw ValidationError("embedding flagged normalized but |norm-1| = " +
                              std::to_string(std::abs(n - 1.0)));
    }
  }
};

/// One image of the dataset: appearance and part streams over a shared grid.
template <typename Scalar>
struct ImageSample {
  std::string sample_id;
  int identity = 0;  // -1 marks a distractor, never a correct match
  int camera = 0;
  FeatureMap<Scalar> appearance_map;  // role appearance or raw
  FeatureMap<Scalar> part_map;        // role part or raw

  ImageSample() = default;

  ImageSample(std::string id, int ident, int cam, FeatureMap<Scalar> a,
              FeatureMap<Scalar> p)
      : sample_id(std::move(id)),
        identity(ident),
        camera(cam),
        appearance_map(std::move(a)),
        part_map(std::move(p)) {
    if (appearance_map.h != part_map.h || appearance_map.w != part_map.w)
      throw DimensionError("sample " + sample_id +
                           ": appearance and part maps must share (h, w)");
  }
};

enum class Split : std::uint8_t { train = 0, query = 1, gallery = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw FormatError("unknown split '" + s + "'");
}

/// Manifest row: labels plus paths of the two stored feature maps.
struct ManifestEntry {
  std::string sample_id;
  int identity = 0;
  int camera = 0;
  std::string appearance_path;
  std::string part_path;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> with_split(Split s) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }
};

}  // namespace pabr
