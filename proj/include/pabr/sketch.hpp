#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/pooling.hpp"
#include "pabr/rng.hpp"
#include "pabr/types.hpp"

namespace pabr {

/// Signed-bucket random projections for the two streams. Never serialized:
/// the same seed reconstructs identical maps on any machine, which is what
/// makes stored sketched galleries comparable across runs.
struct SketchParams {
  int d = 0;
  std::vector<int> hash_a;          // index -> bucket in [0, d)
  std::vector<std::int8_t> sign_a;  // index -> +1 / -1
  std::vector<int> hash_p;
  std::vector<std::int8_t> sign_p;
  std::uint64_t seed = 0;

  static SketchParams generate(int c_a, int c_p, int d, std::uint64_t seed) {
    if (c_a <= 0 || c_p <= 0 || d <= 0)
      throw ValidationError("sketch params need positive c_a, c_p, d");
    SketchParams params;
    params.d = d;
    params.seed = seed;
    params.hash_a.resize(c_a);
    params.sign_a.resize(c_a);
    params.hash_p.resize(c_p);
    params.sign_p.resize(c_p);
    // Separate streams keep the appearance maps independent of the part maps.
    for (int i = 0; i < c_a; ++i) {
      params.hash_a[i] = static_cast<int>(rng::at(seed, 0, i) % d);
      params.sign_a[i] = (rng::at(seed, 1, i) >> 63) ? 1 : -1;
    }
    for (int i = 0; i < c_p; ++i) {
      params.hash_p[i] = static_cast<int>(rng::at(seed, 2, i) % d);
      params.sign_p[i] = (rng::at(seed, 3, i) >> 63) ? 1 : -1;
    }
    return params;
  }
};

/// out_j = sum over i with hash(i) = j of sign(i) * x_i.
template <typename Scalar>
VectorX<Scalar> count_sketch(const Eigen::Ref<const VectorX<Scalar>>& x,
                             const std::vector<int>& hash,
                             const std::vector<std::int8_t>& sign, int d) {
  if (static_cast<std::size_t>(x.size()) != hash.size() ||
      hash.size() != sign.size())
    throw DimensionError("count_sketch: input length " +
                         std::to_string(x.size()) +
                         " does not match hash/sign maps");
  VectorX<Scalar> out = VectorX<Scalar>::Zero(d);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    out[hash[static_cast<std::size_t>(i)]] +=
        static_cast<Scalar>(sign[static_cast<std::size_t>(i)]) * x[i];
  return out;
}

namespace detail {

constexpr double kPi = 3.141592653589793238462643383279502884;

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 transform, in place.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1 : -1);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

}  // namespace detail

/// Direct O(d^2) circular convolution: out_k = sum_j u_j * v_{(k-j) mod d}.
template <typename Scalar>
VectorX<Scalar> circular_convolve_direct(
    const Eigen::Ref<const VectorX<Scalar>>& u,
    const Eigen::Ref<const VectorX<Scalar>>& v) {
  if (u.size() != v.size())
    throw DimensionError("circular_convolve: lengths " +
                         std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  const Eigen::Index d = u.size();
  VectorX<Scalar> out = VectorX<Scalar>::Zero(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j <= k; ++j)
      acc += static_cast<double>(u[j]) * static_cast<double>(v[k - j]);
    for (Eigen::Index j = k + 1; j < d; ++j)
      acc += static_cast<double>(u[j]) * static_cast<double>(v[k - j + d]);
    out[k] = static_cast<Scalar>(acc);
  }
  return out;
}

/// Circular convolution; frequency-domain product when d is a power of two,
/// direct summation otherwise. Internals run in double either way.
template <typename Scalar>
VectorX<Scalar> circular_convolve(const Eigen::Ref<const VectorX<Scalar>>& u,
                                  const Eigen::Ref<const VectorX<Scalar>>& v) {
  if (u.size() != v.size())
    throw DimensionError("circular_convolve: lengths " +
                         std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  const std::size_t d = static_cast<std::size_t>(u.size());
  if (!detail::is_pow2(d)) return circular_convolve_direct<Scalar>(u, v);

  std::vector<std::complex<double>> fu(d), fv(d);
  for (std::size_t i = 0; i < d; ++i) {
    fu[i] = static_cast<double>(u[static_cast<Eigen::Index>(i)]);
    fv[i] = static_cast<double>(v[static_cast<Eigen::Index>(i)]);
  }
  detail::fft_inplace(fu, false);
  detail::fft_inplace(fv, false);
  for (std::size_t i = 0; i < d; ++i) fu[i] *= fv[i];
  detail::fft_inplace(fu, true);

  VectorX<Scalar> out(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i)
    out[static_cast<Eigen::Index>(i)] = static_cast<Scalar>(fu[i].real());
  return out;
}

/// Index involution v~_i = v_{(-i) mod d}; convolving an upstream gradient
/// with the involution of one factor yields the gradient of the other.
template <typename Scalar>
VectorX<Scalar> circular_involution(const Eigen::Ref<const VectorX<Scalar>>& v) {
  const Eigen::Index d = v.size();
  VectorX<Scalar> out(d);
  out[0] = v[0];
  for (Eigen::Index i = 1; i < d; ++i) out[i] = v[d - i];
  return out;
}

/// Sketch of vec(a (x) p): the circular convolution of the two count
/// sketches. Bilinear in a and p; inner products are unbiased estimates of
/// the exact bilinear inner products.
template <typename Scalar>
VectorX<Scalar> tensor_sketch_local(const Eigen::Ref<const VectorX<Scalar>>& a,
                                    const Eigen::Ref<const VectorX<Scalar>>& p,
                                    const SketchParams& params) {
  VectorX<Scalar> sa =
      count_sketch<Scalar>(a, params.hash_a, params.sign_a, params.d);
  VectorX<Scalar> sp =
      count_sketch<Scalar>(p, params.hash_p, params.sign_p, params.d);
  return circular_convolve<Scalar>(sa, sp);
}

/// Spatial average of the per-location tensor sketches.
template <typename Scalar>
Embedding<Scalar> compact_bilinear_pool(const FeatureMap<Scalar>& A,
                                        const FeatureMap<Scalar>& P,
                                        const SketchParams& params) {
  detail::require_pairable(A, P, "compact_bilinear_pool");
  if (static_cast<std::size_t>(A.c) != params.hash_a.size() ||
      static_cast<std::size_t>(P.c) != params.hash_p.size())
    throw DimensionError("compact_bilinear_pool: channel counts " +
                         std::to_string(A.c) + "/" + std::to_string(P.c) +
                         " do not match sketch params");
  const Eigen::Index s = A.locations();
  VectorX<Scalar> acc = VectorX<Scalar>::Zero(params.d);
  for (Eigen::Index loc = 0; loc < s; ++loc)
    acc += tensor_sketch_local<Scalar>(A.data.col(loc), P.data.col(loc),
                                       params);
  acc /= static_cast<Scalar>(s);
  return Embedding<Scalar>(std::move(acc), EmbeddingLayout::Sketched(params.d));
}

/// Plain dot product of two sketched embeddings built with the same params.
template <typename Scalar>
Scalar estimate_inner_product(const Embedding<Scalar>& e1,
                              const Embedding<Scalar>& e2) {
  if (e1.layout.kind != EmbeddingLayout::Kind::sketched ||
      e2.layout.kind != EmbeddingLayout::Kind::sketched ||
      e1.layout.d != e2.layout.d)
    throw DimensionError("estimate_inner_product needs two sketches of equal d");
  return e1.values.dot(e2.values);
}

}  // namespace pabr
