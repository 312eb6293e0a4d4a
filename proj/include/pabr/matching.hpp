#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/pooling.hpp"
#include "pabr/types.hpp"

namespace pabr {

/// Gallery ordering for one query, most similar first.
struct RankedResult {
  std::string query_id;
  std::vector<std::string> ordering;
  std::vector<double> similarities;  // aligned with ordering, non-increasing
};

/// Inner product of two embeddings with identical layout.
template <typename Scalar>
Scalar similarity(const Embedding<Scalar>& e1, const Embedding<Scalar>& e2) {
  if (e1.layout != e2.layout)
    throw DimensionError("similarity: embedding layouts differ");
  return e1.values.dot(e2.values);
}

/// lhs = <vec(a (x) p), vec(a' (x) p')>, rhs = <a, a'> * <p, p'>. The two are
/// equal up to rounding; both are returned so callers can check the identity.
template <typename Scalar>
std::pair<Scalar, Scalar> local_similarity_factorization(
    const Eigen::Ref<const VectorX<Scalar>>& a,
    const Eigen::Ref<const VectorX<Scalar>>& p,
    const Eigen::Ref<const VectorX<Scalar>>& a2,
    const Eigen::Ref<const VectorX<Scalar>>& p2) {
  VectorX<Scalar> f1 = local_part_aligned<Scalar>(a, p);
  VectorX<Scalar> f2 = local_part_aligned<Scalar>(a2, p2);
  return {f1.dot(f2), a.dot(a2) * p.dot(p2)};
}

/// Image similarity as the O(S^2) double sum of factorized local
/// similarities over sqrt(||f||)-scaled descriptors. Verification path only:
/// it must match the inner product of the normalized pooled embeddings, which
/// is what production ranking uses at O(S).
template <typename Scalar>
Scalar image_similarity_direct(const FeatureMap<Scalar>& A,
                               const FeatureMap<Scalar>& P,
                               const FeatureMap<Scalar>& A2,
                               const FeatureMap<Scalar>& P2) {
  detail::require_pairable(A, P, "image_similarity_direct");
  detail::require_pairable(A2, P2, "image_similarity_direct");
  if (A.c != A2.c || P.c != P2.c)
    throw DimensionError("image_similarity_direct: channel counts differ");

  const Scalar n1 = bilinear_pool(A, P).values.norm();
  const Scalar n2 = bilinear_pool(A2, P2).values.norm();
  if (n1 == Scalar(0) || n2 == Scalar(0))
    throw DegenerateEmbeddingError(
        "image_similarity_direct: zero pooled embedding");

  // Every local descriptor is scaled by sqrt of its own image's pooled norm,
  // so the double sum reproduces the normalized-embedding inner product.
  const MatrixX<Scalar> a1 = A.data / std::sqrt(n1);
  const MatrixX<Scalar> p1 = P.data / std::sqrt(n1);
  const MatrixX<Scalar> a2 = A2.data / std::sqrt(n2);
  const MatrixX<Scalar> p2 = P2.data / std::sqrt(n2);
  const Eigen::Index s1 = A.locations();
  const Eigen::Index s2 = A2.locations();

  Scalar acc = 0;
  for (Eigen::Index i = 0; i < s1; ++i)
    for (Eigen::Index j = 0; j < s2; ++j)
      acc += a1.col(i).dot(a2.col(j)) * p1.col(i).dot(p2.col(j));
  return acc / (static_cast<Scalar>(s1) * static_cast<Scalar>(s2));
}

/// Descending similarity ranking with deterministic tie-breaking by ascending
/// sample id. A zero (degenerate) query or gallery embedding scores -inf, so
/// it can never displace a real match.
template <typename Scalar>
RankedResult rank_gallery(
    const Embedding<Scalar>& query,
    const std::vector<std::pair<std::string, Embedding<Scalar>>>& gallery,
    std::string query_id = {}) {
  if (gallery.empty()) throw EmptyInputError("rank_gallery: empty gallery");

  const bool query_degenerate = query.values.isZero(Scalar(0));
  std::vector<std::size_t> order(gallery.size());
  std::vector<double> sims(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    order[i] = i;
    const auto& entry = gallery[i].second;
    if (query_degenerate || entry.values.isZero(Scalar(0)))
      sims[i] = -std::numeric_limits<double>::infinity();
    else
      sims[i] = static_cast<double>(similarity(query, entry));
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return gallery[a].first < gallery[b].first;
  });

  RankedResult result;
  result.query_id = std::move(query_id);
  result.ordering.reserve(gallery.size());
  result.similarities.reserve(gallery.size());
  for (std::size_t i : order) {
    result.ordering.push_back(gallery[i].first);
    result.similarities.push_back(sims[i]);
  }
  return result;
}

}  // namespace pabr
