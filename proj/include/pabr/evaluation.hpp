#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/pooling.hpp"
#include "pabr/rng.hpp"
#include "pabr/types.hpp"

namespace pabr {

template <typename Scalar>
struct LabeledEmbedding {
  std::string sample_id;
  int identity = 0;
  int camera = 0;
  Embedding<Scalar> embedding;
};

struct EvalReport {
  std::vector<int> ranks;      // the k of each cmc entry
  std::vector<double> cmc;     // cmc[i] = fraction of queries hit by rank ranks[i]
  double map = 0.0;
  std::vector<double> per_query_ap;  // valid queries only, in query order
  int num_valid_queries = 0;
  int num_dropped_queries = 0;
};

namespace detail {

// Ordered gallery scan for one query: candidates sorted by similarity
// descending, ties broken by sample id ascending for reproducibility.
template <typename Scalar>
std::vector<std::size_t> ranked_candidates(
    const LabeledEmbedding<Scalar>& query,
    const std::vector<LabeledEmbedding<Scalar>>& gallery,
    const std::vector<char>& keep) {
  std::vector<std::size_t> order;
  order.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i)
    if (keep[i]) order.push_back(i);

  const bool query_zero = query.embedding.values.isZero(0);
  std::vector<double> sims(gallery.size(), 0.0);
  for (std::size_t i : order) {
    if (query_zero || gallery[i].embedding.values.isZero(0))
      sims[i] = -std::numeric_limits<double>::infinity();
    else
      sims[i] = static_cast<double>(
          query.embedding.values.dot(gallery[i].embedding.values));
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (sims[a] != sims[b]) return sims[a] > sims[b];
    return gallery[a].sample_id < gallery[b].sample_id;
  });
  return order;
}

}  // namespace detail

/// Single-shot CMC and mAP. For each query, gallery images sharing the
/// query's identity and camera are excluded; distractors (identity -1) are
/// never correct; queries left without a ground-truth match are dropped and
/// counted.
template <typename Scalar>
EvalReport evaluate(const std::vector<LabeledEmbedding<Scalar>>& queries,
                    const std::vector<LabeledEmbedding<Scalar>>& gallery,
                    std::vector<int> ranks = {1, 5, 10, 20}) {
  if (queries.empty()) throw EmptyInputError("evaluate: no queries");
  if (gallery.empty()) throw EmptyInputError("evaluate: no gallery");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].embedding.layout != queries[0].embedding.layout)
      throw DimensionError("evaluate: query embeddings disagree on layout");
  }
  for (const auto& g : gallery)
    if (g.embedding.layout != queries[0].embedding.layout)
      throw DimensionError("evaluate: gallery layout differs from queries");

  EvalReport report;
  report.ranks = std::move(ranks);
  std::sort(report.ranks.begin(), report.ranks.end());
  std::vector<double> hits_by_rank(report.ranks.size(), 0.0);

  for (const auto& q : queries) {
    std::vector<char> keep(gallery.size(), 1);
    bool has_gt = false;
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      const auto& g = gallery[i];
      if (g.identity == q.identity && g.camera == q.camera && q.identity >= 0)
        keep[i] = 0;  // same view of the same person is not a retrieval
      else if (g.identity == q.identity && q.identity >= 0)
        has_gt = true;
    }
    if (!has_gt) {
      ++report.num_dropped_queries;
      continue;
    }
    ++report.num_valid_queries;

    auto order = detail::ranked_candidates(q, gallery, keep);
    int first_hit = -1;
    int num_gt = 0;
    double ap = 0.0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      if (gallery[order[pos]].identity != q.identity) continue;
      ++num_gt;
      ap += static_cast<double>(num_gt) / static_cast<double>(pos + 1);
      if (first_hit < 0) first_hit = static_cast<int>(pos);
    }
    ap /= static_cast<double>(num_gt);
    report.per_query_ap.push_back(ap);
    for (std::size_t r = 0; r < report.ranks.size(); ++r)
      if (first_hit >= 0 && first_hit < report.ranks[r]) hits_by_rank[r] += 1.0;
  }

  if (report.num_valid_queries == 0)
    throw EmptyInputError("evaluate: every query lacked a ground-truth match");

  report.cmc.resize(report.ranks.size());
  for (std::size_t r = 0; r < report.ranks.size(); ++r)
    report.cmc[r] = hits_by_rank[r] / report.num_valid_queries;
  double ap_sum = 0.0;
  for (double ap : report.per_query_ap) ap_sum += ap;
  report.map = ap_sum / report.num_valid_queries;
  return report;
}

/// Repeated single-gallery-shot protocol: per trial, each identity seen by
/// both views contributes one probe from camera 0 and one gallery image from
/// camera 1; reported numbers are the mean over trials.
template <typename Scalar>
EvalReport evaluate_multi_trial(
    const std::vector<LabeledEmbedding<Scalar>>& pool, int trials,
    std::uint64_t seed, std::vector<int> ranks = {1, 5, 10, 20}) {
  if (trials <= 0) throw ConfigError("evaluate_multi_trial: trials must be > 0");
  if (pool.empty()) throw EmptyInputError("evaluate_multi_trial: no samples");

  // Bucket by identity and view, keeping only labeled identities.
  std::vector<int> ids;
  std::vector<std::vector<std::size_t>> probes, galleries;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].identity < 0 || pool[i].camera > 1) continue;
    std::size_t g = 0;
    for (; g < ids.size(); ++g)
      if (ids[g] == pool[i].identity) break;
    if (g == ids.size()) {
      ids.push_back(pool[i].identity);
      probes.emplace_back();
      galleries.emplace_back();
    }
    (pool[i].camera == 0 ? probes[g] : galleries[g]).push_back(i);
  }
  for (std::size_t g = 0; g < ids.size(); ++g)
    if (probes[g].empty() || galleries[g].empty())
      throw ConfigError("evaluate_multi_trial: identity " +
                        std::to_string(ids[g]) +
                        " is missing a view (needs one image per camera)");
  if (ids.empty())
    throw EmptyInputError("evaluate_multi_trial: no labeled identities");

  EvalReport mean;
  mean.ranks = ranks;
  std::sort(mean.ranks.begin(), mean.ranks.end());
  mean.cmc.assign(mean.ranks.size(), 0.0);
  rng::Engine picker(seed, 30);

  for (int t = 0; t < trials; ++t) {
    std::vector<LabeledEmbedding<Scalar>> trial_q, trial_g;
    for (std::size_t g = 0; g < ids.size(); ++g) {
      trial_q.push_back(pool[probes[g][picker.next_below(probes[g].size())]]);
      trial_g.push_back(
          pool[galleries[g][picker.next_below(galleries[g].size())]]);
    }
    EvalReport r = evaluate(trial_q, trial_g, mean.ranks);
    for (std::size_t k = 0; k < mean.cmc.size(); ++k) mean.cmc[k] += r.cmc[k];
    mean.map += r.map;
    mean.num_valid_queries += r.num_valid_queries;
    mean.num_dropped_queries += r.num_dropped_queries;
  }
  for (auto& v : mean.cmc) v /= trials;
  mean.map /= trials;
  return mean;
}

/// Mean of several normalized embeddings, renormalized. The fused vector is
/// degenerate only if the inputs cancel exactly.
template <typename Scalar>
Embedding<Scalar> multi_query_fuse(
    const std::vector<Embedding<Scalar>>& embeddings) {
  if (embeddings.empty()) throw EmptyInputError("multi_query_fuse: no inputs");
  for (const auto& e : embeddings)
    if (e.layout != embeddings[0].layout)
      throw DimensionError("multi_query_fuse: embeddings disagree on layout");
  VectorX<Scalar> mean = VectorX<Scalar>::Zero(embeddings[0].values.size());
  for (const auto& e : embeddings) mean += e.values;
  mean /= static_cast<Scalar>(embeddings.size());
  Embedding<Scalar> fused(std::move(mean), embeddings[0].layout, false);
  return normalize(fused);
}

}  // namespace pabr
