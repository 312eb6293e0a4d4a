#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pabr/errors.hpp"
#include "pabr/pooling.hpp"
#include "pabr/rng.hpp"
#include "pabr/sketch.hpp"
#include "pabr/types.hpp"

namespace pabr {

/// Per-location affine heads standing in for the final layers of the two
/// streams: raw channels in, appearance / part channels out.
template <typename Scalar>
struct LinearHeads {
  MatrixX<Scalar> w_a;  // c_A x raw appearance channels
  VectorX<Scalar> b_a;
  MatrixX<Scalar> w_p;  // c_P x raw part channels
  VectorX<Scalar> b_p;
  bool nonneg_parts = false;

  void check_finite() const {
    if (!w_a.allFinite() || !b_a.allFinite() || !w_p.allFinite() ||
        !b_p.allFinite())
      throw NumericError("heads contain non-finite entries");
  }
};

/// Gradient (or momentum) buffers shaped like the heads.
template <typename Scalar>
struct HeadTensors {
  MatrixX<Scalar> w_a;
  VectorX<Scalar> b_a;
  MatrixX<Scalar> w_p;
  VectorX<Scalar> b_p;

  static HeadTensors zeros_like(const LinearHeads<Scalar>& heads) {
    HeadTensors t;
    t.w_a = MatrixX<Scalar>::Zero(heads.w_a.rows(), heads.w_a.cols());
    t.b_a = VectorX<Scalar>::Zero(heads.b_a.size());
    t.w_p = MatrixX<Scalar>::Zero(heads.w_p.rows(), heads.w_p.cols());
    t.b_p = VectorX<Scalar>::Zero(heads.b_p.size());
    return t;
  }

  bool all_finite() const {
    return w_a.allFinite() && b_a.allFinite() && w_p.allFinite() &&
           b_p.allFinite();
  }
};

struct TripletLossConfig {
  double margin = 0.2;

  void check() const {
    if (margin < 0) throw ValidationError("margin must be >= 0");
  }
};

struct OptimizerConfig {
  double learning_rate = 0.01;
  double weight_decay = 2e-3;
  double momentum = 0.9;
  double lr_decay_factor = 5.0;
  int lr_decay_every = 20000;
  int total_iters = 75000;

  void check() const {
    if (learning_rate <= 0 || lr_decay_factor <= 0 || lr_decay_every <= 0)
      throw ValidationError("learning rate and decay schedule must be positive");
    if (weight_decay < 0) throw ValidationError("weight decay must be >= 0");
    if (momentum < 0 || momentum >= 1)
      throw ValidationError("momentum must lie in [0, 1)");
    if (total_iters < 0) throw ValidationError("total_iters must be >= 0");
  }
};

/// Step-decay schedule: lr0 / factor^floor(iter / every).
inline double learning_rate_at(const OptimizerConfig& cfg, int iter) {
  const int k = iter / cfg.lr_decay_every;
  double denom = 1.0;
  for (int i = 0; i < k; ++i) denom *= cfg.lr_decay_factor;
  return cfg.learning_rate / denom;
}

/// Hinge on the similarity gap between the positive and negative pair.
inline double triplet_loss(double sim_query_pos, double sim_query_neg,
                           const TripletLossConfig& cfg) {
  return std::max(cfg.margin + sim_query_neg - sim_query_pos, 0.0);
}

/// Identity-grouped mini-batch. Groups own their samples so an image drawn
/// twice (replacement sampling) simply occupies two slots.
template <typename Scalar>
struct TripletBatch {
  struct Group {
    int identity = 0;
    std::vector<ImageSample<Scalar>> samples;
  };
  std::vector<Group> groups;

  std::size_t total_images() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.samples.size();
    return n;
  }

  void check() const {
    if (groups.size() < 2)
      throw MalformedBatchError("batch needs at least 2 identities");
    for (const auto& g : groups)
      if (g.samples.size() < 2)
        throw MalformedBatchError("identity " + std::to_string(g.identity) +
                                  " has fewer than 2 images in the batch");
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (std::size_t j = i + 1; j < groups.size(); ++j)
        if (groups[i].identity == groups[j].identity)
          throw MalformedBatchError("identity " +
                                    std::to_string(groups[i].identity) +
                                    " appears in two groups");
  }
};

/// Number of (query, positive, negative) triplets the batch generates:
/// sum over groups of |g| * (|g| - 1) * (B - |g|).
template <typename Scalar>
std::uint64_t triplet_count(const TripletBatch<Scalar>& batch) {
  batch.check();
  const std::uint64_t b = batch.total_images();
  std::uint64_t n = 0;
  for (const auto& g : batch.groups) {
    const std::uint64_t s = g.samples.size();
    n += s * (s - 1) * (b - s);
  }
  return n;
}

/// Visits every triplet as flat slot indices (query, positive, negative);
/// slots number the batch images group by group.
template <typename Scalar, typename Fn>
void for_each_triplet(const TripletBatch<Scalar>& batch, Fn&& fn) {
  batch.check();
  std::vector<std::pair<std::size_t, std::size_t>> group_span;  // [begin, end)
  std::size_t offset = 0;
  for (const auto& g : batch.groups) {
    group_span.emplace_back(offset, offset + g.samples.size());
    offset += g.samples.size();
  }
  const std::size_t b = offset;
  for (std::size_t gi = 0; gi < batch.groups.size(); ++gi) {
    const auto [begin, end] = group_span[gi];
    for (std::size_t q = begin; q < end; ++q)
      for (std::size_t p = begin; p < end; ++p) {
        if (q == p) continue;
        for (std::size_t n = 0; n < b; ++n) {
          if (n >= begin && n < end) continue;
          fn(q, p, n);
        }
      }
  }
}

/// Applies the affine heads at every location of the sample's raw maps.
template <typename Scalar>
std::pair<FeatureMap<Scalar>, FeatureMap<Scalar>> apply_heads(
    const ImageSample<Scalar>& sample, const LinearHeads<Scalar>& heads) {
  const auto& ra = sample.appearance_map;
  const auto& rp = sample.part_map;
  if (ra.role != MapRole::raw || rp.role != MapRole::raw)
    throw ValidationError("apply_heads expects raw maps (sample " +
                          sample.sample_id + ")");
  if (heads.w_a.cols() != ra.c)
    throw DimensionError("appearance head expects " +
                         std::to_string(heads.w_a.cols()) + " raw channels, map has " +
                         std::to_string(ra.c));
  if (heads.w_p.cols() != rp.c)
    throw DimensionError("part head expects " +
                         std::to_string(heads.w_p.cols()) + " raw channels, map has " +
                         std::to_string(rp.c));

  MatrixX<Scalar> a = (heads.w_a * ra.data).colwise() + heads.b_a;
  MatrixX<Scalar> p = (heads.w_p * rp.data).colwise() + heads.b_p;
  if (heads.nonneg_parts) p = p.cwiseMax(Scalar(0));
  return {FeatureMap<Scalar>(ra.h, ra.w, static_cast<int>(heads.w_a.rows()),
                             MapRole::appearance, std::move(a)),
          FeatureMap<Scalar>(rp.h, rp.w, static_cast<int>(heads.w_p.rows()),
                             MapRole::part, std::move(p))};
}

enum class PoolingMode : std::uint8_t { exact, sketched, global_average };

inline const char* to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::exact: return "exact";
    case PoolingMode::sketched: return "sketched";
    case PoolingMode::global_average: return "global-average";
  }
  return "?";
}

/// Direct enumeration walks every triplet accumulating embedding-space
/// gradients; regrouped collapses the walk into a pair-coefficient matrix and
/// one matrix product. The two produce the same loss and gradients.
enum class GradientPath : std::uint8_t { direct, regrouped };

template <typename Scalar>
struct BatchLossResult {
  double loss = 0.0;
  HeadTensors<Scalar> gradients;
  std::uint64_t num_triplets = 0;
};

namespace detail {

// Everything the backward pass needs about one embedded batch slot.
template <typename Scalar>
struct SlotForward {
  const ImageSample<Scalar>* sample = nullptr;
  MatrixX<Scalar> a;        // c_A x S
  MatrixX<Scalar> p;        // c_P x S (post-clamp)
  MatrixX<Scalar> z;        // c_P x S pre-clamp (nonneg mode)
  MatrixX<Scalar> sa, sp;   // d x S count sketches (sketched mode)
  VectorX<Scalar> f;        // pooled, unnormalized
  Scalar norm = 0;
  VectorX<Scalar> f_tilde;
};

template <typename Scalar>
SlotForward<Scalar> forward_slot(const ImageSample<Scalar>& sample,
                                 const LinearHeads<Scalar>& heads,
                                 PoolingMode mode,
                                 const SketchParams* sketch) {
  SlotForward<Scalar> out;
  out.sample = &sample;
  const auto& ra = sample.appearance_map;
  const auto& rp = sample.part_map;
  out.a = (heads.w_a * ra.data).colwise() + heads.b_a;
  out.z = (heads.w_p * rp.data).colwise() + heads.b_p;
  out.p = heads.nonneg_parts ? out.z.cwiseMax(Scalar(0)) : out.z;

  const Eigen::Index s = ra.locations();
  switch (mode) {
    case PoolingMode::exact: {
      MatrixX<Scalar> m = (out.a * out.p.transpose()) / static_cast<Scalar>(s);
      out.f = m.reshaped();
      break;
    }
    case PoolingMode::sketched: {
      const int d = sketch->d;
      out.sa.resize(d, s);
      out.sp.resize(d, s);
      VectorX<Scalar> acc = VectorX<Scalar>::Zero(d);
      for (Eigen::Index loc = 0; loc < s; ++loc) {
        out.sa.col(loc) = count_sketch<Scalar>(out.a.col(loc), sketch->hash_a,
                                               sketch->sign_a, d);
        out.sp.col(loc) = count_sketch<Scalar>(out.p.col(loc), sketch->hash_p,
                                               sketch->sign_p, d);
        acc += circular_convolve<Scalar>(out.sa.col(loc), out.sp.col(loc));
      }
      out.f = acc / static_cast<Scalar>(s);
      break;
    }
    case PoolingMode::global_average: {
      out.f = out.a.rowwise().mean();
      break;
    }
  }
  out.norm = out.f.norm();
  if (out.norm == Scalar(0))
    throw DegenerateEmbeddingError("sample " + sample.sample_id +
                                   " pooled to a zero embedding");
  out.f_tilde = out.f / out.norm;
  return out;
}

// Backward from dL/df_tilde through normalization, pooling, and the heads.
template <typename Scalar>
void backward_slot(const SlotForward<Scalar>& slot,
                   const VectorX<Scalar>& grad_f_tilde,
                   const LinearHeads<Scalar>& heads, PoolingMode mode,
                   const SketchParams* sketch, HeadTensors<Scalar>& grads) {
  // f_tilde = f / ||f||: project out the radial component.
  VectorX<Scalar> gf =
      (grad_f_tilde - slot.f_tilde.dot(grad_f_tilde) * slot.f_tilde) /
      slot.norm;

  const auto& ra = slot.sample->appearance_map;
  const auto& rp = slot.sample->part_map;
  const Eigen::Index s = ra.locations();
  MatrixX<Scalar> da, dp;

  switch (mode) {
    case PoolingMode::exact: {
      auto gmat = gf.reshaped(slot.a.rows(), slot.p.rows());
      da = (gmat * slot.p) / static_cast<Scalar>(s);
      dp = (gmat.transpose() * slot.a) / static_cast<Scalar>(s);
      break;
    }
    case PoolingMode::sketched: {
      const VectorX<Scalar> t = gf / static_cast<Scalar>(s);
      da.setZero(slot.a.rows(), s);
      dp.setZero(slot.p.rows(), s);
      for (Eigen::Index loc = 0; loc < s; ++loc) {
        const VectorX<Scalar> du = circular_convolve<Scalar>(
            t, circular_involution<Scalar>(slot.sp.col(loc)));
        const VectorX<Scalar> dv = circular_convolve<Scalar>(
            t, circular_involution<Scalar>(slot.sa.col(loc)));
        for (Eigen::Index i = 0; i < slot.a.rows(); ++i)
          da(i, loc) = static_cast<Scalar>(sketch->sign_a[i]) *
                       du[sketch->hash_a[i]];
        for (Eigen::Index i = 0; i < slot.p.rows(); ++i)
          dp(i, loc) = static_cast<Scalar>(sketch->sign_p[i]) *
                       dv[sketch->hash_p[i]];
      }
      break;
    }
    case PoolingMode::global_average: {
      da = (gf / static_cast<Scalar>(s)).replicate(1, s);
      dp.setZero(slot.p.rows(), s);
      break;
    }
  }

  grads.w_a.noalias() += da * ra.data.transpose();
  grads.b_a += da.rowwise().sum();
  if (mode != PoolingMode::global_average) {
    if (heads.nonneg_parts)
      dp.array() *= (slot.z.array() > Scalar(0)).template cast<Scalar>();
    grads.w_p.noalias() += dp * rp.data.transpose();
    grads.b_p += dp.rowwise().sum();
  }
}

}  // namespace detail

/// Mean triplet loss over every triplet in the batch and its exact gradient
/// with respect to the heads. A triplet whose hinge argument is exactly zero
/// contributes no gradient.
template <typename Scalar>
BatchLossResult<Scalar> batch_loss(const TripletBatch<Scalar>& batch,
                                   const LinearHeads<Scalar>& heads,
                                   PoolingMode mode,
                                   const TripletLossConfig& loss_cfg,
                                   const SketchParams* sketch = nullptr,
                                   GradientPath path = GradientPath::direct) {
  loss_cfg.check();
  batch.check();
  if (mode == PoolingMode::sketched && sketch == nullptr)
    throw ConfigError("sketched pooling requires sketch params");

  std::vector<detail::SlotForward<Scalar>> slots;
  slots.reserve(batch.total_images());
  for (const auto& g : batch.groups)
    for (const auto& sample : g.samples)
      slots.push_back(detail::forward_slot(sample, heads, mode, sketch));

  const std::size_t b = slots.size();
  const Eigen::Index dim = slots[0].f_tilde.size();
  MatrixX<Scalar> f_tilde(dim, b);
  for (std::size_t i = 0; i < b; ++i) f_tilde.col(i) = slots[i].f_tilde;

  const Scalar margin = static_cast<Scalar>(loss_cfg.margin);
  double loss_sum = 0.0;
  std::uint64_t count = 0;
  MatrixX<Scalar> grad_f_tilde = MatrixX<Scalar>::Zero(dim, b);

  if (path == GradientPath::direct) {
    for_each_triplet(batch, [&](std::size_t q, std::size_t p, std::size_t n) {
      ++count;
      const Scalar arg = margin + f_tilde.col(q).dot(f_tilde.col(n)) -
                         f_tilde.col(q).dot(f_tilde.col(p));
      if (arg > Scalar(0)) {
        loss_sum += static_cast<double>(arg);
        grad_f_tilde.col(q) += f_tilde.col(n) - f_tilde.col(p);
        grad_f_tilde.col(n) += f_tilde.col(q);
        grad_f_tilde.col(p) -= f_tilde.col(q);
      }
    });
  } else {
    // Pair similarities once, then one coefficient per ordered pair.
    MatrixX<Scalar> sim = f_tilde.transpose() * f_tilde;
    MatrixX<Scalar> coeff = MatrixX<Scalar>::Zero(b, b);
    for_each_triplet(batch, [&](std::size_t q, std::size_t p, std::size_t n) {
      ++count;
      const Scalar arg = margin + sim(q, n) - sim(q, p);
      if (arg > Scalar(0)) {
        loss_sum += static_cast<double>(arg);
        coeff(q, n) += 1;
        coeff(q, p) -= 1;
        coeff(n, q) += 1;
        coeff(p, q) -= 1;
      }
    });
    grad_f_tilde = f_tilde * coeff.transpose();
  }

  BatchLossResult<Scalar> result;
  result.num_triplets = count;
  result.loss = loss_sum / static_cast<double>(count);
  result.gradients = HeadTensors<Scalar>::zeros_like(heads);
  const Scalar inv_count = Scalar(1) / static_cast<Scalar>(count);
  for (std::size_t i = 0; i < b; ++i) {
    VectorX<Scalar> g = grad_f_tilde.col(i) * inv_count;
    detail::backward_slot(slots[i], g, heads, mode, sketch, result.gradients);
  }
  return result;
}

template <typename Scalar>
struct MomentumState {
  HeadTensors<Scalar> velocity;

  static MomentumState zeros_like(const LinearHeads<Scalar>& heads) {
    return {HeadTensors<Scalar>::zeros_like(heads)};
  }
};

/// v <- momentum * v + grad (+ weight_decay * w for weights, never biases);
/// w <- w - lr(iter) * v.
template <typename Scalar>
void sgd_step(LinearHeads<Scalar>& heads, const HeadTensors<Scalar>& grads,
              MomentumState<Scalar>& state, const OptimizerConfig& cfg,
              int iter) {
  cfg.check();
  if (!grads.all_finite())
    throw NumericError("sgd_step: non-finite gradient, step aborted");
  const Scalar lr = static_cast<Scalar>(learning_rate_at(cfg, iter));
  const Scalar mu = static_cast<Scalar>(cfg.momentum);
  const Scalar wd = static_cast<Scalar>(cfg.weight_decay);

  auto& v = state.velocity;
  v.w_a = mu * v.w_a + grads.w_a + wd * heads.w_a;
  v.b_a = mu * v.b_a + grads.b_a;
  v.w_p = mu * v.w_p + grads.w_p + wd * heads.w_p;
  v.b_p = mu * v.b_p + grads.b_p;
  heads.w_a -= lr * v.w_a;
  heads.b_a -= lr * v.b_a;
  heads.w_p -= lr * v.w_p;
  heads.b_p -= lr * v.b_p;
}

/// Fan-balanced uniform init for the head weights, zero biases.
template <typename Scalar>
LinearHeads<Scalar> init_heads(int c_a, int raw_a, int c_p, int raw_p,
                               bool nonneg_parts, std::uint64_t seed) {
  if (c_a <= 0 || raw_a <= 0 || c_p <= 0 || raw_p <= 0)
    throw ValidationError("head dimensions must be positive");
  LinearHeads<Scalar> heads;
  heads.nonneg_parts = nonneg_parts;
  rng::Engine gen_a(seed, 10), gen_p(seed, 11);
  const double ra = std::sqrt(6.0 / (c_a + raw_a));
  const double rp = std::sqrt(6.0 / (c_p + raw_p));
  heads.w_a.resize(c_a, raw_a);
  heads.w_p.resize(c_p, raw_p);
  for (Eigen::Index j = 0; j < heads.w_a.cols(); ++j)
    for (Eigen::Index i = 0; i < heads.w_a.rows(); ++i)
      heads.w_a(i, j) = static_cast<Scalar>(gen_a.next_uniform(-ra, ra));
  for (Eigen::Index j = 0; j < heads.w_p.cols(); ++j)
    for (Eigen::Index i = 0; i < heads.w_p.rows(); ++i)
      heads.w_p(i, j) = static_cast<Scalar>(gen_p.next_uniform(-rp, rp));
  heads.b_a = VectorX<Scalar>::Zero(c_a);
  heads.b_p = VectorX<Scalar>::Zero(c_p);
  return heads;
}

struct TrainConfig {
  OptimizerConfig optimizer;
  TripletLossConfig loss;
  PoolingMode mode = PoolingMode::exact;
  bool nonneg_parts = false;
  int c_a = 0;
  int c_p = 0;
  int num_ids = 18;
  int imgs_per_id = 10;
  int sketch_d = 512;
  std::uint64_t sketch_seed = 0;
  GradientPath path = GradientPath::regrouped;
};

template <typename Scalar>
struct TrainResult {
  LinearHeads<Scalar> heads;
  struct HistoryRow {
    int iter = 0;
    double loss = 0.0;
    double lr = 0.0;
  };
  std::vector<HistoryRow> history;
};

namespace detail {

template <typename Scalar>
std::vector<std::vector<std::size_t>> group_by_identity(
    const std::vector<ImageSample<Scalar>>& samples) {
  std::vector<int> ids;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].identity < 0) continue;  // distractors are unlearnable
    bool placed = false;
    for (std::size_t g = 0; g < ids.size(); ++g)
      if (ids[g] == samples[i].identity) {
        groups[g].push_back(i);
        placed = true;
        break;
      }
    if (!placed) {
      ids.push_back(samples[i].identity);
      groups.push_back({i});
    }
  }
  return groups;
}

}  // namespace detail

/// Deterministic triplet training over raw-map samples. Identities are drawn
/// without replacement each iteration; images within an identity are drawn
/// with replacement only when the identity has too few.
template <typename Scalar>
TrainResult<Scalar> train(const std::vector<ImageSample<Scalar>>& samples,
                          const TrainConfig& cfg, int iterations,
                          std::uint64_t seed) {
  cfg.optimizer.check();
  cfg.loss.check();
  if (samples.empty()) throw EmptyInputError("train: no samples");
  if (cfg.c_a <= 0 || cfg.c_p <= 0)
    throw ConfigError("train: head output dims c_a, c_p must be set");
  if (cfg.num_ids < 2 || cfg.imgs_per_id < 2)
    throw ConfigError("train: batch needs num_ids >= 2 and imgs_per_id >= 2");

  auto id_groups = detail::group_by_identity(samples);
  if (id_groups.size() < static_cast<std::size_t>(cfg.num_ids))
    throw ConfigError("train: dataset has " + std::to_string(id_groups.size()) +
                      " identities, batch wants " + std::to_string(cfg.num_ids));

  const int raw_a = samples[0].appearance_map.c;
  const int raw_p = samples[0].part_map.c;
  TrainResult<Scalar> result;
  result.heads =
      init_heads<Scalar>(cfg.c_a, raw_a, cfg.c_p, raw_p, cfg.nonneg_parts, seed);

  SketchParams sketch;
  const SketchParams* sketch_ptr = nullptr;
  if (cfg.mode == PoolingMode::sketched) {
    sketch = SketchParams::generate(cfg.c_a, cfg.c_p, cfg.sketch_d,
                                    cfg.sketch_seed);
    sketch_ptr = &sketch;
  }

  auto state = MomentumState<Scalar>::zeros_like(result.heads);
  rng::Engine sampler(seed, 20);
  result.history.reserve(iterations);

  for (int iter = 0; iter < iterations; ++iter) {
    TripletBatch<Scalar> batch;
    auto id_order = sampler.permutation(id_groups.size());
    for (int k = 0; k < cfg.num_ids; ++k) {
      const auto& members = id_groups[id_order[k]];
      typename TripletBatch<Scalar>::Group group;
      group.identity = samples[members[0]].identity;
      if (members.size() >= static_cast<std::size_t>(cfg.imgs_per_id)) {
        auto img_order = sampler.permutation(members.size());
        for (int j = 0; j < cfg.imgs_per_id; ++j)
          group.samples.push_back(samples[members[img_order[j]]]);
      } else {
        for (int j = 0; j < cfg.imgs_per_id; ++j)
          group.samples.push_back(
              samples[members[sampler.next_below(members.size())]]);
      }
      batch.groups.push_back(std::move(group));
    }

    auto step = batch_loss(batch, result.heads, cfg.mode, cfg.loss, sketch_ptr,
                           cfg.path);
    if (!std::isfinite(step.loss))
      throw NumericError("train: loss diverged at iteration " +
                         std::to_string(iter));
    sgd_step(result.heads, step.gradients, state, cfg.optimizer, iter);
    result.history.push_back(
        {iter, step.loss, learning_rate_at(cfg.optimizer, iter)});
  }
  return result;
}

}  // namespace pabr
