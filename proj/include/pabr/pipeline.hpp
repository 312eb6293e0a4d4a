#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pabr/evaluation.hpp"
#include "pabr/io.hpp"
#include "pabr/pooling.hpp"
#include "pabr/sketch.hpp"
#include "pabr/training.hpp"
#include "pabr/types.hpp"

// Glue shared by the command-line tool and the benchmark harnesses: manifest
// entries to samples, samples to labeled normalized embeddings.

namespace pabr {

inline std::string resolve_path(const std::string& path,
                                const std::string& base_dir) {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return path;
  return (std::filesystem::path(base_dir) / p).string();
}

inline std::vector<ImageSample<double>> load_samples(
    const std::vector<ManifestEntry>& entries, const std::string& base_dir) {
  std::vector<ImageSample<double>> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) {
    auto a = io::read_feature_file<double>(
        resolve_path(e.appearance_path, base_dir));
    auto p =
        io::read_feature_file<double>(resolve_path(e.part_path, base_dir));
    samples.emplace_back(e.sample_id, e.identity, e.camera, std::move(a),
                         std::move(p));
  }
  return samples;
}

struct EmbedOptions {
  PoolingMode mode = PoolingMode::exact;
  const LinearHeads<double>* heads = nullptr;  // optional, needs raw maps
  const SketchParams* sketch = nullptr;        // required for sketched mode
};

/// One sample to one normalized embedding. Global-average pooling is the
/// bilinear layout with a single constant part channel, so its embeddings
/// carry layout exact(c_a, 1).
inline Embedding<double> embed_sample(const ImageSample<double>& sample,
                                      const EmbedOptions& opt) {
  FeatureMap<double> a = sample.appearance_map;
  FeatureMap<double> p = sample.part_map;
  if (opt.heads != nullptr) {
    auto mapped = apply_heads(sample, *opt.heads);
    a = std::move(mapped.first);
    p = std::move(mapped.second);
  }
  Embedding<double> pooled = [&] {
    switch (opt.mode) {
      case PoolingMode::sketched:
        if (opt.sketch == nullptr)
          throw ConfigError("sketched embedding requires sketch params");
        return compact_bilinear_pool(a, p, *opt.sketch);
      case PoolingMode::global_average: {
        VectorX<double> mean = global_average_pool(a);
        return Embedding<double>(std::move(mean),
                                 EmbeddingLayout::Exact(a.c, 1), false);
      }
      case PoolingMode::exact:
      default:
        return bilinear_pool(a, p);
    }
  }();
  try {
    return normalize(pooled);
  } catch (const DegenerateEmbeddingError&) {
    throw DegenerateEmbeddingError("sample " + sample.sample_id +
                                   " pooled to a zero embedding");
  }
}

inline std::vector<LabeledEmbedding<double>> embed_samples(
    const std::vector<ImageSample<double>>& samples, const EmbedOptions& opt) {
  std::vector<LabeledEmbedding<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back({s.sample_id, s.identity, s.camera, embed_sample(s, opt)});
  return out;
}

}  // namespace pabr
