#include "pabr/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "pabr/io.hpp"
#include "pabr/rng.hpp"

namespace pabr::synth {

namespace {

// Identity signatures sit a small distance from shared palette entries: far
// enough apart that ideal conditions separate everyone, close enough that
// two identities built from the same palette multiset look alike to any
// pooling that forgets where parts are.
constexpr double kPerturbation = 0.1;

// Stream layout for the counter RNG: entity 0 is global state, identities
// and distractors get their own engines so generation order never matters.
enum Purpose : std::uint64_t {
  kSignature = 0,
  kShifts = 1,
  kAppearanceNoise = 2,
  kPartNoise = 3
};

std::uint64_t stream_of(std::uint64_t entity, Purpose purpose) {
  return (entity << 3) | purpose;
}

std::string zero_pad(int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, value);
  return buf;
}

struct Bands {
  std::vector<int> start, end;  // base row range of each part, half open
};

Bands make_bands(int h, int k) {
  Bands b;
  for (int i = 0; i < k; ++i) {
    b.start.push_back(i * h / k);
    b.end.push_back((i + 1) * h / k);
  }
  return b;
}

// One image: paint parts in order (later parts own contested cells), then
// add noise everywhere. Vacated cells keep the zero background.
struct ImageMaps {
  FeatureMap<double> appearance;
  FeatureMap<double> part;
};

ImageMaps render_image(const SynthConfig& cfg, const Bands& bands,
                       const std::vector<VectorX<double>>& signature,
                       rng::Engine& shifts, rng::Engine& app_noise,
                       rng::Engine& part_noise) {
  FeatureMap<double> app(cfg.h, cfg.w, cfg.appearance_channels, MapRole::raw);
  FeatureMap<double> part(cfg.h, cfg.w, cfg.num_parts, MapRole::raw);

  const int wobble = cfg.jitter == 0 ? 0 : std::max(1, (cfg.jitter + 2) / 3);
  const std::int64_t s_img = shifts.next_between(-cfg.jitter, cfg.jitter);
  for (int k = 0; k < cfg.num_parts; ++k) {
    const std::int64_t wob = shifts.next_between(-wobble, wobble);
    const int shift = static_cast<int>(std::clamp<std::int64_t>(
        s_img + wob, -cfg.jitter, cfg.jitter));
    const int row0 = std::max(bands.start[k] + shift, 0);
    const int row1 = std::min(bands.end[k] + shift, cfg.h);
    for (int y = row0; y < row1; ++y)
      for (int x = 0; x < cfg.w; ++x) {
        const Eigen::Index s = part.location_index(x, y);
        app.data.col(s) = signature[k];
        part.data.col(s).setZero();
        part.data(k, s) = 1.0;
      }
  }

  if (cfg.sigma > 0) {
    for (Eigen::Index s = 0; s < app.data.cols(); ++s)
      for (Eigen::Index i = 0; i < app.data.rows(); ++i)
        app.data(i, s) += cfg.sigma * app_noise.next_normal();
    for (Eigen::Index s = 0; s < part.data.cols(); ++s)
      for (Eigen::Index i = 0; i < part.data.rows(); ++i)
        part.data(i, s) += cfg.sigma * part_noise.next_normal();
  }
  return {std::move(app), std::move(part)};
}

std::vector<VectorX<double>> perturbed_signature(
    const std::vector<VectorX<double>>& palette, const std::vector<int>& tuple,
    rng::Engine& gen, int channels) {
  std::vector<VectorX<double>> sig;
  for (int idx : tuple) {
    VectorX<double> v = palette[idx];
    for (int i = 0; i < channels; ++i) v[i] += kPerturbation * gen.next_normal();
    sig.push_back(std::move(v));
  }
  return sig;
}

}  // namespace

DatasetManifest generate(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.check();
  std::filesystem::create_directories(out_dir);

  // Palette large enough that every identity can have a distinct part tuple.
  int palette_size = cfg.num_parts + 1;
  auto tuple_space = [&](int p) {
    double space = 1.0;
    for (int k = 0; k < cfg.num_parts; ++k) {
      space *= p;
      if (space > 1e18) return 1e18;
    }
    return space;
  };
  while (tuple_space(palette_size) < cfg.num_identities) ++palette_size;

  rng::Engine global(cfg.seed, stream_of(0, kSignature));
  std::vector<VectorX<double>> palette;
  for (int p = 0; p < palette_size; ++p) {
    VectorX<double> v(cfg.appearance_channels);
    for (int i = 0; i < cfg.appearance_channels; ++i) v[i] = global.next_normal();
    palette.push_back(std::move(v));
  }

  // Distinct tuples by rejection; the palette was sized to make this finish.
  std::set<std::vector<int>> taken;
  std::vector<std::vector<int>> tuples;
  for (int i = 0; i < cfg.num_identities; ++i) {
    std::vector<int> tuple(cfg.num_parts);
    std::uint64_t guard = 0;
    do {
      for (int k = 0; k < cfg.num_parts; ++k)
        tuple[k] = static_cast<int>(global.next_below(palette_size));
      if (++guard > 100000)
        throw ConfigError("synth: could not find distinct identity tuples");
    } while (!taken.insert(tuple).second);
    tuples.push_back(tuple);
  }

  const Bands bands = make_bands(cfg.h, cfg.num_parts);
  DatasetManifest manifest;

  auto emit = [&](const std::string& sample_id, int identity, int camera,
                  Split split, const ImageMaps& maps) {
    const std::string a_name = sample_id + "_a.fm";
    const std::string p_name = sample_id + "_p.fm";
    io::write_feature_file(maps.appearance,
                           (std::filesystem::path(out_dir) / a_name).string());
    io::write_feature_file(maps.part,
                           (std::filesystem::path(out_dir) / p_name).string());
    manifest.entries.push_back(
        {sample_id, identity, camera, a_name, p_name, split});
  };

  for (int i = 0; i < cfg.num_identities; ++i) {
    const std::uint64_t entity = static_cast<std::uint64_t>(i) + 1;
    rng::Engine sig_gen(cfg.seed, stream_of(entity, kSignature));
    rng::Engine shifts(cfg.seed, stream_of(entity, kShifts));
    rng::Engine app_noise(cfg.seed, stream_of(entity, kAppearanceNoise));
    rng::Engine part_noise(cfg.seed, stream_of(entity, kPartNoise));
    auto signature = perturbed_signature(palette, tuples[i], sig_gen,
                                         cfg.appearance_channels);
    const bool train = i % 2 == 0;
    for (int j = 0; j < cfg.images_per_identity; ++j) {
      const int camera = j % cfg.cameras;
      const Split split =
          train ? Split::train : (camera == 0 ? Split::query : Split::gallery);
      auto maps =
          render_image(cfg, bands, signature, shifts, app_noise, part_noise);
      emit("id" + zero_pad(i, 4) + "_im" + zero_pad(j, 2), i, camera, split,
           maps);
    }
  }

  const int num_distractors = static_cast<int>(std::lround(
      cfg.distractor_fraction * cfg.num_identities * cfg.images_per_identity));
  for (int t = 0; t < num_distractors; ++t) {
    const std::uint64_t entity =
        static_cast<std::uint64_t>(cfg.num_identities) + 1 + t;
    rng::Engine sig_gen(cfg.seed, stream_of(entity, kSignature));
    rng::Engine shifts(cfg.seed, stream_of(entity, kShifts));
    rng::Engine app_noise(cfg.seed, stream_of(entity, kAppearanceNoise));
    rng::Engine part_noise(cfg.seed, stream_of(entity, kPartNoise));
    std::vector<int> tuple(cfg.num_parts);
    for (int k = 0; k < cfg.num_parts; ++k)
      tuple[k] = static_cast<int>(sig_gen.next_below(palette_size));
    auto signature =
        perturbed_signature(palette, tuple, sig_gen, cfg.appearance_channels);
    auto maps =
        render_image(cfg, bands, signature, shifts, app_noise, part_noise);
    emit("dx" + zero_pad(t, 4), -1, t % cfg.cameras, Split::gallery, maps);
  }

  io::write_manifest(manifest,
                     (std::filesystem::path(out_dir) / "manifest.tsv").string());
  return manifest;
}

}  // namespace pabr::synth
