#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "pabr/errors.hpp"
#include "pabr/types.hpp"

namespace pabr::synth {

/// Synthetic re-identification dataset with controllable part misalignment.
/// Identities are tuples over a small palette of per-part appearance
/// signatures; images translate the parts vertically by a shared per-image
/// shift plus a smaller per-part wobble, so identical people stop lining up
/// spatially while their per-part appearance stays put.
struct SynthConfig {
  int num_identities = 8;
  int images_per_identity = 4;
  int h = 8;
  int w = 4;
  int num_parts = 3;
  int appearance_channels = 8;
  int jitter = 0;        // max vertical translation, in cells
  double sigma = 0.0;    // additive Gaussian noise on both raw maps
  double distractor_fraction = 0.0;
  int cameras = 2;
  std::uint64_t seed = 0;

  void check() const {
    if (num_identities < 1 || images_per_identity < 1 || h < 1 || w < 1 ||
        num_parts < 1 || appearance_channels < 1 || cameras < 1)
      throw ConfigError("synth: all counts must be positive");
    if (jitter < 0 || jitter >= std::min(h, w))
      throw ConfigError("synth: jitter must lie in [0, min(h, w))");
    if (num_parts > h * w) throw ConfigError("synth: parts exceed grid");
    if (num_parts > h)
      throw ConfigError(
          "synth: parts exceed grid (vertical strips need one row each)");
    if (sigma < 0) throw ConfigError("synth: sigma must be >= 0");
    if (distractor_fraction < 0 || distractor_fraction > 1)
      throw ConfigError("synth: distractor fraction must lie in [0, 1]");
  }
};

/// Writes one raw appearance map and one raw part map per image plus
/// `manifest.tsv` into out_dir, and returns the manifest. Byte-identical
/// output for identical configs. Identities alternate between the train and
/// test splits; test images from camera 0 become queries, the rest gallery;
/// distractors (identity -1) land in the gallery.
DatasetManifest generate(const SynthConfig& cfg, const std::string& out_dir);

}  // namespace pabr::synth
