#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfb/datasets.hpp"

namespace gfb {

// Desk-scale stand-in for the real corpora: 14 channels with the published
// band names, smooth correlated textures, blob-shaped rare-class masks, and
// label signal injected into a configurable subset of bands.
struct SynthSpec {
  int n_train = 24;
  int n_val = 8;
  int n_test = 8;
  int n_generalizability = 0;
  int n_external = 0;
  int image_size = 32;
  uint64_t seed = 7;
  std::vector<std::string> signal_bands = {"B4", "B8", "B11", "B12", "DEM", "slope"};
  double signal_strength = 1.5;
  double noise_sigma = 0.25;
  // Additive distribution shift applied to the generalizability / external
  // splits so the domain axis has something to measure.
  double gen_shift = 0.15;
  double ext_shift = 0.40;
  std::string corpus_id = "synth";
};

// The 14 published band names in manifest order.
const std::vector<std::string>& synth_band_names();

// Writes band manifest, split manifest, and one HDF5 container per patch
// under root, then loads the result back as a validated corpus.
Corpus make_synthetic_corpus(const std::string& root, const SynthSpec& spec);

}  // namespace gfb
