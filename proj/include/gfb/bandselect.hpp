#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gfb/datasets.hpp"

namespace gfb {

struct MISample {
  // Row-major N x B pixel values plus the label realization per row.
  std::vector<double> features;
  std::vector<uint8_t> labels;
  size_t n = 0;
  size_t b = 0;
  std::vector<std::string> band_names;
  uint64_t seed = 0;

  double at(size_t row, size_t channel) const { return features[row * b + channel]; }
};

struct MIReport {
  std::map<std::string, double> scores;  // nats, clamped to >= 0
  std::vector<std::string> ranking;      // descending score, manifest order on ties
  int k_neighbors = 3;
  uint64_t seed = 0;

  std::string to_json() const;
};

MIReport mi_report_from_json(const std::string& text);

MISample sample_pixels(const Corpus& corpus, const std::string& split = "train",
                       int per_image = 4000, uint64_t seed = 0);

// Continuous-feature / discrete-label kNN mutual information, one score per
// channel. Ties are broken by a canonical jitter so the result is invariant
// to row permutations.
MIReport estimate_mi(const MISample& sample, int k_neighbors = 3);

// Single-channel core, exposed for oracle tests.
double knn_mi_channel(const std::vector<double>& values, const std::vector<uint8_t>& labels,
                      int k_neighbors, uint64_t jitter_seed);

BandConfig top_k_config(const MIReport& report, int k, const std::string& name);

}  // namespace gfb
