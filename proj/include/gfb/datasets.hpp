#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfb/error.hpp"
#include "gfb/rng.hpp"
#include "gfb/tensor.hpp"

namespace gfb {

struct BandDesc {
  std::string name;
  double resolution_m = 0.0;
  std::string role;
};

struct BandManifest {
  std::vector<BandDesc> bands;

  size_t size() const { return bands.size(); }
  std::vector<std::string> names() const;
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;                        // unique names
};

struct BandConfig {
  std::string name;
  std::vector<std::string> channels;

  int b_in() const { return static_cast<int>(channels.size()); }
  void validate(const BandManifest& manifest) const;
};

struct Patch {
  Tensor image;                // (H, W, B)
  std::vector<uint8_t> mask;   // H*W, values in {0,1}
  int h = 0, w = 0, b = 0;
  std::string id;
  std::optional<std::string> site;
  std::optional<std::string> timestamp;
  std::vector<std::string> band_names;  // order matches image channels

  double landslide_fraction() const;
};

struct SplitManifest {
  std::string corpus_id;
  // Keyed by split name; insertion order of the standard five is preserved
  // separately so iteration is deterministic.
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<std::string> split_order;

  const std::vector<std::string>& ids(const std::string& split) const;
  void validate() const;  // pairwise disjoint
};

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stdev;
  double epsilon = 1e-6;
  std::string fitted_split;

  size_t channels() const { return mean.size(); }
};

// Associative accumulator for standardizer fitting; merge order never
// changes the result up to float associativity (all sums in double).
struct PixelStats {
  uint64_t count = 0;
  std::vector<double> sum;
  std::vector<double> sumsq;

  void init(size_t channels);
  void add_patch(const Patch& p);
  void merge(const PixelStats& other);
  Standardizer finalize(double epsilon, const std::string& split) const;
};

struct SubsetSelection {
  double k = 100.0;
  uint64_t seed = 0;
  int n_strata = 4;
  std::vector<std::string> ids;  // sorted ascending
};

class Corpus {
 public:
  Corpus(std::string root, BandManifest manifest, SplitManifest splits);

  const BandManifest& manifest() const { return manifest_; }
  const SplitManifest& split_manifest() const { return splits_; }
  const std::vector<std::string>& split_ids(const std::string& split) const {
    return splits_.ids(split);
  }
  const std::string& root() const { return root_; }

  Patch load_patch(const std::string& id) const;
  bool patch_exists(const std::string& id) const;

  // Shape/label validation over a deterministic sample of >=32 patches
  // (or all when fewer); called by load_corpus.
  void validate_sample() const;

 private:
  std::string root_;
  BandManifest manifest_;
  SplitManifest splits_;
};

BandManifest load_band_manifest(const std::string& path);
void save_band_manifest(const BandManifest& m, const std::string& path);
SplitManifest load_split_manifest(const std::string& path);
void save_split_manifest(const SplitManifest& m, const std::string& path);

Corpus load_corpus(const std::string& root_path, const std::string& band_manifest_path,
                   const std::string& split_manifest_path);

// Patch container writers used by corpus preparation and tests. The HDF5
// layout stores "img" (H x W x B float) and "mask" (H x W uint8); the flat
// layout stores raw little-endian arrays beside a JSON sidecar.
void write_patch_hdf5(const Patch& p, const std::string& path);
void write_patch_flat(const Patch& p, const std::string& dir);

Standardizer fit_standardizer(const Corpus& corpus, const std::string& split = "train",
                              bool allow_non_train = false);
Patch standardize(const Patch& patch, const Standardizer& s);
Patch augment(const Patch& patch, Rng& rng);
Patch select_bands(const Patch& patch, const BandConfig& config);

// Pure core of stratified_subset: ids and coverages in corpus train order.
SubsetSelection stratified_subset_from_coverage(const std::vector<std::string>& ids,
                                                const std::vector<double>& coverage, double k,
                                                uint64_t seed, int n_strata = 4);
SubsetSelection stratified_subset(const Corpus& corpus, double k, uint64_t seed, int n_strata = 4);

void save_subset_manifest(const SubsetSelection& sel, const std::string& path);
SubsetSelection load_subset_manifest(const std::string& path);

std::string band_config_to_json(const BandConfig& c);
BandConfig band_config_from_json(const std::string& text);
void save_band_config(const BandConfig& c, const std::string& path);
BandConfig load_band_config(const std::string& path);

}  // namespace gfb
