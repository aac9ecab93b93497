#include "gfb/synth.hpp"

#include <cmath>

#include "gfb/io.hpp"
#include "gfb/rng.hpp"

namespace gfb {

const std::vector<std::string>& synth_band_names() {
  static const std::vector<std::string> names = {"B1",  "B2",  "B3",  "B4", "B5",    "B6",  "B7",
                                                 "B8",  "B9",  "B10", "B11", "B12", "DEM", "slope"};
  return names;
}

namespace {

constexpr int kBands = 14;
constexpr double kTwoPi = 6.283185307179586;

// Smooth random field: a handful of low-frequency cosines.
struct Field {
  double a[3], fi[3], fj[3], ph[3];

  void init(Rng& rng) {
    for (int m = 0; m < 3; ++m) {
      a[m] = 0.5 + rng.uniform();
      fi[m] = 0.5 + 1.5 * rng.uniform();
      fj[m] = 0.5 + 1.5 * rng.uniform();
      ph[m] = kTwoPi * rng.uniform();
    }
  }

  double at(double u, double v) const {
    double s = 0.0;
    for (int m = 0; m < 3; ++m) s += a[m] * std::cos(kTwoPi * (fi[m] * u + fj[m] * v) + ph[m]);
    return s;
  }
};

void paint_blobs(std::vector<uint8_t>& mask, int s, Rng& rng) {
  // 0-3 elliptical blobs; some patches stay background-only so the coverage
  // strata have a populated low end.
  const double roll = rng.uniform();
  const int blobs = roll < 0.2 ? 0 : roll < 0.55 ? 1 : roll < 0.85 ? 2 : 3;
  for (int bdx = 0; bdx < blobs; ++bdx) {
    const double ci = s * rng.uniform();
    const double cj = s * rng.uniform();
    const double ri = s / 16.0 + (s / 6.0 - s / 16.0) * rng.uniform();
    const double rj = s / 16.0 + (s / 6.0 - s / 16.0) * rng.uniform();
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < s; ++j) {
        const double di = (i - ci) / ri, dj = (j - cj) / rj;
        if (di * di + dj * dj <= 1.0) mask[static_cast<size_t>(i) * s + j] = 1;
      }
  }
}

Patch make_patch(const std::string& id, const std::string& site, int s, double shift,
                 const std::vector<double>& signal, double noise_sigma, Rng& rng) {
  Patch p;
  p.id = id;
  p.site = site;
  p.h = s;
  p.w = s;
  p.b = kBands;
  p.mask.assign(static_cast<size_t>(s) * s, 0);
  paint_blobs(p.mask, s, rng);

  Field latent1, latent2;
  latent1.init(rng);
  latent2.init(rng);
  // Band mixing weights are derived from a per-corpus stream seeded by the
  // caller, so every patch shares the same band semantics.
  p.image = Tensor({s, s, kBands});
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      const double u = static_cast<double>(i) / s, v = static_cast<double>(j) / s;
      const double l1 = latent1.at(u, v), l2 = latent2.at(u, v);
      const uint8_t y = p.mask[static_cast<size_t>(i) * s + j];
      float* px = p.image.data() + (static_cast<size_t>(i) * s + j) * kBands;
      for (int b = 0; b < kBands; ++b) {
        const double base = 0.1 * b + shift;
        const double alpha = 0.6 + 0.05 * b;
        const double beta = 0.4 - 0.02 * b;
        double val = base + alpha * l1 + beta * l2 + noise_sigma * rng.normal();
        if (y) val += signal[static_cast<size_t>(b)];
        px[b] = static_cast<float>(val);
      }
    }
  return p;
}

}  // namespace

Corpus make_synthetic_corpus(const std::string& root, const SynthSpec& spec) {
  ensure_dir(root);
  ensure_dir(root + "/patches");

  BandManifest manifest;
  for (const std::string& name : synth_band_names()) {
    BandDesc d;
    d.name = name;
    d.resolution_m = name == "DEM" || name == "slope" ? 30.0 : 10.0;
    d.role = name == "DEM" || name == "slope" ? "terrain" : "reflectance";
    manifest.bands.push_back(std::move(d));
  }
  save_band_manifest(manifest, root + "/bands.json");

  std::vector<double> signal(kBands, 0.0);
  for (const std::string& name : spec.signal_bands) {
    const int idx = manifest.index_of(name);
    if (idx < 0) fail(Err::ChannelNotFound, "signal band '" + name + "' is not a corpus band");
    signal[static_cast<size_t>(idx)] = spec.signal_strength;
  }

  struct SplitPlan {
    const char* split;
    const char* prefix;
    const char* site;
    int count;
    double shift;
  };
  const SplitPlan plans[] = {
      {"train", "tr", "alpha", spec.n_train, 0.0},
      {"val", "va", "alpha", spec.n_val, 0.0},
      {"test", "te", "alpha", spec.n_test, 0.0},
      {"generalizability", "ge", "beta", spec.n_generalizability, spec.gen_shift},
      {"external", "ex", "gamma", spec.n_external, spec.ext_shift},
  };

  Rng rng(spec.seed);
  SplitManifest splits;
  splits.corpus_id = spec.corpus_id;
  for (const SplitPlan& plan : plans) {
    std::vector<std::string> ids;
    for (int n = 0; n < plan.count; ++n) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%s%04d", plan.prefix, n);
      Patch p = make_patch(buf, plan.site, spec.image_size, plan.shift, signal, spec.noise_sigma,
                           rng);
      write_patch_hdf5(p, root + "/patches/" + p.id + ".h5");
      ids.push_back(buf);
    }
    splits.splits[plan.split] = ids;
    splits.split_order.push_back(plan.split);
  }
  save_split_manifest(splits, root + "/splits.json");

  return load_corpus(root, root + "/bands.json", root + "/splits.json");
}

}  // namespace gfb
