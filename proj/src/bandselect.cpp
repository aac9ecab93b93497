#include "gfb/bandselect.hpp"

#include <gsl/gsl_sf_psi.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfb/io.hpp"
#include "json.hpp"

using nlohmann::json;

namespace gfb {

namespace {

struct PsiMemo {
  std::vector<double> table;

  explicit PsiMemo(size_t max_n) : table(max_n + 1, std::numeric_limits<double>::quiet_NaN()) {}

  double operator()(size_t n) {
    double& slot = table[n];
    if (std::isnan(slot)) slot = gsl_sf_psi(static_cast<double>(n));
    return slot;
  }
};

// Distance to the k-th nearest neighbor of cls[pos] within the sorted array
// cls, excluding the element itself.
double kth_neighbor_distance(const std::vector<double>& cls, size_t pos, int k) {
  const double x = cls[pos];
  std::ptrdiff_t l = static_cast<std::ptrdiff_t>(pos) - 1;
  size_t r = pos + 1;
  double d = 0.0;
  for (int step = 0; step < k; ++step) {
    const double dl = l >= 0 ? x - cls[static_cast<size_t>(l)]
                             : std::numeric_limits<double>::infinity();
    const double dr = r < cls.size() ? cls[r] - x : std::numeric_limits<double>::infinity();
    if (dl <= dr) {
      d = dl;
      --l;
    } else {
      d = dr;
      ++r;
    }
  }
  return d;
}

}  // namespace

double knn_mi_channel(const std::vector<double>& values, const std::vector<uint8_t>& labels,
                      int k_neighbors, uint64_t jitter_seed) {
  const size_t n = values.size();
  if (labels.size() != n) fail(Err::Shape, "feature/label length mismatch");
  if (k_neighbors < 1) fail(Err::Config, "k_neighbors must be positive");

  size_t class_count[2] = {0, 0};
  for (uint8_t y : labels) {
    if (y > 1) fail(Err::LabelDomain, "labels must be 0 or 1");
    ++class_count[y];
  }
  if (class_count[0] == 0 || class_count[1] == 0)
    fail(Err::DegenerateLabel, "mutual information needs both classes in the sample");

  // Tie-breaking jitter assigned in (value, label) order so the jittered
  // multiset, and hence every score, is invariant to row permutations.
  double abs_mean = 0.0;
  for (double v : values) abs_mean += std::abs(v);
  abs_mean /= static_cast<double>(n);
  const double scale = 1e-10 * std::max(1.0, abs_mean);

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return labels[a] < labels[b];
  });
  Rng jrng(jitter_seed);
  std::vector<double> x(n);
  for (size_t idx : order) x[idx] = values[idx] + scale * jrng.normal();

  std::vector<double> cls[2];
  cls[0].reserve(class_count[0]);
  cls[1].reserve(class_count[1]);
  for (size_t i = 0; i < n; ++i) cls[labels[i]].push_back(x[i]);
  std::sort(cls[0].begin(), cls[0].end());
  std::sort(cls[1].begin(), cls[1].end());
  std::vector<double> all = x;
  std::sort(all.begin(), all.end());

  PsiMemo psi(n);
  size_t n_eff = 0;
  double sum_psi_label = 0.0, sum_psi_k = 0.0, sum_psi_m = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    const size_t cnt = class_count[y];
    if (cnt < 2) continue;  // no same-label neighbor exists
    const int k = std::min<int>(k_neighbors, static_cast<int>(cnt) - 1);
    const std::vector<double>& same = cls[y];
    const size_t pos = static_cast<size_t>(
        std::lower_bound(same.begin(), same.end(), x[i]) - same.begin());
    const double d = kth_neighbor_distance(same, pos, k);

    // Rows of any label strictly inside (x_i - d, x_i + d); includes self.
    const size_t hi = static_cast<size_t>(
        std::lower_bound(all.begin(), all.end(), x[i] + d) - all.begin());
    const size_t lo = static_cast<size_t>(
        std::upper_bound(all.begin(), all.end(), x[i] - d) - all.begin());
    const size_t m = std::max<size_t>(hi - lo, 1);

    ++n_eff;
    sum_psi_label += psi(cnt);
    sum_psi_k += psi(static_cast<size_t>(k));
    sum_psi_m += psi(m);
  }
  if (n_eff == 0) fail(Err::DegenerateLabel, "no row has a same-label neighbor");

  const double inv = 1.0 / static_cast<double>(n_eff);
  const double mi = psi(n_eff) - sum_psi_label * inv + sum_psi_k * inv - sum_psi_m * inv;
  return std::max(mi, 0.0);
}

MISample sample_pixels(const Corpus& corpus, const std::string& split, int per_image,
                       uint64_t seed) {
  const std::vector<std::string>& ids = corpus.split_ids(split);
  if (ids.empty()) fail(Err::EmptySplit, "split '" + split + "' is empty");
  if (per_image < 1) fail(Err::SampleSize, "per_image must be positive");

  MISample s;
  s.b = corpus.manifest().size();
  s.band_names = corpus.manifest().names();
  s.seed = seed;
  Rng rng(seed);
  std::vector<int> pixel_order;
  for (const std::string& id : ids) {
    Patch p = corpus.load_patch(id);
    const int pixels = p.h * p.w;
    if (per_image > pixels)
      fail(Err::SampleSize, "per_image " + std::to_string(per_image) + " exceeds " +
                                std::to_string(pixels) + " pixels of patch " + id);
    pixel_order.resize(static_cast<size_t>(pixels));
    std::iota(pixel_order.begin(), pixel_order.end(), 0);
    for (int i = 0; i < per_image; ++i) {
      const size_t j = static_cast<size_t>(i) + rng.below(static_cast<size_t>(pixels - i));
      std::swap(pixel_order[static_cast<size_t>(i)], pixel_order[j]);
      const int px = pixel_order[static_cast<size_t>(i)];
      const float* row = p.image.data() + static_cast<size_t>(px) * p.b;
      for (int c = 0; c < p.b; ++c) s.features.push_back(row[c]);
      s.labels.push_back(p.mask[static_cast<size_t>(px)]);
    }
  }
  s.n = s.labels.size();
  return s;
}

MIReport estimate_mi(const MISample& sample, int k_neighbors) {
  if (sample.n == 0 || sample.b == 0) fail(Err::Shape, "empty MI sample");
  MIReport report;
  report.k_neighbors = k_neighbors;
  report.seed = sample.seed;

  std::vector<double> column(sample.n);
  std::vector<double> score_by_index(sample.b);
  for (size_t c = 0; c < sample.b; ++c) {
    for (size_t i = 0; i < sample.n; ++i) column[i] = sample.at(i, c);
    const uint64_t jitter_seed = sample.seed ^ (0x9E3779B97F4A7C15ull * (c + 1));
    const double mi = knn_mi_channel(column, sample.labels, k_neighbors, jitter_seed);
    score_by_index[c] = mi;
    report.scores[sample.band_names[c]] = mi;
  }

  std::vector<size_t> order(sample.b);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return score_by_index[a] > score_by_index[b];  // ties keep manifest order
  });
  for (size_t idx : order) report.ranking.push_back(sample.band_names[idx]);
  return report;
}

std::string MIReport::to_json() const {
  json j;
  j["scores"] = scores;
  j["ranking"] = ranking;
  j["k_neighbors"] = k_neighbors;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

MIReport mi_report_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(Err::CorpusSchema, "invalid MI report JSON");
  MIReport r;
  r.scores = j.at("scores").get<std::map<std::string, double>>();
  r.ranking = j.at("ranking").get<std::vector<std::string>>();
  r.k_neighbors = j.at("k_neighbors").get<int>();
  r.seed = j.at("seed").get<uint64_t>();
  return r;
}

BandConfig top_k_config(const MIReport& report, int k, const std::string& name) {
  if (k < 1 || static_cast<size_t>(k) > report.ranking.size())
    fail(Err::ChannelCount, "top-k selection of " + std::to_string(k) + " from " +
                                std::to_string(report.ranking.size()) + " channels");
  BandConfig cfg;
  cfg.name = name;
  cfg.channels.assign(report.ranking.begin(), report.ranking.begin() + k);
  return cfg;
}

}  // namespace gfb
