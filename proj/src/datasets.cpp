#include "gfb/datasets.hpp"

#include <hdf5.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "gfb/io.hpp"
#include "json.hpp"

using nlohmann::json;

namespace gfb {

namespace {

// Keep HDF5's automatic stderr dump off; failures surface as our errors.
struct H5Quiet {
  H5Quiet() { H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr); }
};

void hdf5_quiet() { static H5Quiet q; }

const std::vector<std::string>& canonical_splits() {
  static const std::vector<std::string> names = {"train", "val", "test", "generalizability",
                                                 "external"};
  return names;
}

json parse_json_file(const std::string& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(Err::CorpusSchema, "invalid JSON in " + path);
  return j;
}

Patch read_patch_hdf5(const std::string& path, const std::string& id) {
  hdf5_quiet();
  hid_t file = H5Fopen(path.c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (file < 0) fail(Err::Io, "cannot open " + path);
  Patch p;
  p.id = id;

  hid_t img = H5Dopen2(file, "img", H5P_DEFAULT);
  if (img < 0) {
    H5Fclose(file);
    fail(Err::CorpusSchema, "patch " + id + " lacks an 'img' dataset");
  }
  hid_t space = H5Dget_space(img);
  hsize_t dims[3] = {0, 0, 0};
  if (H5Sget_simple_extent_ndims(space) != 3) {
    H5Sclose(space);
    H5Dclose(img);
    H5Fclose(file);
    fail(Err::CorpusSchema, "patch " + id + " image must be H x W x B");
  }
  H5Sget_simple_extent_dims(space, dims, nullptr);
  H5Sclose(space);
  p.h = static_cast<int>(dims[0]);
  p.w = static_cast<int>(dims[1]);
  p.b = static_cast<int>(dims[2]);
  p.image = Tensor({p.h, p.w, p.b});
  herr_t rc = H5Dread(img, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, p.image.data());
  H5Dclose(img);
  if (rc < 0) {
    H5Fclose(file);
    fail(Err::Io, "failed reading image of patch " + id);
  }

  hid_t msk = H5Dopen2(file, "mask", H5P_DEFAULT);
  if (msk < 0) {
    H5Fclose(file);
    fail(Err::CorpusSchema, "patch " + id + " lacks a 'mask' dataset");
  }
  space = H5Dget_space(msk);
  hsize_t mdims[2] = {0, 0};
  if (H5Sget_simple_extent_ndims(space) != 2) {
    H5Sclose(space);
    H5Dclose(msk);
    H5Fclose(file);
    fail(Err::CorpusSchema, "patch " + id + " mask must be H x W");
  }
  H5Sget_simple_extent_dims(space, mdims, nullptr);
  H5Sclose(space);
  p.mask.resize(static_cast<size_t>(mdims[0]) * mdims[1]);
  rc = H5Dread(msk, H5T_NATIVE_UINT8, H5S_ALL, H5S_ALL, H5P_DEFAULT, p.mask.data());
  H5Dclose(msk);
  H5Fclose(file);
  if (rc < 0) fail(Err::Io, "failed reading mask of patch " + id);
  if (static_cast<int>(mdims[0]) != p.h || static_cast<int>(mdims[1]) != p.w)
    fail(Err::CorpusSchema, "patch " + id + " mask dims disagree with image");
  return p;
}

Patch read_patch_flat(const std::string& sidecar_path, const std::string& id) {
  json j = parse_json_file(sidecar_path);
  if (!j.contains("h") || !j.contains("w") || !j.contains("b"))
    fail(Err::CorpusSchema, "sidecar of patch " + id + " lacks dims");
  Patch p;
  p.id = id;
  p.h = j["h"].get<int>();
  p.w = j["w"].get<int>();
  p.b = j["b"].get<int>();
  if (j.contains("site")) p.site = j["site"].get<std::string>();
  if (j.contains("timestamp")) p.timestamp = j["timestamp"].get<std::string>();
  const std::filesystem::path dir = std::filesystem::path(sidecar_path).parent_path();
  const std::string img_name = j.value("img", id + ".img.f32");
  const std::string mask_name = j.value("mask", id + ".mask.u8");

  std::vector<uint8_t> img_raw = read_binary_file((dir / img_name).string());
  const size_t want = static_cast<size_t>(p.h) * p.w * p.b * sizeof(float);
  if (img_raw.size() != want)
    fail(Err::CorpusSchema, "patch " + id + " image payload size mismatch");
  p.image = Tensor({p.h, p.w, p.b});
  std::copy(img_raw.begin(), img_raw.end(), reinterpret_cast<uint8_t*>(p.image.data()));

  p.mask = read_binary_file((dir / mask_name).string());
  if (p.mask.size() != static_cast<size_t>(p.h) * p.w)
    fail(Err::CorpusSchema, "patch " + id + " mask payload size mismatch");
  return p;
}

void check_patch_against_manifest(const Patch& p, const BandManifest& manifest) {
  if (p.h <= 0 || p.w <= 0 || p.h != p.w)
    fail(Err::CorpusSchema, "patch " + p.id + " must be square, got " + std::to_string(p.h) + "x" +
                                std::to_string(p.w));
  if (p.b != static_cast<int>(manifest.size()))
    fail(Err::CorpusSchema, "patch " + p.id + " has " + std::to_string(p.b) +
                                " bands, manifest lists " + std::to_string(manifest.size()));
  for (uint8_t m : p.mask)
    if (m > 1) fail(Err::LabelDomain, "patch " + p.id + " mask contains value outside {0,1}");
}

double round_half_up(double x) { return std::floor(x + 0.5); }

}  // namespace

std::vector<std::string> BandManifest::names() const {
  std::vector<std::string> out;
  out.reserve(bands.size());
  for (const BandDesc& b : bands) out.push_back(b.name);
  return out;
}

int BandManifest::index_of(const std::string& name) const {
  for (size_t i = 0; i < bands.size(); ++i)
    if (bands[i].name == name) return static_cast<int>(i);
  return -1;
}

void BandManifest::validate() const {
  std::set<std::string> seen;
  for (const BandDesc& b : bands)
    if (!seen.insert(b.name).second)
      fail(Err::CorpusSchema, "duplicate band name '" + b.name + "' in manifest");
}

void BandConfig::validate(const BandManifest& manifest) const {
  if (channels.empty()) fail(Err::ChannelCount, "band config '" + name + "' selects no channels");
  for (const std::string& c : channels)
    if (manifest.index_of(c) < 0)
      fail(Err::ChannelNotFound, "band config '" + name + "' references unknown channel '" + c +
                                     "'");
}

double Patch::landslide_fraction() const {
  if (mask.empty()) return 0.0;
  size_t pos = 0;
  for (uint8_t m : mask) pos += m;
  return static_cast<double>(pos) / static_cast<double>(mask.size());
}

const std::vector<std::string>& SplitManifest::ids(const std::string& split) const {
  auto it = splits.find(split);
  if (it == splits.end()) {
    static const std::vector<std::string> empty;
    return empty;
  }
  return it->second;
}

void SplitManifest::validate() const {
  std::set<std::string> seen;
  for (const auto& [name, ids] : splits) {
    for (const std::string& id : ids)
      if (!seen.insert(id).second)
        fail(Err::CorpusSchema, "patch id '" + id + "' appears in more than one split");
  }
}

void PixelStats::init(size_t channels) {
  count = 0;
  sum.assign(channels, 0.0);
  sumsq.assign(channels, 0.0);
}

void PixelStats::add_patch(const Patch& p) {
  if (sum.size() != static_cast<size_t>(p.b))
    fail(Err::ChannelCount, "pixel stats channel mismatch on patch " + p.id);
  const float* img = p.image.data();
  const size_t pixels = static_cast<size_t>(p.h) * p.w;
  for (size_t i = 0; i < pixels; ++i) {
    const float* row = img + i * p.b;
    for (int c = 0; c < p.b; ++c) {
      sum[static_cast<size_t>(c)] += row[c];
      sumsq[static_cast<size_t>(c)] += static_cast<double>(row[c]) * row[c];
    }
  }
  count += pixels;
}

void PixelStats::merge(const PixelStats& other) {
  if (sum.size() != other.sum.size()) fail(Err::ChannelCount, "pixel stats merge mismatch");
  count += other.count;
  for (size_t c = 0; c < sum.size(); ++c) {
    sum[c] += other.sum[c];
    sumsq[c] += other.sumsq[c];
  }
}

Standardizer PixelStats::finalize(double epsilon, const std::string& split) const {
  if (count == 0) fail(Err::EmptySplit, "no pixels accumulated for split '" + split + "'");
  Standardizer s;
  s.epsilon = epsilon;
  s.fitted_split = split;
  s.mean.resize(sum.size());
  s.stdev.resize(sum.size());
  const double n = static_cast<double>(count);
  for (size_t c = 0; c < sum.size(); ++c) {
    const double mean = sum[c] / n;
    double var = sumsq[c] / n - mean * mean;
    if (var < 0.0) var = 0.0;
    double sd = std::sqrt(var);
    if (sd < epsilon) sd = epsilon;
    s.mean[c] = mean;
    s.stdev[c] = sd;
  }
  return s;
}

Corpus::Corpus(std::string root, BandManifest manifest, SplitManifest splits)
    : root_(std::move(root)), manifest_(std::move(manifest)), splits_(std::move(splits)) {
  manifest_.validate();
  splits_.validate();
}

static std::string find_patch_file(const std::string& root, const std::string& id) {
  const std::string candidates[] = {
      root + "/patches/" + id + ".h5",
      root + "/" + id + ".h5",
      root + "/patches/" + id + ".json",
      root + "/" + id + ".json",
  };
  for (const std::string& c : candidates)
    if (file_exists(c)) return c;
  return {};
}

bool Corpus::patch_exists(const std::string& id) const {
  return !find_patch_file(root_, id).empty();
}

Patch Corpus::load_patch(const std::string& id) const {
  const std::string path = find_patch_file(root_, id);
  if (path.empty()) fail(Err::MissingPatch, "patch '" + id + "' not found under " + root_);
  Patch p = path.ends_with(".h5") ? read_patch_hdf5(path, id) : read_patch_flat(path, id);
  check_patch_against_manifest(p, manifest_);
  p.band_names = manifest_.names();
  return p;
}

void Corpus::validate_sample() const {
  std::vector<std::string> all;
  for (const std::string& split : splits_.split_order)
    for (const std::string& id : splits_.ids(split)) {
      if (!patch_exists(id)) fail(Err::MissingPatch, "patch '" + id + "' not found under " + root_);
      all.push_back(id);
    }
  std::sort(all.begin(), all.end());
  const size_t want = std::min<size_t>(32, all.size());
  Rng rng(0x5eedu);
  for (size_t i = 0; i < want; ++i) {
    const size_t j = i + rng.below(all.size() - i);
    std::swap(all[i], all[j]);
    load_patch(all[i]);  // full shape + label-domain validation
  }
}

BandManifest load_band_manifest(const std::string& path) {
  json j = parse_json_file(path);
  if (!j.is_array()) fail(Err::CorpusSchema, "band manifest must be a JSON array: " + path);
  BandManifest m;
  for (const json& e : j) {
    BandDesc d;
    d.name = e.at("name").get<std::string>();
    d.resolution_m = e.value("resolution_m", 0.0);
    d.role = e.value("role", std::string{});
    m.bands.push_back(std::move(d));
  }
  m.validate();
  return m;
}

void save_band_manifest(const BandManifest& m, const std::string& path) {
  json j = json::array();
  for (const BandDesc& b : m.bands)
    j.push_back({{"name", b.name}, {"resolution_m", b.resolution_m}, {"role", b.role}});
  write_text_file(path, j.dump(2) + "\n");
}

SplitManifest load_split_manifest(const std::string& path) {
  json j = parse_json_file(path);
  if (!j.is_object()) fail(Err::CorpusSchema, "split manifest must be a JSON object: " + path);
  SplitManifest m;
  m.corpus_id = j.value("corpus_id", std::string{});
  for (const std::string& name : canonical_splits()) {
    if (!j.contains(name)) continue;
    m.splits[name] = j[name].get<std::vector<std::string>>();
    m.split_order.push_back(name);
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "corpus_id" || m.splits.count(it.key())) continue;
    if (!it.value().is_array()) continue;
    m.splits[it.key()] = it.value().get<std::vector<std::string>>();
    m.split_order.push_back(it.key());
  }
  m.validate();
  return m;
}

void save_split_manifest(const SplitManifest& m, const std::string& path) {
  json j = json::object();
  if (!m.corpus_id.empty()) j["corpus_id"] = m.corpus_id;
  for (const auto& [name, ids] : m.splits) j[name] = ids;
  write_text_file(path, j.dump(2) + "\n");
}

Corpus load_corpus(const std::string& root_path, const std::string& band_manifest_path,
                   const std::string& split_manifest_path) {
  BandManifest bands = load_band_manifest(band_manifest_path);
  SplitManifest splits = load_split_manifest(split_manifest_path);
  Corpus corpus(root_path, std::move(bands), std::move(splits));
  corpus.validate_sample();
  return corpus;
}

void write_patch_hdf5(const Patch& p, const std::string& path) {
  hdf5_quiet();
  hid_t file = H5Fcreate(path.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
  if (file < 0) fail(Err::Io, "cannot create " + path);
  hsize_t idims[3] = {static_cast<hsize_t>(p.h), static_cast<hsize_t>(p.w),
                      static_cast<hsize_t>(p.b)};
  hid_t ispace = H5Screate_simple(3, idims, nullptr);
  hid_t img = H5Dcreate2(file, "img", H5T_NATIVE_FLOAT, ispace, H5P_DEFAULT, H5P_DEFAULT,
                         H5P_DEFAULT);
  herr_t rc = H5Dwrite(img, H5T_NATIVE_FLOAT, H5S_ALL, H5S_ALL, H5P_DEFAULT, p.image.data());
  H5Dclose(img);
  H5Sclose(ispace);
  if (rc >= 0) {
    hsize_t mdims[2] = {static_cast<hsize_t>(p.h), static_cast<hsize_t>(p.w)};
    hid_t mspace = H5Screate_simple(2, mdims, nullptr);
    hid_t msk = H5Dcreate2(file, "mask", H5T_NATIVE_UINT8, mspace, H5P_DEFAULT, H5P_DEFAULT,
                           H5P_DEFAULT);
    rc = H5Dwrite(msk, H5T_NATIVE_UINT8, H5S_ALL, H5S_ALL, H5P_DEFAULT, p.mask.data());
    H5Dclose(msk);
    H5Sclose(mspace);
  }
  H5Fclose(file);
  if (rc < 0) fail(Err::Io, "failed writing " + path);
}

void write_patch_flat(const Patch& p, const std::string& dir) {
  ensure_dir(dir);
  const std::string img_name = p.id + ".img.f32";
  const std::string mask_name = p.id + ".mask.u8";
  write_binary_file(dir + "/" + img_name, p.image.data(),
                    static_cast<size_t>(p.image.size()) * sizeof(float));
  write_binary_file(dir + "/" + mask_name, p.mask.data(), p.mask.size());
  json j = {{"id", p.id}, {"h", p.h}, {"w", p.w}, {"b", p.b},
            {"img", img_name}, {"mask", mask_name}};
  if (p.site) j["site"] = *p.site;
  if (p.timestamp) j["timestamp"] = *p.timestamp;
  write_text_file(dir + "/" + p.id + ".json", j.dump(2) + "\n");
}

Standardizer fit_standardizer(const Corpus& corpus, const std::string& split,
                              bool allow_non_train) {
  if (split != "train" && !allow_non_train)
    fail(Err::Leakage, "standardizer fitting on split '" + split +
                           "' requires the explicit non-train override");
  const std::vector<std::string>& ids = corpus.split_ids(split);
  if (ids.empty()) fail(Err::EmptySplit, "split '" + split + "' is empty");
  PixelStats stats;
  stats.init(corpus.manifest().size());
  for (const std::string& id : ids) stats.add_patch(corpus.load_patch(id));
  return stats.finalize(1e-6, split);
}

Patch standardize(const Patch& patch, const Standardizer& s) {
  if (static_cast<size_t>(patch.b) != s.channels())
    fail(Err::ChannelCount, "patch " + patch.id + " has " + std::to_string(patch.b) +
                                " channels, standardizer expects " + std::to_string(s.channels()));
  Patch out = patch;
  float* img = out.image.data();
  const size_t pixels = static_cast<size_t>(out.h) * out.w;
  for (size_t i = 0; i < pixels; ++i) {
    float* row = img + i * out.b;
    for (int c = 0; c < out.b; ++c)
      row[c] = static_cast<float>((row[c] - s.mean[static_cast<size_t>(c)]) /
                                  s.stdev[static_cast<size_t>(c)]);
  }
  return out;
}

Patch augment(const Patch& patch, Rng& rng) {
  const bool flip_h = rng.bernoulli(0.5);
  const bool flip_v = rng.bernoulli(0.5);
  if (!flip_h && !flip_v) return patch;
  Patch out = patch;
  const int H = patch.h, W = patch.w, B = patch.b;
  for (int i = 0; i < H; ++i) {
    const int si = flip_v ? H - 1 - i : i;
    for (int j = 0; j < W; ++j) {
      const int sj = flip_h ? W - 1 - j : j;
      const float* src = patch.image.data() + (static_cast<size_t>(si) * W + sj) * B;
      float* dst = out.image.data() + (static_cast<size_t>(i) * W + j) * B;
      std::copy(src, src + B, dst);
      out.mask[static_cast<size_t>(i) * W + j] = patch.mask[static_cast<size_t>(si) * W + sj];
    }
  }
  return out;
}

Patch select_bands(const Patch& patch, const BandConfig& config) {
  std::vector<int> idx;
  idx.reserve(config.channels.size());
  for (const std::string& name : config.channels) {
    int found = -1;
    for (size_t c = 0; c < patch.band_names.size(); ++c)
      if (patch.band_names[c] == name) {
        found = static_cast<int>(c);
        break;
      }
    if (found < 0)
      fail(Err::ChannelNotFound, "channel '" + name + "' not present in patch " + patch.id);
    idx.push_back(found);
  }
  Patch out;
  out.id = patch.id;
  out.site = patch.site;
  out.timestamp = patch.timestamp;
  out.h = patch.h;
  out.w = patch.w;
  out.b = static_cast<int>(idx.size());
  out.mask = patch.mask;
  out.band_names = config.channels;
  out.image = Tensor({out.h, out.w, out.b});
  const size_t pixels = static_cast<size_t>(out.h) * out.w;
  for (size_t i = 0; i < pixels; ++i) {
    const float* src = patch.image.data() + i * patch.b;
    float* dst = out.image.data() + i * out.b;
    for (size_t c = 0; c < idx.size(); ++c) dst[c] = src[idx[c]];
  }
  return out;
}

SubsetSelection stratified_subset_from_coverage(const std::vector<std::string>& ids,
                                                const std::vector<double>& coverage, double k,
                                                uint64_t seed, int n_strata) {
  if (!(k > 0.0) || k > 100.0) fail(Err::Fraction, "label fraction must lie in (0, 100]");
  if (n_strata < 1) fail(Err::Config, "n_strata must be positive");
  if (ids.size() != coverage.size()) fail(Err::Shape, "ids/coverage length mismatch");
  if (ids.empty()) fail(Err::EmptySplit, "cannot subset an empty training split");

  const size_t n = ids.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (coverage[a] != coverage[b]) return coverage[a] < coverage[b];
    return ids[a] < ids[b];
  });

  Rng rng(seed);
  std::vector<std::string> picked;
  for (int s = 0; s < n_strata; ++s) {
    const size_t lo = n * static_cast<size_t>(s) / static_cast<size_t>(n_strata);
    const size_t hi = n * static_cast<size_t>(s + 1) / static_cast<size_t>(n_strata);
    const size_t bin = hi - lo;
    if (bin == 0) continue;
    size_t m = static_cast<size_t>(round_half_up(k * static_cast<double>(bin) / 100.0));
    if (m == 0) m = 1;  // every non-empty bin contributes
    if (m > bin) m = bin;
    // Partial Fisher-Yates over the bin's slice of the coverage order.
    std::vector<size_t> slice(order.begin() + static_cast<std::ptrdiff_t>(lo),
                              order.begin() + static_cast<std::ptrdiff_t>(hi));
    for (size_t i = 0; i < m; ++i) {
      const size_t j = i + rng.below(bin - i);
      std::swap(slice[i], slice[j]);
      picked.push_back(ids[slice[i]]);
    }
  }
  std::sort(picked.begin(), picked.end());

  SubsetSelection sel;
  sel.k = k;
  sel.seed = seed;
  sel.n_strata = n_strata;
  sel.ids = std::move(picked);
  return sel;
}

SubsetSelection stratified_subset(const Corpus& corpus, double k, uint64_t seed, int n_strata) {
  const std::vector<std::string>& ids = corpus.split_ids("train");
  std::vector<double> coverage;
  coverage.reserve(ids.size());
  for (const std::string& id : ids) coverage.push_back(corpus.load_patch(id).landslide_fraction());
  return stratified_subset_from_coverage(ids, coverage, k, seed, n_strata);
}

void save_subset_manifest(const SubsetSelection& sel, const std::string& path) {
  json j = {{"k", sel.k}, {"seed", sel.seed}, {"ids", sel.ids}};
  write_text_file(path, j.dump(2) + "\n");
}

SubsetSelection load_subset_manifest(const std::string& path) {
  json j = parse_json_file(path);
  SubsetSelection sel;
  sel.k = j.at("k").get<double>();
  sel.seed = j.at("seed").get<uint64_t>();
  sel.ids = j.at("ids").get<std::vector<std::string>>();
  return sel;
}

std::string band_config_to_json(const BandConfig& c) {
  json j = {{"name", c.name}, {"channels", c.channels}};
  return j.dump(2) + "\n";
}

BandConfig band_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Err::Config, std::string("band config is not valid JSON: ") + e.what());
  }
  BandConfig c;
  c.name = j.at("name").get<std::string>();
  c.channels = j.at("channels").get<std::vector<std::string>>();
  if (c.channels.empty()) fail(Err::Config, "band config lists no channels");
  return c;
}

void save_band_config(const BandConfig& c, const std::string& path) {
  write_text_file(path, band_config_to_json(c));
}

BandConfig load_band_config(const std::string& path) {
  if (!file_exists(path)) fail(Err::Io, "band config not found: " + path);
  return band_config_from_json(read_text_file(path));
}

}  // namespace gfb
