#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "gfb/harness.hpp"
#include "gfb/synth.hpp"
#include "json.hpp"

using namespace gfb;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "gfb_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

Corpus toy_corpus(const std::string& root, int n_train = 6, uint64_t seed = 7,
                  bool with_domain_splits = false) {
  SynthSpec spec;
  spec.n_train = n_train;
  spec.n_val = 2;
  spec.n_test = 2;
  spec.n_generalizability = with_domain_splits ? 2 : 0;
  spec.n_external = with_domain_splits ? 2 : 0;
  spec.image_size = 16;
  spec.seed = seed;
  return make_synthetic_corpus(root, spec);
}

ModelSpec toy_model(int b_in = 6) {
  ModelSpec spec;
  spec.arch = "prithvi_toy";
  spec.adapter.kind = AdapterKind::linear;
  spec.adapter.b_in = b_in;
  spec.adapter.width = 8;
  spec.encoder.image_size = 16;
  spec.encoder.patch_size = 4;
  spec.encoder.embed_dim = 16;
  spec.encoder.depth = 1;
  spec.encoder.heads = 2;
  spec.decoder.stages = 2;
  spec.input_bands = hls_interface_bands();
  return spec;
}

TrainConfig toy_config(int epochs = 2, double lr = 1e-3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.lr = lr;
  cfg.seed = 1;
  cfg.loss.kind = LossKind::wce;
  cfg.bands = BandConfig{"HLS-6B", hls_interface_bands()};
  cfg.model = toy_model();
  return cfg;
}

std::vector<float> snapshot(SegModel& model) {
  std::vector<Param*> params;
  model.all_params(params);
  std::vector<float> flat;
  for (const Param* p : params) flat.insert(flat.end(), p->value.v.begin(), p->value.v.end());
  return flat;
}

}  // namespace

TEST_CASE("training is deterministic for a fixed config and seed") {
  Corpus corpus = toy_corpus(fresh_dir("det_corpus"));
  TrainConfig cfg = toy_config(3);

  const std::string out_a = fresh_dir("det_a");
  auto model_a = build_model(cfg.model, cfg.seed);
  RunRecord rec_a = train(*model_a, corpus, cfg, out_a);

  const std::string out_b = fresh_dir("det_b");
  auto model_b = build_model(cfg.model, cfg.seed);
  RunRecord rec_b = train(*model_b, corpus, cfg, out_b);

  CHECK(rec_a.run_id == rec_b.run_id);
  CHECK(rec_a.train_curve == rec_b.train_curve);
  CHECK(rec_a.val_curve == rec_b.val_curve);
  CHECK(rec_a.checkpoint_epoch == rec_b.checkpoint_epoch);
  CHECK(rec_a.checkpoint_sha == rec_b.checkpoint_sha);  // identical bytes
  CHECK(snapshot(*model_a) == snapshot(*model_b));
  // The deterministic record is byte-identical even across output dirs.
  CHECK(rec_a.metrics_json() == rec_b.metrics_json());
}

TEST_CASE("zero learning rate trains in place without moving parameters") {
  Corpus corpus = toy_corpus(fresh_dir("lr0_corpus"));
  TrainConfig cfg = toy_config(2, 0.0);
  auto model = build_model(cfg.model, cfg.seed);
  const std::vector<float> before = snapshot(*model);
  RunRecord rec = train(*model, corpus, cfg, fresh_dir("lr0_out"));
  CHECK(snapshot(*model) == before);
  // Every epoch sees the same frozen model, so validation never changes.
  REQUIRE(rec.val_curve.size() == 2);
  CHECK(rec.val_curve[0] == rec.val_curve[1]);
  CHECK(rec.checkpoint_epoch == 0);  // earliest minimum wins the tie
}

TEST_CASE("training runs exactly the configured number of epochs") {
  Corpus corpus = toy_corpus(fresh_dir("epochs_corpus"));
  TrainConfig cfg = toy_config(4);
  cfg.batch_size = 4;  // 6 train patches -> 2 optimizer steps per epoch
  auto model = build_model(cfg.model, cfg.seed);
  RunRecord rec = train(*model, corpus, cfg, fresh_dir("epochs_out"));
  CHECK(rec.train_curve.size() == 4);
  CHECK(rec.val_curve.size() == 4);
  CHECK(rec.steps == 4 * 2);
  CHECK(rec.checkpoint_epoch >= 0);
  CHECK(rec.checkpoint_epoch < 4);
}

TEST_CASE("checkpoint restores the epoch with the lowest validation loss") {
  Corpus corpus = toy_corpus(fresh_dir("argmin_corpus"));
  TrainConfig cfg = toy_config(4);
  auto model = build_model(cfg.model, cfg.seed);
  const std::string out = fresh_dir("argmin_out");
  RunRecord rec = train(*model, corpus, cfg, out);

  // Recompute the argmin independently.
  int want = 0;
  for (size_t e = 1; e < rec.val_curve.size(); ++e)
    if (rec.val_curve[e] < rec.val_curve[static_cast<size_t>(want)]) want = static_cast<int>(e);
  CHECK(rec.checkpoint_epoch == want);

  // The saved checkpoint holds exactly the restored parameters.
  auto loaded = build_model(cfg.model, cfg.seed + 999);
  CheckpointMeta meta = load_checkpoint(*loaded, rec.checkpoint_path);
  CHECK(meta.epoch == rec.checkpoint_epoch);
  CHECK(meta.run_id == rec.run_id);
  CHECK(snapshot(*loaded) == snapshot(*model));
}

TEST_CASE("exploding learning rates surface as divergence") {
  Corpus corpus = toy_corpus(fresh_dir("diverge_corpus"));
  TrainConfig cfg = toy_config(2, 1e38);
  auto model = build_model(cfg.model, cfg.seed);
  try {
    train(*model, corpus, cfg, fresh_dir("diverge_out"));
    FAIL("expected DivergenceError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::Divergence);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train validates its configuration up front") {
  Corpus corpus = toy_corpus(fresh_dir("cfgval_corpus"));
  const std::string out = fresh_dir("cfgval_out");

  TrainConfig cfg = toy_config();
  cfg.epochs = 0;
  auto m1 = build_model(toy_model(), 1);
  CHECK_THROWS_AS(train(*m1, corpus, cfg, out), Error);

  cfg = toy_config();
  cfg.lr = -1.0;
  auto m2 = build_model(toy_model(), 1);
  CHECK_THROWS_AS(train(*m2, corpus, cfg, out), Error);

  // Model input bands must match the band config driving the data.
  cfg = toy_config();
  cfg.bands = BandConfig{"RGB+NIR", {"B2", "B3", "B4", "B8"}};
  auto m3 = build_model(toy_model(), 1);  // still six-band
  CHECK_THROWS_AS(train(*m3, corpus, cfg, out), Error);
}

TEST_CASE("split evaluation guards leakage and schema drift") {
  Corpus corpus = toy_corpus(fresh_dir("eval_corpus"));
  TrainConfig cfg = toy_config(1);
  auto model = build_model(cfg.model, cfg.seed);
  Standardizer stats = fit_standardizer(corpus, "train");

  ConfusionMatrix cm;
  MetricReport rep = evaluate_split(*model, cfg.bands, corpus, "test", stats, &cm);
  CHECK(cm.total() == 2u * 16u * 16u);  // two test patches of 16x16 pixels
  CHECK(rep.miou >= 0.0);
  CHECK(rep.miou <= 1.0);
  CHECK(rep.macc >= 0.0);
  CHECK(rep.macc <= 1.0);

  Standardizer leaky = fit_standardizer(corpus, "val", true);
  try {
    evaluate_split(*model, cfg.bands, corpus, "test", leaky);
    FAIL("expected LeakageError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::Leakage);
  }

  Standardizer truncated = stats;
  truncated.mean.pop_back();
  truncated.stdev.pop_back();
  try {
    evaluate_split(*model, cfg.bands, corpus, "test", truncated);
    FAIL("expected CorpusSchemaError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::CorpusSchema);
  }

  CHECK_THROWS_AS(evaluate_split(*model, cfg.bands, corpus, "absent", stats), Error);
}

TEST_CASE("sensor axis records valid cells and skips impossible ones") {
  Corpus corpus = toy_corpus(fresh_dir("sensor_corpus"));
  TrainConfig base = toy_config(1);
  const std::string out = fresh_dir("sensor_out");

  std::vector<SensorCell> grid(3);
  grid[0].bands = BandConfig{"HLS-6B", hls_interface_bands()};
  grid[0].adapter = AdapterKind::linear;
  grid[0].tuning = Tuning::full;
  grid[1].bands = BandConfig{"RGB+NIR", {"B2", "B3", "B4", "B8"}};
  grid[1].adapter = AdapterKind::none;  // bypass cannot take four bands
  grid[2].bands = BandConfig{"HLS-6B", hls_interface_bands()};
  grid[2].adapter = AdapterKind::linear;
  grid[2].tuning = Tuning::frozen;
  grid[2].arch = "reference_unet";  // no pretrained backbone to freeze

  std::vector<SensorRow> rows = run_axis_sensor(grid, corpus, base, out);
  REQUIRE(rows.size() == 3);

  CHECK_FALSE(rows[0].skipped);
  CHECK(rows[0].run_id.size() == 12);
  CHECK(rows[0].b_in == 6);
  CHECK(rows[0].loss == "wce");
  CHECK(rows[0].metrics.miou >= 0.0);
  CHECK(fs::exists(out + "/metrics_" + rows[0].run_id + ".json"));
  CHECK(fs::exists(out + "/" + rows[0].run_id + ".ckpt"));

  CHECK(rows[1].skipped);
  CHECK(rows[1].run_id.empty());
  CHECK(rows[1].skip_reason.find("6") != std::string::npos);
  CHECK(rows[2].skipped);
  CHECK(rows[2].skip_reason.find("baseline") != std::string::npos);

  CHECK(fs::exists(out + "/sensor_rows.json"));
  auto doc = nlohmann::json::parse(std::ifstream(out + "/sensor_rows.json"));
  CHECK(doc.is_array());
  CHECK(doc.size() == 3);
}

TEST_CASE("label axis shares one subset manifest per fraction across models") {
  Corpus corpus = toy_corpus(fresh_dir("label_corpus"), 8);
  TrainConfig base = toy_config(1);
  const std::string out = fresh_dir("label_out");

  ModelSpec unet = toy_model();
  unet.arch = "reference_unet";
  std::vector<std::pair<std::string, ModelSpec>> models{
      {"prithvi_toy", toy_model()},
      {"reference_unet", unet},
  };
  const std::vector<double> fractions{100.0, 50.0};
  LabelAxisOutput axis = run_axis_label(models, corpus, base, fractions, 0, out);

  REQUIRE(axis.models.size() == 2);
  for (const LabelAxisResult& res : axis.models) {
    CHECK(res.run_ids.size() == 2);
    CHECK(res.report.scores.count(100.0) == 1);
    CHECK(res.report.scores.count(50.0) == 1);
    CHECK(res.report.rpd.at(100.0) == 0.0);
  }
  // Different models and fractions produce distinct runs.
  CHECK(axis.models[0].run_ids[0] != axis.models[0].run_ids[1]);
  CHECK(axis.models[0].run_ids[0] != axis.models[1].run_ids[0]);

  // One manifest per fraction, stored relative to the output dir, hashed.
  REQUIRE(axis.subset_paths.size() == 2);
  for (const auto& [k, rel] : axis.subset_paths) {
    CHECK(fs::exists(out + "/" + rel));
    CHECK(axis.subset_hashes.at(k).size() == 64);
    SubsetSelection sel = load_subset_manifest(out + "/" + rel);
    CHECK(sel.k == k);
  }
  // The 50% manifest really is a strict subset of the train split.
  SubsetSelection half = load_subset_manifest(out + "/" + axis.subset_paths.at(50.0));
  CHECK(half.ids.size() == 4);
  CHECK(fs::exists(out + "/label_axis.json"));
}

TEST_CASE("a foreign subset manifest at the shared path is rejected") {
  Corpus corpus = toy_corpus(fresh_dir("tamper_corpus"), 8);
  TrainConfig base = toy_config(1);
  const std::string out = fresh_dir("tamper_out");

  // Plant a manifest claiming the same fraction and seed but other patches.
  fs::create_directories(out + "/subsets");
  SubsetSelection bogus;
  bogus.k = 50.0;
  bogus.seed = 0;
  bogus.ids = {"not_a_real_patch"};
  save_subset_manifest(bogus, out + "/subsets/dk_50.json");

  std::vector<std::pair<std::string, ModelSpec>> models{{"prithvi_toy", toy_model()}};
  try {
    run_axis_label(models, corpus, base, {50.0}, 0, out);
    FAIL("expected SharedSubsetError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::SharedSubset);
  }
}

TEST_CASE("domain axis with identical targets yields unit retention") {
  Corpus corpus = toy_corpus(fresh_dir("domain_corpus"), 6, 7, true);
  TrainConfig cfg = toy_config(1);
  auto model = build_model(cfg.model, cfg.seed);
  train(*model, corpus, cfg, fresh_dir("domain_train"));
  Standardizer stats = fit_standardizer(corpus, "train");

  EvalTarget same{&corpus, "test", "in"};
  TransferReport unit = run_axis_domain(*model, cfg.bands, stats, same, same, same);
  CHECK(unit.r_site == 1.0);
  CHECK(unit.r_ext == 1.0);
  CHECK(unit.r_2hop == 1.0);

  // The real three-way split exercises the ratio decomposition.
  EvalTarget t_in{&corpus, "test", "in"};
  EvalTarget t_gen{&corpus, "generalizability", "gen"};
  EvalTarget t_ext{&corpus, "external", "ext"};
  TransferReport rep = run_axis_domain(*model, cfg.bands, stats, t_in, t_gen, t_ext);
  CHECK(rep.p_in > 0.0);
  CHECK(std::abs(rep.r_2hop - rep.r_site * rep.r_ext) <= 1e-9);

  // Missing target corpora are configuration errors.
  EvalTarget null_target;
  CHECK_THROWS_AS(run_axis_domain(*model, cfg.bands, stats, t_in, null_target, t_ext), Error);

  // A non-train standardizer is leakage even here.
  Standardizer leaky = fit_standardizer(corpus, "val", true);
  try {
    run_axis_domain(*model, cfg.bands, leaky, t_in, t_gen, t_ext);
    FAIL("expected LeakageError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::Leakage);
  }
}

TEST_CASE("domain axis refuses eval targets with a different band manifest") {
  Corpus corpus = toy_corpus(fresh_dir("domain_bands_a"), 6, 7, true);
  // Same structure, different band naming scheme.
  const std::string root_b = fresh_dir("domain_bands_b");
  fs::create_directories(root_b + "/patches");
  BandManifest other;
  for (int i = 0; i < 3; ++i) other.bands.push_back({"X" + std::to_string(i), 10.0, "test"});
  save_band_manifest(other, root_b + "/bands.json");
  SplitManifest splits;
  splits.corpus_id = "other";
  splits.split_order = {"test"};
  Patch p;
  p.id = "q0";
  p.h = p.w = 16;
  p.b = 3;
  p.image = Tensor({16, 16, 3});
  p.mask.assign(256, 0);
  p.mask[0] = 1;
  write_patch_hdf5(p, root_b + "/patches/q0.h5");
  splits.splits["test"] = {"q0"};
  save_split_manifest(splits, root_b + "/splits.json");
  Corpus foreign = load_corpus(root_b, root_b + "/bands.json", root_b + "/splits.json");

  TrainConfig cfg = toy_config(1);
  auto model = build_model(cfg.model, cfg.seed);
  train(*model, corpus, cfg, fresh_dir("domain_bands_train"));
  Standardizer stats = fit_standardizer(corpus, "train");
  EvalTarget t_in{&corpus, "test", "in"};
  EvalTarget t_gen{&corpus, "generalizability", "gen"};
  EvalTarget bad{&foreign, "test", "ext"};
  try {
    run_axis_domain(*model, cfg.bands, stats, t_in, t_gen, bad);
    FAIL("expected CorpusSchemaError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::CorpusSchema);
  }
}

TEST_CASE("loss selection trains one run per loss and picks by validation mIoU") {
  Corpus corpus = toy_corpus(fresh_dir("loss_sel_corpus"));
  TrainConfig base = toy_config(1);
  const std::string out = fresh_dir("loss_sel_out");

  std::vector<LossSpec> specs(2);
  specs[0].kind = LossKind::wce;
  specs[1].kind = LossKind::focal;
  LossSelection sel = select_loss_by_validation(corpus, base, specs, out);

  REQUIRE(sel.runs.size() == 2);
  REQUIRE(sel.run_ids.size() == 2);
  CHECK(sel.run_ids[0] != sel.run_ids[1]);
  REQUIRE(sel.winner.has_value());
  const LossRunSummary& best = sel.runs[*sel.winner];
  for (const LossRunSummary& run : sel.runs) {
    CHECK_FALSE(run.diverged);
    CHECK(run.checkpoint_epoch == 0);
    CHECK(best.val_miou >= run.val_miou);
  }
  for (const std::string& id : sel.run_ids)
    CHECK(fs::exists(out + "/metrics_" + id + ".json"));
}

TEST_CASE("train config json honours fields, defaults, and subset manifests") {
  const std::string dir = fresh_dir("cfg_json");
  SubsetSelection sel;
  sel.k = 10.0;
  sel.seed = 4;
  sel.ids = {"synth_train_0000", "synth_train_0001"};
  save_subset_manifest(sel, dir + "/dk_10.json");

  nlohmann::json doc;
  doc["epochs"] = 7;
  doc["batch_size"] = 2;
  doc["lr"] = 5e-4;
  doc["seed"] = 11;
  doc["augment_flips"] = false;
  doc["loss"] = {{"kind", "focal"}, {"gamma", 1.5}};
  doc["bands"] = {{"name", "RGB+NIR"}, {"channels", {"B2", "B3", "B4", "B8"}}};
  doc["model"] = nlohmann::json::parse(toy_model(4).to_json());
  doc["subset_manifest_path"] = dir + "/dk_10.json";
  doc["this_key_is_unknown"] = 42;

  TrainConfig cfg = train_config_from_json(doc.dump());
  CHECK(cfg.epochs == 7);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.lr == 5e-4);
  CHECK(cfg.seed == 11);
  CHECK_FALSE(cfg.augment_flips);
  CHECK(cfg.loss.kind == LossKind::focal);
  CHECK(cfg.loss.gamma == 1.5);
  CHECK(cfg.bands.name == "RGB+NIR");
  // The model interface follows the band config.
  CHECK(cfg.model.adapter.b_in == 4);
  CHECK(cfg.model.input_bands == cfg.bands.channels);
  // Subset ids come from the manifest, with its hash recorded.
  CHECK(cfg.train_ids == sel.ids);
  CHECK(cfg.subset_manifest_sha.size() == 64);

  // Defaults hold when the document is minimal.
  TrainConfig bare = train_config_from_json("{}");
  CHECK(bare.epochs == 100);
  CHECK(bare.batch_size == 8);
  CHECK(bare.lr == 1e-5);
  CHECK(bare.weight_decay == 0.0);
  CHECK(bare.augment_flips);
  CHECK(bare.loss.kind == LossKind::wce);

  CHECK_THROWS_AS(train_config_from_json("{bad json"), Error);
}

TEST_CASE("config fingerprints track every training-relevant field") {
  TrainConfig base = toy_config();
  const std::string run = base.run_id();
  CHECK(run.size() == 12);
  CHECK(base.fingerprint().size() == 64);
  CHECK(base.fingerprint().substr(0, 12) == run);
  CHECK(base.fingerprint() == toy_config().fingerprint());

  TrainConfig c;
  c = toy_config();
  c.seed = 99;
  CHECK(c.fingerprint() != base.fingerprint());
  c = toy_config();
  c.lr = 2e-3;
  CHECK(c.fingerprint() != base.fingerprint());
  c = toy_config();
  c.loss.kind = LossKind::lovasz;
  CHECK(c.fingerprint() != base.fingerprint());
  c = toy_config();
  c.bands.name = "renamed";
  CHECK(c.fingerprint() != base.fingerprint());
  c = toy_config();
  c.model.encoder.depth = 2;
  CHECK(c.fingerprint() != base.fingerprint());
  c = toy_config();
  c.train_ids = {"synth_train_0000"};
  CHECK(c.fingerprint() != base.fingerprint());
}

TEST_CASE("corpus fingerprints are stable across loads and distinct across corpora") {
  const std::string root = fresh_dir("fp_corpus");
  Corpus a = toy_corpus(root);
  const std::string fp = corpus_fingerprint(a);
  CHECK(fp.size() == 64);
  Corpus again = load_corpus(root, root + "/bands.json", root + "/splits.json");
  CHECK(corpus_fingerprint(again) == fp);

  Corpus other = toy_corpus(fresh_dir("fp_corpus_b"), 7, 8);
  CHECK(corpus_fingerprint(other) != fp);
}

TEST_CASE("run records split stable metrics from timing details") {
  Corpus corpus = toy_corpus(fresh_dir("record_corpus"));
  TrainConfig cfg = toy_config(1);
  auto model = build_model(cfg.model, cfg.seed);
  const std::string out = fresh_dir("record_out");
  RunRecord rec = train(*model, corpus, cfg, out);
  Standardizer stats = fit_standardizer(corpus, "train");
  rec.eval["test"] = evaluate_split(*model, cfg.bands, corpus, "test", stats);
  write_run_record(rec, out);

  CHECK(fs::exists(out + "/run_" + rec.run_id + ".json"));
  CHECK(fs::exists(out + "/metrics_" + rec.run_id + ".json"));

  auto full = nlohmann::json::parse(std::ifstream(out + "/run_" + rec.run_id + ".json"));
  auto stable = nlohmann::json::parse(std::ifstream(out + "/metrics_" + rec.run_id + ".json"));
  CHECK(full.contains("wall_seconds"));
  CHECK(full.contains("checkpoint_path"));
  CHECK_FALSE(stable.contains("wall_seconds"));
  CHECK_FALSE(stable.contains("checkpoint_path"));
  CHECK(stable.at("run_id") == rec.run_id);
  CHECK(stable.at("eval").contains("test"));
  CHECK(stable.at("checkpoint_sha") == rec.checkpoint_sha);
}
