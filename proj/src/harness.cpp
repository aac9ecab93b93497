#include "gfb/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <utility>

#include "gfb/io.hpp"
#include "json.hpp"

namespace gfb {

using nlohmann::json;

namespace {

// Compact fraction tag for filenames and JSON keys: 100, 10, 2.5, 1.25.
std::string frac_tag(double k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", k);
  return buf;
}

json metric_report_obj(const MetricReport& r) {
  json j;
  j["miou"] = r.miou;
  j["f1"] = r.f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["macc"] = r.macc;
  j["mean_class_acc"] = r.mean_class_acc;
  j["iou_ls"] = r.iou_ls;
  j["iou_bg"] = r.iou_bg;
  return j;
}

json loss_spec_obj(const LossSpec& s) {
  json j;
  j["kind"] = loss_kind_name(s.kind);
  j["w_bg"] = s.w_bg;
  j["w_ls"] = s.w_ls;
  j["gamma"] = s.gamma;
  j["classes"] = s.classes;
  return j;
}

void shuffle_ids(std::vector<std::string>& ids, Rng& rng) {
  for (size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<size_t>(rng.below(static_cast<int64_t>(i)))]);
}

}  // namespace

std::string metric_report_json(const MetricReport& r) { return metric_report_obj(r).dump(2) + "\n"; }

std::string TrainConfig::canonical_json() const {
  json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["seed"] = seed;
  j["augment_flips"] = augment_flips;
  j["loss"] = loss_spec_obj(loss);
  j["model"] = json::parse(model.to_json());
  j["bands"] = json{{"name", bands.name}, {"channels", bands.channels}};
  std::string joined;
  for (const auto& id : train_ids) {
    joined += id;
    joined += '\n';
  }
  j["train_ids_count"] = train_ids.size();
  j["train_ids_sha"] = train_ids.empty() ? "" : sha256_hex(joined);
  j["subset_manifest_sha"] = subset_manifest_sha;
  return j.dump(2) + "\n";
}

std::string TrainConfig::fingerprint() const { return sha256_hex(canonical_json()); }

std::string TrainConfig::run_id() const { return fingerprint().substr(0, 12); }

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(Err::Config, std::string("run config is not valid JSON: ") + e.what());
  }
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.augment_flips = j.value("augment_flips", cfg.augment_flips);
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    cfg.loss.kind = loss_kind_from_name(l.value("kind", "wce"));
    cfg.loss.w_bg = l.value("w_bg", cfg.loss.w_bg);
    cfg.loss.w_ls = l.value("w_ls", cfg.loss.w_ls);
    cfg.loss.gamma = l.value("gamma", cfg.loss.gamma);
    cfg.loss.classes = l.value("classes", cfg.loss.classes);
  }
  if (j.contains("model")) cfg.model = ModelSpec::from_json(j.at("model").dump());
  if (j.contains("bands")) cfg.bands = band_config_from_json(j.at("bands").dump());
  if (j.contains("subset_manifest_path")) {
    cfg.subset_manifest_path = j.at("subset_manifest_path").get<std::string>();
    SubsetSelection sel = load_subset_manifest(cfg.subset_manifest_path);
    cfg.train_ids = sel.ids;
    cfg.subset_manifest_sha = sha256_file_hex(cfg.subset_manifest_path);
  }
  // Keep the model's input description in lockstep with the band config.
  if (!cfg.bands.channels.empty()) {
    cfg.model.input_bands = cfg.bands.channels;
    cfg.model.adapter.b_in = cfg.bands.b_in();
  }
  return cfg;
}

std::string corpus_fingerprint(const Corpus& corpus) {
  json j;
  j["corpus_id"] = corpus.split_manifest().corpus_id;
  json bands = json::array();
  for (const auto& b : corpus.manifest().bands)
    bands.push_back(json{{"name", b.name}, {"resolution_m", b.resolution_m}, {"role", b.role}});
  j["bands"] = bands;
  json splits;
  for (const auto& name : corpus.split_manifest().split_order)
    splits[name] = corpus.split_manifest().ids(name);
  j["splits"] = splits;
  return sha256_hex(j.dump());
}

std::string RunRecord::metrics_json() const {
  json j;
  j["run_id"] = run_id;
  j["config_fingerprint"] = config_fingerprint;
  j["corpus_hash"] = corpus_hash;
  j["subset_manifest_sha"] = subset_manifest_sha;
  j["checkpoint_epoch"] = checkpoint_epoch;
  j["checkpoint_sha"] = checkpoint_sha;
  j["steps"] = steps;
  j["train_curve"] = train_curve;
  j["val_curve"] = val_curve;
  json ev;
  for (const auto& [key, rep] : eval) ev[key] = metric_report_obj(rep);
  j["eval"] = ev;
  return j.dump(2) + "\n";
}

std::string RunRecord::to_json() const {
  json j = json::parse(metrics_json());
  j["wall_seconds"] = wall_seconds;
  j["checkpoint_path"] = checkpoint_path;
  j["subset_manifest_path"] = subset_manifest_path;
  return j.dump(2) + "\n";
}

void write_run_record(const RunRecord& rec, const std::string& out_dir) {
  ensure_dir(out_dir);
  write_text_file(out_dir + "/run_" + rec.run_id + ".json", rec.to_json());
  write_text_file(out_dir + "/metrics_" + rec.run_id + ".json", rec.metrics_json());
}

RunRecord train(SegModel& model, const Corpus& corpus, const TrainConfig& cfg,
                const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.epochs < 1) fail(Err::Config, "epochs must be >= 1");
  if (cfg.batch_size < 1) fail(Err::Config, "batch size must be >= 1");
  if (cfg.lr < 0.0) fail(Err::Config, "learning rate must be non-negative");
  cfg.loss.validate();
  cfg.bands.validate(corpus.manifest());
  if (model.spec().input_bands != cfg.bands.channels)
    fail(Err::Config, "model input bands do not match the band config");
  ensure_dir(out_dir);

  // The standardizer always comes from the full parent train split, even
  // when this run trains on a subset of it.
  const Standardizer stats = fit_standardizer(corpus, "train");

  std::vector<std::string> train_ids =
      cfg.train_ids.empty() ? corpus.split_ids("train") : cfg.train_ids;
  const auto& val_ids = corpus.split_ids("val");
  if (train_ids.empty()) fail(Err::EmptySplit, "training id list is empty");
  if (val_ids.empty()) fail(Err::EmptySplit, "validation split is empty");

  // Patches are standardized and band-selected once; toy-scale corpora fit
  // in memory comfortably.
  std::map<std::string, Patch> cache;
  auto prepared = [&](const std::string& id) -> const Patch& {
    auto it = cache.find(id);
    if (it == cache.end()) {
      Patch p = select_bands(standardize(corpus.load_patch(id), stats), cfg.bands);
      it = cache.emplace(id, std::move(p)).first;
    }
    return it->second;
  };

  std::vector<Param*> trainable, all;
  model.trainable_params(trainable);
  model.all_params(all);
  nn::Adam opt(trainable, cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay);

  RunRecord rec;
  rec.config_fingerprint = cfg.fingerprint();
  rec.run_id = rec.config_fingerprint.substr(0, 12);
  rec.corpus_hash = corpus_fingerprint(corpus);
  rec.subset_manifest_path = cfg.subset_manifest_path;
  rec.subset_manifest_sha = cfg.subset_manifest_sha;

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<std::vector<float>> best_params(all.size());

  const size_t n_train = train_ids.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(cfg.seed ^ static_cast<uint64_t>(epoch));
    std::vector<std::string> order = train_ids;
    shuffle_ids(order, erng);

    double epoch_sum = 0.0;
    for (size_t start = 0; start < n_train; start += static_cast<size_t>(cfg.batch_size)) {
      const size_t m = std::min(n_train - start, static_cast<size_t>(cfg.batch_size));
      for (Param* p : all) p->zero_grad();
      for (size_t j = start; j < start + m; ++j) {
        Patch p = prepared(order[j]);
        if (cfg.augment_flips) p = augment(p, erng);
        Tensor logits = model.forward(p.image);
        std::vector<float> glog(logits.v.size());
        const float li = evaluate_loss<float>(cfg.loss, std::span<const float>(logits.v),
                                              std::span<const uint8_t>(p.mask),
                                              std::span<float>(glog));
        if (!std::isfinite(li))
          fail(Err::Divergence, "training loss is not finite at epoch " + std::to_string(epoch));
        epoch_sum += li;
        // Scale so accumulated parameter gradients equal the batch mean.
        const float inv_m = 1.0f / static_cast<float>(m);
        for (float& g : glog) g *= inv_m;
        model.backward(Tensor(logits.shape, std::move(glog)));
      }
      opt.step();
      ++rec.steps;
    }
    rec.train_curve.push_back(epoch_sum / static_cast<double>(n_train));

    // Validation loss under the same loss function as training.
    double val_sum = 0.0;
    for (const auto& id : val_ids) {
      const Patch& p = prepared(id);
      Tensor logits = model.forward(p.image);
      val_sum += evaluate_loss<float>(cfg.loss, std::span<const float>(logits.v),
                                      std::span<const uint8_t>(p.mask));
    }
    const double val_loss = val_sum / static_cast<double>(val_ids.size());
    if (!std::isfinite(val_loss))
      fail(Err::Divergence, "validation loss is not finite at epoch " + std::to_string(epoch));
    rec.val_curve.push_back(val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_epoch = epoch;
      for (size_t i = 0; i < all.size(); ++i) best_params[i] = all[i]->value.v;
    }
  }

  rec.checkpoint_epoch = best_epoch;
  for (size_t i = 0; i < all.size(); ++i) all[i]->value.v = best_params[i];

  CheckpointMeta meta;
  meta.run_id = rec.run_id;
  meta.config_fingerprint = rec.config_fingerprint;
  meta.corpus_hash = rec.corpus_hash;
  meta.fitted_split = stats.fitted_split;
  meta.subset_manifest_sha = rec.subset_manifest_sha;
  meta.epoch = best_epoch;
  rec.checkpoint_path = out_dir + "/" + rec.run_id + ".ckpt";
  save_checkpoint(model, meta, rec.checkpoint_path);
  rec.checkpoint_sha = sha256_file_hex(rec.checkpoint_path);

  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

MetricReport evaluate_split(SegModel& model, const BandConfig& bands, const Corpus& corpus,
                            const std::string& split, const Standardizer& stats,
                            ConfusionMatrix* cm_out) {
  if (stats.fitted_split != "train")
    fail(Err::Leakage,
         "evaluation requires a train-split standardizer, got '" + stats.fitted_split + "'");
  if (stats.channels() != corpus.manifest().size())
    fail(Err::CorpusSchema, "standardizer channel count does not match the corpus band manifest");
  bands.validate(corpus.manifest());
  const auto& ids = corpus.split_ids(split);
  if (ids.empty()) fail(Err::EmptySplit, "split '" + split + "' has no patches");

  ConfusionMatrix cm;
  for (const auto& id : ids) {
    Patch p = select_bands(standardize(corpus.load_patch(id), stats), bands);
    Tensor probs = softmax_logits(model.forward(p.image));
    std::vector<uint8_t> pred = predict_mask(probs);
    cm = accumulate(cm, pred, p.mask);
  }
  if (cm_out) *cm_out = cm;
  return segmentation_metrics(cm);
}

std::string sensor_rows_json(const std::vector<SensorRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["model"] = r.model;
    j["bands"] = r.bands;
    j["b_in"] = r.b_in;
    j["adapter"] = r.adapter;
    j["tuning"] = r.tuning;
    j["loss"] = r.loss;
    j["skipped"] = r.skipped;
    if (r.skipped) {
      j["skip_reason"] = r.skip_reason;
    } else {
      j["run_id"] = r.run_id;
      j["metrics"] = metric_report_obj(r.metrics);
    }
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::vector<SensorRow> run_axis_sensor(const std::vector<SensorCell>& grid, const Corpus& corpus,
                                       const TrainConfig& base, const std::string& out_dir) {
  ensure_dir(out_dir);
  const Standardizer stats = fit_standardizer(corpus, "train");
  std::vector<SensorRow> rows;
  for (const auto& cell : grid) {
    SensorRow row;
    row.model = cell.arch;
    row.bands = cell.bands.name;
    row.b_in = cell.bands.b_in();
    row.adapter = adapter_kind_name(cell.adapter);
    row.tuning = tuning_name(cell.tuning);
    row.loss = loss_kind_name(base.loss.kind);

    std::string reason;
    if (cell.arch == "reference_unet" && cell.tuning == Tuning::frozen)
      reason = "baseline has no pretrained encoder to freeze";
    else if (cell.arch != "reference_unet" && cell.adapter == AdapterKind::none &&
             row.b_in != static_cast<int>(hls_interface_bands().size()))
      reason = "bypass adapter requires exactly 6 input bands";
    if (!reason.empty()) {
      row.skipped = true;
      row.skip_reason = reason;
      rows.push_back(row);
      continue;
    }

    TrainConfig cfg = base;
    cfg.bands = cell.bands;
    cfg.model.arch = cell.arch;
    cfg.model.adapter.kind = cell.adapter;
    cfg.model.adapter.b_in = row.b_in;
    cfg.model.tuning = cell.tuning;
    cfg.model.input_bands = cell.bands.channels;
    try {
      cfg.bands.validate(corpus.manifest());
      auto model = build_model(cfg.model, cfg.seed);
      RunRecord rec = train(*model, corpus, cfg, out_dir);
      rec.eval["test"] = evaluate_split(*model, cfg.bands, corpus, "test", stats);
      write_run_record(rec, out_dir);
      row.run_id = rec.run_id;
      row.metrics = rec.eval.at("test");
    } catch (const Error& e) {
      // A cell that cannot run is recorded, not fatal for the sweep.
      row.skipped = true;
      row.skip_reason = e.what();
    }
    rows.push_back(row);
  }
  write_text_file(out_dir + "/sensor_rows.json", sensor_rows_json(rows));
  return rows;
}

std::string label_axis_json(const LabelAxisOutput& out) {
  json j;
  json subsets;
  for (const auto& [k, path] : out.subset_paths) {
    json s;
    s["path"] = path;
    s["sha256"] = out.subset_hashes.at(k);
    subsets[frac_tag(k)] = s;
  }
  j["subsets"] = subsets;
  json models = json::array();
  for (const auto& m : out.models) {
    json e;
    e["model"] = m.model_name;
    e["run_ids"] = m.run_ids;
    json scores, rpd;
    for (const auto& [k, v] : m.report.scores) scores[frac_tag(k)] = v;
    for (const auto& [k, v] : m.report.rpd) rpd[frac_tag(k)] = v;
    e["scores"] = scores;
    e["rpd"] = rpd;
    if (m.report.de) e["de"] = *m.report.de;
    models.push_back(e);
  }
  j["models"] = models;
  return j.dump(2) + "\n";
}

LabelAxisOutput run_axis_label(const std::vector<std::pair<std::string, ModelSpec>>& models,
                               const Corpus& corpus, const TrainConfig& base,
                               const std::vector<double>& fractions, uint64_t subset_seed,
                               const std::string& out_dir) {
  if (models.empty()) fail(Err::Config, "label axis needs at least one model");
  if (fractions.empty()) fail(Err::Config, "label axis needs at least one fraction");
  ensure_dir(out_dir);
  ensure_dir(out_dir + "/subsets");

  // One manifest per fraction, generated once and shared by every model.
  // Paths are stored relative to out_dir so the emitted JSON is stable. A
  // manifest already sitting at the target path must agree with the
  // deterministic selection, otherwise the runs would not be comparable.
  LabelAxisOutput out;
  for (double k : fractions) {
    SubsetSelection sel = stratified_subset(corpus, k, subset_seed);
    const std::string rel = "subsets/dk_" + frac_tag(k) + ".json";
    const std::string path = out_dir + "/" + rel;
    if (file_exists(path)) {
      SubsetSelection prior = load_subset_manifest(path);
      if (prior.k != sel.k || prior.seed != sel.seed || prior.ids != sel.ids)
        fail(Err::SharedSubset,
             "existing subset manifest " + rel + " does not match the requested selection");
    } else {
      save_subset_manifest(sel, path);
    }
    out.subset_paths[k] = rel;
    out.subset_hashes[k] = sha256_file_hex(path);
  }

  const Standardizer stats = fit_standardizer(corpus, "train");
  for (const auto& [name, spec] : models) {
    LabelAxisResult res;
    res.model_name = name;
    std::map<double, double> scores;
    for (double k : fractions) {
      const std::string path = out_dir + "/" + out.subset_paths.at(k);
      const std::string sha = sha256_file_hex(path);
      if (sha != out.subset_hashes.at(k))
        fail(Err::SharedSubset,
             "subset manifest for k=" + frac_tag(k) + " changed between models");
      SubsetSelection sel = load_subset_manifest(path);

      TrainConfig cfg = base;
      cfg.model = spec;
      cfg.model.adapter.b_in = cfg.bands.b_in();
      cfg.model.input_bands = cfg.bands.channels;
      cfg.train_ids = sel.ids;
      cfg.subset_manifest_path = path;
      cfg.subset_manifest_sha = sha;

      auto model = build_model(cfg.model, cfg.seed);
      RunRecord rec = train(*model, corpus, cfg, out_dir);
      rec.eval["test"] = evaluate_split(*model, cfg.bands, corpus, "test", stats);
      write_run_record(rec, out_dir);
      res.run_ids.push_back(rec.run_id);
      scores[k] = rec.eval.at("test").miou * 100.0;
    }
    res.report = efficiency_report(scores);
    out.models.push_back(std::move(res));
  }
  write_text_file(out_dir + "/label_axis.json", label_axis_json(out));
  return out;
}

std::string transfer_report_json(const TransferReport& rep) {
  json j;
  j["p_in"] = rep.p_in;
  j["p_gen"] = rep.p_gen;
  j["p_ext"] = rep.p_ext;
  j["r_site"] = rep.r_site;
  j["r_ext"] = rep.r_ext;
  j["r_2hop"] = rep.r_2hop;
  return j.dump(2) + "\n";
}

TransferReport run_axis_domain(SegModel& model, const BandConfig& bands,
                               const Standardizer& stats, const EvalTarget& t_in,
                               const EvalTarget& t_gen, const EvalTarget& t_ext) {
  if (!t_in.corpus || !t_gen.corpus || !t_ext.corpus)
    fail(Err::Config, "domain axis needs all three eval targets");
  if (stats.fitted_split != "train")
    fail(Err::Leakage, "domain axis must reuse the train-split standardizer on all targets");
  // Every target must present the same band manifest as the in-domain
  // corpus; this fails before any inference happens.
  const std::vector<std::string> ref = t_in.corpus->manifest().names();
  for (const EvalTarget* t : {&t_gen, &t_ext})
    if (t->corpus->manifest().names() != ref)
      fail(Err::CorpusSchema,
           "eval target '" + t->label + "' band manifest does not match the train corpus");

  auto score = [&](const EvalTarget& t) {
    return evaluate_split(model, bands, *t.corpus, t.split, stats).miou * 100.0;
  };
  return transfer_report(score(t_in), score(t_gen), score(t_ext));
}

LossSelection select_loss_by_validation(const Corpus& corpus, const TrainConfig& base,
                                        const std::vector<LossSpec>& specs,
                                        const std::string& out_dir) {
  if (specs.empty()) fail(Err::Config, "loss selection needs at least one loss spec");
  ensure_dir(out_dir);
  const Standardizer stats = fit_standardizer(corpus, "train");

  LossSelection out;
  for (const LossSpec& spec : specs) {
    TrainConfig cfg = base;
    cfg.loss = spec;
    LossRunSummary summary;
    summary.spec = spec;
    std::string rid;
    try {
      auto model = build_model(cfg.model, cfg.seed);
      RunRecord rec = train(*model, corpus, cfg, out_dir);
      rec.eval["val"] = evaluate_split(*model, cfg.bands, corpus, "val", stats);
      write_run_record(rec, out_dir);
      summary.checkpoint_epoch = rec.checkpoint_epoch;
      summary.val_miou = rec.eval.at("val").miou;
      rid = rec.run_id;
    } catch (const Error& e) {
      if (e.code() != Err::Divergence) throw;
      summary.diverged = true;
    }
    out.runs.push_back(summary);
    out.run_ids.push_back(rid);
  }
  out.winner = pick_loss_winner(out.runs);
  return out;
}

}  // namespace gfb
