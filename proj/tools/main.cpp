#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "geofm_bench.h"
#include "json.hpp"

using nlohmann::json;

namespace {

int status_to_exit(gfb_status s) {
  if (s == GFB_OK) return 0;
  if (s == GFB_E_DIVERGENCE) return 3;
  return 2;
}

int report_failure(gfb_status s) {
  std::fprintf(stderr, "error: %s\n", gfb_last_error());
  return status_to_exit(s);
}

std::string take(char* s) {
  std::string out = s ? s : "";
  gfb_free_string(s);
  return out;
}

// GEOFM_BENCH_OUT wins over --out when set.
std::string resolve_out(const std::string& flag_value) {
  const char* env = std::getenv("GEOFM_BENCH_OUT");
  if (env && *env) return env;
  return flag_value;
}

bool file_readable(const std::string& path) { return std::ifstream(path).good(); }

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool spill(const std::string& path, const std::string& content) {
  std::error_code ec;
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path);
  out << content;
  return out.good();
}

struct CorpusGuard {
  gfb_corpus* c = nullptr;
  ~CorpusGuard() { gfb_corpus_close(c); }
};

struct ModelGuard {
  gfb_model* m = nullptr;
  ~ModelGuard() { gfb_model_close(m); }
};

// Shared corpus location flags.
struct CorpusOpts {
  std::string root;
  std::string band_manifest;
  std::string split_manifest;

  void attach(CLI::App* cmd) {
    cmd->add_option("--corpus", root, "corpus root directory")->required();
    cmd->add_option("--band-manifest", band_manifest,
                    "band manifest path (default <corpus>/bands.json)");
    cmd->add_option("--split-manifest", split_manifest,
                    "split manifest path (default <corpus>/splits.json)");
  }

  gfb_status open(gfb_corpus** out) const {
    const std::string bands = band_manifest.empty() ? root + "/bands.json" : band_manifest;
    const std::string splits = split_manifest.empty() ? root + "/splits.json" : split_manifest;
    return gfb_corpus_open(root.c_str(), bands.c_str(), splits.c_str(), out);
  }
};

// Band config: either a JSON file produced by select-bands or an inline
// comma-separated channel list.
struct BandOpts {
  std::string spec = "B2,B3,B4,B8,B11,B12";
  std::string name;

  void attach(CLI::App* cmd) {
    cmd->add_option("--bands", spec, "band config JSON file or comma-separated channel list");
    cmd->add_option("--bands-name", name, "label for an inline channel list");
  }

  json to_json() const {
    if (file_readable(spec)) return json::parse(slurp(spec));
    std::vector<std::string> channels;
    std::string item;
    std::istringstream ss(spec);
    while (std::getline(ss, item, ','))
      if (!item.empty()) channels.push_back(item);
    std::string label = name;
    if (label.empty()) {
      label = spec == "B2,B3,B4,B8,B11,B12" ? "HLS-6B"
                                            : "custom-" + std::to_string(channels.size()) + "B";
    }
    return json{{"name", label}, {"channels", channels}};
  }
};

// Model architecture flags; dims must match the corpus patches.
struct ModelOpts {
  std::string arch = "prithvi_toy";
  std::string adapter = "linear";
  std::string tuning = "full";
  int image_size = 32;
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int conv_width = 32;
  int conv_depth = 2;
  std::string encoder_checkpoint;

  void attach(CLI::App* cmd) {
    cmd->add_option("--arch", arch, "prithvi_toy or reference_unet");
    cmd->add_option("--adapter", adapter, "band adapter: none, linear, conv")
        ->check(CLI::IsMember({"none", "linear", "conv", "conv_head"}));
    cmd->add_option("--tuning", tuning, "tuning strategy: frozen or full")
        ->check(CLI::IsMember({"frozen", "full"}));
    cmd->add_option("--image-size", image_size, "input tile side in pixels");
    cmd->add_option("--patch-size", patch_size, "encoder patch side (power of two)");
    cmd->add_option("--embed-dim", embed_dim, "encoder embedding width");
    cmd->add_option("--depth", depth, "encoder transformer depth");
    cmd->add_option("--heads", heads, "encoder attention heads");
    cmd->add_option("--encoder-checkpoint", encoder_checkpoint,
                    "reuse the encoder weights of a saved checkpoint");
  }

  json to_json(const json& bands) const {
    int stages = 0;
    while ((1 << stages) < patch_size) ++stages;
    const auto channels = bands.at("channels").get<std::vector<std::string>>();
    json m;
    m["arch"] = arch;
    m["adapter"] = {{"kind", adapter == "conv" ? "conv_head" : adapter},
                    {"b_in", channels.size()},
                    {"b_pre", 6},
                    {"width", conv_width},
                    {"depth", conv_depth}};
    m["encoder"] = {{"kind", encoder_checkpoint.empty() ? "toy_vit" : "external_checkpoint"},
                    {"image_size", image_size},
                    {"patch_size", patch_size},
                    {"embed_dim", embed_dim},
                    {"depth", depth},
                    {"heads", heads},
                    {"t_steps", 1},
                    {"checkpoint_path", encoder_checkpoint}};
    m["decoder"] = {{"stages", stages}, {"classes", 2}};
    m["tuning"] = tuning;
    m["input_bands"] = channels;
    return m;
  }
};

// Optimization flags shared by train and the axis sweeps.
struct TrainOpts {
  int epochs = 100;
  int batch_size = 8;
  double lr = 1e-5;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  bool no_augment = false;
  std::string loss = "wce";
  double w_bg = 2.0;
  double w_ls = 8.0;
  double gamma = 2.0;
  std::string subset;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "training epochs (no early stopping)");
    cmd->add_option("--batch-size", batch_size, "patches per optimizer step");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Adam weight decay");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_flag("--no-augment", no_augment, "disable flip augmentation");
    cmd->add_option("--loss", loss, "training loss: wce, lovasz, focal")
        ->check(CLI::IsMember({"wce", "lovasz", "focal"}));
    cmd->add_option("--w-bg", w_bg, "background class weight (wce)");
    cmd->add_option("--w-ls", w_ls, "landslide class weight (wce)");
    cmd->add_option("--gamma", gamma, "focal focusing exponent");
    cmd->add_option("--subset", subset, "subset manifest restricting the training ids");
  }

  json to_json(const json& model, const json& bands) const {
    json cfg;
    cfg["epochs"] = epochs;
    cfg["batch_size"] = batch_size;
    cfg["lr"] = lr;
    cfg["weight_decay"] = weight_decay;
    cfg["seed"] = seed;
    cfg["augment_flips"] = !no_augment;
    cfg["loss"] = {{"kind", loss}, {"w_bg", w_bg}, {"w_ls", w_ls}, {"gamma", gamma}};
    cfg["model"] = model;
    cfg["bands"] = bands;
    if (!subset.empty()) cfg["subset_manifest_path"] = subset;
    return cfg;
  }
};

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geofm-bench: landslide segmentation robustness toolkit"};
  app.require_subcommand(1);

  // ---- prepare ----------------------------------------------------------
  auto* prepare = app.add_subcommand("prepare", "validate a corpus or generate the synthetic one");
  std::string prep_root;
  bool prep_synth = false;
  json synth_spec;
  int sp_train = 24, sp_val = 8, sp_test = 8, sp_gen = 0, sp_ext = 0, sp_size = 32;
  uint64_t sp_seed = 7;
  double sp_signal = 1.5, sp_noise = 0.25, sp_gshift = 0.15, sp_eshift = 0.40;
  std::string prep_bands, prep_splits;
  prepare->add_option("--corpus", prep_root, "corpus root directory")->required();
  prepare->add_flag("--synthetic", prep_synth, "generate the bundled synthetic corpus");
  prepare->add_option("--band-manifest", prep_bands, "band manifest path");
  prepare->add_option("--split-manifest", prep_splits, "split manifest path");
  prepare->add_option("--n-train", sp_train, "synthetic train patches");
  prepare->add_option("--n-val", sp_val, "synthetic val patches");
  prepare->add_option("--n-test", sp_test, "synthetic test patches");
  prepare->add_option("--n-gen", sp_gen, "synthetic generalizability patches");
  prepare->add_option("--n-ext", sp_ext, "synthetic external patches");
  prepare->add_option("--image-size", sp_size, "synthetic tile side");
  prepare->add_option("--seed", sp_seed, "synthetic generator seed");
  prepare->add_option("--signal-strength", sp_signal, "label signal amplitude");
  prepare->add_option("--noise-sigma", sp_noise, "per-pixel noise sigma");
  prepare->add_option("--gen-shift", sp_gshift, "generalizability split shift");
  prepare->add_option("--ext-shift", sp_eshift, "external split shift");

  // ---- select-bands ------------------------------------------------------
  auto* select = app.add_subcommand("select-bands", "rank channels by mutual information");
  CorpusOpts sel_corpus;
  sel_corpus.attach(select);
  int sel_per_image = 4000, sel_k = 6;
  uint64_t sel_seed = 1;
  std::string sel_out = ".";
  select->add_option("--per-image", sel_per_image, "pixel samples per training patch");
  select->add_option("--k", sel_k, "channels to keep");
  select->add_option("--seed", sel_seed, "sampling seed");
  select->add_option("--out", sel_out, "output directory");

  // ---- train -------------------------------------------------------------
  auto* train = app.add_subcommand("train", "fine-tune one model and evaluate the test split");
  CorpusOpts tr_corpus;
  BandOpts tr_bands;
  ModelOpts tr_model;
  TrainOpts tr_opts;
  std::string tr_out = "runs";
  tr_corpus.attach(train);
  tr_bands.attach(train);
  tr_model.attach(train);
  tr_opts.attach(train);
  train->add_option("--out", tr_out, "run output directory");

  // ---- evaluate ----------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "score a saved checkpoint on one split");
  CorpusOpts ev_corpus;
  BandOpts ev_bands;
  ev_corpus.attach(evaluate);
  ev_bands.attach(evaluate);
  std::string ev_checkpoint, ev_split = "test";
  evaluate->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
  evaluate->add_option("--split", ev_split, "split to score");

  // ---- axis-sensor -------------------------------------------------------
  auto* sensor = app.add_subcommand("axis-sensor", "band adaptability sweep");
  CorpusOpts sn_corpus;
  BandOpts sn_bands;
  ModelOpts sn_model;
  TrainOpts sn_opts;
  std::string sn_out = "runs", sn_grid;
  sn_corpus.attach(sensor);
  sn_bands.attach(sensor);
  sn_model.attach(sensor);
  sn_opts.attach(sensor);
  sensor->add_option("--grid", sn_grid, "grid JSON file; default is one cell from the flags");
  sensor->add_option("--out", sn_out, "run output directory");

  // ---- axis-label --------------------------------------------------------
  auto* label = app.add_subcommand("axis-label", "label efficiency sweep over fractions");
  CorpusOpts lb_corpus;
  BandOpts lb_bands;
  ModelOpts lb_model;
  TrainOpts lb_opts;
  std::string lb_out = "runs", lb_models, lb_fractions = "100,10,2.5,1.25";
  uint64_t lb_subset_seed = 0;
  lb_corpus.attach(label);
  lb_bands.attach(label);
  lb_model.attach(label);
  lb_opts.attach(label);
  label->add_option("--fractions", lb_fractions, "comma-separated label percentages");
  label->add_option("--subset-seed", lb_subset_seed, "shared D_k sampling seed");
  label->add_option("--models", lb_models, "models JSON file; default is one model from the flags");
  label->add_option("--out", lb_out, "run output directory");

  // ---- axis-domain -------------------------------------------------------
  auto* domain = app.add_subcommand("axis-domain", "cross-domain transfer evaluation");
  CorpusOpts dm_corpus;
  BandOpts dm_bands;
  ModelOpts dm_model;
  TrainOpts dm_opts;
  std::string dm_out = "runs", dm_checkpoint, dm_splits = "test,generalizability,external";
  dm_corpus.attach(domain);
  dm_bands.attach(domain);
  dm_model.attach(domain);
  dm_opts.attach(domain);
  domain->add_option("--checkpoint", dm_checkpoint, "evaluate this checkpoint instead of training");
  domain->add_option("--splits", dm_splits, "in,gen,ext split names");
  domain->add_option("--out", dm_out, "run output directory");

  // ---- report ------------------------------------------------------------
  auto* report = app.add_subcommand("report", "render tables and figures from run records");
  std::string rp_run_dir = "runs", rp_out = "report";
  std::vector<std::string> rp_runs;
  report->add_option("--run-dir", rp_run_dir, "directory holding run records");
  report->add_option("--out", rp_out, "report output directory");
  report->add_option("--run", rp_runs, "run id(s) that must resolve before rendering");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (prepare->parsed()) {
    CorpusGuard corpus;
    gfb_status s;
    if (prep_synth) {
      json spec = {{"n_train", sp_train},   {"n_val", sp_val},
                   {"n_test", sp_test},     {"n_generalizability", sp_gen},
                   {"n_external", sp_ext},  {"image_size", sp_size},
                   {"seed", sp_seed},       {"signal_strength", sp_signal},
                   {"noise_sigma", sp_noise}, {"gen_shift", sp_gshift},
                   {"ext_shift", sp_eshift}};
      s = gfb_corpus_make_synthetic(prep_root.c_str(), spec.dump().c_str(), &corpus.c);
    } else {
      const std::string bands = prep_bands.empty() ? prep_root + "/bands.json" : prep_bands;
      const std::string splits = prep_splits.empty() ? prep_root + "/splits.json" : prep_splits;
      s = gfb_corpus_open(prep_root.c_str(), bands.c_str(), splits.c_str(), &corpus.c);
    }
    if (s != GFB_OK) return report_failure(s);
    char* fp = nullptr;
    s = gfb_corpus_fingerprint(corpus.c, &fp);
    if (s != GFB_OK) return report_failure(s);
    std::printf("corpus ok: %s\nfingerprint: %s\n", prep_root.c_str(), take(fp).c_str());
    return 0;
  }

  if (select->parsed()) {
    CorpusGuard corpus;
    gfb_status s = sel_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    char* report_json = nullptr;
    char* config_json = nullptr;
    s = gfb_select_bands(corpus.c, sel_per_image, sel_k, sel_seed, &report_json, &config_json);
    if (s != GFB_OK) return report_failure(s);
    const std::string out_dir = resolve_out(sel_out);
    const std::string report_text = take(report_json), config_text = take(config_json);
    if (!spill(out_dir + "/mi_report.json", report_text) ||
        !spill(out_dir + "/band_config.json", config_text)) {
      std::fprintf(stderr, "error: cannot write outputs under %s\n", out_dir.c_str());
      return 2;
    }
    std::printf("%s", report_text.c_str());
    return 0;
  }

  if (train->parsed()) {
    CorpusGuard corpus;
    gfb_status s = tr_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    const json bands = tr_bands.to_json();
    const json cfg = tr_opts.to_json(tr_model.to_json(bands), bands);
    char* record = nullptr;
    s = gfb_run_train(corpus.c, cfg.dump().c_str(), resolve_out(tr_out).c_str(), &record);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(record).c_str());
    return 0;
  }

  if (evaluate->parsed()) {
    CorpusGuard corpus;
    gfb_status s = ev_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    ModelGuard model;
    s = gfb_model_load(ev_checkpoint.c_str(), &model.m);
    if (s != GFB_OK) return report_failure(s);
    char* metrics = nullptr;
    s = gfb_evaluate(model.m, corpus.c, ev_bands.to_json().dump().c_str(), ev_split.c_str(),
                     &metrics);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(metrics).c_str());
    return 0;
  }

  if (sensor->parsed()) {
    CorpusGuard corpus;
    gfb_status s = sn_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    const json bands = sn_bands.to_json();
    const json cfg = sn_opts.to_json(sn_model.to_json(bands), bands);
    std::string grid_text;
    if (!sn_grid.empty()) {
      if (!file_readable(sn_grid)) {
        std::fprintf(stderr, "error: cannot read grid file %s\n", sn_grid.c_str());
        return 2;
      }
      grid_text = slurp(sn_grid);
    } else {
      json cell = {{"bands", bands},
                   {"adapter", sn_model.adapter == "conv" ? "conv_head" : sn_model.adapter},
                   {"tuning", sn_model.tuning},
                   {"arch", sn_model.arch}};
      grid_text = json::array({cell}).dump();
    }
    char* rows = nullptr;
    s = gfb_axis_sensor(corpus.c, cfg.dump().c_str(), grid_text.c_str(),
                        resolve_out(sn_out).c_str(), &rows);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(rows).c_str());
    return 0;
  }

  if (label->parsed()) {
    CorpusGuard corpus;
    gfb_status s = lb_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    const json bands = lb_bands.to_json();
    const json model = lb_model.to_json(bands);
    const json cfg = lb_opts.to_json(model, bands);
    std::string models_text;
    if (!lb_models.empty()) {
      if (!file_readable(lb_models)) {
        std::fprintf(stderr, "error: cannot read models file %s\n", lb_models.c_str());
        return 2;
      }
      models_text = slurp(lb_models);
    } else {
      models_text = json::array({json{{"name", lb_model.arch}, {"model", model}}}).dump();
    }
    std::vector<double> fractions;
    try {
      fractions = parse_fractions(lb_fractions);
    } catch (const std::exception&) {
      std::fprintf(stderr, "error: cannot parse --fractions '%s'\n", lb_fractions.c_str());
      return 2;
    }
    char* result = nullptr;
    s = gfb_axis_label(corpus.c, cfg.dump().c_str(), models_text.c_str(), fractions.data(),
                       fractions.size(), lb_subset_seed, resolve_out(lb_out).c_str(), &result);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(result).c_str());
    return 0;
  }

  if (domain->parsed()) {
    CorpusGuard corpus;
    gfb_status s = dm_corpus.open(&corpus.c);
    if (s != GFB_OK) return report_failure(s);
    const json bands = dm_bands.to_json();
    const json cfg = dm_opts.to_json(dm_model.to_json(bands), bands);
    std::vector<std::string> splits;
    std::string item;
    std::istringstream ss(dm_splits);
    while (std::getline(ss, item, ','))
      if (!item.empty()) splits.push_back(item);
    if (splits.size() != 3) {
      std::fprintf(stderr, "error: --splits needs exactly three names, got '%s'\n",
                   dm_splits.c_str());
      return 2;
    }
    char* result = nullptr;
    s = gfb_axis_domain(corpus.c, cfg.dump().c_str(),
                        dm_checkpoint.empty() ? nullptr : dm_checkpoint.c_str(),
                        splits[0].c_str(), splits[1].c_str(), splits[2].c_str(),
                        resolve_out(dm_out).c_str(), &result);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(result).c_str());
    return 0;
  }

  if (report->parsed()) {
    for (const std::string& rid : rp_runs) {
      gfb_status s = gfb_check_run(rp_run_dir.c_str(), rid.c_str());
      if (s != GFB_OK) return report_failure(s);
    }
    char* files = nullptr;
    gfb_status s = gfb_render_report(rp_run_dir.c_str(), resolve_out(rp_out).c_str(), &files);
    if (s != GFB_OK) return report_failure(s);
    std::printf("%s", take(files).c_str());
    return 0;
  }

  return 2;
}
