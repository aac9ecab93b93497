#include "geofm_bench.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "gfb/bandselect.hpp"
#include "gfb/harness.hpp"
#include "gfb/io.hpp"
#include "gfb/report.hpp"
#include "gfb/synth.hpp"
#include "json.hpp"

struct gfb_corpus {
  gfb::Corpus value;
};

struct gfb_model {
  std::unique_ptr<gfb::SegModel> value;
};

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

gfb_status map_err(gfb::Err e) {
  switch (e) {
    case gfb::Err::Config:
    case gfb::Err::Fraction:
    case gfb::Err::SampleSize:
    case gfb::Err::Weight:
    case gfb::Err::Probability:
    case gfb::Err::Shape:
    case gfb::Err::MaskRatio:
    case gfb::Err::RatioDomain:
      return GFB_E_CONFIG;
    case gfb::Err::MissingPatch:
    case gfb::Err::CorpusSchema:
    case gfb::Err::LabelDomain:
    case gfb::Err::EmptySplit:
    case gfb::Err::ChannelCount:
    case gfb::Err::ChannelNotFound:
    case gfb::Err::DegenerateLabel:
    case gfb::Err::EmptyEvaluation:
    case gfb::Err::MissingBaseline:
    case gfb::Err::SharedSubset:
      return GFB_E_DATA;
    case gfb::Err::AdapterBypass:
    case gfb::Err::PatchGrid:
    case gfb::Err::UpsampleConfig:
    case gfb::Err::BaselineTuning:
      return GFB_E_MODEL;
    case gfb::Err::Divergence:
      return GFB_E_DIVERGENCE;
    case gfb::Err::Leakage:
      return GFB_E_LEAKAGE;
    case gfb::Err::Io:
      return GFB_E_IO;
  }
  return GFB_E_INVALID;
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

gfb_status invalid(const char* msg) {
  g_last_error = msg;
  return GFB_E_INVALID;
}

template <typename F>
gfb_status guarded(F&& f) {
  try {
    f();
    return GFB_OK;
  } catch (const gfb::Error& e) {
    g_last_error = e.what();
    return map_err(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory; retry with a smaller batch_size or corpus";
    return GFB_E_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return GFB_E_INVALID;
  }
}

gfb::SynthSpec synth_spec_from_json(const char* spec_json) {
  gfb::SynthSpec s;
  if (!spec_json || !*spec_json) return s;
  json j;
  try {
    j = json::parse(spec_json);
  } catch (const json::exception& e) {
    gfb::fail(gfb::Err::Config, std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  s.n_train = j.value("n_train", s.n_train);
  s.n_val = j.value("n_val", s.n_val);
  s.n_test = j.value("n_test", s.n_test);
  s.n_generalizability = j.value("n_generalizability", s.n_generalizability);
  s.n_external = j.value("n_external", s.n_external);
  s.image_size = j.value("image_size", s.image_size);
  s.seed = j.value("seed", s.seed);
  s.signal_strength = j.value("signal_strength", s.signal_strength);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.gen_shift = j.value("gen_shift", s.gen_shift);
  s.ext_shift = j.value("ext_shift", s.ext_shift);
  s.corpus_id = j.value("corpus_id", s.corpus_id);
  if (j.contains("signal_bands"))
    s.signal_bands = j.at("signal_bands").get<std::vector<std::string>>();
  return s;
}

}  // namespace

extern "C" {

const char* gfb_version(void) { return "0.1.0"; }

const char* gfb_last_error(void) { return g_last_error.c_str(); }

void gfb_free_string(char* s) { std::free(s); }

gfb_status gfb_corpus_open(const char* root, const char* bands_json_path,
                           const char* splits_json_path, gfb_corpus** out) {
  if (!root || !bands_json_path || !splits_json_path || !out)
    return invalid("gfb_corpus_open: null argument");
  return guarded([&] {
    *out = new gfb_corpus{gfb::load_corpus(root, bands_json_path, splits_json_path)};
  });
}

gfb_status gfb_corpus_make_synthetic(const char* root, const char* spec_json, gfb_corpus** out) {
  if (!root || !out) return invalid("gfb_corpus_make_synthetic: null argument");
  return guarded([&] {
    gfb::SynthSpec spec = synth_spec_from_json(spec_json);
    *out = new gfb_corpus{gfb::make_synthetic_corpus(root, spec)};
  });
}

void gfb_corpus_close(gfb_corpus* c) { delete c; }

gfb_status gfb_corpus_fingerprint(const gfb_corpus* c, char** out_hex) {
  if (!c || !out_hex) return invalid("gfb_corpus_fingerprint: null argument");
  return guarded([&] { *out_hex = dup_string(gfb::corpus_fingerprint(c->value)); });
}

gfb_status gfb_select_bands(const gfb_corpus* c, int per_image, int top_k, uint64_t seed,
                            char** report_json, char** config_json) {
  if (!c || !report_json || !config_json) return invalid("gfb_select_bands: null argument");
  return guarded([&] {
    gfb::MISample sample = gfb::sample_pixels(c->value, "train", per_image, seed);
    gfb::MIReport report = gfb::estimate_mi(sample);
    gfb::BandConfig config =
        gfb::top_k_config(report, top_k, "MI-" + std::to_string(top_k) + "B");
    *report_json = dup_string(report.to_json());
    *config_json = dup_string(gfb::band_config_to_json(config));
  });
}

gfb_status gfb_model_create(const char* model_spec_json, uint64_t init_seed, gfb_model** out) {
  if (!model_spec_json || !out) return invalid("gfb_model_create: null argument");
  return guarded([&] {
    gfb::ModelSpec spec = gfb::ModelSpec::from_json(model_spec_json);
    *out = new gfb_model{gfb::build_model(spec, init_seed)};
  });
}

gfb_status gfb_model_load(const char* checkpoint_path, gfb_model** out) {
  if (!checkpoint_path || !out) return invalid("gfb_model_load: null argument");
  return guarded([&] {
    gfb::ModelSpec spec = gfb::checkpoint_model_spec(checkpoint_path);
    auto model = gfb::build_model(spec, 0);
    gfb::load_checkpoint(*model, checkpoint_path);
    *out = new gfb_model{std::move(model)};
  });
}

void gfb_model_close(gfb_model* m) { delete m; }

gfb_status gfb_model_param_count(const gfb_model* m, int64_t* out) {
  if (!m || !out) return invalid("gfb_model_param_count: null argument");
  return guarded([&] { *out = const_cast<gfb_model*>(m)->value->param_count(); });
}

gfb_status gfb_evaluate(gfb_model* m, const gfb_corpus* c, const char* bands_json,
                        const char* split, char** metrics_json) {
  if (!m || !c || !bands_json || !split || !metrics_json)
    return invalid("gfb_evaluate: null argument");
  return guarded([&] {
    gfb::BandConfig bands = gfb::band_config_from_json(bands_json);
    gfb::Standardizer stats = gfb::fit_standardizer(c->value, "train");
    gfb::MetricReport rep = gfb::evaluate_split(*m->value, bands, c->value, split, stats);
    *metrics_json = dup_string(gfb::metric_report_json(rep));
  });
}

gfb_status gfb_run_train(const gfb_corpus* c, const char* config_json, const char* out_dir,
                         char** record_json) {
  if (!c || !config_json || !out_dir || !record_json)
    return invalid("gfb_run_train: null argument");
  return guarded([&] {
    gfb::TrainConfig cfg = gfb::train_config_from_json(config_json);
    auto model = gfb::build_model(cfg.model, cfg.seed);
    gfb::RunRecord rec = gfb::train(*model, c->value, cfg, out_dir);
    if (!c->value.split_ids("test").empty()) {
      gfb::Standardizer stats = gfb::fit_standardizer(c->value, "train");
      rec.eval["test"] = gfb::evaluate_split(*model, cfg.bands, c->value, "test", stats);
    }
    gfb::write_run_record(rec, out_dir);
    *record_json = dup_string(rec.to_json());
  });
}

gfb_status gfb_axis_sensor(const gfb_corpus* c, const char* config_json, const char* grid_json,
                           const char* out_dir, char** rows_json) {
  if (!c || !config_json || !grid_json || !out_dir || !rows_json)
    return invalid("gfb_axis_sensor: null argument");
  return guarded([&] {
    gfb::TrainConfig base = gfb::train_config_from_json(config_json);
    json grid_doc;
    try {
      grid_doc = json::parse(grid_json);
    } catch (const json::exception& e) {
      gfb::fail(gfb::Err::Config, std::string("grid is not valid JSON: ") + e.what());
    }
    std::vector<gfb::SensorCell> grid;
    for (const auto& cell : grid_doc) {
      gfb::SensorCell sc;
      sc.bands = gfb::band_config_from_json(cell.at("bands").dump());
      sc.adapter = gfb::adapter_kind_from_name(cell.value("adapter", "linear"));
      sc.tuning = gfb::tuning_from_name(cell.value("tuning", "full"));
      sc.arch = cell.value("arch", "prithvi_toy");
      grid.push_back(sc);
    }
    auto rows = gfb::run_axis_sensor(grid, c->value, base, out_dir);
    *rows_json = dup_string(gfb::sensor_rows_json(rows));
  });
}

gfb_status gfb_axis_label(const gfb_corpus* c, const char* config_json, const char* models_json,
                          const double* fractions, size_t n_fractions, uint64_t subset_seed,
                          const char* out_dir, char** result_json) {
  if (!c || !config_json || !models_json || !fractions || !out_dir || !result_json)
    return invalid("gfb_axis_label: null argument");
  return guarded([&] {
    gfb::TrainConfig base = gfb::train_config_from_json(config_json);
    json models_doc;
    try {
      models_doc = json::parse(models_json);
    } catch (const json::exception& e) {
      gfb::fail(gfb::Err::Config, std::string("models list is not valid JSON: ") + e.what());
    }
    std::vector<std::pair<std::string, gfb::ModelSpec>> models;
    for (const auto& entry : models_doc)
      models.emplace_back(entry.at("name").get<std::string>(),
                          gfb::ModelSpec::from_json(entry.at("model").dump()));
    std::vector<double> ks(fractions, fractions + n_fractions);
    gfb::LabelAxisOutput out =
        gfb::run_axis_label(models, c->value, base, ks, subset_seed, out_dir);
    *result_json = dup_string(gfb::label_axis_json(out));
  });
}

gfb_status gfb_axis_domain(const gfb_corpus* c, const char* config_json,
                           const char* checkpoint_path, const char* split_in,
                           const char* split_gen, const char* split_ext, const char* out_dir,
                           char** report_json) {
  if (!c || !config_json || !split_in || !split_gen || !split_ext || !out_dir || !report_json)
    return invalid("gfb_axis_domain: null argument");
  return guarded([&] {
    gfb::TrainConfig cfg = gfb::train_config_from_json(config_json);
    std::unique_ptr<gfb::SegModel> model;
    std::string run_id;
    if (checkpoint_path && *checkpoint_path) {
      gfb::ModelSpec spec = gfb::checkpoint_model_spec(checkpoint_path);
      model = gfb::build_model(spec, 0);
      gfb::CheckpointMeta meta = gfb::load_checkpoint(*model, checkpoint_path);
      run_id = meta.run_id;
    } else {
      model = gfb::build_model(cfg.model, cfg.seed);
      gfb::RunRecord rec = gfb::train(*model, c->value, cfg, out_dir);
      gfb::write_run_record(rec, out_dir);
      run_id = rec.run_id;
    }
    gfb::Standardizer stats = gfb::fit_standardizer(c->value, "train");
    gfb::EvalTarget t_in{&c->value, split_in, "in"};
    gfb::EvalTarget t_gen{&c->value, split_gen, "gen"};
    gfb::EvalTarget t_ext{&c->value, split_ext, "ext"};
    gfb::TransferReport rep =
        gfb::run_axis_domain(*model, cfg.bands, stats, t_in, t_gen, t_ext);

    json j = json::parse(gfb::transfer_report_json(rep));
    j["model"] = model->spec().arch;
    j["run_id"] = run_id;
    const std::string text = j.dump(2) + "\n";
    gfb::ensure_dir(out_dir);
    gfb::write_text_file(std::string(out_dir) + "/domain_axis.json", text);
    *report_json = dup_string(text);
  });
}

gfb_status gfb_render_report(const char* run_dir, const char* out_dir, char** files_json) {
  if (!run_dir || !out_dir || !files_json) return invalid("gfb_render_report: null argument");
  return guarded([&] {
    gfb::ReportBundle bundle = gfb::render_report(run_dir, out_dir);
    json j = bundle.files;
    *files_json = dup_string(j.dump(2) + "\n");
  });
}

gfb_status gfb_check_run(const char* run_dir, const char* run_id) {
  if (!run_dir || !run_id) return invalid("gfb_check_run: null argument");
  return guarded([&] { gfb::check_run_closure(run_dir, run_id); });
}

}  // extern "C"
