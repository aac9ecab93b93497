#include <cstring>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "geofm_bench.h"
#include "gfb/model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "gfb_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

const char* kSynthSpec =
    "{\"n_train\":6,\"n_val\":2,\"n_test\":2,\"n_generalizability\":2,"
    "\"n_external\":2,\"image_size\":16,\"seed\":7}";

std::string toy_model_json() {
  gfb::ModelSpec spec;
  spec.arch = "prithvi_toy";
  spec.adapter.kind = gfb::AdapterKind::linear;
  spec.adapter.b_in = 6;
  spec.adapter.width = 8;
  spec.encoder.image_size = 16;
  spec.encoder.patch_size = 4;
  spec.encoder.embed_dim = 16;
  spec.encoder.depth = 1;
  spec.encoder.heads = 2;
  spec.decoder.stages = 2;
  spec.input_bands = gfb::hls_interface_bands();
  return spec.to_json();
}

std::string toy_config_json(double lr = 1e-3, int epochs = 2) {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = 4;
  j["lr"] = lr;
  j["seed"] = 1;
  j["loss"] = {{"kind", "wce"}};
  j["bands"] = {{"name", "HLS-6B"}, {"channels", {"B2", "B3", "B4", "B8", "B11", "B12"}}};
  j["model"] = nlohmann::json::parse(toy_model_json());
  return j.dump();
}

std::string take(char* s) {
  REQUIRE(s != nullptr);
  std::string out = s;
  gfb_free_string(s);
  return out;
}

}  // namespace

TEST_CASE("version and null-handle guards") {
  REQUIRE(gfb_version() != nullptr);
  CHECK(std::strlen(gfb_version()) > 0);
  gfb_free_string(nullptr);  // must be a no-op
  gfb_corpus_close(nullptr);
  gfb_model_close(nullptr);

  gfb_corpus* c = nullptr;
  CHECK(gfb_corpus_open(nullptr, "a", "b", &c) == GFB_E_INVALID);
  CHECK(std::strlen(gfb_last_error()) > 0);
  CHECK(gfb_corpus_make_synthetic(nullptr, nullptr, &c) == GFB_E_INVALID);
  CHECK(gfb_corpus_fingerprint(nullptr, nullptr) == GFB_E_INVALID);
  CHECK(gfb_model_create(nullptr, 0, nullptr) == GFB_E_INVALID);
  CHECK(gfb_check_run(nullptr, "id") == GFB_E_INVALID);
  int64_t n = 0;
  CHECK(gfb_model_param_count(nullptr, &n) == GFB_E_INVALID);
}

TEST_CASE("the full pipeline runs through the C surface") {
  const std::string root = fresh_dir("capi_corpus");
  gfb_corpus* corpus = nullptr;
  REQUIRE(gfb_corpus_make_synthetic(root.c_str(), kSynthSpec, &corpus) == GFB_OK);
  REQUIRE(corpus != nullptr);

  char* hex = nullptr;
  REQUIRE(gfb_corpus_fingerprint(corpus, &hex) == GFB_OK);
  const std::string fp = take(hex);
  CHECK(fp.size() == 64);

  // Reopening from disk gives back the same corpus.
  gfb_corpus* reopened = nullptr;
  REQUIRE(gfb_corpus_open(root.c_str(), (root + "/bands.json").c_str(),
                          (root + "/splits.json").c_str(), &reopened) == GFB_OK);
  char* hex2 = nullptr;
  REQUIRE(gfb_corpus_fingerprint(reopened, &hex2) == GFB_OK);
  CHECK(take(hex2) == fp);
  gfb_corpus_close(reopened);

  // Band selection returns a report and a ready-to-train config.
  char* report_json = nullptr;
  char* config_json = nullptr;
  REQUIRE(gfb_select_bands(corpus, 32, 6, 1, &report_json, &config_json) == GFB_OK);
  auto report = nlohmann::json::parse(take(report_json));
  auto config = nlohmann::json::parse(take(config_json));
  CHECK(report.at("ranking").size() == 14);
  CHECK(config.at("channels").size() == 6);
  CHECK(config.at("name") == "MI-6B");

  // Fresh model from a spec document.
  gfb_model* model = nullptr;
  REQUIRE(gfb_model_create(toy_model_json().c_str(), 3, &model) == GFB_OK);
  int64_t params = 0;
  REQUIRE(gfb_model_param_count(model, &params) == GFB_OK);
  CHECK(params > 0);

  // Train, then reload the checkpoint it produced.
  const std::string out_dir = fresh_dir("capi_runs");
  char* record_json = nullptr;
  REQUIRE(gfb_run_train(corpus, toy_config_json().c_str(), out_dir.c_str(), &record_json) ==
          GFB_OK);
  auto record = nlohmann::json::parse(take(record_json));
  const std::string run_id = record.at("run_id").get<std::string>();
  const std::string ckpt = record.at("checkpoint_path").get<std::string>();
  CHECK(run_id.size() == 12);
  CHECK(record.at("eval").contains("test"));
  CHECK(record.at("val_curve").size() == 2);
  REQUIRE(fs::exists(ckpt));

  gfb_model* loaded = nullptr;
  REQUIRE(gfb_model_load(ckpt.c_str(), &loaded) == GFB_OK);
  const std::string bands_json =
      "{\"name\":\"HLS-6B\",\"channels\":[\"B2\",\"B3\",\"B4\",\"B8\",\"B11\",\"B12\"]}";
  char* metrics_json = nullptr;
  REQUIRE(gfb_evaluate(loaded, corpus, bands_json.c_str(), "test", &metrics_json) == GFB_OK);
  auto metrics = nlohmann::json::parse(take(metrics_json));
  CHECK(metrics.at("miou").get<double>() >= 0.0);
  CHECK(metrics.at("miou").get<double>() <= 1.0);

  // Domain axis from the saved checkpoint; output lands beside the run
  // records so the report can resolve every reference.
  char* domain_json = nullptr;
  REQUIRE(gfb_axis_domain(corpus, toy_config_json().c_str(), ckpt.c_str(), "test",
                          "generalizability", "external", out_dir.c_str(),
                          &domain_json) == GFB_OK);
  auto domain = nlohmann::json::parse(take(domain_json));
  CHECK(domain.at("run_id") == run_id);
  CHECK(domain.at("p_in").get<double>() >= 0.0);
  CHECK(domain.contains("r_2hop"));
  CHECK(fs::exists(out_dir + "/domain_axis.json"));

  // Closure check and report rendering over the same directory.
  REQUIRE(gfb_check_run(out_dir.c_str(), run_id.c_str()) == GFB_OK);
  CHECK(gfb_check_run(out_dir.c_str(), "000000000000") == GFB_E_CONFIG);
  CHECK(std::string(gfb_last_error()).find("dangling") != std::string::npos);

  const std::string report_dir = fresh_dir("capi_report");
  char* files_json = nullptr;
  REQUIRE(gfb_render_report(out_dir.c_str(), report_dir.c_str(), &files_json) == GFB_OK);
  auto files = nlohmann::json::parse(take(files_json));
  REQUIRE(files.is_array());
  CHECK(files.size() == 3);  // domain table, json copy, retention figure
  for (const auto& f : files) CHECK(fs::exists(f.get<std::string>()));

  gfb_model_close(loaded);
  gfb_model_close(model);
  gfb_corpus_close(corpus);
}

TEST_CASE("sensor and label axes run through the C surface") {
  const std::string root = fresh_dir("capi_axis_corpus");
  gfb_corpus* corpus = nullptr;
  REQUIRE(gfb_corpus_make_synthetic(root.c_str(), kSynthSpec, &corpus) == GFB_OK);

  nlohmann::json grid = nlohmann::json::array();
  grid.push_back({{"bands", {{"name", "HLS-6B"},
                             {"channels", {"B2", "B3", "B4", "B8", "B11", "B12"}}}},
                  {"adapter", "linear"},
                  {"tuning", "full"}});
  grid.push_back({{"bands", {{"name", "RGB+NIR"}, {"channels", {"B2", "B3", "B4", "B8"}}}},
                  {"adapter", "none"},
                  {"tuning", "full"}});
  const std::string sensor_dir = fresh_dir("capi_sensor");
  char* rows_json = nullptr;
  REQUIRE(gfb_axis_sensor(corpus, toy_config_json(1e-3, 1).c_str(), grid.dump().c_str(),
                          sensor_dir.c_str(), &rows_json) == GFB_OK);
  auto rows = nlohmann::json::parse(take(rows_json));
  REQUIRE(rows.size() == 2);
  CHECK_FALSE(rows[0].at("skipped").get<bool>());
  CHECK(rows[1].at("skipped").get<bool>());

  nlohmann::json models = nlohmann::json::array();
  models.push_back({{"name", "prithvi_toy"}, {"model", nlohmann::json::parse(toy_model_json())}});
  const double fractions[] = {100.0, 50.0};
  const std::string label_dir = fresh_dir("capi_label");
  char* label_json = nullptr;
  REQUIRE(gfb_axis_label(corpus, toy_config_json(1e-3, 1).c_str(), models.dump().c_str(),
                         fractions, 2, 0, label_dir.c_str(), &label_json) == GFB_OK);
  auto label = nlohmann::json::parse(take(label_json));
  CHECK(label.at("subsets").contains("50"));
  CHECK(label.at("models")[0].at("run_ids").size() == 2);
  CHECK(fs::exists(label_dir + "/label_axis.json"));

  CHECK(gfb_axis_label(corpus, toy_config_json().c_str(), models.dump().c_str(), nullptr, 0, 0,
                       label_dir.c_str(), &label_json) == GFB_E_INVALID);
  gfb_corpus_close(corpus);
}

TEST_CASE("failures map onto the documented status codes") {
  gfb_corpus* corpus = nullptr;
  const std::string missing = fresh_dir("capi_missing") + "/nope";
  CHECK(gfb_corpus_open(missing.c_str(), (missing + "/bands.json").c_str(),
                        (missing + "/splits.json").c_str(), &corpus) == GFB_E_IO);
  CHECK(std::strlen(gfb_last_error()) > 0);

  gfb_model* model = nullptr;
  CHECK(gfb_model_create("{not json", 0, &model) == GFB_E_CONFIG);
  CHECK(gfb_model_load("/no/such/checkpoint.ckpt", &model) == GFB_E_IO);

  const std::string root = fresh_dir("capi_err_corpus");
  REQUIRE(gfb_corpus_make_synthetic(root.c_str(), kSynthSpec, &corpus) == GFB_OK);

  // Asking for more pixels than a patch holds is a config-class error.
  char* a = nullptr;
  char* b = nullptr;
  CHECK(gfb_select_bands(corpus, 10000, 6, 1, &a, &b) == GFB_E_CONFIG);

  // Unknown bands in an eval config are data-class errors.
  REQUIRE(gfb_model_create(toy_model_json().c_str(), 3, &model) == GFB_OK);
  char* metrics = nullptr;
  CHECK(gfb_evaluate(model, corpus, "{\"name\":\"bad\",\"channels\":[\"nope\"]}", "test",
                     &metrics) == GFB_E_DATA);

  // A non-finite training loss surfaces as divergence.
  char* record = nullptr;
  CHECK(gfb_run_train(corpus, toy_config_json(1e38).c_str(), fresh_dir("capi_div").c_str(),
                      &record) == GFB_E_DIVERGENCE);
  CHECK(std::string(gfb_last_error()).find("not finite") != std::string::npos);

  gfb_model_close(model);
  gfb_corpus_close(corpus);
}
