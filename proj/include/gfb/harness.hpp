#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gfb/datasets.hpp"
#include "gfb/losses.hpp"
#include "gfb/metrics.hpp"
#include "gfb/model.hpp"

namespace gfb {

// Everything that determines a training run. Two configs with equal
// canonical JSON produce the same fingerprint and therefore the same run.
struct TrainConfig {
  int epochs = 100;
  int batch_size = 8;
  double lr = 1e-5;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  bool augment_flips = true;
  LossSpec loss;
  ModelSpec model;
  BandConfig bands;

  // Training-id override installed by the label axis; empty means the full
  // train split. The manifest path/hash record where the ids came from.
  std::vector<std::string> train_ids;
  std::string subset_manifest_path;
  std::string subset_manifest_sha;

  std::string canonical_json() const;
  std::string fingerprint() const;  // sha256 of canonical_json
  std::string run_id() const;       // first 12 hex digits of the fingerprint
};

// Parses a declarative run config. Unknown keys are ignored; when the
// document names a subset manifest its ids become the training set.
TrainConfig train_config_from_json(const std::string& text);

struct RunRecord {
  std::string run_id;
  std::string config_fingerprint;
  std::string corpus_hash;
  std::vector<double> train_curve;
  std::vector<double> val_curve;
  int checkpoint_epoch = -1;
  std::map<std::string, MetricReport> eval;  // eval key -> report
  double wall_seconds = 0.0;
  int64_t steps = 0;
  std::string checkpoint_path;
  std::string checkpoint_sha;
  std::string subset_manifest_path;
  std::string subset_manifest_sha;

  // Full record including wall clock; written beside the checkpoint.
  std::string to_json() const;
  // Deterministic numbers only (no timing), for byte-stable comparisons.
  std::string metrics_json() const;
};

std::string metric_report_json(const MetricReport& r);

// Writes <out>/run_<id>.json (full) and <out>/metrics_<id>.json (stable).
void write_run_record(const RunRecord& rec, const std::string& out_dir);

// Stable digest of a corpus: id, band manifest, and split membership.
std::string corpus_fingerprint(const Corpus& corpus);

// Fine-tunes in place for exactly cfg.epochs epochs (no early stopping),
// then restores and saves the epoch with the lowest validation loss.
RunRecord train(SegModel& model, const Corpus& corpus, const TrainConfig& cfg,
                const std::string& out_dir);

// Tile-by-tile inference over one split into a global confusion matrix.
MetricReport evaluate_split(SegModel& model, const BandConfig& bands, const Corpus& corpus,
                            const std::string& split, const Standardizer& stats,
                            ConfusionMatrix* cm_out = nullptr);

// One cell of the band-adaptability grid.
struct SensorCell {
  BandConfig bands;
  AdapterKind adapter = AdapterKind::linear;
  Tuning tuning = Tuning::full;
  std::string arch = "prithvi_toy";
};

struct SensorRow {
  std::string model;
  std::string bands;
  int b_in = 0;
  std::string adapter;
  std::string tuning;
  std::string loss;
  bool skipped = false;
  std::string skip_reason;
  std::string run_id;
  MetricReport metrics;
};

// Trains and evaluates every valid grid cell on the test split; invalid
// cells become recorded skips instead of aborting the sweep.
std::vector<SensorRow> run_axis_sensor(const std::vector<SensorCell>& grid, const Corpus& corpus,
                                       const TrainConfig& base, const std::string& out_dir);
std::string sensor_rows_json(const std::vector<SensorRow>& rows);

struct LabelAxisResult {
  std::string model_name;
  EfficiencyReport report;
  std::vector<std::string> run_ids;  // aligned with the fractions argument
};

struct LabelAxisOutput {
  std::vector<LabelAxisResult> models;
  std::map<double, std::string> subset_paths;   // k -> manifest path
  std::map<double, std::string> subset_hashes;  // k -> manifest sha256
};

// Label-efficiency axis: one shared D_k manifest per fraction, every model
// fine-tuned on the same subsets with identical hyperparameters, scored on
// the full test split.
LabelAxisOutput run_axis_label(const std::vector<std::pair<std::string, ModelSpec>>& models,
                               const Corpus& corpus, const TrainConfig& base,
                               const std::vector<double>& fractions, uint64_t subset_seed,
                               const std::string& out_dir);
std::string label_axis_json(const LabelAxisOutput& out);

struct EvalTarget {
  const Corpus* corpus = nullptr;
  std::string split = "test";
  std::string label;  // name used in outputs ("in", "gen", "ext")
};

// Domain axis: the already fine-tuned model is evaluated as is on all three
// targets with the train-split standardizer reused everywhere.
TransferReport run_axis_domain(SegModel& model, const BandConfig& bands,
                               const Standardizer& stats, const EvalTarget& t_in,
                               const EvalTarget& t_gen, const EvalTarget& t_ext);
std::string transfer_report_json(const TransferReport& rep);

struct LossSelection {
  std::vector<LossRunSummary> runs;  // aligned with the specs argument
  std::vector<std::string> run_ids;
  std::optional<size_t> winner;
};

// Trains one run per loss spec from the same initialization and picks the
// checkpoint with the best validation mIoU; diverged runs are flagged.
LossSelection select_loss_by_validation(const Corpus& corpus, const TrainConfig& base,
                                        const std::vector<LossSpec>& specs,
                                        const std::string& out_dir);

}  // namespace gfb
