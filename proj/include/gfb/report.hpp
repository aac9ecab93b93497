#pragma once

#include <string>
#include <vector>

#include "gfb/harness.hpp"

namespace gfb {

// Fixed number formats shared by tables and figure labels so every plotted
// value equals a table cell byte for byte.
std::string fmt_pct(double fraction);  // 0..1 fraction, printed x100 with 2 decimals
std::string fmt2(double value);        // printed as-is with 2 decimals
std::string fmt_ratio(double value);   // printed with 4 decimals

// Parsers for the JSON emitted by the axis runners.
std::vector<SensorRow> sensor_rows_from_json(const std::string& text);
LabelAxisOutput label_axis_from_json(const std::string& text);

// Band-adaptability table: fixed columns (model, bands, adapter, tuning,
// loss, miou, f1, precision, recall, macc), percentages with two decimals,
// rows sorted by (bands desc, adapter, tuning). Skipped cells go into a
// separate skip table.
std::string sensor_table_csv(std::vector<SensorRow> rows);
std::string sensor_table_json(std::vector<SensorRow> rows);
std::string sensor_skips_csv(const std::vector<SensorRow>& rows);

// Label-efficiency table: one row per (model, fraction) with the score in
// percent, RPD and DE as ratios.
std::string label_table_csv(const LabelAxisOutput& out);

// Cross-domain table: percent scores and the three retention ratios.
std::string domain_table_csv(const std::string& model, const TransferReport& rep);

// Static SVG figures mirroring the tables; labels reuse the table formats.
std::string svg_score_curve(const LabelAxisOutput& out);
std::string svg_rpd_bars(const LabelAxisOutput& out);
std::string svg_de_bars(const LabelAxisOutput& out);
std::string svg_retention_bars(const std::string& model, const TransferReport& rep);

struct ReportBundle {
  std::vector<std::string> files;  // paths written, in emission order
};

// Renders every table and figure for the axis outputs found under run_dir.
// Every run id referenced by those outputs must resolve to its metrics
// record, checkpoint, and subset manifest; a dangling reference is refused.
ReportBundle render_report(const std::string& run_dir, const std::string& out_dir);

// Closure check for one run id; fails with a dangling-reference message.
void check_run_closure(const std::string& run_dir, const std::string& run_id);

}  // namespace gfb
