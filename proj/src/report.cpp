#include "gfb/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gfb/io.hpp"
#include "json.hpp"

namespace gfb {

using nlohmann::json;

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string frac_tag(double k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", k);
  return buf;
}

// CSV field quoting for free text (skip reasons may contain commas).
std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void sort_sensor_rows(std::vector<SensorRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const SensorRow& a, const SensorRow& b) {
    if (a.b_in != b.b_in) return a.b_in > b.b_in;
    if (a.bands != b.bands) return a.bands < b.bands;
    if (a.adapter != b.adapter) return a.adapter < b.adapter;
    if (a.tuning != b.tuning) return a.tuning < b.tuning;
    return a.model < b.model;
  });
}

// Fixed qualitative palette cycled across models.
const char* plot_color(size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  return palette[i % 6];
}

std::string svg_open(int w, int h) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\" font-family=\"sans-serif\">\n",
                w, h, w, h);
  std::string out = buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return out;
}

std::string svg_text(double x, double y, const std::string& s, int size = 11,
                     const std::string& anchor = "middle", const std::string& fill = "#222") {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"%.1f\" font-size=\"%d\" text-anchor=\"%s\" fill=\"%s\">",
                x, y, size, anchor.c_str(), fill.c_str());
  return std::string(buf) + s + "</text>\n";
}

std::string svg_line(double x1, double y1, double x2, double y2, const std::string& stroke,
                     const std::string& extra = "") {
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" %s/>\n", x1,
                y1, x2, y2, stroke.c_str(), extra.c_str());
  return buf;
}

std::string svg_rect(double x, double y, double w, double h, const std::string& fill) {
  char buf[180];
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n", x, y,
                w, h, fill.c_str());
  return buf;
}

std::string svg_circle(double x, double y, const std::string& fill) {
  char buf[140];
  std::snprintf(buf, sizeof(buf), "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", x, y,
                fill.c_str());
  return buf;
}

// A simple grouped-bar figure around a zero baseline; labels reuse the
// ratio format so every bar matches its table cell.
std::string bar_figure(const std::string& title, const std::vector<std::string>& groups,
                       const std::vector<std::string>& series,
                       const std::vector<std::vector<double>>& values) {
  const int W = 640, H = 400;
  const double left = 60, right = 20, top = 50, bottom = 60;
  const double plot_w = W - left - right, plot_h = H - top - bottom;

  double maxabs = 0.05;
  for (const auto& vs : values)
    for (double v : vs) maxabs = std::max(maxabs, std::fabs(v));
  maxabs *= 1.15;

  auto ypos = [&](double v) { return top + plot_h / 2.0 - (v / maxabs) * (plot_h / 2.0); };

  std::string out = svg_open(W, H);
  out += svg_text(W / 2.0, 24, title, 14);
  const double y0 = ypos(0.0);
  out += svg_line(left, y0, left + plot_w, y0, "#888");
  out += svg_line(left, top, left, top + plot_h, "#888");

  const size_t ng = groups.size(), ns = series.size();
  const double group_w = plot_w / std::max<size_t>(ng, 1);
  const double bar_w = group_w / (ns + 1.0);
  for (size_t g = 0; g < ng; ++g) {
    const double gx = left + g * group_w;
    out += svg_text(gx + group_w / 2.0, top + plot_h + 20, groups[g]);
    for (size_t s = 0; s < ns; ++s) {
      const double v = values[s][g];
      const double x = gx + bar_w * (0.5 + s);
      const double yv = ypos(v);
      out += svg_rect(x, std::min(y0, yv), bar_w * 0.9, std::fabs(y0 - yv), plot_color(s));
      out += svg_text(x + bar_w * 0.45, (v >= 0 ? yv - 4 : yv + 12), fmt_ratio(v), 10);
    }
  }
  for (size_t s = 0; s < ns; ++s) {
    const double lx = left + 10, ly = top - 28 + 14 * s;
    out += svg_rect(lx, ly - 8, 10, 10, plot_color(s));
    out += svg_text(lx + 16, ly + 1, series[s], 11, "start");
  }
  out += "</svg>\n";
  return out;
}

MetricReport metric_report_from_obj(const json& j) {
  MetricReport r;
  r.miou = j.at("miou").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.macc = j.at("macc").get<double>();
  r.mean_class_acc = j.at("mean_class_acc").get<double>();
  r.iou_ls = j.at("iou_ls").get<double>();
  r.iou_bg = j.at("iou_bg").get<double>();
  return r;
}

// Stored references may be absolute, relative to the run directory, or
// stale paths from a moved tree; try in that order.
std::string resolve_ref(const std::string& run_dir, const std::string& stored) {
  if (stored.empty()) return stored;
  if (std::filesystem::path(stored).is_absolute()) return stored;
  const std::string joined = run_dir + "/" + stored;
  if (file_exists(joined)) return joined;
  const std::string local = run_dir + "/" + std::filesystem::path(stored).filename().string();
  if (file_exists(local)) return local;
  return stored;
}

}  // namespace

std::string fmt_pct(double fraction) { return fixed(fraction * 100.0, 2); }
std::string fmt2(double value) { return fixed(value, 2); }
std::string fmt_ratio(double value) { return fixed(value, 4); }

std::vector<SensorRow> sensor_rows_from_json(const std::string& text) {
  json arr = json::parse(text);
  std::vector<SensorRow> rows;
  for (const auto& j : arr) {
    SensorRow r;
    r.model = j.at("model").get<std::string>();
    r.bands = j.at("bands").get<std::string>();
    r.b_in = j.at("b_in").get<int>();
    r.adapter = j.at("adapter").get<std::string>();
    r.tuning = j.at("tuning").get<std::string>();
    r.loss = j.value("loss", std::string());
    r.skipped = j.at("skipped").get<bool>();
    if (r.skipped) {
      r.skip_reason = j.value("skip_reason", std::string());
    } else {
      r.run_id = j.at("run_id").get<std::string>();
      r.metrics = metric_report_from_obj(j.at("metrics"));
    }
    rows.push_back(r);
  }
  return rows;
}

LabelAxisOutput label_axis_from_json(const std::string& text) {
  json j = json::parse(text);
  LabelAxisOutput out;
  for (const auto& [tag, s] : j.at("subsets").items()) {
    const double k = std::stod(tag);
    out.subset_paths[k] = s.at("path").get<std::string>();
    out.subset_hashes[k] = s.at("sha256").get<std::string>();
  }
  for (const auto& m : j.at("models")) {
    LabelAxisResult res;
    res.model_name = m.at("model").get<std::string>();
    res.run_ids = m.at("run_ids").get<std::vector<std::string>>();
    for (const auto& [tag, v] : m.at("scores").items())
      res.report.scores[std::stod(tag)] = v.get<double>();
    for (const auto& [tag, v] : m.at("rpd").items())
      res.report.rpd[std::stod(tag)] = v.get<double>();
    if (m.contains("de")) res.report.de = m.at("de").get<double>();
    out.models.push_back(res);
  }
  return out;
}

std::string sensor_table_csv(std::vector<SensorRow> rows) {
  sort_sensor_rows(rows);
  std::string out = "model,bands,adapter,tuning,loss,miou,f1,precision,recall,macc\n";
  for (const auto& r : rows) {
    if (r.skipped) continue;
    out += r.model + "," + r.bands + "," + r.adapter + "," + r.tuning + "," + r.loss + "," +
           fmt_pct(r.metrics.miou) + "," + fmt_pct(r.metrics.f1) + "," +
           fmt_pct(r.metrics.precision) + "," + fmt_pct(r.metrics.recall) + "," +
           fmt_pct(r.metrics.macc) + "\n";
  }
  return out;
}

std::string sensor_table_json(std::vector<SensorRow> rows) {
  sort_sensor_rows(rows);
  json arr = json::array();
  for (const auto& r : rows) {
    if (r.skipped) continue;
    json j;
    j["model"] = r.model;
    j["bands"] = r.bands;
    j["adapter"] = r.adapter;
    j["tuning"] = r.tuning;
    j["loss"] = r.loss;
    j["run_id"] = r.run_id;
    j["miou"] = r.metrics.miou;
    j["f1"] = r.metrics.f1;
    j["precision"] = r.metrics.precision;
    j["recall"] = r.metrics.recall;
    j["macc"] = r.metrics.macc;
    arr.push_back(j);
  }
  return arr.dump(2) + "\n";
}

std::string sensor_skips_csv(const std::vector<SensorRow>& rows) {
  std::vector<SensorRow> sorted = rows;
  sort_sensor_rows(sorted);
  std::string out = "model,bands,adapter,tuning,reason\n";
  for (const auto& r : sorted) {
    if (!r.skipped) continue;
    out += r.model + "," + r.bands + "," + r.adapter + "," + r.tuning + "," +
           csv_quote(r.skip_reason) + "\n";
  }
  return out;
}

std::string label_table_csv(const LabelAxisOutput& out) {
  std::string csv = "model,k,miou,rpd,de\n";
  for (const auto& m : out.models) {
    // Fractions from largest to smallest, matching the narrative order.
    for (auto it = m.report.scores.rbegin(); it != m.report.scores.rend(); ++it) {
      const double k = it->first;
      csv += m.model_name + "," + frac_tag(k) + "," + fmt2(it->second) + ",";
      auto rit = m.report.rpd.find(k);
      csv += (rit != m.report.rpd.end() ? fmt_ratio(rit->second) : std::string()) + ",";
      csv += (m.report.de ? fmt_ratio(*m.report.de) : std::string()) + "\n";
    }
  }
  return csv;
}

std::string domain_table_csv(const std::string& model, const TransferReport& rep) {
  std::string csv = "model,p_in,p_gen,p_ext,r_site,r_ext,r_2hop\n";
  csv += model + "," + fmt2(rep.p_in) + "," + fmt2(rep.p_gen) + "," + fmt2(rep.p_ext) + "," +
         fmt_ratio(rep.r_site) + "," + fmt_ratio(rep.r_ext) + "," + fmt_ratio(rep.r_2hop) + "\n";
  return csv;
}

std::string svg_score_curve(const LabelAxisOutput& out) {
  const int W = 640, H = 400;
  const double left = 60, right = 20, top = 50, bottom = 60;
  const double plot_w = W - left - right, plot_h = H - top - bottom;

  std::vector<double> ks;
  for (const auto& m : out.models)
    for (const auto& [k, v] : m.report.scores)
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  std::sort(ks.begin(), ks.end());

  double lo = 1e300, hi = -1e300;
  for (const auto& m : out.models)
    for (const auto& [k, v] : m.report.scores) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double pad = std::max(1.0, (hi - lo) * 0.15);
  lo -= pad;
  hi += pad;

  auto xpos = [&](size_t i) {
    return left + (ks.size() > 1 ? plot_w * i / (ks.size() - 1) : plot_w / 2.0);
  };
  auto ypos = [&](double v) { return top + (1.0 - (v - lo) / (hi - lo)) * plot_h; };

  std::string svg = svg_open(W, H);
  svg += svg_text(W / 2.0, 24, "mIoU versus labeled fraction", 14);
  svg += svg_line(left, top + plot_h, left + plot_w, top + plot_h, "#888");
  svg += svg_line(left, top, left, top + plot_h, "#888");
  for (size_t i = 0; i < ks.size(); ++i)
    svg += svg_text(xpos(i), top + plot_h + 20, frac_tag(ks[i]) + "%");
  svg += svg_text(left + plot_w / 2.0, H - 16, "labeled fraction", 12);

  for (size_t s = 0; s < out.models.size(); ++s) {
    const auto& m = out.models[s];
    std::string pts;
    for (size_t i = 0; i < ks.size(); ++i) {
      auto it = m.report.scores.find(ks[i]);
      if (it == m.report.scores.end()) continue;
      char buf[48];
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", xpos(i), ypos(it->second));
      pts += buf;
      svg += svg_circle(xpos(i), ypos(it->second), plot_color(s));
      svg += svg_text(xpos(i), ypos(it->second) - 8, fmt2(it->second), 10);
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(plot_color(s)) +
           "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double lx = left + 10, ly = top - 28 + 14 * s;
    svg += svg_rect(lx, ly - 8, 10, 10, plot_color(s));
    svg += svg_text(lx + 16, ly + 1, m.model_name, 11, "start");
  }
  svg += "</svg>\n";
  return svg;
}

std::string svg_rpd_bars(const LabelAxisOutput& out) {
  std::vector<double> ks;
  for (const auto& m : out.models)
    for (const auto& [k, v] : m.report.rpd)
      if (std::find(ks.begin(), ks.end(), k) == ks.end()) ks.push_back(k);
  std::sort(ks.rbegin(), ks.rend());

  std::vector<std::string> groups, series;
  for (double k : ks) groups.push_back(frac_tag(k) + "%");
  std::vector<std::vector<double>> values;
  for (const auto& m : out.models) {
    series.push_back(m.model_name);
    std::vector<double> vs;
    for (double k : ks) {
      auto it = m.report.rpd.find(k);
      vs.push_back(it != m.report.rpd.end() ? it->second : 0.0);
    }
    values.push_back(vs);
  }
  return bar_figure("Relative performance drop by fraction", groups, series, values);
}

std::string svg_de_bars(const LabelAxisOutput& out) {
  std::vector<std::string> groups, series;
  std::vector<std::vector<double>> values;
  for (const auto& m : out.models) {
    groups.push_back(m.model_name);
  }
  series.push_back("DE");
  std::vector<double> vs;
  for (const auto& m : out.models) vs.push_back(m.report.de.value_or(0.0));
  values.push_back(vs);
  return bar_figure("Data efficiency (mean retention)", groups, series, values);
}

std::string svg_retention_bars(const std::string& model, const TransferReport& rep) {
  const std::vector<std::string> groups = {"gen/in", "ext/gen", "ext/in"};
  const std::vector<std::string> series = {model};
  const std::vector<std::vector<double>> values = {{rep.r_site, rep.r_ext, rep.r_2hop}};
  return bar_figure("Cross-domain retention ratios", groups, series, values);
}

void check_run_closure(const std::string& run_dir, const std::string& run_id) {
  const std::string mpath = run_dir + "/metrics_" + run_id + ".json";
  if (!file_exists(mpath))
    fail(Err::Config, "dangling run reference '" + run_id + "': missing " + mpath);
  json metrics = json::parse(read_text_file(mpath));
  for (const char* field : {"config_fingerprint", "corpus_hash", "checkpoint_sha"})
    if (metrics.value(field, std::string()).empty())
      fail(Err::Config, "dangling run reference '" + run_id + "': empty " + std::string(field));

  const std::string rpath = run_dir + "/run_" + run_id + ".json";
  if (!file_exists(rpath))
    fail(Err::Config, "dangling run reference '" + run_id + "': missing " + rpath);
  json full = json::parse(read_text_file(rpath));

  const std::string ckpt = resolve_ref(run_dir, full.value("checkpoint_path", std::string()));
  if (!file_exists(ckpt))
    fail(Err::Config, "dangling run reference '" + run_id + "': missing checkpoint " + ckpt);
  if (sha256_file_hex(ckpt) != metrics.at("checkpoint_sha").get<std::string>())
    fail(Err::Config, "dangling run reference '" + run_id + "': checkpoint hash mismatch");

  const std::string subset_sha = metrics.value("subset_manifest_sha", std::string());
  if (!subset_sha.empty()) {
    const std::string spath =
        resolve_ref(run_dir, full.value("subset_manifest_path", std::string()));
    if (!file_exists(spath))
      fail(Err::Config, "dangling run reference '" + run_id + "': missing subset manifest");
    if (sha256_file_hex(spath) != subset_sha)
      fail(Err::Config, "dangling run reference '" + run_id + "': subset manifest hash mismatch");
  }
}

ReportBundle render_report(const std::string& run_dir, const std::string& out_dir) {
  ensure_dir(out_dir);
  ReportBundle bundle;
  auto emit = [&](const std::string& name, const std::string& content) {
    const std::string path = out_dir + "/" + name;
    write_text_file(path, content);
    bundle.files.push_back(path);
  };

  bool any = false;
  const std::string sensor_path = run_dir + "/sensor_rows.json";
  if (file_exists(sensor_path)) {
    any = true;
    auto rows = sensor_rows_from_json(read_text_file(sensor_path));
    for (const auto& r : rows)
      if (!r.skipped) check_run_closure(run_dir, r.run_id);
    emit("table_sensor.csv", sensor_table_csv(rows));
    emit("table_sensor.json", sensor_table_json(rows));
    emit("table_sensor_skips.csv", sensor_skips_csv(rows));
  }

  const std::string label_path = run_dir + "/label_axis.json";
  if (file_exists(label_path)) {
    any = true;
    const std::string text = read_text_file(label_path);
    LabelAxisOutput out = label_axis_from_json(text);
    for (const auto& m : out.models)
      for (const auto& rid : m.run_ids) check_run_closure(run_dir, rid);
    for (const auto& [k, path] : out.subset_paths) {
      const std::string spath = resolve_ref(run_dir, path);
      if (!file_exists(spath))
        fail(Err::Config, "dangling subset manifest for k=" + frac_tag(k));
      if (sha256_file_hex(spath) != out.subset_hashes.at(k))
        fail(Err::Config, "subset manifest hash mismatch for k=" + frac_tag(k));
    }
    emit("table_label.csv", label_table_csv(out));
    emit("table_label.json", text);
    emit("fig_score_curve.svg", svg_score_curve(out));
    emit("fig_rpd_bars.svg", svg_rpd_bars(out));
    emit("fig_de_bars.svg", svg_de_bars(out));
  }

  const std::string domain_path = run_dir + "/domain_axis.json";
  if (file_exists(domain_path)) {
    any = true;
    const std::string text = read_text_file(domain_path);
    json j = json::parse(text);
    TransferReport rep;
    rep.p_in = j.at("p_in").get<double>();
    rep.p_gen = j.at("p_gen").get<double>();
    rep.p_ext = j.at("p_ext").get<double>();
    rep.r_site = j.at("r_site").get<double>();
    rep.r_ext = j.at("r_ext").get<double>();
    rep.r_2hop = j.at("r_2hop").get<double>();
    const std::string model = j.value("model", std::string("model"));
    const std::string rid = j.value("run_id", std::string());
    if (!rid.empty()) check_run_closure(run_dir, rid);
    emit("table_domain.csv", domain_table_csv(model, rep));
    emit("table_domain.json", text);
    emit("fig_retention_bars.svg", svg_retention_bars(model, rep));
  }

  if (!any) fail(Err::Config, "no axis outputs found under " + run_dir);
  return bundle;
}

}  // namespace gfb
