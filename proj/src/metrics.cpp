#include "gfb/metrics.hpp"

namespace gfb {

ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const uint8_t> pred_mask,
                           std::span<const uint8_t> true_mask) {
  if (pred_mask.size() != true_mask.size())
    fail(Err::Shape, "prediction and ground truth differ in size");
  ConfusionMatrix out = cm;
  for (size_t i = 0; i < pred_mask.size(); ++i) {
    uint8_t p = pred_mask[i], t = true_mask[i];
    if (p > 1 || t > 1) fail(Err::Shape, "mask values must be 0 or 1");
    if (t == 1)
      p == 1 ? ++out.tp : ++out.fn;
    else
      p == 1 ? ++out.fp : ++out.tn;
  }
  return out;
}

namespace {
// Ratio with the documented zero-division rule: 0 when the denominator is 0.
double ratio0(double num, double den) { return den > 0.0 ? num / den : 0.0; }
// IoU of a class that is absent from both prediction and ground truth is
// vacuously perfect.
double iou(double inter, double den) { return den > 0.0 ? inter / den : 1.0; }
}  // namespace

MetricReport segmentation_metrics(const ConfusionMatrix& cm) {
  if (cm.total() == 0) fail(Err::EmptyEvaluation, "confusion matrix has no pixels");
  const double tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp),
               fn = static_cast<double>(cm.fn), tn = static_cast<double>(cm.tn);
  MetricReport r;
  r.precision = ratio0(tp, tp + fp);
  r.recall = ratio0(tp, tp + fn);
  r.f1 = ratio0(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.iou_ls = iou(tp, tp + fp + fn);
  r.iou_bg = iou(tn, tn + fp + fn);
  r.miou = 0.5 * (r.iou_ls + r.iou_bg);
  r.macc = (tp + tn) / static_cast<double>(cm.total());
  double acc_ls = tp + fn > 0.0 ? tp / (tp + fn) : 1.0;
  double acc_bg = tn + fp > 0.0 ? tn / (tn + fp) : 1.0;
  r.mean_class_acc = 0.5 * (acc_ls + acc_bg);
  return r;
}

EfficiencyReport efficiency_report(const std::map<double, double>& scores) {
  auto it = scores.find(100.0);
  if (it == scores.end()) fail(Err::MissingBaseline, "scores lack the k=100 baseline");
  const double p100 = it->second;
  if (p100 <= 0.0) fail(Err::MissingBaseline, "k=100 baseline score must be positive");

  EfficiencyReport rep;
  rep.scores = scores;
  for (const auto& [k, p] : scores) rep.rpd[k] = 1.0 - p / p100;

  double sum = 0.0;
  int n = 0;
  for (double k : scarce_fractions()) {
    auto fit = scores.find(k);
    if (fit != scores.end()) {
      sum += fit->second / p100;
      ++n;
    }
  }
  if (n > 0) rep.de = sum / n;
  return rep;
}

TransferReport transfer_report(double p_in, double p_gen, double p_ext) {
  if (p_in <= 0.0) fail(Err::RatioDomain, "in-domain score must be positive");
  TransferReport t;
  t.p_in = p_in;
  t.p_gen = p_gen;
  t.p_ext = p_ext;
  t.r_site = p_gen / p_in;
  t.r_ext = p_gen > 0.0 ? p_ext / p_gen : 0.0;
  t.r_2hop = p_ext / p_in;
  return t;
}

}  // namespace gfb
