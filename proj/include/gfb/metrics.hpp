#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "gfb/error.hpp"

namespace gfb {

// Global pixel-count accumulator, landslide-positive convention.
struct ConfusionMatrix {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionMatrix merged(const ConfusionMatrix& o) const {
    return {tp + o.tp, fp + o.fp, fn + o.fn, tn + o.tn};
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MetricReport {
  double miou = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double macc = 0.0;            // overall pixel accuracy (reported as mAcc)
  double mean_class_acc = 0.0;  // mean of per-class accuracies, kept alongside
  double iou_ls = 0.0;
  double iou_bg = 0.0;
};

struct EfficiencyReport {
  std::map<double, double> scores;  // k (percent) -> P_M(k)
  std::map<double, double> rpd;     // k -> 1 - P(k)/P(100)
  std::optional<double> de;         // mean retention over K' = {10, 2.5, 1.25}
};

struct TransferReport {
  double p_in = 0.0, p_gen = 0.0, p_ext = 0.0;
  double r_site = 0.0;  // gen / in
  double r_ext = 0.0;   // ext / gen
  double r_2hop = 0.0;  // ext / in
};

// Counts one tile pair into a copy of cm; the input matrix is unchanged.
ConfusionMatrix accumulate(const ConfusionMatrix& cm, std::span<const uint8_t> pred_mask,
                           std::span<const uint8_t> true_mask);

MetricReport segmentation_metrics(const ConfusionMatrix& cm);

EfficiencyReport efficiency_report(const std::map<double, double>& scores);

TransferReport transfer_report(double p_in, double p_gen, double p_ext);

// Label fractions that enter DE.
inline const std::vector<double>& scarce_fractions() {
  static const std::vector<double> k{10.0, 2.5, 1.25};
  return k;
}

}  // namespace gfb
