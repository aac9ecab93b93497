#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "doctest.h"
#include "gfb/metrics.hpp"
#include "gfb/rng.hpp"

using namespace gfb;

namespace {

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// Independent per-pixel oracle: loops over the two masks and derives every
// metric from first principles, with the documented zero-denominator
// conventions (undefined ratios collapse to 0, an absent class is vacuously
// perfect for IoU and class accuracy).
struct OracleResult {
  ConfusionMatrix cm;
  MetricReport rep;
};

OracleResult brute_force(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  OracleResult out;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1, t = gt[i] == 1;
    if (p && t)
      ++out.cm.tp;
    else if (p && !t)
      ++out.cm.fp;
    else if (!p && t)
      ++out.cm.fn;
    else
      ++out.cm.tn;
  }
  const double tp = static_cast<double>(out.cm.tp);
  const double fp = static_cast<double>(out.cm.fp);
  const double fn = static_cast<double>(out.cm.fn);
  const double tn = static_cast<double>(out.cm.tn);
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  out.rep.iou_ls = tp + fp + fn > 0.0 ? tp / (tp + fp + fn) : 1.0;
  out.rep.iou_bg = tn + fp + fn > 0.0 ? tn / (tn + fp + fn) : 1.0;
  out.rep.miou = 0.5 * (out.rep.iou_ls + out.rep.iou_bg);
  out.rep.precision = ratio(tp, tp + fp);
  out.rep.recall = ratio(tp, tp + fn);
  out.rep.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn);
  out.rep.macc = ratio(tp + tn, tp + fp + fn + tn);
  const double acc_ls = tp + fn > 0.0 ? tp / (tp + fn) : 1.0;
  const double acc_bg = tn + fp > 0.0 ? tn / (tn + fp) : 1.0;
  out.rep.mean_class_acc = 0.5 * (acc_ls + acc_bg);
  return out;
}

std::vector<uint8_t> random_mask(Rng& rng, size_t n, double p_one) {
  std::vector<uint8_t> m(n);
  for (auto& v : m) v = rng.uniform() < p_one ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("confusion matrix accumulation matches a per-pixel loop") {
  Rng rng(11);
  ConfusionMatrix acc;
  ConfusionMatrix want;
  for (int t = 0; t < 50; ++t) {
    const size_t n = 1 + static_cast<size_t>(rng.below(1024));
    auto pred = random_mask(rng, n, 0.5 * rng.uniform());
    auto gt = random_mask(rng, n, 0.5 * rng.uniform());
    acc = accumulate(acc, pred, gt);
    auto o = brute_force(pred, gt);
    want = want.merged(o.cm);
  }
  CHECK(acc == want);
  CHECK(acc.total() == want.tp + want.fp + want.fn + want.tn);
}

TEST_CASE("accumulate rejects mismatched mask lengths and bad labels") {
  ConfusionMatrix cm;
  std::vector<uint8_t> a{0, 1, 0};
  std::vector<uint8_t> b{0, 1};
  CHECK_THROWS_AS(accumulate(cm, a, b), Error);
  std::vector<uint8_t> bad{0, 2, 1};
  std::vector<uint8_t> ok{0, 1, 0};
  CHECK_THROWS_AS(accumulate(cm, bad, ok), Error);
  CHECK_THROWS_AS(accumulate(cm, ok, bad), Error);
}

TEST_CASE("segmentation metrics agree with the brute-force oracle on random pairs") {
  Rng rng(23);
  for (int t = 0; t < 200; ++t) {
    const int side = 1 + static_cast<int>(rng.below(32));
    const size_t n = static_cast<size_t>(side) * static_cast<size_t>(side);
    // Sweep the class balance including degenerate all-0 / all-1 masks.
    const double p_pred = t % 7 == 0 ? 0.0 : (t % 7 == 1 ? 1.0 : rng.uniform());
    const double p_gt = t % 5 == 0 ? 0.0 : (t % 5 == 1 ? 1.0 : rng.uniform());
    auto pred = random_mask(rng, n, p_pred);
    auto gt = random_mask(rng, n, p_gt);
    auto o = brute_force(pred, gt);
    ConfusionMatrix cm = accumulate(ConfusionMatrix{}, pred, gt);
    REQUIRE(cm == o.cm);
    MetricReport got = segmentation_metrics(cm);
    CHECK(near(got.miou, o.rep.miou, 1e-12));
    CHECK(near(got.f1, o.rep.f1, 1e-12));
    CHECK(near(got.precision, o.rep.precision, 1e-12));
    CHECK(near(got.recall, o.rep.recall, 1e-12));
    CHECK(near(got.macc, o.rep.macc, 1e-12));
    CHECK(near(got.mean_class_acc, o.rep.mean_class_acc, 1e-12));
    CHECK(near(got.iou_ls, o.rep.iou_ls, 1e-12));
    CHECK(near(got.iou_bg, o.rep.iou_bg, 1e-12));
  }
}

TEST_CASE("zero-denominator conventions") {
  // No positives anywhere: both IoUs vacuously 1, precision/recall/F1 0.
  ConfusionMatrix all_tn{0, 0, 0, 100};
  MetricReport r = segmentation_metrics(all_tn);
  CHECK(r.iou_ls == 1.0);
  CHECK(r.iou_bg == 1.0);
  CHECK(r.miou == 1.0);
  CHECK(r.precision == 0.0);
  CHECK(r.recall == 0.0);
  CHECK(r.f1 == 0.0);
  CHECK(r.macc == 1.0);
  CHECK(r.mean_class_acc == 1.0);

  // Every pixel positive and predicted positive: background vacuously perfect.
  ConfusionMatrix all_tp{64, 0, 0, 0};
  r = segmentation_metrics(all_tp);
  CHECK(r.iou_ls == 1.0);
  CHECK(r.iou_bg == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.f1 == 1.0);

  // An empty matrix refuses to produce numbers.
  CHECK_THROWS_AS(segmentation_metrics(ConfusionMatrix{}), Error);
  try {
    segmentation_metrics(ConfusionMatrix{});
    FAIL("expected EmptyEvaluationError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::EmptyEvaluation);
  }
}

TEST_CASE("metrics are invariant to how the confusion matrix was accumulated") {
  Rng rng(5);
  const size_t n = 400;
  auto pred = random_mask(rng, n, 0.3);
  auto gt = random_mask(rng, n, 0.2);
  ConfusionMatrix whole = accumulate(ConfusionMatrix{}, pred, gt);
  // Same pixels split across three tiles of different sizes.
  ConfusionMatrix parts;
  size_t cuts[4] = {0, 13, 250, n};
  for (int s = 0; s < 3; ++s) {
    std::span<const uint8_t> p(pred.data() + cuts[s], cuts[s + 1] - cuts[s]);
    std::span<const uint8_t> g(gt.data() + cuts[s], cuts[s + 1] - cuts[s]);
    parts = accumulate(parts, p, g);
  }
  CHECK(whole == parts);
  CHECK(segmentation_metrics(whole).miou == segmentation_metrics(parts).miou);
}

TEST_CASE("RPD formula on published raw scores") {
  // 1 - 66.96 / 70.41 = 0.0490 at the 1.25% fraction.
  std::map<double, double> scores{{100.0, 70.41}, {1.25, 66.96}};
  EfficiencyReport rep = efficiency_report(scores);
  CHECK(near(rep.rpd.at(1.25), 0.0490, 0.001));
  CHECK(rep.rpd.at(100.0) == 0.0);
  // DE averages whichever scarce fractions are present; here only 1.25.
  REQUIRE(rep.de.has_value());
  CHECK(near(*rep.de, 66.96 / 70.41, 1e-12));
}

TEST_CASE("efficiency report over a full fraction ladder") {
  std::map<double, double> scores{{100.0, 70.41}, {10.0, 69.50}, {2.5, 68.20}, {1.25, 66.96}};
  EfficiencyReport rep = efficiency_report(scores);
  for (auto& [k, p] : scores) {
    CHECK(rep.scores.at(k) == p);
    CHECK(near(rep.rpd.at(k), 1.0 - p / 70.41, 1e-12));
  }
  REQUIRE(rep.de.has_value());
  const double want = (69.50 / 70.41 + 68.20 / 70.41 + 66.96 / 70.41) / 3.0;
  CHECK(near(*rep.de, want, 1e-12));
}

TEST_CASE("DE from the published retention triple") {
  // Retentions {0.9787, 0.9524, 0.9510} average to 0.9607.
  std::map<double, double> scores{
      {100.0, 100.0}, {10.0, 97.87}, {2.5, 95.24}, {1.25, 95.10}};
  EfficiencyReport rep = efficiency_report(scores);
  REQUIRE(rep.de.has_value());
  CHECK(near(*rep.de, 0.9607, 1e-4));
}

TEST_CASE("efficiency report requires the full-label baseline") {
  std::map<double, double> scores{{10.0, 69.50}, {2.5, 68.20}};
  CHECK_THROWS_AS(efficiency_report(scores), Error);
  try {
    efficiency_report(scores);
    FAIL("expected MissingBaselineError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::MissingBaseline);
  }
  // A zero baseline cannot anchor retention ratios.
  std::map<double, double> zero{{100.0, 0.0}, {10.0, 5.0}};
  CHECK_THROWS_AS(efficiency_report(zero), Error);
}

TEST_CASE("RPD, DE, and retention ratios are scale invariant") {
  std::map<double, double> scores{{100.0, 70.41}, {10.0, 69.50}, {2.5, 68.20}, {1.25, 66.96}};
  EfficiencyReport base = efficiency_report(scores);
  std::map<double, double> scaled;
  for (auto& [k, p] : scores) scaled[k] = 3.25 * p;
  EfficiencyReport rep = efficiency_report(scaled);
  for (auto& [k, r] : base.rpd) CHECK(near(rep.rpd.at(k), r, 1e-12));
  CHECK(near(*rep.de, *base.de, 1e-12));

  TransferReport t1 = transfer_report(71.18, 86.03, 70.75);
  TransferReport t2 = transfer_report(0.7118, 0.8603, 0.7075);
  CHECK(near(t1.r_site, t2.r_site, 1e-12));
  CHECK(near(t1.r_ext, t2.r_ext, 1e-12));
  CHECK(near(t1.r_2hop, t2.r_2hop, 1e-12));
}

TEST_CASE("transfer report reproduces the published retention ratios") {
  TransferReport rep = transfer_report(71.18, 86.03, 70.75);
  CHECK(near(rep.r_site, 86.03 / 71.18, 1e-12));
  CHECK(near(rep.r_site, 1.2086, 0.001));
  CHECK(near(rep.r_ext, 70.75 / 86.03, 1e-12));
  CHECK(near(rep.r_ext, 0.8224, 0.001));
  CHECK(near(rep.r_2hop, 70.75 / 71.18, 1e-12));
  CHECK(near(rep.r_2hop, 0.9940, 0.001));
}

TEST_CASE("two-hop retention factors through the intermediate domain") {
  Rng rng(91);
  for (int t = 0; t < 100; ++t) {
    const double p_in = 1.0 + 99.0 * rng.uniform();
    const double p_gen = 1.0 + 99.0 * rng.uniform();
    const double p_ext = 1.0 + 99.0 * rng.uniform();
    TransferReport rep = transfer_report(p_in, p_gen, p_ext);
    CHECK(near(rep.r_2hop, rep.r_site * rep.r_ext, 1e-9));
    CHECK(rep.p_in == p_in);
    CHECK(rep.p_gen == p_gen);
    CHECK(rep.p_ext == p_ext);
  }
}

TEST_CASE("transfer report rejects a nonpositive in-domain score") {
  CHECK_THROWS_AS(transfer_report(0.0, 50.0, 50.0), Error);
  try {
    transfer_report(-5.0, 50.0, 50.0);
    FAIL("expected RatioDomainError");
  } catch (const Error& e) {
    CHECK(e.code() == Err::RatioDomain);
  }
}

TEST_CASE("scarce fraction set is the published one") {
  const auto& k = scarce_fractions();
  REQUIRE(k.size() == 3);
  CHECK(k[0] == 10.0);
  CHECK(k[1] == 2.5);
  CHECK(k[2] == 1.25);
}
