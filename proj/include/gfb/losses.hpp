#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gfb/error.hpp"

namespace gfb {

enum class LossKind { wce, lovasz, focal };

struct LossSpec {
  LossKind kind = LossKind::wce;
  double w_bg = 2.0;
  double w_ls = 8.0;
  double gamma = 2.0;
  std::string classes = "present";  // lovasz class-averaging rule

  void validate() const {
    if (w_bg <= 0.0 || w_ls <= 0.0) fail(Err::Weight, "class weights must be positive");
    if (gamma < 0.0) fail(Err::Config, "focal gamma must be non-negative");
    if (classes != "present" && classes != "all")
      fail(Err::Config, "lovasz classes must be 'present' or 'all'");
  }
};

const char* loss_kind_name(LossKind k);
LossKind loss_kind_from_name(const std::string& name);

namespace detail {

template <typename S>
inline void check_mask(std::span<const uint8_t> mask) {
  for (uint8_t m : mask)
    if (m > 1) fail(Err::LabelDomain, "mask values must be 0 or 1");
}

// Row-stable log-softmax for a single 2-class pixel.
template <typename S>
inline void log_softmax2(const S* z, S* out) {
  S mx = std::max(z[0], z[1]);
  S lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
  out[0] = z[0] - lse;
  out[1] = z[1] - lse;
}

// Gradient of the Jaccard extension given the descending-sorted ground-truth
// indicator: delta_1 = J_1, delta_j = J_j - J_{j-1}.
template <typename S>
inline std::vector<S> jaccard_extension_grad(const std::vector<uint8_t>& gt_sorted) {
  const size_t n = gt_sorted.size();
  S gts = static_cast<S>(std::accumulate(gt_sorted.begin(), gt_sorted.end(), size_t{0}));
  std::vector<S> g(n);
  S cum_pos = 0, cum_neg = 0, prev = 0;
  for (size_t j = 0; j < n; ++j) {
    if (gt_sorted[j])
      cum_pos += 1;
    else
      cum_neg += 1;
    S inter = gts - cum_pos;
    S uni = gts + cum_neg;
    S jac = uni > 0 ? S(1) - inter / uni : S(0);
    g[j] = jac - prev;
    prev = jac;
  }
  return g;
}

}  // namespace detail

// Mean over pixels of -w_y * log softmax(z)_y. logits are (n, 2) row-major.
// When grad is non-empty it receives dL/dlogits (same layout).
template <typename S>
S wce_loss(std::span<const S> logits, std::span<const uint8_t> mask, S w_bg, S w_ls,
           std::span<S> grad = {}) {
  if (w_bg <= 0 || w_ls <= 0) fail(Err::Weight, "class weights must be positive");
  const size_t n = mask.size();
  if (logits.size() != 2 * n) fail(Err::Shape, "logits must be n x 2");
  detail::check_mask<S>(mask);
  S total = 0;
  const S inv_n = S(1) / static_cast<S>(n);
  for (size_t i = 0; i < n; ++i) {
    S lp[2];
    detail::log_softmax2(logits.data() + 2 * i, lp);
    const int y = mask[i];
    const S w = y == 1 ? w_ls : w_bg;
    total += -w * lp[y];
    if (!grad.empty()) {
      S p0 = std::exp(lp[0]), p1 = std::exp(lp[1]);
      grad[2 * i + 0] = w * (p0 - (y == 0 ? S(1) : S(0))) * inv_n;
      grad[2 * i + 1] = w * (p1 - (y == 1 ? S(1) : S(0))) * inv_n;
    }
  }
  return total * inv_n;
}

// Mean over pixels of -(1-p_t)^gamma * log p_t, p_t the true-class softmax
// probability. Optional per-class alpha weights (bg, ls).
template <typename S>
S focal_loss(std::span<const S> logits, std::span<const uint8_t> mask, S gamma,
             std::optional<std::pair<S, S>> alpha = std::nullopt, std::span<S> grad = {}) {
  if (gamma < 0) fail(Err::Config, "focal gamma must be non-negative");
  const size_t n = mask.size();
  if (logits.size() != 2 * n) fail(Err::Shape, "logits must be n x 2");
  detail::check_mask<S>(mask);
  S total = 0;
  const S inv_n = S(1) / static_cast<S>(n);
  for (size_t i = 0; i < n; ++i) {
    S lp[2];
    detail::log_softmax2(logits.data() + 2 * i, lp);
    const int y = mask[i];
    const S a = alpha ? (y == 1 ? alpha->second : alpha->first) : S(1);
    const S log_pt = lp[y];
    const S pt = std::exp(log_pt);
    const S t = S(1) - pt;
    const S mod = gamma == S(0) ? S(1) : std::pow(t, gamma);
    total += -a * mod * log_pt;
    if (!grad.empty()) {
      // dL/dp_t, then chain through softmax: dp_t/dz_c = p_t (delta_cy - p_c).
      S dldpt;
      if (gamma == S(0)) {
        dldpt = -a / pt;
      } else {
        S dmod = t > S(0) ? gamma * std::pow(t, gamma - S(1)) : S(0);
        dldpt = a * (dmod * log_pt - mod / pt);
      }
      S p0 = std::exp(lp[0]), p1 = std::exp(lp[1]);
      S pc[2] = {p0, p1};
      for (int c = 0; c < 2; ++c) {
        S dpt_dz = pt * ((c == y ? S(1) : S(0)) - pc[c]);
        grad[2 * i + c] = dldpt * dpt_dz * inv_n;
      }
    }
  }
  return total * inv_n;
}

// Lovasz-Softmax over 2-class probabilities (n, 2). Averages the Lovasz
// extension of the Jaccard error over classes ("present": only classes that
// appear in the ground truth). grad, when provided, receives dL/dprobs.
template <typename S>
S lovasz_softmax_loss(std::span<const S> probs, std::span<const uint8_t> mask,
                      const std::string& classes = "present", std::span<S> grad = {}) {
  const size_t n = mask.size();
  if (probs.size() != 2 * n) fail(Err::Shape, "probs must be n x 2");
  detail::check_mask<S>(mask);
  for (size_t i = 0; i < n; ++i) {
    S s = probs[2 * i] + probs[2 * i + 1];
    if (std::abs(s - S(1)) > S(1e-4)) fail(Err::Probability, "probability rows must sum to 1");
  }
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));

  size_t n_pos = 0;
  for (uint8_t m : mask) n_pos += m;

  std::vector<int> active;
  for (int c = 0; c < 2; ++c) {
    const size_t class_count = c == 1 ? n_pos : n - n_pos;
    if (classes == "present" && class_count == 0) continue;
    active.push_back(c);
  }
  if (active.empty()) return S(0);

  S total = 0;
  std::vector<size_t> order(n);
  std::vector<S> errors(n);
  std::vector<uint8_t> gt_sorted(n);
  for (int c : active) {
    for (size_t i = 0; i < n; ++i) {
      const S pc = probs[2 * i + static_cast<size_t>(c)];
      errors[i] = mask[i] == c ? S(1) - pc : pc;
    }
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return errors[a] > errors[b]; });
    for (size_t j = 0; j < n; ++j) gt_sorted[j] = mask[order[j]] == c ? 1 : 0;
    std::vector<S> g = detail::jaccard_extension_grad<S>(gt_sorted);
    S loss_c = 0;
    for (size_t j = 0; j < n; ++j) loss_c += errors[order[j]] * g[j];
    total += loss_c;
    if (!grad.empty()) {
      const S scale = S(1) / static_cast<S>(active.size());
      for (size_t j = 0; j < n; ++j) {
        const size_t i = order[j];
        const S de_dp = mask[i] == c ? S(-1) : S(1);
        grad[2 * i + static_cast<size_t>(c)] += g[j] * de_dp * scale;
      }
    }
  }
  return total / static_cast<S>(active.size());
}

// Training-facing Lovasz: softmax over logits, then the extension; grad (if
// requested) is w.r.t. logits.
template <typename S>
S lovasz_loss_from_logits(std::span<const S> logits, std::span<const uint8_t> mask,
                          const std::string& classes = "present", std::span<S> grad = {}) {
  const size_t n = mask.size();
  if (logits.size() != 2 * n) fail(Err::Shape, "logits must be n x 2");
  std::vector<S> probs(2 * n);
  for (size_t i = 0; i < n; ++i) {
    S lp[2];
    detail::log_softmax2(logits.data() + 2 * i, lp);
    probs[2 * i] = std::exp(lp[0]);
    probs[2 * i + 1] = std::exp(lp[1]);
  }
  std::vector<S> gp;
  std::span<S> gp_span;
  if (!grad.empty()) {
    gp.assign(2 * n, S(0));
    gp_span = gp;
  }
  S loss = lovasz_softmax_loss<S>(probs, mask, classes, gp_span);
  if (!grad.empty()) {
    for (size_t i = 0; i < n; ++i) {
      const S p0 = probs[2 * i], p1 = probs[2 * i + 1];
      // dL/dz_k = sum_c dL/dp_c * p_c (delta_ck - p_k)
      grad[2 * i + 0] = gp[2 * i] * p0 * (S(1) - p0) + gp[2 * i + 1] * p1 * (S(0) - p0);
      grad[2 * i + 1] = gp[2 * i] * p0 * (S(0) - p1) + gp[2 * i + 1] * p1 * (S(1) - p1);
    }
  }
  return loss;
}

// Dispatch on a LossSpec; logits layout (n, 2), grad w.r.t. logits.
template <typename S>
S evaluate_loss(const LossSpec& spec, std::span<const S> logits, std::span<const uint8_t> mask,
                std::span<S> grad = {}) {
  switch (spec.kind) {
    case LossKind::wce:
      return wce_loss<S>(logits, mask, static_cast<S>(spec.w_bg), static_cast<S>(spec.w_ls), grad);
    case LossKind::focal:
      return focal_loss<S>(logits, mask, static_cast<S>(spec.gamma), std::nullopt, grad);
    case LossKind::lovasz:
      return lovasz_loss_from_logits<S>(logits, mask, spec.classes, grad);
  }
  fail(Err::Config, "unknown loss kind");
}

// Checkpoint-selection rules used by per-loss training runs: the chosen
// epoch is the argmin of the validation curve computed with the same loss;
// a curve that ever goes non-finite marks the run diverged.
std::optional<int> pick_checkpoint_epoch(std::span<const double> val_curve);

struct LossRunSummary {
  LossSpec spec;
  int checkpoint_epoch = -1;
  double val_miou = 0.0;
  bool diverged = false;
};

// Winner among per-loss checkpoints by validation mIoU; diverged runs are
// flagged and skipped. Returns index into summaries.
std::optional<size_t> pick_loss_winner(std::span<const LossRunSummary> summaries);

}  // namespace gfb
