#include "gfb/losses.hpp"

#include <cmath>

namespace gfb {

const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::wce:
      return "wce";
    case LossKind::lovasz:
      return "lovasz";
    case LossKind::focal:
      return "focal";
  }
  return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "wce") return LossKind::wce;
  if (name == "lovasz") return LossKind::lovasz;
  if (name == "focal") return LossKind::focal;
  fail(Err::Config, "unknown loss '" + name + "'");
}

std::optional<int> pick_checkpoint_epoch(std::span<const double> val_curve) {
  std::optional<int> best;
  double best_val = 0.0;
  for (size_t e = 0; e < val_curve.size(); ++e) {
    const double v = val_curve[e];
    if (!std::isfinite(v)) return std::nullopt;
    if (!best || v < best_val) {
      best = static_cast<int>(e);
      best_val = v;
    }
  }
  return best;
}

std::optional<size_t> pick_loss_winner(std::span<const LossRunSummary> summaries) {
  std::optional<size_t> best;
  for (size_t i = 0; i < summaries.size(); ++i) {
    if (summaries[i].diverged) continue;
    if (!best || summaries[i].val_miou > summaries[*best].val_miou) best = i;
  }
  return best;
}

}  // namespace gfb
