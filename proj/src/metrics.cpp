#include "mdood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdood/errors.hpp"

namespace mdood {

namespace {

void require_finite(std::span<const double> scores, const char* what) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError(std::string(what) + " contain a non-finite value");
  }
}

void require_non_empty(std::span<const double> scores, const char* what) {
  if (scores.empty()) throw ValidationError(std::string(what) + " are empty");
  require_finite(scores, what);
}

}  // namespace

Threshold tpr95_threshold(std::span<const double> train_scores) {
  require_non_empty(train_scores, "training scores");
  std::vector<double> sorted(train_scores.begin(), train_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t k = (95 * n + 99) / 100;  // ceil(0.95 n) in exact arithmetic
  return Threshold{sorted[k - 1], n, n < kMinThresholdSamples};
}

double accepted_fraction(std::span<const double> scores, double tau) {
  require_non_empty(scores, "scores");
  const auto accepted = std::count_if(scores.begin(), scores.end(), [&](double s) { return s <= tau; });
  return static_cast<double>(accepted) / static_cast<double>(scores.size());
}

double fpr(std::span<const double> ood_scores, double tau) {
  require_non_empty(ood_scores, "OOD scores");
  return accepted_fraction(ood_scores, tau);
}

double detection_error(std::span<const double> id_test_scores, std::span<const double> ood_scores,
                       double tau) {
  require_non_empty(id_test_scores, "ID test scores");
  const double tpr = accepted_fraction(id_test_scores, tau);
  return 0.5 * (1.0 - tpr) + 0.5 * fpr(ood_scores, tau);
}

double auroc(std::span<const double> id_test_scores, std::span<const double> ood_scores) {
  require_non_empty(id_test_scores, "ID test scores");
  require_non_empty(ood_scores, "OOD scores");
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> items;
  items.reserve(id_test_scores.size() + ood_scores.size());
  for (double s : id_test_scores) items.push_back({s, false});
  for (double s : ood_scores) items.push_back({s, true});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of 1-based midranks of the OOD items.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t ood_in_group = 0;
    while (j < items.size() && items[j].score == items[i].score) ood_in_group += items[j++].ood;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(ood_in_group);
    i = j;
  }
  const double n_ood = static_cast<double>(ood_scores.size());
  const double n_id = static_cast<double>(id_test_scores.size());
  const double u = rank_sum - n_ood * (n_ood + 1.0) / 2.0;
  return u / (n_ood * n_id);
}

std::size_t esce_bin(double uncertainty, std::size_t bins) {
  if (bins == 0) throw ValidationError("ESCE needs at least one bin");
  const double m = static_cast<double>(bins);
  double raw = std::ceil(uncertainty * m) - 1.0;
  std::size_t idx = raw <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(raw));
  // Settle boundary cases against the exact edges idx / M.
  while (idx > 0 && uncertainty <= static_cast<double>(idx) / m) --idx;
  while (idx + 1 < bins && uncertainty > static_cast<double>(idx + 1) / m) ++idx;
  return idx;
}

double esce(std::span<const ScoredSubject> subjects, std::size_t bins) {
  if (bins == 0) throw ValidationError("ESCE needs at least one bin");
  if (subjects.empty()) throw ValidationError("ESCE needs at least one subject");
  std::vector<double> dice_sum(bins, 0.0), u_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (const auto& s : subjects) {
    if (!s.dice) throw ValidationError("subject '" + s.subject_id + "' has no Dice score");
    if (!(s.uncertainty >= 0.0 && s.uncertainty <= 1.0)) {
      throw ValidationError("subject '" + s.subject_id + "' has uncertainty outside [0, 1]");
    }
    const std::size_t b = esce_bin(s.uncertainty, bins);
    dice_sum[b] += *s.dice;
    u_sum[b] += s.uncertainty;
    ++count[b];
  }
  const double n = static_cast<double>(subjects.size());
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    const double gap = std::abs(dice_sum[b] / c - (1.0 - u_sum[b] / c));
    total += (c / n) * gap;
  }
  return total;
}

double dice(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ValidationError("Dice needs equal shapes, got " + shape_to_string(pred.shape()) + " and " +
                          shape_to_string(gt.shape()));
  }
  const auto p = pred.values<std::uint8_t>();
  const auto g = gt.values<std::uint8_t>();
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 1 || g[i] > 1) throw ValidationError("Dice masks must be binary (0/1)");
    inter += p[i] & g[i];
    np += p[i];
    ng += g[i];
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

QuadrantCounts quadrant_report(std::span<const ScoredSubject> subjects, double tau,
                               double dice_cut) {
  QuadrantCounts q;
  for (const auto& s : subjects) {
    if (!s.dice) throw ValidationError("subject '" + s.subject_id + "' has no Dice score");
    const bool low = *s.dice < dice_cut;
    const bool accepted = s.uncertainty <= tau;
    if (low && accepted) ++q.silent_failures;
    else if (low) ++q.detected_failures;
    else if (accepted) ++q.accepted_good;
    else ++q.flagged_good;
  }
  return q;
}

}  // namespace mdood
