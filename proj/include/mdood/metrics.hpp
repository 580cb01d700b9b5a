#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdood/manifest.hpp"
#include "mdood/tensor.hpp"

namespace mdood {

struct ScoredSubject {
  std::string subject_id;
  Role role = Role::kIdTest;
  std::string dataset_tag;
  std::string method;
  double raw_score = 0.0;
  double uncertainty = 0.0;  // normalised to [0, 1]
  std::optional<double> dice;
};

// Boundary covering at least 95% of the training scores.
struct Threshold {
  double value = 0.0;
  std::size_t n = 0;
  // Fewer than 20 scores: the 95th percentile is the maximum.
  bool degenerate = false;
};

inline constexpr std::size_t kMinThresholdSamples = 20;

// The ceil(0.95 n)-th smallest score (1-indexed).
Threshold tpr95_threshold(std::span<const double> train_scores);

// Fraction of scores <= tau, i.e. deemed in-distribution.
double accepted_fraction(std::span<const double> scores, double tau);

// Fraction of OOD scores deemed in-distribution (<= tau).
double fpr(std::span<const double> ood_scores, double tau);

// 0.5 * (1 - TPR) + 0.5 * FPR with TPR measured on ID test scores.
double detection_error(std::span<const double> id_test_scores, std::span<const double> ood_scores,
                       double tau);

// P(ood > id) + 0.5 P(ood == id), from midranks.
double auroc(std::span<const double> id_test_scores, std::span<const double> ood_scores);

inline constexpr std::size_t kDefaultEsceBins = 10;

// Expected segmentation calibration error over M equal-width uncertainty
// bins ([0, 1/M], (1/M, 2/M], ..., ((M-1)/M, 1]).
double esce(std::span<const ScoredSubject> subjects, std::size_t bins = kDefaultEsceBins);

// Bin index of an uncertainty under the esce binning.
std::size_t esce_bin(double uncertainty, std::size_t bins);

// 2 |A and B| / (|A| + |B|) on binary u8 masks; 1 when both are empty.
double dice(const Tensor& pred, const Tensor& gt);

inline constexpr double kDefaultDiceCut = 0.6;

struct QuadrantCounts {
  std::size_t silent_failures = 0;    // dice < cut, uncertainty <= tau
  std::size_t detected_failures = 0;  // dice < cut, uncertainty > tau
  std::size_t accepted_good = 0;      // dice >= cut, uncertainty <= tau
  std::size_t flagged_good = 0;       // dice >= cut, uncertainty > tau

  std::size_t total() const {
    return silent_failures + detected_failures + accepted_good + flagged_good;
  }
  friend bool operator==(const QuadrantCounts&, const QuadrantCounts&) = default;
};

QuadrantCounts quadrant_report(std::span<const ScoredSubject> subjects, double tau,
                               double dice_cut = kDefaultDiceCut);

}  // namespace mdood
