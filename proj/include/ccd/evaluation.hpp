#pragma once

// Accuracy with optimal pseudo-label matching, stage averaging and maximum
// forgetting.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

struct MatchingResult {
  // row -> column for every matched row; rows beyond the column count (and
  // padded pairs) stay unmatched (-1).
  std::vector<int> row_to_col;
  long long matched = 0;
};

// Maximum-weight assignment on a non-negative contingency matrix
// (rows = pseudo labels, columns = true labels). Rectangular input is padded
// with zeros. O(n^3) shortest augmenting paths.
MatchingResult hungarian_match(const std::vector<std::vector<long long>>& contingency);

// Eq. 12 accuracy: fraction of samples whose pseudo label maps to their true
// label under the optimal matching. Labels are arbitrary integers.
double stage_accuracy(std::span<const Label> pseudo, std::span<const Label> truth);

// Known-class accuracy with the identity mapping.
double identity_accuracy(std::span<const Label> predicted, std::span<const Label> truth);

// Novel-class accuracy: predictions carrying one of `known_labels` count as
// errors, the remaining predictions are matched to the truth optimally.
double novel_accuracy(std::span<const Label> predicted, std::span<const Label> truth,
                      std::span<const Label> known_labels);

struct StageMetrics {
  int stage = 0;
  double known_accuracy = 0.0;            // M_o^t
  std::optional<double> novel_accuracy;   // M_d^t, absent at stage 0
};

struct Aggregate {
  double m_o = 0.0;
  double m_d = 0.0;
  double m_f = 0.0;      // clamped at 0
  double m_f_raw = 0.0;  // signed max drop
};

class MetricsLedger {
 public:
  void record(const StageMetrics& m);
  const std::vector<StageMetrics>& stages() const { return stages_; }
  // Needs stage 0 and at least one later stage.
  Aggregate aggregate() const;

 private:
  std::vector<StageMetrics> stages_;
};

}  // namespace ccd
