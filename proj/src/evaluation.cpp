#include "ccd/evaluation.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace ccd {

MatchingResult hungarian_match(const std::vector<std::vector<long long>>& contingency) {
  const std::size_t rows = contingency.size();
  if (rows == 0 || contingency.front().empty()) {
    throw DegenerateInput("hungarian_match: empty contingency matrix");
  }
  const std::size_t cols = contingency.front().size();
  long long top = 0;
  for (const auto& r : contingency) {
    if (r.size() != cols) throw DimensionMismatch("hungarian_match: ragged matrix");
    for (long long v : r) {
      if (v < 0) throw Error("hungarian_match: negative count");
      top = std::max(top, v);
    }
  }
  // Minimise cost = top - count on the padded square matrix (1-based, with
  // row/column potentials u, v).
  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t i, std::size_t j) -> long long {
    if (i > rows || j > cols) return top;
    return top - contingency[i - 1][j - 1];
  };
  constexpr long long kInf = std::numeric_limits<long long>::max() / 4;
  std::vector<long long> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<long long> minv(n + 1, kInf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      long long delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const long long cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  MatchingResult out;
  out.row_to_col.assign(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols) {
      out.row_to_col[i - 1] = static_cast<int>(j - 1);
      out.matched += contingency[i - 1][j - 1];
    }
  }
  return out;
}

namespace {

std::vector<Label> distinct(std::span<const Label> v) {
  std::set<Label> s(v.begin(), v.end());
  return {s.begin(), s.end()};
}

std::size_t position(const std::vector<Label>& sorted, Label l) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), l) - sorted.begin());
}

long long matched_count(std::span<const Label> pseudo, std::span<const Label> truth) {
  const auto rows = distinct(pseudo);
  const auto cols = distinct(truth);
  std::vector<std::vector<long long>> c(rows.size(), std::vector<long long>(cols.size(), 0));
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    ++c[position(rows, pseudo[i])][position(cols, truth[i])];
  }
  return hungarian_match(c).matched;
}

}  // namespace

double stage_accuracy(std::span<const Label> pseudo, std::span<const Label> truth) {
  require_same_dim(pseudo.size(), truth.size(), "stage_accuracy");
  if (pseudo.empty()) throw DegenerateInput("stage_accuracy: empty test set");
  return static_cast<double>(matched_count(pseudo, truth)) / static_cast<double>(pseudo.size());
}

double identity_accuracy(std::span<const Label> predicted, std::span<const Label> truth) {
  require_same_dim(predicted.size(), truth.size(), "identity_accuracy");
  if (predicted.empty()) throw DegenerateInput("identity_accuracy: empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double novel_accuracy(std::span<const Label> predicted, std::span<const Label> truth,
                      std::span<const Label> known_labels) {
  require_same_dim(predicted.size(), truth.size(), "novel_accuracy");
  if (predicted.empty()) throw DegenerateInput("novel_accuracy: empty test set");
  const std::set<Label> known(known_labels.begin(), known_labels.end());
  std::vector<Label> p;
  std::vector<Label> t;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (known.contains(predicted[i])) continue;
    p.push_back(predicted[i]);
    t.push_back(truth[i]);
  }
  if (p.empty()) return 0.0;
  return static_cast<double>(matched_count(p, t)) / static_cast<double>(predicted.size());
}

void MetricsLedger::record(const StageMetrics& m) { stages_.push_back(m); }

Aggregate MetricsLedger::aggregate() const {
  const auto first = std::find_if(stages_.begin(), stages_.end(),
                                  [](const StageMetrics& s) { return s.stage == 0; });
  if (first == stages_.end()) throw Error("MetricsLedger: missing stage-0 known accuracy");
  Aggregate out;
  out.m_f_raw = -std::numeric_limits<double>::infinity();
  std::size_t incremental = 0;
  std::size_t with_novel = 0;
  for (const auto& s : stages_) {
    if (s.stage <= 0) continue;
    ++incremental;
    out.m_o += s.known_accuracy;
    if (s.novel_accuracy) {
      out.m_d += *s.novel_accuracy;
      ++with_novel;
    }
    out.m_f_raw = std::max(out.m_f_raw, first->known_accuracy - s.known_accuracy);
  }
  if (incremental == 0) throw Error("MetricsLedger: no incremental stage recorded");
  out.m_o /= static_cast<double>(incremental);
  if (with_novel > 0) out.m_d /= static_cast<double>(with_novel);
  out.m_f = std::max(0.0, out.m_f_raw);
  return out;
}

}  // namespace ccd
