#include "ccd/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <string>

#include "ccd/pools.hpp"

namespace ccd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double hi = v[n / 2];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lo + hi);
}

double log_sum_exp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == kNegInf) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

Vector mean_of_members(std::span<const Vector> reps, std::span<const std::size_t> members) {
  Vector m(reps[members.front()].size(), 0.0);
  for (std::size_t i : members) axpy(1.0, reps[i], m);
  for (double& v : m) v /= static_cast<double>(members.size());
  return m;
}

// Lexicographic order of the representations (stable on exact duplicates).
std::vector<std::size_t> canonical_order(std::span<const Vector> reps) {
  std::vector<std::size_t> order(reps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return reps[a] < reps[b]; });
  return order;
}

// Maps clusters over the canonical array back to original indices and
// numbers them by their smallest canonical member.
DiscoveryResult to_result(const Clusters& clusters, std::span<const std::size_t> order,
                          std::size_t n) {
  std::vector<std::size_t> by_first(clusters.size());
  std::iota(by_first.begin(), by_first.end(), 0);
  auto first_member = [&](std::size_t c) {
    return *std::min_element(clusters.members[c].begin(), clusters.members[c].end());
  };
  std::sort(by_first.begin(), by_first.end(),
            [&](std::size_t a, std::size_t b) { return first_member(a) < first_member(b); });

  DiscoveryResult out;
  out.cluster_count = clusters.size();
  out.pseudo_labels.assign(n, std::nullopt);
  for (std::size_t id = 0; id < by_first.size(); ++id) {
    const std::size_t c = by_first[id];
    for (std::size_t m : clusters.members[c]) out.pseudo_labels[order[m]] = static_cast<int>(id);
    out.class_means.push_back(clusters.means[c]);
  }
  return out;
}

}  // namespace

APResult affinity_propagation(std::span<const Vector> reps, const APConfig& config) {
  const std::size_t n = reps.size();
  if (n < 2) throw DegenerateInput("affinity_propagation: need at least 2 representations");
  if (config.damping < 0.5 || config.damping >= 1.0) {
    throw Error("affinity_propagation: damping must lie in [0.5, 1)");
  }
  if (config.max_iters < config.convergence_window || config.convergence_window == 0) {
    throw Error("affinity_propagation: need max_iters >= convergence_window > 0");
  }

  Matrix s(n, n);
  std::vector<double> off_diag;
  off_diag.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (i == k) continue;
      s(i, k) = -squared_distance(reps[i], reps[k]);
      off_diag.push_back(s(i, k));
    }
  }
  const auto [lo, hi] = std::minmax_element(off_diag.begin(), off_diag.end());
  APResult out;
  if (*lo == *hi) {
    // Every pair equally similar (e.g. identical points): one cluster.
    out.exemplars = {0};
    out.assignment.assign(n, 0);
    out.converged = true;
    return out;
  }
  const double pref = config.preference ? *config.preference : median(off_diag);
  for (std::size_t i = 0; i < n; ++i) s(i, i) = pref;

  // Tiny perturbation so exactly tied similarities do not oscillate.
  Rng noise(config.noise_seed);
  for (double& v : s.data()) {
    v += (std::numeric_limits<double>::epsilon() * v +
          std::numeric_limits<double>::min() * 100.0) *
         noise.normal();
  }

  Matrix r(n, n);
  Matrix a(n, n);
  const double lam = config.damping;
  std::vector<bool> prev_exemplar(n, false);
  std::size_t stable = 0;
  std::vector<double> col(n);

  for (std::size_t it = 0; it < config.max_iters; ++it) {
    out.iterations = it + 1;
    // Responsibilities.
    for (std::size_t i = 0; i < n; ++i) {
      double first = kNegInf;
      double second = kNegInf;
      std::size_t arg = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = a(i, k) + s(i, k);
        if (v > first) {
          second = first;
          first = v;
          arg = k;
        } else if (v > second) {
          second = v;
        }
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double fresh = s(i, k) - (k == arg ? second : first);
        r(i, k) = lam * r(i, k) + (1.0 - lam) * fresh;
      }
    }
    // Availabilities.
    for (std::size_t k = 0; k < n; ++k) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        col[i] = (i == k) ? r(k, k) : std::max(0.0, r(i, k));
        sum += col[i];
      }
      for (std::size_t i = 0; i < n; ++i) {
        double fresh = sum - col[i];
        if (i != k) fresh = std::min(0.0, fresh);
        a(i, k) = lam * a(i, k) + (1.0 - lam) * fresh;
      }
    }

    std::vector<bool> exemplar(n);
    std::size_t count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      exemplar[k] = a(k, k) + r(k, k) > 0.0;
      count += exemplar[k] ? 1 : 0;
    }
    stable = (exemplar == prev_exemplar) ? stable + 1 : 0;
    prev_exemplar = std::move(exemplar);
    if (stable >= config.convergence_window && count > 0) {
      out.converged = true;
      break;
    }
  }
  out.warning = !out.converged;

  std::vector<std::size_t> ex;
  for (std::size_t k = 0; k < n; ++k) {
    if (prev_exemplar[k]) ex.push_back(k);
  }
  if (ex.empty()) {
    // Best effort: the single point with the largest total similarity.
    out.warning = true;
    std::size_t best = 0;
    double best_sum = kNegInf;
    for (std::size_t k = 0; k < n; ++k) {
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (i != k) t += s(i, k);
      }
      if (t > best_sum) {
        best_sum = t;
        best = k;
      }
    }
    ex.push_back(best);
  }

  auto assign_to = [&](const std::vector<std::size_t>& exemplars) {
    std::vector<std::size_t> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_s = kNegInf;
      for (std::size_t c = 0; c < exemplars.size(); ++c) {
        if (exemplars[c] == i) {
          best = c;
          break;
        }
        if (s(i, exemplars[c]) > best_s) {
          best_s = s(i, exemplars[c]);
          best = c;
        }
      }
      lab[i] = best;
    }
    return lab;
  };

  // Refine: within each cluster the member with the largest summed
  // similarity to the other members becomes the exemplar.
  auto lab = assign_to(ex);
  for (std::size_t c = 0; c < ex.size(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i) {
      if (lab[i] == c) members.push_back(i);
    }
    double best_sum = kNegInf;
    for (std::size_t cand : members) {
      double t = 0.0;
      for (std::size_t i : members) {
        if (i != cand) t += s(i, cand);
      }
      if (t > best_sum) {
        best_sum = t;
        ex[c] = cand;
      }
    }
  }
  std::sort(ex.begin(), ex.end());
  ex.erase(std::unique(ex.begin(), ex.end()), ex.end());
  out.exemplars = ex;
  out.assignment = assign_to(ex);
  return out;
}

double GmmModel::log_density(std::span<const double> x, Vector* responsibilities) const {
  Vector lp(k);
  for (std::size_t c = 0; c < k; ++c) {
    double l = std::log(weights[c]);
    for (std::size_t d = 0; d < x.size(); ++d) {
      const double var = variances[c][d];
      const double diff = x[d] - means[c][d];
      l -= 0.5 * (std::log(2.0 * std::numbers::pi * var) + diff * diff / var);
    }
    lp[c] = l;
  }
  const double total = log_sum_exp(lp);
  if (responsibilities) {
    responsibilities->resize(k);
    for (std::size_t c = 0; c < k; ++c) (*responsibilities)[c] = std::exp(lp[c] - total);
  }
  return total;
}

GmmFit gmm_fit(std::span<const Vector> reps, std::size_t k, Rng& rng, const GmmOptions& options) {
  const std::size_t n = reps.size();
  if (k == 0) throw Error("gmm_fit: need at least one component");
  if (k > n) {
    throw Error("gmm_fit: " + std::to_string(k) + " components for " + std::to_string(n) +
                " representations");
  }
  const std::size_t dim = reps.front().size();

  // Global per-dimension variance, used to seed every component's spread.
  const Vector global_mean = mean_of(reps);
  Vector global_var(dim, 0.0);
  for (const auto& x : reps) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = x[d] - global_mean[d];
      global_var[d] += diff * diff / static_cast<double>(n);
    }
  }
  for (double& v : global_var) v = std::max(v, options.variance_floor);

  GmmFit fit;
  GmmModel& m = fit.model;
  m.k = k;
  m.weights.assign(k, 1.0 / static_cast<double>(k));
  m.variances.assign(k, global_var);

  // k-means++ seeding.
  m.means.push_back(reps[rng.uniform_index(n)]);
  std::vector<double> d2(n);
  while (m.means.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : m.means) best = std::min(best, squared_distance(reps[i], c));
      d2[i] = best;
      total += best;
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (u < d2[pick]) break;
        u -= d2[pick];
      }
    } else {
      pick = rng.uniform_index(n);
    }
    m.means.push_back(reps[pick]);
  }

  fit.responsibilities = Matrix(n, k);
  Vector resp;
  std::vector<double> point_ll(n);
  double prev_ll = kNegInf;
  for (std::size_t it = 0; it < options.max_iters; ++it) {
    // E-step.
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      point_ll[i] = m.log_density(reps[i], &resp);
      ll += point_ll[i];
      std::copy(resp.begin(), resp.end(), fit.responsibilities.row(i).begin());
    }
    fit.log_likelihood.push_back(ll);
    fit.iterations = it + 1;
    if (it > 0 && std::abs(ll - prev_ll) <= options.tolerance * std::abs(prev_ll)) {
      fit.converged = true;
      break;
    }
    prev_ll = ll;

    // M-step.
    bool collapsed = false;
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += fit.responsibilities(i, c);
      if (nk < 1e-8) {
        if (++fit.reseeds > options.max_reseeds) {
          throw Error("gmm_fit: component collapsed after " +
                      std::to_string(options.max_reseeds) + " re-seeds");
        }
        const std::size_t worst = static_cast<std::size_t>(
            std::min_element(point_ll.begin(), point_ll.end()) - point_ll.begin());
        m.means[c] = reps[worst];
        m.variances[c] = global_var;
        m.weights[c] = 1.0 / static_cast<double>(k);
        collapsed = true;
        continue;
      }
      Vector mean(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) axpy(fit.responsibilities(i, c) / nk, reps[i], mean);
      Vector var(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = fit.responsibilities(i, c) / nk;
        for (std::size_t d = 0; d < dim; ++d) {
          const double diff = reps[i][d] - mean[d];
          var[d] += w * diff * diff;
        }
      }
      for (double& v : var) v = std::max(v, options.variance_floor);
      m.means[c] = std::move(mean);
      m.variances[c] = std::move(var);
      m.weights[c] = nk / static_cast<double>(n);
    }
    if (collapsed) {
      // Weights no longer sum to one and the likelihood history restarts.
      const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
      for (double& w : m.weights) w /= total;
      fit.log_likelihood.clear();
      prev_ll = kNegInf;
    }
  }
  return fit;
}

Clusters clusters_from_labels(std::span<const Vector> reps,
                              std::span<const std::optional<int>> labels) {
  require_same_dim(reps.size(), labels.size(), "clusters_from_labels");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i]) groups[*labels[i]].push_back(i);
  }
  Clusters out;
  for (auto& [label, members] : groups) {
    out.means.push_back(mean_of_members(reps, members));
    out.members.push_back(std::move(members));
  }
  return out;
}

Clusters fine_discovery(std::span<const Vector> reps, const Clusters& clusters, std::size_t k,
                        std::vector<std::size_t>* discarded) {
  if (k == 0) throw Error("fine_discovery: k must be at least 1");
  Clusters out;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const auto& members = clusters.members[c];
    if (members.empty()) continue;
    const Vector center = clusters.means.size() > c ? clusters.means[c]
                                                    : mean_of_members(reps, members);
    // Sort members by distance to the cluster mean, then by index so the
    // result does not depend on the member order.
    std::vector<std::size_t> sorted = members;
    std::sort(sorted.begin(), sorted.end());
    std::vector<Vector> member_reps;
    for (std::size_t i : sorted) member_reps.push_back(reps[i]);
    std::vector<std::size_t> kept;
    for (std::size_t pos : nearest_indices(member_reps, center, k)) kept.push_back(sorted[pos]);
    if (discarded) {
      std::vector<std::size_t> kept_sorted = kept;
      std::sort(kept_sorted.begin(), kept_sorted.end());
      std::set_difference(sorted.begin(), sorted.end(), kept_sorted.begin(), kept_sorted.end(),
                          std::back_inserter(*discarded));
    }
    out.means.push_back(mean_of_members(reps, kept));
    out.members.push_back(std::move(kept));
  }
  return out;
}

Clusters merge_classes(std::span<const Vector> reps, const Clusters& clusters, double lambda) {
  if (lambda < 0.0) throw Error("merge_classes: lambda must be non-negative");
  Clusters cur = clusters;
  for (;;) {
    const std::size_t n = cur.size();
    UnionFind uf(n);
    bool linked = false;
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        if (euclidean_distance(cur.means[a], cur.means[b]) < lambda) {
          uf.unite(a, b);
          linked = true;
        }
      }
    }
    if (!linked) return cur;
    // Components ordered by their smallest cluster index (the union-find root).
    std::map<std::size_t, std::vector<std::size_t>> components;
    for (std::size_t c = 0; c < n; ++c) components[uf.find(c)].push_back(c);
    Clusters next;
    for (const auto& [root, parts] : components) {
      std::vector<std::size_t> members;
      for (std::size_t c : parts) {
        members.insert(members.end(), cur.members[c].begin(), cur.members[c].end());
      }
      next.means.push_back(mean_of_members(reps, members));
      next.members.push_back(std::move(members));
    }
    cur = std::move(next);
  }
}

CoarseResult coarse_discovery(std::span<const Vector> reps, const DiscoveryConfig& config,
                              Rng& rng) {
  CoarseResult out;
  if (reps.size() < 2) return out;
  const APResult ap = affinity_propagation(reps, config.ap);
  out.ap_count = ap.cluster_count();
  out.ap_warning = ap.warning;
  const GmmFit fit = gmm_fit(reps, out.ap_count, rng, config.gmm);

  std::vector<std::vector<std::size_t>> groups(out.ap_count);
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto row = fit.responsibilities.row(i);
    const auto best = std::max_element(row.begin(), row.end());
    if (*best >= config.confidence_cut) {
      groups[static_cast<std::size_t>(best - row.begin())].push_back(i);
    }
  }
  for (auto& g : groups) {
    if (g.empty()) continue;
    out.clusters.means.push_back(mean_of_members(reps, g));
    out.clusters.members.push_back(std::move(g));
  }
  return out;
}

std::vector<double> default_lambda_grid(std::span<const Vector> class_means, std::size_t points) {
  double max_dist = 0.0;
  for (std::size_t a = 0; a < class_means.size(); ++a) {
    for (std::size_t b = a + 1; b < class_means.size(); ++b) {
      max_dist = std::max(max_dist, euclidean_distance(class_means[a], class_means[b]));
    }
  }
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = points == 1 ? 0.0 : max_dist * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return grid;
}

namespace {

std::vector<Vector> prepared_inputs(std::span<const Vector> reps, bool normalize) {
  std::vector<Vector> out;
  out.reserve(reps.size());
  for (const auto& r : reps) out.push_back(normalize ? normalized(r) : r);
  return out;
}

}  // namespace

CalibrationResult calibrate_merge_threshold(std::span<const Vector> known_reps,
                                            std::size_t known_class_count,
                                            std::span<const double> grid,
                                            const DiscoveryConfig& config, Rng& rng) {
  if (grid.empty()) throw Error("calibrate_merge_threshold: empty grid");
  const auto inputs = prepared_inputs(known_reps, config.normalize_inputs);
  const CoarseResult coarse = coarse_discovery(inputs, config, rng);
  const Clusters fine = fine_discovery(inputs, coarse.clusters, config.k);

  CalibrationResult out;
  out.coarse_count = fine.size();
  std::optional<std::size_t> best;
  std::size_t best_gap = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const std::size_t count = merge_classes(inputs, fine, grid[g]).size();
    out.merged_counts.push_back(count);
    const std::size_t gap =
        count > known_class_count ? count - known_class_count : known_class_count - count;
    if (!best || gap < best_gap || (gap == best_gap && grid[g] < grid[*best])) {
      best = g;
      best_gap = gap;
    }
  }
  out.lambda = grid[*best];
  return out;
}

DiscoveryResult joint_discover(std::span<const Vector> pool, double lambda,
                               const DiscoveryConfig& config, Rng& rng) {
  DiscoveryResult out;
  out.lambda = lambda;
  out.pseudo_labels.assign(pool.size(), std::nullopt);
  if (pool.size() < 2) return out;

  const auto order = canonical_order(pool);
  std::vector<Vector> canon;
  canon.reserve(pool.size());
  for (std::size_t i : order) canon.push_back(config.normalize_inputs ? normalized(pool[i]) : pool[i]);

  const CoarseResult coarse = coarse_discovery(canon, config, rng);
  const Clusters fine = fine_discovery(canon, coarse.clusters, config.k);
  const Clusters merged = merge_classes(canon, fine, lambda);

  DiscoveryResult res = to_result(merged, order, pool.size());
  res.lambda = lambda;
  res.ap_count = coarse.ap_count;
  res.ap_warning = coarse.ap_warning;
  return res;
}

DiscoveryResult coarse_only_discover(std::span<const Vector> reps, const DiscoveryConfig& config,
                                     Rng& rng) {
  DiscoveryResult out;
  out.pseudo_labels.assign(reps.size(), std::nullopt);
  if (reps.size() < 2) return out;
  const auto order = canonical_order(reps);
  std::vector<Vector> canon;
  canon.reserve(reps.size());
  for (std::size_t i : order) canon.push_back(config.normalize_inputs ? normalized(reps[i]) : reps[i]);
  const CoarseResult coarse = coarse_discovery(canon, config, rng);
  DiscoveryResult res = to_result(coarse.clusters, order, reps.size());
  res.ap_count = coarse.ap_count;
  res.ap_warning = coarse.ap_warning;
  return res;
}

}  // namespace ccd
