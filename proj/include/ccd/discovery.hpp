#pragma once

// Novel-class discovery over pooled backbone representations:
//   affinity propagation estimates the class count, a diagonal Gaussian
//   mixture with that many components clusters the pool, confident members
//   are kept, each cluster is trimmed to its k members nearest the mean, and
//   clusters whose means are closer than a calibrated threshold are merged.

#include <optional>
#include <span>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

struct APConfig {
  double damping = 0.9;
  std::size_t max_iters = 200;
  std::size_t convergence_window = 15;
  // Diagonal of the similarity matrix; nullopt selects the median of the
  // off-diagonal similarities.
  std::optional<double> preference;
  // Seed of the tiny tie-breaking perturbation added to the similarities.
  std::uint64_t noise_seed = 0;
};

struct APResult {
  std::vector<std::size_t> exemplars;    // indices into the input
  std::vector<std::size_t> assignment;   // per input: position in `exemplars`
  std::size_t iterations = 0;
  bool converged = false;
  // Set when the result is best effort (no convergence or no exemplar emerged).
  bool warning = false;

  std::size_t cluster_count() const { return exemplars.size(); }
};

// Message passing on s(i, k) = -|f_i - f_k|^2. Needs at least 2 inputs.
APResult affinity_propagation(std::span<const Vector> reps, const APConfig& config = {});

struct GmmOptions {
  std::size_t max_iters = 300;
  double tolerance = 1e-6;  // relative log-likelihood change
  double variance_floor = 1e-6;
  std::size_t max_reseeds = 10;
};

struct GmmModel {
  std::size_t k = 0;
  std::vector<Vector> means;
  std::vector<Vector> variances;  // diagonal
  Vector weights;

  // log p(x) and the posterior responsibilities of x.
  double log_density(std::span<const double> x, Vector* responsibilities = nullptr) const;
};

struct GmmFit {
  GmmModel model;
  Matrix responsibilities;             // n x k
  std::vector<double> log_likelihood;  // one entry per EM iteration of the final run
  std::size_t iterations = 0;
  std::size_t reseeds = 0;
  bool converged = false;
};

// EM for a diagonal-covariance mixture with k-means++ seeding. A component
// that loses all its mass is re-seeded at the worst-explained point and EM
// restarts; after `max_reseeds` such events the fit throws Error.
GmmFit gmm_fit(std::span<const Vector> reps, std::size_t k, Rng& rng, const GmmOptions& options = {});

// A clustering of a subset of some representation array: member indices per
// cluster and each cluster's mean.
struct Clusters {
  std::vector<std::vector<std::size_t>> members;
  std::vector<Vector> means;

  std::size_t size() const { return members.size(); }
};

// Groups indices by label (ignoring nullopt); clusters are ordered by label
// and means are computed from `reps`.
Clusters clusters_from_labels(std::span<const Vector> reps,
                              std::span<const std::optional<int>> labels);

// Per cluster, keeps the k members nearest to the cluster mean and replaces
// the mean by the mean of those members. Clusters with at most k members keep
// all of them. Returns the trimmed clusters; `discarded` receives the removed
// indices when non-null.
Clusters fine_discovery(std::span<const Vector> reps, const Clusters& clusters, std::size_t k,
                        std::vector<std::size_t>* discarded = nullptr);

// Links clusters whose means are closer than lambda, merges connected
// components and recomputes means, repeating until no pair is closer than
// lambda. Components are ordered by their smallest input cluster index.
Clusters merge_classes(std::span<const Vector> reps, const Clusters& clusters, double lambda);

struct DiscoveryConfig {
  APConfig ap;
  GmmOptions gmm;
  double confidence_cut = 0.9;
  std::size_t k = 10;
  // Cluster unit-normalized representations instead of raw ones.
  bool normalize_inputs = false;
};

// AP count estimate, GMM with that many components, then the members whose
// largest responsibility reaches the confidence cut. Clusters left without a
// confident member are dropped.
struct CoarseResult {
  Clusters clusters;
  std::size_t ap_count = 0;
  bool ap_warning = false;
};
CoarseResult coarse_discovery(std::span<const Vector> reps, const DiscoveryConfig& config, Rng& rng);

std::vector<double> default_lambda_grid(std::span<const Vector> class_means, std::size_t points = 50);

struct CalibrationResult {
  double lambda = 0.0;
  std::size_t coarse_count = 0;          // clusters after coarse + fine discovery
  std::vector<std::size_t> merged_counts;  // per grid value
};

// Runs coarse + fine discovery on the known-class representations and picks
// the grid value whose merged cluster count is closest to
// `known_class_count` (smallest value on ties). Throws on an empty grid.
CalibrationResult calibrate_merge_threshold(std::span<const Vector> known_reps,
                                            std::size_t known_class_count,
                                            std::span<const double> grid,
                                            const DiscoveryConfig& config, Rng& rng);

struct DiscoveryResult {
  std::size_t cluster_count = 0;
  // Per input representation: cluster id in [0, cluster_count) or nullopt
  // when discarded.
  std::vector<std::optional<int>> pseudo_labels;
  std::vector<Vector> class_means;  // indexed by cluster id
  double lambda = 0.0;
  std::size_t ap_count = 0;
  bool ap_warning = false;
};

// Full discovery over a whole pool. The result does not depend on the order
// of `pool`: inputs are processed in a canonical (lexicographic) order and
// cluster ids are numbered by their first member in that order. Pools with
// fewer than two entries yield zero clusters.
DiscoveryResult joint_discover(std::span<const Vector> pool, double lambda,
                               const DiscoveryConfig& config, Rng& rng);

// Coarse discovery only, with the same canonical ordering and numbering.
DiscoveryResult coarse_only_discover(std::span<const Vector> reps, const DiscoveryConfig& config,
                                     Rng& rng);

}  // namespace ccd
