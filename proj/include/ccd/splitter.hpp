#pragma once

// Known / novel split of an unlabeled batch. A similarity threshold against
// the known-class prototypes gives a preliminary split; the samples far from
// the threshold on either side train a small binary classifier which then
// decides every sample.

#include <span>
#include <vector>

#include "ccd/numerics.hpp"
#include "ccd/prototypes.hpp"

namespace ccd {

struct SplitConfig {
  double epsilon = 0.9;
  double delta = 0.05;
  std::size_t mlp_hidden = 32;
  std::size_t mlp_epochs = 200;
  double learning_rate = 1e-2;
  std::size_t batch_size = 128;
  // Weight each side of the binary cross-entropy by the inverse of its share
  // of the reliable set.
  bool balance_classes = true;
};

struct SplitResult {
  // Indices into the batch. known_labels[i] is the nearest P-prototype of
  // known[i]; known and novel partition the batch.
  std::vector<std::size_t> known;
  std::vector<Label> known_labels;
  std::vector<std::size_t> novel;
  // Per batch sample: was it in the reliable training set.
  std::vector<bool> reliable_mask;
};

struct ReliableSet {
  std::vector<std::size_t> indices;
  std::vector<bool> is_known;  // parallel to indices
  std::size_t known_count() const;
  std::size_t novel_count() const { return indices.size() - known_count(); }
};

// Known iff max_p s(f, p) > epsilon; ties go novel.
SplitResult nonparametric_split(std::span<const Vector> reps, const PrototypeBank& bank,
                                double epsilon);

// Keeps samples with max similarity <= epsilon - delta (novel) or
// >= epsilon + delta (known). Throws InsufficientData when either side has
// fewer than two samples.
ReliableSet select_reliable(std::span<const Vector> reps, const PrototypeBank& bank,
                            double epsilon, double delta);

// Trains a one-hidden-layer sigmoid classifier with binary cross-entropy on
// the reliable samples and applies it (threshold 0.5) to the whole batch.
// Throws TrainingDiverged when the loss becomes non-finite.
SplitResult parametric_split(std::span<const Vector> reps, const ReliableSet& reliable,
                             const PrototypeBank& bank, const SplitConfig& config, Rng& rng);

// Full split with the fallback used by the pipeline: when the reliable set is
// too small on either side the preliminary split stands.
struct SplitOutcome {
  SplitResult result;
  bool parametric = false;
};
SplitOutcome split_batch(std::span<const Vector> reps, const PrototypeBank& bank,
                         const SplitConfig& config, Rng& rng);

}  // namespace ccd
