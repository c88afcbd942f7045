#pragma once

// Learnable class prototypes for the backbone's margin contrastive loss, and
// the bank of mutually orthogonal prototypes used to train and read out the
// projector.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

struct ContrastiveHyper {
  double alpha = 32.0;
  double sigma = 0.1;
  // Replaces each linear term t by log(1 + exp(t)).
  bool softplus = false;
};

class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::vector<Label> labels, Matrix vectors, bool learnable);

  // One unit-normalized standard Gaussian prototype per label.
  static PrototypeBank random(const std::vector<Label>& labels, std::size_t dim, Rng& rng);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return vectors_.cols(); }
  bool learnable() const { return learnable_; }
  const std::vector<Label>& labels() const { return labels_; }
  const Matrix& vectors() const { return vectors_; }
  Matrix& mutable_vectors() { return vectors_; }
  std::span<const double> prototype(std::size_t i) const { return vectors_.row(i); }

  // Throws UnknownLabel.
  std::size_t index_of(Label label) const;

  struct Nearest {
    Label label;
    double similarity;
  };
  // Prototype with the largest cosine similarity; lowest index wins ties.
  Nearest nearest(std::span<const double> f) const;

 private:
  std::vector<Label> labels_;
  Matrix vectors_;
  bool learnable_ = true;
  std::map<Label, std::size_t> index_;
};

struct ContrastiveResult {
  double loss = 0.0;
  Vector grad_f;
  Matrix grad_prototypes;  // same shape as the bank
};

// Per-sample margin loss
//   -alpha (s(f, p+) - sigma) + mean_{p in P-} alpha (s(f, p) + sigma)
// with the negative term defined as 0 when the bank has a single prototype.
ContrastiveResult contrastive_loss(std::span<const double> f, Label label,
                                   const PrototypeBank& bank, const ContrastiveHyper& hyper);

struct OrthogonalityResult {
  double loss = 0.0;
  Matrix grad;
};

// (1/n) sum_i log sum_j exp(g_i . g_j / tau); the j = i term is included
// unless include_self is false. Throws DegenerateInput on an empty set.
OrthogonalityResult orthogonality_loss(const Matrix& g, double tau, bool include_self = true);

struct OrthogonalOptions {
  std::size_t steps = 2000;
  double learning_rate = 1e-2;
  bool include_self = true;
  // After the loss-driven steps, replace the set by its nearest orthonormal
  // frame (polar factor). The loss alone settles on a regular simplex whose
  // pairwise cosine is -1/(n-1).
  bool orthonormal_polish = true;
};

class OrthogonalBank {
 public:
  OrthogonalBank() = default;
  // `dim` unit vectors in R^dim drawn from a seeded Gaussian.
  static OrthogonalBank random(std::size_t dim, double tau, Rng& rng);
  OrthogonalBank(Matrix vectors, double tau);

  std::size_t dim() const { return g_.cols(); }
  std::size_t size() const { return g_.rows(); }
  double tau() const { return tau_; }
  const Matrix& vectors() const { return g_; }
  std::span<const double> prototype(std::size_t i) const { return g_.row(i); }

  // Minimizes the orthogonality loss with Adam, renormalizing rows after every
  // step. Only allowed before any class has been assigned.
  void optimize(const OrthogonalOptions& options);

  // Assigns `label` to the unassigned prototype most cosine-similar to
  // `class_mean` (lowest index on ties). Throws CapacityError when no
  // prototype is free and Error when the label is already assigned.
  std::size_t assign(Label label, std::span<const double> class_mean);

  bool has(Label label) const { return index_.contains(label); }
  std::size_t index_of(Label label) const;
  const std::map<Label, std::size_t>& assignment() const { return index_; }
  std::size_t assigned_count() const { return index_.size(); }
  std::optional<Label> owner(std::size_t index) const { return owner_.at(index); }

  // Label of the assigned prototype most cosine-similar to z.
  Label classify(std::span<const double> z) const;

  std::size_t byte_size() const { return g_.data().size() * sizeof(double); }

 private:
  Matrix g_;
  double tau_ = 0.1;
  std::vector<std::optional<Label>> owner_;
  std::map<Label, std::size_t> index_;
};

// Max over i != j of |cos(g_i, g_j)|.
double max_abs_offdiag_cosine(const Matrix& g);

struct PrototypeCeResult {
  double loss = 0.0;  // mean over the batch
  Matrix grad_z;      // d(loss)/d(z), one row per sample
};

// Softmax cross-entropy of projector outputs against the assigned orthogonal
// prototypes: logits_k = u_i . g_k over every assigned prototype k, with
// u_i = z_i / |z_i| when `normalize` holds and u_i = z_i otherwise. Every label
// must be assigned (UnknownLabel otherwise). An empty batch gives zero loss.
PrototypeCeResult prototype_cross_entropy(const Matrix& z, std::span<const Label> labels,
                                          const OrthogonalBank& bank, bool normalize = true);

}  // namespace ccd
