#pragma once

// The training process: an initial labeled stage that trains the backbone
// against learnable prototypes, freezes it, stores representative
// representations and trains the projector against orthogonal prototypes;
// then unlabeled stages that split, discover, assign new prototypes and
// train the projector incrementally with replay.

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "ccd/discovery.hpp"
#include "ccd/encoder.hpp"
#include "ccd/numerics.hpp"
#include "ccd/pools.hpp"
#include "ccd/prototypes.hpp"
#include "ccd/splitter.hpp"

namespace ccd {

struct AblationFlags {
  bool ied = true;
  bool jdn = true;
  bool cio = true;

  bool operator==(const AblationFlags&) const = default;
};

struct EngineConfig {
  std::vector<std::size_t> backbone_hidden = {64, 64};
  std::size_t backbone_dim = 32;  // d: backbone output, projector output and |G|
  std::size_t projector_hidden = 64;

  std::size_t epochs_backbone = 60;   // epoch_1
  std::size_t epochs_projector = 60;  // epoch_2
  std::size_t epochs_incremental = 30;  // epoch_3
  double lr_backbone = 1e-3;
  double lr_projector = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 128;

  ContrastiveHyper contrastive;
  double tau = 0.1;
  OrthogonalOptions orthogonal;
  bool normalize_z = true;

  std::size_t pool_capacity = 10;  // m = k_0
  SplitConfig split;
  DiscoveryConfig discovery;
  std::size_t lambda_grid_points = 50;

  AblationFlags ablation;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IncrementalOutcome {
  int stage = 0;
  std::size_t batch_size = 0;
  std::size_t split_known = 0;
  std::size_t split_novel = 0;
  bool parametric_split = false;
  std::size_t cluster_count = 0;  // discovery clusters this stage
  std::size_t ap_count = 0;
  bool ap_warning = false;
  std::size_t new_classes = 0;
  std::size_t discovered_total = 0;  // novel classes owning a prototype
  std::size_t training_samples = 0;  // pseudo-labeled samples used for L_CE
  double final_loss = 0.0;
};

struct InitialOutcome {
  std::size_t known_classes = 0;
  double final_contrastive_loss = 0.0;
  double final_projector_loss = 0.0;
  double lambda = 0.0;
  std::size_t calibration_clusters = 0;
  double orthogonality = 0.0;  // max |cos| between distinct G rows
};

struct StorageReport {
  std::size_t static_pool_bytes = 0;
  std::size_t dynamic_pool_bytes = 0;
  std::size_t model_parameter_bytes = 0;  // backbone + projector (+ linear head)

  std::size_t additional_bytes() const { return static_pool_bytes + dynamic_pool_bytes; }
  double ratio() const {
    return model_parameter_bytes == 0
               ? 0.0
               : static_cast<double>(additional_bytes()) / static_cast<double>(model_parameter_bytes);
  }
};

class Engine {
 public:
  explicit Engine(EngineConfig config);

  InitialOutcome run_initial_stage(std::span<const Vector> x, std::span<const Label> y);
  IncrementalOutcome run_incremental_stage(std::span<const Vector> x, int stage);

  Label predict(std::span<const double> x) const;
  std::vector<Label> predict(std::span<const Vector> x) const;

  const EngineConfig& config() const { return config_; }
  bool trained() const { return trained_; }
  const FeedForwardNet& backbone() const { return backbone_; }
  const FeedForwardNet& projector() const { return projector_; }
  const PrototypeBank& prototypes() const { return prototypes_; }
  const OrthogonalBank& orthogonal() const { return orthogonal_; }
  const StaticPool& static_pool() const { return static_pool_; }
  const DynamicPool& dynamic_pool() const { return dynamic_pool_; }
  const std::vector<Label>& known_labels() const { return known_labels_; }
  std::vector<Label> novel_labels() const;
  double lambda() const { return lambda_; }
  StorageReport storage() const;

  Vector represent(std::span<const double> x) const { return backbone_.forward(x); }

 private:
  struct LinearHead {
    std::vector<Label> labels;
    Matrix w;  // one row per label
    Vector b;
  };

  Label new_class(std::span<const double> mean);
  void train_projector(std::span<const Vector> reps, std::span<const Label> labels,
                       std::size_t epochs, bool replay, double* final_loss);
  void train_joint(std::span<const Vector> x, std::span<const Label> y);
  std::vector<Label> pool_training_labels(const DiscoveryResult& found, IncrementalOutcome& out);

  EngineConfig config_;
  Rng rng_;
  bool trained_ = false;
  FeedForwardNet backbone_;
  FeedForwardNet projector_;
  PrototypeBank prototypes_;
  OrthogonalBank orthogonal_;
  std::optional<LinearHead> head_;  // used when cio is off
  StaticPool static_pool_;
  DynamicPool dynamic_pool_;
  std::vector<std::optional<Label>> pool_labels_;  // per dynamic-pool entry
  std::vector<Label> known_labels_;
  std::vector<Label> novel_labels_;
  Label next_label_ = 0;
  double lambda_ = 0.0;
};

// Eq. 9 over the current batch plus Eq. 10 over replayed pairs, unweighted.
// Each term is a batch mean; an empty replay set contributes zero.
struct IncrementalLossResult {
  double loss = 0.0;
  double ce = 0.0;
  double replay = 0.0;
  Matrix grad_z;         // per current sample
  Matrix grad_replay_z;  // per replayed sample
};
IncrementalLossResult incremental_loss(const Matrix& z, std::span<const Label> labels,
                                       const Matrix& replay_z, std::span<const Label> replay_labels,
                                       const OrthogonalBank& bank, bool normalize = true);

// Mean softmax cross-entropy of a linear head over z, with gradients with
// respect to z, the weights and the bias.
struct LinearCeResult {
  double loss = 0.0;
  Matrix grad_z;
  Matrix grad_w;
  Vector grad_b;
};
LinearCeResult linear_cross_entropy(const Matrix& z, std::span<const std::size_t> targets,
                                    const Matrix& w, std::span<const double> b);

}  // namespace ccd
