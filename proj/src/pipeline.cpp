#include "ccd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "ccd/evaluation.hpp"

namespace ccd {

void EngineConfig::validate() const {
  if (backbone_dim < 2) throw ConfigError("backbone_dim must be at least 2");
  if (projector_hidden == 0) throw ConfigError("projector_hidden must be positive");
  for (std::size_t h : backbone_hidden) {
    if (h == 0) throw ConfigError("backbone hidden widths must be positive");
  }
  if (!(lr_backbone > 0.0) || !(lr_projector > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(contrastive.alpha > 0.0)) throw ConfigError("alpha must be positive");
  if (!(contrastive.sigma >= 0.0 && contrastive.sigma < 1.0)) {
    throw ConfigError("sigma must lie in [0, 1)");
  }
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (pool_capacity == 0) throw ConfigError("pool_capacity must be positive");
  if (!(split.delta > 0.0)) throw ConfigError("delta must be positive");
  if (split.epsilon - split.delta < -1.0 || split.epsilon + split.delta > 1.0) {
    throw ConfigError("epsilon +/- delta must stay within [-1, 1]");
  }
  if (split.mlp_hidden == 0 || split.batch_size == 0) {
    throw ConfigError("split classifier sizes must be positive");
  }
  if (!(split.learning_rate > 0.0)) throw ConfigError("split learning rate must be positive");
  if (discovery.k == 0) throw ConfigError("k must be positive");
  if (!(discovery.confidence_cut > 0.0 && discovery.confidence_cut <= 1.0)) {
    throw ConfigError("confidence_cut must lie in (0, 1]");
  }
  const auto& ap = discovery.ap;
  if (ap.damping < 0.5 || ap.damping >= 1.0) throw ConfigError("ap_damping must lie in [0.5, 1)");
  if (ap.convergence_window == 0 || ap.max_iters < ap.convergence_window) {
    throw ConfigError("need ap_max_iters >= ap_convergence_window > 0");
  }
  if (lambda_grid_points == 0) throw ConfigError("lambda_grid_points must be positive");
}

IncrementalLossResult incremental_loss(const Matrix& z, std::span<const Label> labels,
                                       const Matrix& replay_z, std::span<const Label> replay_labels,
                                       const OrthogonalBank& bank, bool normalize) {
  IncrementalLossResult out;
  auto ce = prototype_cross_entropy(z, labels, bank, normalize);
  auto rep = prototype_cross_entropy(replay_z, replay_labels, bank, normalize);
  out.ce = ce.loss;
  out.replay = rep.loss;
  out.loss = ce.loss + rep.loss;
  out.grad_z = std::move(ce.grad_z);
  out.grad_replay_z = std::move(rep.grad_z);
  return out;
}

LinearCeResult linear_cross_entropy(const Matrix& z, std::span<const std::size_t> targets,
                                    const Matrix& w, std::span<const double> b) {
  require_same_dim(z.rows(), targets.size(), "linear_cross_entropy(targets)");
  require_same_dim(w.rows(), b.size(), "linear_cross_entropy(bias)");
  LinearCeResult out;
  out.grad_z = Matrix(z.rows(), z.cols());
  out.grad_w = Matrix(w.rows(), w.cols());
  out.grad_b.assign(b.size(), 0.0);
  if (z.rows() == 0) return out;
  require_same_dim(z.cols(), w.cols(), "linear_cross_entropy(z)");
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  Vector p(w.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (targets[r] >= w.rows()) throw UnknownLabel("linear_cross_entropy: target out of range");
    const auto zr = z.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < w.rows(); ++k) {
      p[k] = dot(w.row(k), zr) + b[k];
      mx = std::max(mx, p[k]);
    }
    double sum = 0.0;
    for (double& v : p) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : p) v /= sum;
    out.loss -= inv_n * std::log(p[targets[r]]);
    auto gz = out.grad_z.row(r);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double g = inv_n * (p[k] - (k == targets[r] ? 1.0 : 0.0));
      out.grad_b[k] += g;
      axpy(g, zr, out.grad_w.row(k));
      axpy(g, w.row(k), gz);
    }
  }
  return out;
}

Engine::Engine(EngineConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
}

std::vector<Label> Engine::novel_labels() const { return novel_labels_; }

StorageReport Engine::storage() const {
  StorageReport s;
  s.static_pool_bytes = static_pool_.byte_size();
  s.dynamic_pool_bytes = dynamic_pool_.byte_size();
  s.model_parameter_bytes = backbone_.byte_size() + projector_.byte_size();
  if (head_) s.model_parameter_bytes += (head_->w.data().size() + head_->b.size()) * sizeof(double);
  return s;
}

Label Engine::new_class(std::span<const double> mean) {
  const Label label = next_label_++;
  if (config_.ablation.cio) {
    orthogonal_.assign(label, mean);
  } else {
    const std::size_t d = config_.backbone_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Vector row(d);
    for (double& v : row) v = rng_.uniform(-bound, bound);
    head_->w.append_row(row);
    head_->b.push_back(0.0);
    head_->labels.push_back(label);
  }
  novel_labels_.push_back(label);
  return label;
}

// Trains the projector (and the backbone too when it is not frozen) on
// (input, label) pairs. With `replay`, every epoch also replays the whole
// static pool, spread evenly across the minibatches.
void Engine::train_projector(std::span<const Vector> inputs, std::span<const Label> labels,
                             std::size_t epochs, bool replay, double* final_loss) {
  const bool joint = !backbone_.frozen();
  const bool cio = config_.ablation.cio;
  const std::size_t n = inputs.size();
  const std::size_t bs = config_.batch_size;

  AdamState adam_p = AdamState::for_size(projector_.param_count(), config_.lr_projector,
                                         config_.weight_decay);
  AdamState adam_b = AdamState::for_size(joint ? backbone_.param_count() : 0, config_.lr_backbone,
                                         config_.weight_decay);
  AdamState adam_w = AdamState::for_size(head_ ? head_->w.data().size() : 0, config_.lr_projector,
                                         config_.weight_decay);
  AdamState adam_hb = AdamState::for_size(head_ ? head_->b.size() : 0, config_.lr_projector,
                                          config_.weight_decay);
  Vector grad_p(projector_.param_count());
  Vector grad_b(joint ? backbone_.param_count() : 0);

  std::vector<std::size_t> targets;  // head row per sample when cio is off
  if (!cio) {
    for (Label l : labels) {
      const auto it = std::find(head_->labels.begin(), head_->labels.end(), l);
      if (it == head_->labels.end()) throw UnknownLabel("no head row for label " + std::to_string(l));
      targets.push_back(static_cast<std::size_t>(it - head_->labels.begin()));
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < epochs; ++e) {
    order = rng_.permutation(n);
    std::vector<ReplayPair> pairs;
    if (replay && cio && !static_pool_.empty()) pairs = replay_batch(static_pool_, rng_);
    const std::size_t batches =
        std::max<std::size_t>(1, n > 0 ? (n + bs - 1) / bs : (pairs.size() + bs - 1) / bs);
    if (n == 0 && pairs.empty()) break;
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = std::min(n, bi * bs);
      const std::size_t hi = std::min(n, lo + bs);
      const std::size_t rlo = pairs.size() * bi / batches;
      const std::size_t rhi = pairs.size() * (bi + 1) / batches;
      std::fill(grad_p.begin(), grad_p.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);

      std::vector<ForwardTrace> tb;
      std::vector<ForwardTrace> tp;
      Matrix z(hi - lo, config_.backbone_dim);
      std::vector<Label> batch_labels;
      std::vector<std::size_t> batch_targets;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t s = order[i];
        if (joint) {
          tb.push_back(backbone_.forward_trace(inputs[s]));
          tp.push_back(projector_.forward_trace(tb.back().output()));
        } else {
          tp.push_back(projector_.forward_trace(inputs[s]));
        }
        std::copy(tp.back().output().begin(), tp.back().output().end(), z.row(i - lo).begin());
        batch_labels.push_back(labels[s]);
        if (!cio) batch_targets.push_back(targets[s]);
      }
      std::vector<ForwardTrace> tr;
      Matrix rz(rhi - rlo, config_.backbone_dim);
      std::vector<Label> replay_labels;
      for (std::size_t r = rlo; r < rhi; ++r) {
        tr.push_back(projector_.forward_trace(pairs[r].rep));
        std::copy(tr.back().output().begin(), tr.back().output().end(), rz.row(r - rlo).begin());
        replay_labels.push_back(pairs[r].label);
      }

      Matrix gz;
      Matrix grz;
      if (cio) {
        auto res = incremental_loss(z, batch_labels, rz, replay_labels, orthogonal_,
                                    config_.normalize_z);
        epoch_loss += res.loss;
        gz = std::move(res.grad_z);
        grz = std::move(res.grad_replay_z);
      } else {
        auto res = linear_cross_entropy(z, batch_targets, head_->w, head_->b);
        epoch_loss += res.loss;
        gz = std::move(res.grad_z);
        adam_step(head_->w.data(), res.grad_w.data(), adam_w);
        adam_step(head_->b, res.grad_b, adam_hb);
      }
      for (std::size_t i = 0; i < tp.size(); ++i) {
        const Vector gf = projector_.backward(tp[i], gz.row(i), grad_p);
        if (joint) backbone_.backward(tb[i], gf, grad_b);
      }
      for (std::size_t r = 0; r < tr.size(); ++r) projector_.backward(tr[r], grz.row(r), grad_p);
      if (!all_finite(grad_p) || !all_finite(grad_b)) {
        throw TrainingDiverged("projector training: non-finite gradient at epoch " +
                               std::to_string(e));
      }
      adam_step(projector_, grad_p, adam_p);
      if (joint) adam_step(backbone_, grad_b, adam_b);
    }
    if (final_loss) *final_loss = epoch_loss / static_cast<double>(batches);
  }
}

InitialOutcome Engine::run_initial_stage(std::span<const Vector> x, std::span<const Label> y) {
  if (trained_) throw Error("run_initial_stage: engine already trained");
  if (x.empty()) throw DegenerateInput("run_initial_stage: empty labeled batch");
  require_same_dim(x.size(), y.size(), "run_initial_stage(labels)");
  const std::size_t in_dim = x.front().size();
  for (const auto& r : x) require_same_dim(r.size(), in_dim, "run_initial_stage(inputs)");

  const std::set<Label> distinct(y.begin(), y.end());
  known_labels_.assign(distinct.begin(), distinct.end());
  const std::size_t d = config_.backbone_dim;
  if (known_labels_.size() < 2) throw DegenerateInput("run_initial_stage: need at least 2 classes");
  if (config_.ablation.cio && known_labels_.size() > d) {
    throw CapacityError("run_initial_stage: " + std::to_string(known_labels_.size()) +
                        " classes exceed the " + std::to_string(d) + " orthogonal prototypes");
  }
  next_label_ = known_labels_.back() + 1;

  InitialOutcome out;
  out.known_classes = known_labels_.size();
  backbone_ = FeedForwardNet::mlp(in_dim, config_.backbone_hidden, d, rng_);
  projector_ = FeedForwardNet::mlp(d, {config_.projector_hidden}, d, rng_);

  auto class_means = [&](const std::vector<Vector>& reps) {
    RepsByClass by;
    for (std::size_t i = 0; i < reps.size(); ++i) by[y[i]].push_back(reps[i]);
    std::vector<Vector> means;
    for (Label l : known_labels_) means.push_back(mean_of(by[l]));
    return std::pair{by, means};
  };
  auto represent_all = [&] {
    std::vector<Vector> f;
    f.reserve(x.size());
    for (const auto& r : x) f.push_back(backbone_.forward(r));
    return f;
  };
  auto setup_classifier = [&](const std::vector<Vector>& means) {
    if (config_.ablation.cio) {
      orthogonal_ = OrthogonalBank::random(d, config_.tau, rng_);
      orthogonal_.optimize(config_.orthogonal);
      out.orthogonality = max_abs_offdiag_cosine(orthogonal_.vectors());
      for (std::size_t c = 0; c < known_labels_.size(); ++c) {
        orthogonal_.assign(known_labels_[c], means[c]);
      }
    } else {
      head_.emplace();
      head_->labels = known_labels_;
      head_->w = Matrix(known_labels_.size(), d);
      const double bound = 1.0 / std::sqrt(static_cast<double>(d));
      for (double& v : head_->w.data()) v = rng_.uniform(-bound, bound);
      head_->b.assign(known_labels_.size(), 0.0);
    }
  };

  if (config_.ablation.ied) {
    prototypes_ = PrototypeBank::random(known_labels_, d, rng_);
    AdamState adam_b = AdamState::for_size(backbone_.param_count(), config_.lr_backbone,
                                           config_.weight_decay);
    AdamState adam_p = AdamState::for_size(prototypes_.vectors().data().size(),
                                           config_.lr_backbone, config_.weight_decay);
    Vector grad_b(backbone_.param_count());
    Vector grad_p(prototypes_.vectors().data().size());
    const std::size_t bs = config_.batch_size;
    for (std::size_t e = 0; e < config_.epochs_backbone; ++e) {
      const auto order = rng_.permutation(x.size());
      double epoch_loss = 0.0;
      std::size_t batches = 0;
      for (std::size_t lo = 0; lo < x.size(); lo += bs) {
        const std::size_t hi = std::min(x.size(), lo + bs);
        const double inv = 1.0 / static_cast<double>(hi - lo);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        std::fill(grad_p.begin(), grad_p.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
          const std::size_t s = order[i];
          auto trace = backbone_.forward_trace(x[s]);
          auto res = contrastive_loss(trace.output(), y[s], prototypes_, config_.contrastive);
          loss += inv * res.loss;
          for (double& g : res.grad_f) g *= inv;
          backbone_.backward(trace, res.grad_f, grad_b);
          axpy(inv, res.grad_prototypes.data(), grad_p);
        }
        if (!std::isfinite(loss) || !all_finite(grad_b)) {
          throw TrainingDiverged("backbone training: non-finite loss at epoch " + std::to_string(e));
        }
        adam_step(backbone_, grad_b, adam_b);
        adam_step(prototypes_.mutable_vectors().data(), grad_p, adam_p);
        epoch_loss += loss;
        ++batches;
      }
      out.final_contrastive_loss = epoch_loss / static_cast<double>(batches);
    }
    backbone_.freeze();
    const auto f = represent_all();
    const auto [by_class, means] = class_means(f);
    static_pool_ = build_static_pool(by_class, config_.pool_capacity);
    setup_classifier(means);
    std::vector<Label> labels(y.begin(), y.end());
    train_projector(f, labels, config_.epochs_projector, false, &out.final_projector_loss);
  } else {
    // Backbone and projector learn jointly from the classification loss;
    // the known-class prototypes are the class means afterwards.
    {
      const auto [by_class, means] = class_means(represent_all());
      setup_classifier(means);
    }
    std::vector<Label> labels(y.begin(), y.end());
    train_projector(x, labels, config_.epochs_projector, false, &out.final_projector_loss);
    backbone_.freeze();
    const auto f = represent_all();
    const auto [by_class, means] = class_means(f);
    Matrix pm(0, d);
    for (const auto& m : means) pm.append_row(m);
    prototypes_ = PrototypeBank(known_labels_, std::move(pm), false);
    static_pool_ = build_static_pool(by_class, config_.pool_capacity);
  }

  if (config_.ablation.jdn) {
    const auto f = represent_all();
    std::vector<Vector> means;
    {
      RepsByClass by;
      for (std::size_t i = 0; i < f.size(); ++i) by[y[i]].push_back(f[i]);
      for (const auto& [l, reps] : by) means.push_back(mean_of(reps));
    }
    const auto grid = default_lambda_grid(means, config_.lambda_grid_points);
    const auto cal =
        calibrate_merge_threshold(f, known_labels_.size(), grid, config_.discovery, rng_);
    lambda_ = cal.lambda;
    out.lambda = cal.lambda;
    out.calibration_clusters = cal.coarse_count;
  }
  dynamic_pool_ = DynamicPool(d);
  trained_ = true;
  return out;
}

// Maps this stage's clusters onto the novel classes found so far (optimal
// overlap matching on previously labeled pool entries), creates classes for
// unmatched clusters and returns one label per pool entry (-1 = unlabeled).
// Entries keep the label they received in an earlier stage.
std::vector<Label> Engine::pool_training_labels(const DiscoveryResult& found,
                                                IncrementalOutcome& out) {
  const std::size_t k = found.cluster_count;
  std::vector<std::optional<Label>> cluster_label(k);
  if (k > 0 && !novel_labels_.empty()) {
    std::vector<std::vector<long long>> overlap(k, std::vector<long long>(novel_labels_.size(), 0));
    for (std::size_t i = 0; i < found.pseudo_labels.size(); ++i) {
      if (!found.pseudo_labels[i] || !pool_labels_[i]) continue;
      const auto it = std::find(novel_labels_.begin(), novel_labels_.end(), *pool_labels_[i]);
      ++overlap[static_cast<std::size_t>(*found.pseudo_labels[i])]
               [static_cast<std::size_t>(it - novel_labels_.begin())];
    }
    const auto match = hungarian_match(overlap);
    for (std::size_t c = 0; c < k; ++c) {
      const int col = match.row_to_col[c];
      if (col >= 0 && overlap[c][static_cast<std::size_t>(col)] > 0) {
        cluster_label[c] = novel_labels_[static_cast<std::size_t>(col)];
      }
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (!cluster_label[c]) {
      cluster_label[c] = new_class(found.class_means[c]);
      ++out.new_classes;
    }
  }
  std::vector<Label> labels(pool_labels_.size(), -1);
  for (std::size_t i = 0; i < pool_labels_.size(); ++i) {
    if (!pool_labels_[i] && found.pseudo_labels[i]) {
      pool_labels_[i] = cluster_label[static_cast<std::size_t>(*found.pseudo_labels[i])];
    }
    if (pool_labels_[i]) labels[i] = *pool_labels_[i];
  }
  return labels;
}

IncrementalOutcome Engine::run_incremental_stage(std::span<const Vector> x, int stage) {
  if (!trained_) throw Error("run_incremental_stage: initial stage has not run");
  if (stage < 1) throw Error("run_incremental_stage: stage index must be at least 1");
  if (x.empty()) throw DegenerateInput("run_incremental_stage: empty unlabeled batch");
  IncrementalOutcome out;
  out.stage = stage;
  out.batch_size = x.size();

  std::vector<Vector> f;
  f.reserve(x.size());
  for (const auto& r : x) f.push_back(backbone_.forward(r));

  const SplitOutcome split = split_batch(f, prototypes_, config_.split, rng_);
  out.parametric_split = split.parametric;
  out.split_known = split.result.known.size();
  out.split_novel = split.result.novel.size();

  std::vector<Vector> train_reps;
  std::vector<Label> train_labels;
  for (std::size_t j = 0; j < split.result.known.size(); ++j) {
    train_reps.push_back(f[split.result.known[j]]);
    train_labels.push_back(split.result.known_labels[j]);
  }
  std::vector<Vector> novel;
  for (std::size_t i : split.result.novel) novel.push_back(f[i]);

  if (config_.ablation.jdn) {
    dynamic_pool_ = update_dynamic_pool(std::move(dynamic_pool_), novel, stage);
    pool_labels_.resize(dynamic_pool_.size());
    const DiscoveryResult found =
        joint_discover(dynamic_pool_.entries(), lambda_, config_.discovery, rng_);
    out.cluster_count = found.cluster_count;
    out.ap_count = found.ap_count;
    out.ap_warning = found.ap_warning;
    const auto labels = pool_training_labels(found, out);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0) continue;
      train_reps.push_back(dynamic_pool_.entries()[i]);
      train_labels.push_back(labels[i]);
    }
  } else {
    // Current novel samples only; every cluster is a new class.
    const DiscoveryResult found = coarse_only_discover(novel, config_.discovery, rng_);
    out.ap_count = found.ap_count;
    out.ap_warning = found.ap_warning;
    std::vector<Label> cluster_label;
    for (const auto& mean : found.class_means) cluster_label.push_back(new_class(mean));
    out.new_classes = cluster_label.size();
    for (std::size_t i = 0; i < novel.size(); ++i) {
      if (!found.pseudo_labels[i]) continue;
      train_reps.push_back(novel[i]);
      train_labels.push_back(cluster_label[static_cast<std::size_t>(*found.pseudo_labels[i])]);
    }
    out.cluster_count = novel_labels_.size();
  }
  out.discovered_total = novel_labels_.size();
  out.training_samples = train_reps.size();
  train_projector(train_reps, train_labels, config_.epochs_incremental, config_.ablation.cio,
                  &out.final_loss);
  return out;
}

Label Engine::predict(std::span<const double> x) const {
  if (!trained_) throw Error("predict: engine is not trained");
  const Vector z = projector_.forward(backbone_.forward(x));
  if (config_.ablation.cio) return orthogonal_.classify(z);
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < head_->labels.size(); ++k) {
    const double v = dot(head_->w.row(k), z) + head_->b[k];
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return head_->labels[best];
}

std::vector<Label> Engine::predict(std::span<const Vector> x) const {
  std::vector<Label> out;
  out.reserve(x.size());
  for (const auto& r : x) out.push_back(predict(r));
  return out;
}

}  // namespace ccd
