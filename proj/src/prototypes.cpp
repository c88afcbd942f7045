#include "ccd/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SVD>

namespace ccd {
namespace {

double softplus(double t) { return t > 30.0 ? t : std::log1p(std::exp(t)); }
double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

void normalize_rows(Matrix& m) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double n = norm(row);
    if (n == 0.0) throw DegenerateInput("normalize_rows: zero row");
    for (double& v : row) v /= n;
  }
}

Matrix gaussian_unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  Matrix m(rows, dim);
  for (double& v : m.data()) v = rng.normal();
  normalize_rows(m);
  return m;
}

// Nearest orthonormal frame to the rows of g (U V^T of its SVD).
Matrix polar_factor(const Matrix& g) {
  Eigen::MatrixXd a(g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) a(r, c) = g(r, c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::MatrixXd q = svd.matrixU() * svd.matrixV().transpose();
  Matrix out(g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    for (std::size_t c = 0; c < g.cols(); ++c) out(r, c) = q(r, c);
  }
  return out;
}

}  // namespace

PrototypeBank::PrototypeBank(std::vector<Label> labels, Matrix vectors, bool learnable)
    : labels_(std::move(labels)), vectors_(std::move(vectors)), learnable_(learnable) {
  if (labels_.size() != vectors_.rows()) {
    throw DimensionMismatch("PrototypeBank: label count does not match prototype count");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!index_.emplace(labels_[i], i).second) {
      throw Error("PrototypeBank: duplicate label " + std::to_string(labels_[i]));
    }
  }
}

PrototypeBank PrototypeBank::random(const std::vector<Label>& labels, std::size_t dim, Rng& rng) {
  return PrototypeBank(labels, gaussian_unit_rows(labels.size(), dim, rng), true);
}

std::size_t PrototypeBank::index_of(Label label) const {
  auto it = index_.find(label);
  if (it == index_.end()) throw UnknownLabel("no prototype for label " + std::to_string(label));
  return it->second;
}

PrototypeBank::Nearest PrototypeBank::nearest(std::span<const double> f) const {
  if (labels_.empty()) throw DegenerateInput("PrototypeBank::nearest: empty bank");
  Nearest best{labels_[0], -std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const double s = cosine_similarity(f, vectors_.row(i));
    if (s > best.similarity) best = {labels_[i], s};
  }
  return best;
}

ContrastiveResult contrastive_loss(std::span<const double> f, Label label,
                                   const PrototypeBank& bank, const ContrastiveHyper& hyper) {
  if (!(hyper.alpha > 0.0)) throw Error("contrastive_loss: alpha must be positive");
  const std::size_t pos = bank.index_of(label);
  require_same_dim(f.size(), bank.dim(), "contrastive_loss");
  if (norm(f) == 0.0) throw DegenerateInput("contrastive_loss: zero-norm representation");

  ContrastiveResult out;
  out.grad_f.assign(f.size(), 0.0);
  out.grad_prototypes = Matrix(bank.size(), bank.dim());
  const double a = hyper.alpha;
  const std::size_t negatives = bank.size() - 1;

  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto p = bank.prototype(i);
    const double s = cosine_similarity(f, p);
    // Term value t and dL/ds for this prototype.
    double t;
    double dt_ds;
    double weight;
    if (i == pos) {
      t = -a * (s - hyper.sigma);
      dt_ds = -a;
      weight = 1.0;
    } else {
      t = a * (s + hyper.sigma);
      dt_ds = a;
      weight = 1.0 / static_cast<double>(negatives);
    }
    double dl_ds = weight * dt_ds;
    if (hyper.softplus) {
      out.loss += weight * softplus(t);
      dl_ds *= sigmoid(t);
    } else {
      out.loss += weight * t;
    }
    axpy(dl_ds, cosine_gradient(f, p, s), out.grad_f);
    axpy(dl_ds, cosine_gradient(p, f, s), out.grad_prototypes.row(i));
  }
  return out;
}

OrthogonalityResult orthogonality_loss(const Matrix& g, double tau, bool include_self) {
  const std::size_t n = g.rows();
  if (n == 0) throw DegenerateInput("orthogonality_loss: empty prototype set");
  if (!(tau > 0.0)) throw Error("orthogonality_loss: tau must be positive");
  if (!include_self && n < 2) {
    throw DegenerateInput("orthogonality_loss: excluding self terms needs two prototypes");
  }

  OrthogonalityResult out;
  out.grad = Matrix(n, g.cols());
  Matrix weights(n, n);  // row-wise softmax of g_i . g_j / tau
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!include_self && i == j) continue;
      weights(i, j) = dot(g.row(i), g.row(j)) / tau;
      mx = std::max(mx, weights(i, j));
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!include_self && i == j) {
        weights(i, j) = 0.0;
        continue;
      }
      weights(i, j) = std::exp(weights(i, j) - mx);
      z += weights(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) weights(i, j) /= z;
    out.loss += mx + std::log(z);
  }
  out.loss /= static_cast<double>(n);

  const double scale = 1.0 / (static_cast<double>(n) * tau);
  for (std::size_t k = 0; k < n; ++k) {
    auto grad_k = out.grad.row(k);
    for (std::size_t j = 0; j < n; ++j) {
      const double w = weights(k, j) + weights(j, k);
      if (w != 0.0) axpy(scale * w, g.row(j), grad_k);
    }
  }
  return out;
}

OrthogonalBank::OrthogonalBank(Matrix vectors, double tau)
    : g_(std::move(vectors)), tau_(tau), owner_(g_.rows()) {
  if (!(tau > 0.0)) throw Error("OrthogonalBank: tau must be positive");
  normalize_rows(g_);
}

OrthogonalBank OrthogonalBank::random(std::size_t dim, double tau, Rng& rng) {
  if (dim == 0) throw DegenerateInput("OrthogonalBank: dimension must be positive");
  return OrthogonalBank(gaussian_unit_rows(dim, dim, rng), tau);
}

void OrthogonalBank::optimize(const OrthogonalOptions& options) {
  if (!index_.empty()) {
    throw Error("OrthogonalBank::optimize: prototypes are immutable once assigned");
  }
  if (size() == 0) throw DegenerateInput("OrthogonalBank::optimize: empty bank");
  AdamState adam = AdamState::for_size(g_.data().size(), options.learning_rate);
  for (std::size_t step = 0; step < options.steps; ++step) {
    const auto res = orthogonality_loss(g_, tau_, options.include_self);
    adam_step(g_.data(), res.grad.data(), adam);
    normalize_rows(g_);
  }
  if (options.orthonormal_polish && size() <= dim()) {
    g_ = polar_factor(g_);
    normalize_rows(g_);
  }
}

std::size_t OrthogonalBank::assign(Label label, std::span<const double> class_mean) {
  if (index_.contains(label)) {
    throw Error("OrthogonalBank::assign: label " + std::to_string(label) + " already assigned");
  }
  std::optional<std::size_t> best;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < size(); ++i) {
    if (owner_[i]) continue;
    const double s = cosine_similarity(class_mean, g_.row(i));
    if (!best || s > best_sim) {
      best = i;
      best_sim = s;
    }
  }
  if (!best) {
    throw CapacityError("orthogonal bank exhausted: all " + std::to_string(size()) +
                        " prototypes are assigned");
  }
  owner_[*best] = label;
  index_.emplace(label, *best);
  return *best;
}

std::size_t OrthogonalBank::index_of(Label label) const {
  auto it = index_.find(label);
  if (it == index_.end()) {
    throw UnknownLabel("no orthogonal prototype assigned to label " + std::to_string(label));
  }
  return it->second;
}

Label OrthogonalBank::classify(std::span<const double> z) const {
  if (index_.empty()) throw Error("OrthogonalBank::classify: no assigned prototypes");
  std::optional<Label> best;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < size(); ++i) {
    if (!owner_[i]) continue;
    const double s = cosine_similarity(z, g_.row(i));
    if (!best || s > best_sim) {
      best = owner_[i];
      best_sim = s;
    }
  }
  return *best;
}

double max_abs_offdiag_cosine(const Matrix& g) {
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = i + 1; j < g.rows(); ++j) {
      worst = std::max(worst, std::abs(cosine_similarity(g.row(i), g.row(j))));
    }
  }
  return worst;
}

PrototypeCeResult prototype_cross_entropy(const Matrix& z, std::span<const Label> labels,
                                          const OrthogonalBank& bank, bool normalize) {
  require_same_dim(z.rows(), labels.size(), "prototype_cross_entropy(labels)");
  PrototypeCeResult out;
  out.grad_z = Matrix(z.rows(), z.cols());
  if (z.rows() == 0) return out;
  require_same_dim(z.cols(), bank.dim(), "prototype_cross_entropy(z)");
  if (bank.assigned_count() == 0) throw Error("prototype_cross_entropy: no assigned prototypes");

  std::vector<std::size_t> active;  // assigned prototype indices, ascending
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (bank.owner(i)) active.push_back(i);
  }
  const double inv_n = 1.0 / static_cast<double>(z.rows());
  Vector logits(active.size());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const std::size_t target = bank.index_of(labels[r]);
    const auto zr = z.row(r);
    const double zn = norm(zr);
    if (normalize && zn == 0.0) throw DegenerateInput("prototype_cross_entropy: zero-norm z");
    Vector u(zr.begin(), zr.end());
    if (normalize) {
      for (double& v : u) v /= zn;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < active.size(); ++k) {
      logits[k] = dot(u, bank.prototype(active[k]));
      mx = std::max(mx, logits[k]);
    }
    double sum = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      sum += l;
    }
    Vector grad_u(u.size(), 0.0);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const double p = logits[k] / sum;
      const bool is_target = active[k] == target;
      if (is_target) out.loss -= inv_n * std::log(p);
      axpy(inv_n * (p - (is_target ? 1.0 : 0.0)), bank.prototype(active[k]), grad_u);
    }
    auto gz = out.grad_z.row(r);
    if (normalize) {
      const double proj = dot(u, grad_u);
      for (std::size_t c = 0; c < u.size(); ++c) gz[c] = (grad_u[c] - proj * u[c]) / zn;
    } else {
      std::copy(grad_u.begin(), grad_u.end(), gz.begin());
    }
  }
  return out;
}

}  // namespace ccd
