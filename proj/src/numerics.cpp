#include "ccd/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace ccd {

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && data_.empty()) {
    cols_ = values.size();
  } else if (values.size() != cols_) {
    throw DimensionMismatch("Matrix::append_row: expected " + std::to_string(cols_) +
                            " columns, got " + std::to_string(values.size()));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(a) + " vs " +
                            std::to_string(b));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "cosine_similarity");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInput("cosine_similarity: zero-norm input");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Vector cosine_gradient(std::span<const double> a, std::span<const double> b, double s) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInput("cosine_gradient: zero-norm input");
  }
  Vector g(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    g[i] = b[i] / (na * nb) - s * a[i] / (na * na);
  }
  return g;
}

Vector normalized(std::span<const double> a) {
  const double n = norm(a);
  if (n == 0.0) throw DegenerateInput("normalized: zero-norm input");
  Vector out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_dim(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vector mean_of(std::span<const Vector> rows) {
  if (rows.empty()) throw DegenerateInput("mean_of: no rows");
  Vector m(rows.front().size(), 0.0);
  for (const auto& r : rows) axpy(1.0, r, m);
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

double Rng::uniform() {
  // 53 high bits -> [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw DegenerateInput("Rng::uniform_index: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  shuffle(p);
  return p;
}

AdamState AdamState::for_size(std::size_t n, double learning_rate, double weight_decay) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  return s;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  require_same_dim(params.size(), grads.size(), "adam_step(grads)");
  require_same_dim(params.size(), state.first_moment.size(), "adam_step(first moment)");
  require_same_dim(params.size(), state.second_moment.size(), "adam_step(second moment)");

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    if (state.weight_decay != 0.0) {
      params[i] -= state.learning_rate * state.weight_decay * params[i];
    }
    params[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
}

Vector finite_diff_grad(const LossFn& loss, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw DegenerateInput("finite_diff_grad: step must be positive");
  Vector x(params.begin(), params.end());
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss(x);
    x[i] = orig - h;
    const double down = loss(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor) {
  require_same_dim(analytic.size(), numeric.size(), "max_relative_error");
  double scale = floor;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace ccd
