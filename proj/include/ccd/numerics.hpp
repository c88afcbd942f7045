#pragma once

// Dense vector/matrix helpers, seeded randomness, Adam and a central
// difference gradient checker. Everything is double precision.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ccd/errors.hpp"

namespace ccd {

using Vector = std::vector<double>;
using Label = int;

// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Appends a row; the first row fixes the column count of an empty matrix.
  void append_row(std::span<const double> values);

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

// a·b / (|a||b|). Throws DegenerateInput on a zero-norm argument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Gradient of cosine_similarity(a, b) with respect to a, given s = s(a, b).
Vector cosine_gradient(std::span<const double> a, std::span<const double> b, double s);

Vector normalized(std::span<const double> a);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
Vector mean_of(std::span<const Vector> rows);
bool all_finite(std::span<const double> a);
void require_same_dim(std::size_t a, std::size_t b, const char* what);

// Deterministic generator. Only the raw 64-bit engine output is taken from
// the standard library; every distribution is computed here so streams are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n);

  // Independent child generator derived from this one's stream.
  Rng fork() { return Rng(next_u64()); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct AdamState {
  Vector first_moment;
  Vector second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Decoupled (AdamW-style) decay; 0 gives plain Adam.
  double weight_decay = 0.0;

  static AdamState for_size(std::size_t n, double learning_rate, double weight_decay = 0.0);
};

// One bias-corrected Adam update in place. Throws DimensionMismatch when the
// gradient or the moments do not match the parameters.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

using LossFn = std::function<double(std::span<const double>)>;

// Central differences (L(x + h e_i) - L(x - h e_i)) / 2h.
Vector finite_diff_grad(const LossFn& loss, std::span<const double> params, double h = 1e-5);

// max_i |a_i - n_i| / max(max_j |n_j|, floor): componentwise error relative
// to the gradient's scale. Used by the gradient checks.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-8);

}  // namespace ccd
