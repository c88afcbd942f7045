#pragma once

// Representation pools. The static pool keeps, per known class, the m
// backbone representations closest to the class mean and is replayed while
// the projector learns new classes. The dynamic pool accumulates every
// representation flagged novel so discovery always runs over all stages at
// once.

#include <iosfwd>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "ccd/numerics.hpp"

namespace ccd {

using RepsByClass = std::map<Label, std::vector<Vector>>;

class StaticPool {
 public:
  StaticPool() = default;
  StaticPool(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  const std::map<Label, std::vector<Vector>>& entries() const { return entries_; }
  std::size_t entry_count() const;
  bool empty() const { return entries_.empty(); }
  std::size_t byte_size() const { return entry_count() * dim_ * sizeof(double); }

  // Writes the representatives of one class. Throws if the class is already
  // present (entries are immutable once written).
  void set_class(Label label, std::vector<Vector> reps);

  // "CCDP" | u32 version | u32 capacity | u32 dim | u32 classes |
  // per class { i32 label, u32 count, f64 values } (little-endian)
  void save(std::ostream& out) const;
  static StaticPool load(std::istream& in);

  bool operator==(const StaticPool&) const = default;

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::map<Label, std::vector<Vector>> entries_;
};

// Per class, the m representations with the smallest Euclidean distance to
// the class mean (all of them when the class has fewer than m); ties keep the
// earlier representation.
StaticPool build_static_pool(const RepsByClass& reps_by_class, std::size_t m);

// Indices of the k members of `reps` nearest to `center`, ordered by
// distance (stable on ties).
std::vector<std::size_t> nearest_indices(std::span<const Vector> reps,
                                         std::span<const double> center, std::size_t k);

class DynamicPool {
 public:
  DynamicPool() = default;
  explicit DynamicPool(std::size_t dim) : dim_(dim) {}

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<Vector>& entries() const { return entries_; }
  const std::vector<int>& stage_tags() const { return stage_tags_; }
  std::size_t byte_size() const { return entries_.size() * dim_ * sizeof(double); }

  void save(std::ostream& out) const;
  static DynamicPool load(std::istream& in);

  bool operator==(const DynamicPool&) const = default;

 private:
  friend DynamicPool update_dynamic_pool(DynamicPool pool, std::span<const Vector> novel_reps,
                                         int stage);
  std::size_t dim_ = 0;
  std::vector<Vector> entries_;
  std::vector<int> stage_tags_;
};

// Multiset union: appends `novel_reps` tagged with `stage`. An empty pool
// without a dimension adopts the dimension of the first batch.
DynamicPool update_dynamic_pool(DynamicPool pool, std::span<const Vector> novel_reps, int stage);

struct ReplayPair {
  Vector rep;
  Label label;
};

// Every stored pair exactly once, in an order shuffled by `rng`.
std::vector<ReplayPair> replay_batch(const StaticPool& pool, Rng& rng);

}  // namespace ccd
