#include "ccd/pools.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>

#include "ccd/binary_io.hpp"

namespace ccd {
namespace {

constexpr char kStaticMagic[4] = {'C', 'C', 'D', 'P'};
constexpr char kDynamicMagic[4] = {'C', 'C', 'D', 'Q'};
constexpr std::uint32_t kPoolVersion = 1;

void write_vector(BinaryWriter& w, std::span<const double> v) {
  for (double x : v) w.f64(x);
}

Vector read_vector(BinaryReader& r, std::size_t dim) {
  Vector v(dim);
  for (double& x : v) x = r.f64();
  return v;
}

}  // namespace

std::size_t StaticPool::entry_count() const {
  std::size_t n = 0;
  for (const auto& [label, reps] : entries_) n += reps.size();
  return n;
}

void StaticPool::set_class(Label label, std::vector<Vector> reps) {
  if (entries_.contains(label)) {
    throw Error("StaticPool: class " + std::to_string(label) + " is already stored");
  }
  if (reps.size() > capacity_) throw CapacityError("StaticPool: more entries than capacity");
  for (const auto& r : reps) require_same_dim(r.size(), dim_, "StaticPool::set_class");
  entries_.emplace(label, std::move(reps));
}

void StaticPool::save(std::ostream& out) const {
  BinaryWriter w(out);
  w.bytes(kStaticMagic, 4);
  w.u32(kPoolVersion);
  w.u32(static_cast<std::uint32_t>(capacity_));
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [label, reps] : entries_) {
    w.i32(label);
    w.u32(static_cast<std::uint32_t>(reps.size()));
    for (const auto& r : reps) write_vector(w, r);
  }
}

StaticPool StaticPool::load(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kStaticMagic);
  if (r.u32() != kPoolVersion) throw FormatError("static pool: unsupported version");
  const std::size_t capacity = r.u32();
  const std::size_t dim = r.u32();
  const std::size_t classes = r.u32();
  StaticPool pool(capacity, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    const Label label = r.i32();
    const std::size_t count = r.u32();
    std::vector<Vector> reps;
    for (std::size_t i = 0; i < count; ++i) reps.push_back(read_vector(r, dim));
    pool.set_class(label, std::move(reps));
  }
  return pool;
}

std::vector<std::size_t> nearest_indices(std::span<const Vector> reps,
                                         std::span<const double> center, std::size_t k) {
  std::vector<double> dist(reps.size());
  for (std::size_t i = 0; i < reps.size(); ++i) dist[i] = squared_distance(reps[i], center);
  std::vector<std::size_t> order(reps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

StaticPool build_static_pool(const RepsByClass& reps_by_class, std::size_t m) {
  if (reps_by_class.empty()) throw DegenerateInput("build_static_pool: no classes");
  if (m == 0) throw Error("build_static_pool: capacity must be positive");
  const std::size_t dim = reps_by_class.begin()->second.empty()
                              ? 0
                              : reps_by_class.begin()->second.front().size();
  StaticPool pool(m, dim);
  for (const auto& [label, reps] : reps_by_class) {
    if (reps.empty()) {
      throw DegenerateInput("build_static_pool: class " + std::to_string(label) + " is empty");
    }
    const Vector mean = mean_of(reps);
    std::vector<Vector> kept;
    for (std::size_t i : nearest_indices(reps, mean, m)) kept.push_back(reps[i]);
    pool.set_class(label, std::move(kept));
  }
  return pool;
}

DynamicPool update_dynamic_pool(DynamicPool pool, std::span<const Vector> novel_reps, int stage) {
  for (const auto& r : novel_reps) {
    if (pool.dim_ == 0) pool.dim_ = r.size();
    require_same_dim(r.size(), pool.dim_, "update_dynamic_pool");
  }
  for (const auto& r : novel_reps) {
    pool.entries_.push_back(r);
    pool.stage_tags_.push_back(stage);
  }
  return pool;
}

void DynamicPool::save(std::ostream& out) const {
  BinaryWriter w(out);
  w.bytes(kDynamicMagic, 4);
  w.u32(kPoolVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    w.i32(stage_tags_[i]);
    write_vector(w, entries_[i]);
  }
}

DynamicPool DynamicPool::load(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kDynamicMagic);
  if (r.u32() != kPoolVersion) throw FormatError("dynamic pool: unsupported version");
  DynamicPool pool(r.u32());
  const std::size_t count = r.u32();
  for (std::size_t i = 0; i < count; ++i) {
    pool.stage_tags_.push_back(r.i32());
    pool.entries_.push_back(read_vector(r, pool.dim_));
  }
  return pool;
}

std::vector<ReplayPair> replay_batch(const StaticPool& pool, Rng& rng) {
  if (pool.empty()) throw DegenerateInput("replay_batch: static pool is empty");
  std::vector<ReplayPair> out;
  out.reserve(pool.entry_count());
  for (const auto& [label, reps] : pool.entries()) {
    for (const auto& r : reps) out.push_back({r, label});
  }
  rng.shuffle(out);
  return out;
}

}  // namespace ccd
