#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccd/splitter.hpp"
#include "doctest.h"

using namespace ccd;

namespace {

PrototypeBank axis_bank() {
  Matrix m(0, 3);
  m.append_row(Vector{1, 0, 0});
  m.append_row(Vector{0, 1, 0});
  return PrototypeBank({0, 1}, m, true);
}

// Unit vector at cosine `c` to e1, rotated into the third axis.
Vector at_cosine(double c) { return {c, 0.0, std::sqrt(1.0 - c * c)}; }

}  // namespace

TEST_CASE("non-parametric split boundary rules") {
  const auto bank = axis_bank();
  const std::vector<Vector> batch{{1, 0, 0}, {0, 0, 1}, {0, 2, 0}};
  const auto r = nonparametric_split(batch, bank, 0.0);
  CHECK(r.known == std::vector<std::size_t>{0, 2});
  CHECK(r.known_labels == std::vector<Label>{0, 1});
  CHECK(r.novel == std::vector<std::size_t>{1});  // cos 0 is not > 0
  CHECK_THROWS_AS(nonparametric_split(std::vector<Vector>{}, bank, 0.0), DegenerateInput);
}

TEST_CASE("reliable selection keeps both tails") {
  const auto bank = axis_bank();
  const std::vector<Vector> batch{at_cosine(0.25), at_cosine(0.4), at_cosine(0.75),
                                  at_cosine(0.1),  at_cosine(0.9), at_cosine(0.5)};
  const auto rel = select_reliable(batch, bank, 0.5, 0.2);
  CHECK(rel.indices == std::vector<std::size_t>{0, 2, 3, 4});
  CHECK(rel.is_known == std::vector<bool>{false, true, false, true});
  CHECK_THROWS_AS(select_reliable(std::vector<Vector>{at_cosine(0.1), at_cosine(0.9)}, bank, 0.5, 0.2),
                  InsufficientData);
  CHECK_THROWS_AS(select_reliable(batch, bank, 0.5, 0.0), Error);
}

TEST_CASE("reliable labels agree with the preliminary split and shrink with delta") {
  Rng rng(2);
  const auto bank = axis_bank();
  std::vector<Vector> batch;
  for (int i = 0; i < 200; ++i) batch.push_back(at_cosine(rng.uniform(-0.99, 0.99)));
  const auto pre = nonparametric_split(batch, bank, 0.5);
  std::vector<bool> known(batch.size(), false);
  for (std::size_t i : pre.known) known[i] = true;
  std::vector<std::size_t> prev;
  for (double delta : {0.4, 0.2, 0.1, 0.01}) {
    const auto rel = select_reliable(batch, bank, 0.5, delta);
    for (std::size_t j = 0; j < rel.indices.size(); ++j) {
      CHECK(rel.is_known[j] == known[rel.indices[j]]);
    }
    CHECK(std::includes(rel.indices.begin(), rel.indices.end(), prev.begin(), prev.end()));
    prev = rel.indices;
  }
}

TEST_CASE("parametric split reproduces separable reliable samples") {
  Rng rng(4);
  const auto bank = axis_bank();
  std::vector<Vector> batch;
  for (int i = 0; i < 20; ++i) batch.push_back(at_cosine(rng.uniform(0.9, 1.0)));
  for (int i = 0; i < 20; ++i) batch.push_back(at_cosine(rng.uniform(-0.5, 0.2)));
  const auto rel = select_reliable(batch, bank, 0.55, 0.3);
  REQUIRE(rel.indices.size() == batch.size());
  const auto r = parametric_split(batch, rel, bank, {}, rng);
  std::vector<std::size_t> expect_known(20);
  std::iota(expect_known.begin(), expect_known.end(), 0);
  CHECK(r.known == expect_known);
  CHECK(r.novel.size() == 20);
  CHECK(std::all_of(r.reliable_mask.begin(), r.reliable_mask.end(), [](bool b) { return b; }));
}

TEST_CASE("parametric split on a synthetic mixture is at least as good as the threshold") {
  // Known samples cluster around the two prototypes, novel ones around a
  // third direction; the threshold alone sits too high for some known ones.
  Rng rng(6);
  const auto bank = axis_bank();
  std::vector<Vector> batch;
  std::vector<bool> truth;
  for (int i = 0; i < 100; ++i) {
    Vector v{0, 0, 0};
    v[static_cast<std::size_t>(i % 2)] = 1.0;
    for (double& x : v) x += 0.25 * rng.normal();
    batch.push_back(v);
    truth.push_back(true);
  }
  for (int i = 0; i < 100; ++i) {
    Vector v{0.3, 0.3, 1.0};
    for (double& x : v) x += 0.25 * rng.normal();
    batch.push_back(v);
    truth.push_back(false);
  }
  auto agreement = [&](const SplitResult& r) {
    std::size_t ok = 0;
    for (std::size_t i : r.known) ok += truth[i] ? 1 : 0;
    for (std::size_t i : r.novel) ok += truth[i] ? 0 : 1;
    return ok;
  };
  const double eps = 0.85;
  const auto pre = nonparametric_split(batch, bank, eps);
  const auto out = split_batch(batch, bank, {.epsilon = eps, .delta = 0.1}, rng);
  CHECK(out.parametric);
  CHECK(out.result.known.size() + out.result.novel.size() == batch.size());
  CHECK(agreement(out.result) >= agreement(pre));
  CHECK(agreement(out.result) >= 190);
}

TEST_CASE("split falls back to the threshold when a side is too small") {
  Rng rng(7);
  const auto bank = axis_bank();
  const std::vector<Vector> batch{at_cosine(0.99), at_cosine(0.98), at_cosine(0.1)};
  const auto out = split_batch(batch, bank, {.epsilon = 0.5, .delta = 0.1}, rng);
  CHECK_FALSE(out.parametric);
  CHECK(out.result.known == std::vector<std::size_t>{0, 1});
  CHECK(out.result.novel == std::vector<std::size_t>{2});
}
