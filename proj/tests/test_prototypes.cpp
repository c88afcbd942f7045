#include <cmath>
#include <set>

#include "ccd/prototypes.hpp"
#include "doctest.h"

using namespace ccd;

namespace {

Matrix rows(std::initializer_list<Vector> vs) {
  Matrix m(0, vs.begin()->size());
  for (const auto& v : vs) m.append_row(v);
  return m;
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("contrastive loss worked examples") {
  const ContrastiveHyper h;  // alpha 32, sigma 0.1
  const PrototypeBank single({7}, rows({{0.6, 0.8}}), true);
  CHECK(contrastive_loss(Vector{3, 4}, 7, single, h).loss == doctest::Approx(-28.8));

  const PrototypeBank two({0, 1}, rows({{1, 0}, {0, 1}}), true);
  CHECK(contrastive_loss(Vector{1, 0}, 0, two, h).loss == doctest::Approx(-25.6));
}

TEST_CASE("contrastive loss errors") {
  const PrototypeBank bank({0, 1}, rows({{1, 0}, {0, 1}}), true);
  CHECK_THROWS_AS(contrastive_loss(Vector{1, 0}, 5, bank, {}), UnknownLabel);
  CHECK_THROWS_AS(contrastive_loss(Vector{0, 0}, 0, bank, {}), DegenerateInput);
  CHECK_THROWS_AS(PrototypeBank({1, 1}, rows({{1, 0}, {0, 1}}), true), Error);
}

TEST_CASE("contrastive loss decreases as the positive similarity grows") {
  const PrototypeBank bank({0, 1}, rows({{1, 0, 0}, {0, 0, 1}}), true);
  double prev = 1e9;
  // f rotates from e2 toward e1 while staying orthogonal to the negative.
  for (int i = 0; i <= 10; ++i) {
    const double a = 0.15 * i;
    const double l = contrastive_loss(Vector{std::sin(a), std::cos(a), 0.0}, 0, bank, {}).loss;
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("contrastive gradients match finite differences (linear and softplus)") {
  for (bool softplus : {false, true}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      const auto bank = PrototypeBank::random({0, 1, 2}, 5, rng);
      Vector f(5);
      for (double& v : f) v = rng.normal();
      ContrastiveHyper h;
      h.softplus = softplus;
      if (softplus) h.alpha = 2.0;
      const auto res = contrastive_loss(f, 2, bank, h);
      const Vector nf = finite_diff_grad(
          [&](std::span<const double> v) { return contrastive_loss(v, 2, bank, h).loss; }, f);
      CHECK(max_relative_error(res.grad_f, nf) <= 1e-4);
      const Vector np = finite_diff_grad(
          [&](std::span<const double> p) {
            PrototypeBank b = bank;
            std::copy(p.begin(), p.end(), b.mutable_vectors().data().begin());
            return contrastive_loss(f, 2, b, h).loss;
          },
          bank.vectors().data());
      CHECK(max_relative_error(res.grad_prototypes.data(), np) <= 1e-4);
    }
  }
}

TEST_CASE("orthogonality loss worked examples") {
  CHECK(orthogonality_loss(rows({{1, 0}, {0, 1}}), 1.0).loss ==
        doctest::Approx(std::log(std::exp(1.0) + 1.0)));
  CHECK(std::abs(orthogonality_loss(rows({{1, 0}, {0, 1}}), 1.0).loss - 1.31326) < 1e-5);
  const double same = orthogonality_loss(rows({{1, 0}, {1, 0}}), 1.0).loss;
  CHECK(std::abs(same - 1.69315) < 1e-5);
  CHECK(same > 1.31326);
  CHECK_THROWS_AS(orthogonality_loss(Matrix(0, 2), 1.0), DegenerateInput);
}

TEST_CASE("orthogonality gradient matches finite differences") {
  for (bool self : {true, false}) {
    Rng rng(self ? 1 : 2);
    const Matrix g = random_matrix(6, 6, rng);
    const auto res = orthogonality_loss(g, 0.5, self);
    const Vector num = finite_diff_grad(
        [&](std::span<const double> p) {
          Matrix m = g;
          std::copy(p.begin(), p.end(), m.data().begin());
          return orthogonality_loss(m, 0.5, self).loss;
        },
        g.data());
    CHECK(max_relative_error(res.grad.data(), num) <= 1e-4);
  }
}

TEST_CASE("optimized bank is orthonormal") {
  Rng rng(16);
  auto bank = OrthogonalBank::random(16, 0.1, rng);
  bank.optimize({});
  CHECK(max_abs_offdiag_cosine(bank.vectors()) <= 1e-3);
  for (std::size_t i = 0; i < bank.size(); ++i) CHECK(std::abs(norm(bank.prototype(i)) - 1.0) <= 1e-6);
}

TEST_CASE("assignment follows the largest cosine among unassigned prototypes") {
  OrthogonalBank bank(rows({{1, 0}, {0, 1}}), 0.1);
  CHECK(bank.assign(3, Vector{1, 0}) == 0);
  CHECK(bank.assign(4, Vector{1, 0}) == 1);  // only candidate left, cos 0
  CHECK_THROWS_AS(bank.assign(5, Vector{0, 1}), CapacityError);
  CHECK_THROWS_AS(bank.assign(3, Vector{0, 1}), Error);
  CHECK(bank.owner(0) == 3);

  OrthogonalBank other(rows({{1, 0}, {0, 1}}), 0.1);
  CHECK(other.assign(1, Vector{0, 1}) == 1);
  CHECK(other.assign(2, Vector{0, 1}) == 0);
}

TEST_CASE("assignment is injective and invariant to rescaling the means") {
  Rng rng(21);
  auto make = [&] {
    Rng r(4);
    auto b = OrthogonalBank::random(8, 0.1, r);
    b.optimize({.steps = 300});
    return b;
  };
  std::vector<Vector> means(8, Vector(8));
  for (auto& m : means) {
    for (double& v : m) v = rng.normal();
  }
  auto a = make();
  auto b = make();
  for (std::size_t c = 0; c < means.size(); ++c) {
    Vector scaled = means[c];
    for (double& v : scaled) v *= 0.01 + 5.0 * static_cast<double>(c);
    CHECK(a.assign(static_cast<Label>(c), means[c]) == b.assign(static_cast<Label>(c), scaled));
  }
  std::set<std::size_t> used;
  for (const auto& [l, i] : a.assignment()) used.insert(i);
  CHECK(used.size() == 8);
}

TEST_CASE("classification examples") {
  OrthogonalBank bank(rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), 0.1);
  CHECK_THROWS_AS(bank.classify(Vector{1, 0, 0}), Error);
  bank.assign(10, Vector{1, 0, 0});
  bank.assign(11, Vector{0, 1, 0});
  CHECK(bank.classify(Vector{1, 0, 0}) == 10);
  CHECK(bank.classify(Vector{-1, 0, 0}) == 11);
}

TEST_CASE("classification is robust to small noise around a prototype") {
  Rng rng(30);
  auto bank = OrthogonalBank::random(10, 0.1, rng);
  bank.optimize({});
  for (int c = 0; c < 10; ++c) {
    Vector m(bank.prototype(static_cast<std::size_t>(c)).begin(),
             bank.prototype(static_cast<std::size_t>(c)).end());
    bank.assign(c, m);
  }
  for (int draw = 0; draw < 100; ++draw) {
    const auto c = static_cast<std::size_t>(draw % 10);
    Vector z(bank.prototype(c).begin(), bank.prototype(c).end());
    for (double& v : z) v += 0.01 * rng.normal();
    CHECK(bank.classify(z) == static_cast<Label>(bank.owner(c).value()));
  }
}

TEST_CASE("prototype cross-entropy closed form and gradient") {
  OrthogonalBank bank(rows({{1, 0}, {0, 1}}), 0.1);
  bank.assign(0, Vector{1, 0});
  bank.assign(1, Vector{0, 1});
  const std::vector<Label> labels{0};
  const auto res = prototype_cross_entropy(rows({{1, 0}}), labels, bank);
  CHECK(res.loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1.0))));
  CHECK(std::abs(res.loss - 0.3133) < 1e-4);

  const std::vector<Label> bad{9};
  CHECK_THROWS_AS(prototype_cross_entropy(rows({{1, 0}}), bad, bank), UnknownLabel);
}
