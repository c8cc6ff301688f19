#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "convis/core.hpp"
#include "convis/hash.hpp"
#include "convis/kernels.hpp"
#include "convis/rng.hpp"
#include "support.hpp"

using namespace convis;
using namespace testing_support;

TEST_CASE("softmax of equal logits is uniform") {
  const auto p = softmax(LogitVector({0, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax with a masked entry matches the closed form") {
  const auto p = softmax(LogitVector({1.0, 2.0, kMasked}));
  const double e = std::exp(1.0);
  CHECK(std::abs(p[0] - 1.0 / (1.0 + e)) < 1e-15);
  CHECK(std::abs(p[1] - e / (1.0 + e)) < 1e-15);
  CHECK(p[2] == 0.0);
  const auto ref = ref_softmax({1.0, 2.0, kMasked});
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(p[i] - static_cast<double>(ref[i])) < 1e-15);
}

TEST_CASE("softmax rejects all-masked input") {
  try {
    softmax(LogitVector({kMasked, kMasked}));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::empty_support);
  }
}

TEST_CASE("softmax sums to one and is shift invariant") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> c(-1e4, 1e4);
  for (int trial = 0; trial < 500; ++trial) {
    auto v = random_values(gen, 1 + trial % 40, 1e3);
    const auto p = softmax(LogitVector(v));
    const double sum = std::accumulate(p.probs().begin(), p.probs().end(), 0.0);
    CHECK(std::abs(sum - 1.0) < 1e-9);
    const double shift = c(gen);
    auto w = v;
    for (auto& x : w) x += shift;
    auto v_small = random_values(gen, 8, 3.0);
    auto w_small = v_small;
    const double s2 = c(gen) / 1e4;
    for (auto& x : w_small) x += s2;
    const auto a = softmax(LogitVector(v_small));
    const auto b = softmax(LogitVector(w_small));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
  }
}

TEST_CASE("temperature never moves the mode") {
  std::mt19937_64 gen(11);
  for (double t : {0.05, 0.7, 1.0, 3.0, 50.0}) {
    for (int trial = 0; trial < 200; ++trial) {
      const auto l = random_logits(gen, 12, 4.0, 0.2);
      const auto p = softmax(l, t);
      std::vector<double> pv(p.probs().begin(), p.probs().end());
      CHECK(static_cast<TokenId>(ref_argmax(pv)) == argmax(l));
    }
  }
}

TEST_CASE("kl divergence") {
  const ProbDistribution p({1.0, 0.0});
  const ProbDistribution q({0.5, 0.5});
  CHECK(std::abs(kl_divergence(p, q) - std::log(2.0)) < 1e-15);
  CHECK(kl_divergence(q, q) == 0.0);
  CHECK(std::isinf(kl_divergence(q, p)));
  CHECK_THROWS_AS(kl_divergence(p, ProbDistribution({1.0})), Error);

  std::mt19937_64 gen(3);
  for (int i = 0; i < 500; ++i) {
    const auto a = softmax(random_logits(gen, 9, 3.0));
    const auto b = softmax(random_logits(gen, 9, 3.0));
    CHECK(kl_divergence(a, b) >= 0.0);
    CHECK(kl_divergence(a, a) < 1e-15);
  }
}

TEST_CASE("top-p support") {
  CHECK(top_p_support(ProbDistribution({0.5, 0.3, 0.2}), 0.8) == std::vector<TokenId>{0, 1});
  CHECK(top_p_support(ProbDistribution({0.2, 0.5, 0.3}), 1.0).size() == 3);
  CHECK(top_p_support(ProbDistribution({0.5, 0.0, 0.5}), 1.0).size() == 2);
  for (double tp : {0.01, 0.5, 1.0}) CHECK(top_p_support(ProbDistribution({1.0, 0.0, 0.0}), tp) == std::vector<TokenId>{0});
  // equal mass: lower index first
  CHECK(top_p_support(ProbDistribution({0.25, 0.25, 0.25, 0.25}), 0.5) == std::vector<TokenId>{0, 1});
  CHECK_THROWS_AS(top_p_support(ProbDistribution({1.0}), 0.0), Error);
  CHECK_THROWS_AS(top_p_support(ProbDistribution({1.0}), 1.5), Error);
}

TEST_CASE("top-p support grows with top_p") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int i = 0; i < 300; ++i) {
    const auto p = softmax(random_logits(gen, 10, 2.0));
    double a = u(gen), b = u(gen);
    if (a > b) std::swap(a, b);
    auto sa = top_p_support(p, a), sb = top_p_support(p, b);
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    CHECK(std::includes(sb.begin(), sb.end(), sa.begin(), sa.end()));
  }
}

TEST_CASE("argmax breaks ties low") {
  CHECK(argmax(LogitVector({1.0, 3.0, 2.0})) == 1);
  CHECK(argmax(LogitVector({2.0, 2.0, 1.0})) == 0);
  CHECK(argmax(LogitVector({kMasked, 2.0, 2.0})) == 1);
  std::mt19937_64 gen(9);
  for (int i = 0; i < 1000; ++i) {
    const auto l = random_logits(gen, 1 + i % 17, 3.0, 0.3);
    std::vector<double> v(l.values().begin(), l.values().end());
    CHECK(static_cast<TokenId>(ref_argmax(v)) == argmax(l));
  }
}

TEST_CASE("logit vectors reject nan and +inf") {
  CHECK_THROWS_AS(LogitVector({0.0, NAN}), Error);
  CHECK_THROWS_AS(LogitVector({0.0, INFINITY}), Error);
  CHECK_NOTHROW(LogitVector({0.0, kMasked}));
}

TEST_CASE("vocabulary checks ids") {
  Vocabulary v{3, 0, std::nullopt, {"<eos>", "a", "b"}};
  CHECK_NOTHROW(v.validate());
  CHECK_NOTHROW(v.check_sequence(std::vector<TokenId>{1, 2}));
  CHECK_THROWS_AS(v.check_sequence(std::vector<TokenId>{3}), Error);
  Vocabulary bad{3, 5, std::nullopt, {}};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("parallel kernels are bitwise equal to the serial ones") {
  std::mt19937_64 gen(21);
  for (std::size_t n : {std::size_t{5}, std::size_t{4096}, std::size_t{70000}}) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 4; ++i) rows.push_back(random_values(gen, n, 4.0));
    rows[2][n / 2] = kMasked;
    const auto orig = random_values(gen, n, 4.0);
    std::vector<std::span<const double>> views(rows.begin(), rows.end());
    std::vector<double> a(n), b(n);
    kernels::serial::contrastive_combine(orig, views, 0.7, a);
    kernels::parallel::contrastive_combine(orig, views, 0.7, b);
    CHECK(a == b);
    kernels::serial::mean_rows(views, a);
    kernels::parallel::mean_rows(views, b);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
      return x == y || (std::isinf(x) && std::isinf(y));
    }));
    CHECK(kernels::serial::softmax(orig, 0.9, a));
    CHECK(kernels::parallel::softmax(orig, 0.9, b));
    CHECK(a == b);
  }
}

TEST_CASE("rng streams are reproducible and split independently") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(42);
  auto s1 = c.split(1), s2 = c.split(2);
  CHECK(s1.next_u64() != s2.next_u64());
  CHECK(c.split(1).seed() == RngStream(42).split(1).seed());
  double sum = 0;
  RngStream u(1);
  for (int i = 0; i < 20000; ++i) {
    const double x = u.uniform();
    CHECK((x >= 0.0 && x < 1.0));
    sum += x;
  }
  CHECK(std::abs(sum / 20000 - 0.5) < 0.01);
  CHECK(uniform_from_key(5) == uniform_from_key(5));
  CHECK(u.below(1) == 0);
}

TEST_CASE("sha256 known answer") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
