#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stemm/errors.hpp"
#include "stemm/losses.hpp"
#include "stemm/ops.hpp"
#include "unit/grad_helpers.hpp"

using namespace stemm;

namespace {

std::vector<double> random_logits(Rng& rng, std::size_t n, double spread) {
  std::vector<double> v(n);
  for (auto& x : v) x = spread * normal01(rng);
  return v;
}

double jsd_of(const std::vector<double>& zp, const std::vector<double>& zq) {
  const std::vector<int> target{0};
  const auto V = zp.size();
  return jsd_loss(Tensor<double>::from_data({1, V}, zp), Tensor<double>::from_data({1, V}, zq), target).item();
}

}  // namespace

TEST(Jsd, MatchesDirectFormula) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto zp = random_logits(rng, 9, 2.0), zq = random_logits(rng, 9, 2.0);
    EXPECT_NEAR(jsd_of(zp, zq), oracle::jsd(oracle::softmax(zp), oracle::softmax(zq)), 1e-10);
  }
}

TEST(Jsd, IdenticalDistributionsGiveZero) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto z = random_logits(rng, 16, 5.0);
    EXPECT_NEAR(jsd_of(z, z), 0.0, 1e-8);
  }
}

TEST(Jsd, DisjointSupportsGiveLn2) {
  EXPECT_NEAR(jsd_of({60.0, -60.0}, {-60.0, 60.0}), std::log(2.0), 1e-8);
}

TEST(Jsd, SymmetricAndBounded) {
  Rng rng(3);
  for (int trial = 0; trial < 10000; ++trial) {
    const double spread = trial % 2 ? 0.5 : 8.0;
    const auto zp = random_logits(rng, 6, spread), zq = random_logits(rng, 6, spread);
    const double pq = jsd_of(zp, zq), qp = jsd_of(zq, zp);
    EXPECT_NEAR(pq, qp, 1e-8);
    EXPECT_GE(pq, -1e-12);
    EXPECT_LE(pq, std::log(2.0) + 1e-12);
  }
}

TEST(Jsd, SumsOverUnpaddedRowsOnly) {
  Rng rng(4);
  const auto zp = random_logits(rng, 3 * 5, 1.0), zq = random_logits(rng, 3 * 5, 1.0);
  const std::vector<int> targets{1, -1, 3};
  const double got = jsd_loss(Tensor<double>::from_data({3, 5}, zp), Tensor<double>::from_data({3, 5}, zq), targets).item();
  double expected = 0.0;
  for (std::size_t r : {0u, 2u}) {
    std::vector<double> p(zp.begin() + r * 5, zp.begin() + r * 5 + 5), q(zq.begin() + r * 5, zq.begin() + r * 5 + 5);
    expected += oracle::jsd(oracle::softmax(p), oracle::softmax(q));
  }
  EXPECT_NEAR(got, expected, 1e-10);
  EXPECT_THROW(jsd_loss(Tensor<double>::zeros({3, 5}), Tensor<double>::zeros({3, 4}), targets), DimensionError);
}

TEST(Jsd, GradientsReachBothInputs) {
  const std::vector<int> targets{0, 2, -1};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double err = testing_support::op_gradient_error(
        [&](const std::vector<Tensor<double>>& in) { return jsd_loss(in[0], in[1], targets); },
        {{3, 4}, {3, 4}}, seed, -2.0, 2.0);
    EXPECT_LT(err, 1e-5);
  }
}

TEST(CrossEntropy, MatchesSmoothedOracle) {
  Rng rng(5);
  for (double eps : {0.0, 0.1, 0.3}) {
    const auto z = random_logits(rng, 4 * 7, 1.5);
    const std::vector<int> targets{3, -1, 0, 6};
    const double got = cross_entropy(Tensor<double>::from_data({4, 7}, z), targets, eps).item();
    double expected = 0.0;
    for (std::size_t r : {0u, 2u, 3u})
      expected += oracle::smoothed_nll(std::vector<double>(z.begin() + r * 7, z.begin() + r * 7 + 7), targets[r], eps);
    EXPECT_NEAR(got, expected / 3.0, 1e-10);
  }
}

TEST(CrossEntropy, RejectsBadInput) {
  const std::vector<int> none{-1, -1};
  EXPECT_THROW(cross_entropy(Tensor<double>::zeros({2, 3}), none, 0.1), std::invalid_argument);
  const std::vector<int> some{0, 1};
  EXPECT_THROW(cross_entropy(Tensor<double>::zeros({2, 3}), some, 1.0), std::invalid_argument);
}
