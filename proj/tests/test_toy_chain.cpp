#include <doctest.h>

#include <cmath>

#include "evo/toy_chain.hpp"

using namespace evo::lab;

TEST_CASE("reverse model set to the true posterior closes the gap") {
  ToyChainSpec spec = binary_flip_chain(4, 4, 0.4, 1.5, 5);
  ToyChainSpec exact = with_posterior_reverse(spec);
  auto res = elbo_gap_toy(exact);
  CHECK(std::abs(res.gap) < 1e-9);
  CHECK(res.elbo == doctest::Approx(res.log_likelihood).epsilon(1e-9));
}

TEST_CASE("the ELBO never exceeds the exact log-likelihood") {
  for (double scale : {0.5, 1.5, 3.0}) {
    for (int t : {2, 8}) {
      auto res = elbo_gap_toy(binary_flip_chain(4, t, 0.4, scale, 3));
      CHECK(res.elbo <= res.log_likelihood + 1e-9);
      CHECK(res.gap >= -1e-9);
    }
  }
}

TEST_CASE("gap equals the sum of per-step KLs") {
  for (int t : {2, 8, 32}) {
    auto res = elbo_gap_toy(binary_flip_chain(4, t, 0.4, 1.5, 9));
    double total = 0.0;
    for (double k : res.per_step_kl) {
      CHECK(k >= -1e-12);
      total += k;
    }
    CHECK(res.gap == doctest::Approx(total).epsilon(1e-9));
  }
}

TEST_CASE("gap strictly decreases as T grows with beta_t proportional to 1/T") {
  double g2 = elbo_gap_toy(binary_flip_chain(4, 2, 0.4, 1.5, 5)).gap;
  double g8 = elbo_gap_toy(binary_flip_chain(4, 8, 0.4, 1.5, 5)).gap;
  double g32 = elbo_gap_toy(binary_flip_chain(4, 32, 0.4, 1.5, 5)).gap;
  INFO("gaps: ", g2, " ", g8, " ", g32);
  CHECK(g2 > g8);
  CHECK(g8 > g32);
}

TEST_CASE("validation rejects malformed chains") {
  ToyChainSpec spec = binary_flip_chain(3, 2, 0.4, 1.5, 0);
  SUBCASE("unnormalized forward row") {
    spec.forward[0](0, 0) += 0.1;
    CHECK_THROWS_AS(elbo_gap_toy(spec), std::invalid_argument);
  }
  SUBCASE("unnormalized prior") {
    spec.prior[0] += 1e-3;
    CHECK_THROWS_AS(elbo_gap_toy(spec), std::invalid_argument);
  }
  SUBCASE("data state out of range") {
    spec.data_state = 1000;
    CHECK_THROWS_AS(elbo_gap_toy(spec), std::invalid_argument);
  }
  SUBCASE("enumeration budget") {
    // 4^6 states * 300 steps > 1e6
    ToyChainSpec big;
    big.alphabet = 4;
    big.length = 6;
    big.t_steps = 300;
    CHECK_THROWS_AS(big.validate(), std::length_error);
  }
}
