#include <doctest.h>

#include <cmath>

#include "evo/flow.hpp"
#include "evo/rng.hpp"

using namespace evo;

TEST_CASE("depth floors K_max * t") {
  CHECK(depth(1.0, 20) == 20);
  CHECK(depth(0.0, 20) == 0);
  CHECK(depth(0.37, 20) == 7);
  CHECK(depth(0.05, 20) == 1);
  CHECK_THROWS_AS(depth(-0.01, 20), std::domain_error);
  CHECK_THROWS_AS(depth(1.01, 20), std::domain_error);
}

TEST_CASE("soft gate midpoint, saturation and hard-limit agreement") {
  CHECK(soft_gate(0.35, 7, 20, 0.1) == doctest::Approx(0.5).epsilon(1e-12));  // 20*0.35 = 7
  // margin of 10 tau above the threshold saturates within 1e-4
  CHECK(soft_gate(0.5, 9, 20, 0.1) > 1.0 - 1e-4);  // 20*0.5 - 9 = 1 = 10 tau
  // tau -> 0 recovers the indicator k < K_max t at margin +-0.5
  for (int k = 0; k < 20; ++k) {
    for (double t : {0.1, 0.42, 0.73}) {
      double x = 20.0 * t - k;
      if (std::abs(x) < 0.5) continue;
      double hard = x > 0.0 ? 1.0 : 0.0;
      CHECK(std::abs(soft_gate(t, k, 20, 0.01) - hard) < 1e-9);
    }
  }
  CHECK_THROWS_AS(soft_gate(0.5, 0, 20, 0.0), std::domain_error);
  CHECK_THROWS_AS(soft_gate(0.5, 20, 20, 0.1), std::domain_error);
}

TEST_CASE("gate sums approximate the refinement budget") {
  // The tau -> 0 limit of sum_k sigmoid((K t - k)/tau) is ceil(K t) for
  // non-integer K t, so the sum tracks K_max * t_i only to within one
  // step; asserted as the one-step band plus exact ceil convergence away
  // from bin edges.
  const int k_max = 20;
  for (double t : {0.08, 0.13, 0.37, 0.62, 0.91}) {
    double sum = 0.0;
    for (int k = 0; k < k_max; ++k) sum += soft_gate(t, k, k_max, 0.01);
    CHECK(sum >= k_max * t - 1.0);
    CHECK(sum <= k_max * t + 1.0);
    double frac = k_max * t - std::floor(k_max * t);
    if (frac > 0.2 && frac < 0.8)
      CHECK(sum == doctest::Approx(std::ceil(k_max * t)).epsilon(1e-6));
  }
}

TEST_CASE("ode_step applies dt * velocity and freezes per depth") {
  StepConfig cfg = StepConfig::hard(20);
  SUBCASE("zero velocities leave latents unchanged but advance the step") {
    LatentSequence<double> seq{Matd::Constant(3, 2, 1.0), Vecd::Constant(3, 1.0), 0};
    auto st = make_refinement_state(seq, cfg);
    auto next = ode_step(st, Matd(Matd::Zero(3, 2)), cfg);
    CHECK(next.seq.latents == seq.latents);
    CHECK(next.step == 1);
  }
  SUBCASE("constant decay field reaches (0.95)^20") {
    LatentSequence<double> seq{Matd::Constant(1, 2, 1.0), Vecd::Constant(1, 1.0), 0};
    auto st = make_refinement_state(seq, cfg);
    for (int k = 0; k < 20; ++k) {
      Matd vel = -st.seq.latents;
      st = ode_step(st, vel, cfg);
    }
    double expect = std::pow(0.95, 20);
    CHECK(st.seq.latents(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(st.seq.latents(0, 0) - std::exp(-1.0)) < 0.0095);
  }
  SUBCASE("token with K_i = 1 is bitwise frozen after its first step") {
    Rng rng(5);
    LatentSequence<double> seq{rng.normal_mat<double>(2, 3), Vecd::Zero(2), 0};
    seq.times << 0.05, 1.0;
    auto st = make_refinement_state(seq, cfg);
    Matd after_first;
    for (int k = 0; k < 20; ++k) {
      st = ode_step(st, rng.normal_mat<double>(2, 3), cfg);
      if (k == 0) after_first = st.seq.latents;
      CHECK(st.seq.latents.row(0) == after_first.row(0));
    }
  }
  SUBCASE("shape and completed-state errors") {
    LatentSequence<double> seq{Matd::Zero(2, 2), Vecd::Ones(2), 0};
    StepConfig one = StepConfig::hard(1);
    auto st = make_refinement_state(seq, one);
    CHECK_THROWS_AS(ode_step(st, Matd(Matd::Zero(3, 2)), one), std::invalid_argument);
    st = ode_step(st, Matd(Matd::Zero(2, 2)), one);
    CHECK_THROWS_AS(ode_step(st, Matd(Matd::Zero(2, 2)), one), std::runtime_error);
  }
}

TEST_CASE("prompt positions are bitwise immutable") {
  Rng rng(6);
  StepConfig cfg = StepConfig::hard(8);
  LatentSequence<double> seq{rng.normal_mat<double>(4, 3), Vecd::Ones(4), 2};
  Matd prompt_rows = seq.latents.topRows(2);
  VelocityField<double> field = [&](const Matd&, const Vecd&, int) {
    return rng.normal_mat<double>(4, 3);
  };
  auto out = refine_trajectory(seq, field, cfg);
  CHECK(out.latents.topRows(2) == prompt_rows);
}

TEST_CASE("refine_trajectory evaluation counts and endpoint products") {
  SUBCASE("K_max = 1 evaluates the field exactly once") {
    LatentSequence<double> seq{Matd::Ones(2, 2), Vecd::Ones(2), 0};
    RefineStats stats;
    VelocityField<double> field = [](const Matd& z, const Vecd&, int) { return Matd(-z); };
    (void)refine_trajectory(seq, field, StepConfig::hard(1), &stats);
    CHECK(stats.field_evals == 1);
  }
  SUBCASE("all t = 1 with the -identity field multiplies by (1 - 1/20)^20") {
    Rng rng(7);
    LatentSequence<double> seq{rng.normal_mat<double>(3, 4), Vecd::Ones(3), 0};
    Matd original = seq.latents;
    VelocityField<double> field = [](const Matd& z, const Vecd&, int) { return Matd(-z); };
    auto out = refine_trajectory(seq, field, StepConfig::hard(20));
    double factor = std::pow(1.0 - 1.0 / 20.0, 20);
    CHECK((out.latents - factor * original).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("all t = 0 applies zero refinement") {
    Rng rng(8);
    LatentSequence<double> seq{rng.normal_mat<double>(3, 4), Vecd::Zero(3), 0};
    Matd original = seq.latents;
    RefineStats stats;
    VelocityField<double> field = [&](const Matd&, const Vecd&, int) {
      return rng.normal_mat<double>(3, 4);
    };
    auto out = refine_trajectory(seq, field, StepConfig::hard(20), &stats);
    CHECK(out.latents == original);
    CHECK(stats.token_updates == 0);
    CHECK(stats.field_evals == 0);
  }
  SUBCASE("hard-mode update totals equal the depth sum") {
    Rng rng(9);
    LatentSequence<double> seq{rng.normal_mat<double>(6, 2), Vecd::Zero(6), 0};
    for (Index i = 0; i < 6; ++i) seq.times[i] = rng.uniform();
    RefineStats stats;
    VelocityField<double> field = [&](const Matd&, const Vecd&, int) {
      return Matd::Zero(6, 2);
    };
    (void)refine_trajectory(seq, field, StepConfig::hard(20), &stats);
    long expect = 0;
    for (Index i = 0; i < 6; ++i) expect += depth(seq.times[i], 20);
    CHECK(stats.token_updates == expect);
  }
}

TEST_CASE("update additivity across halved steps") {
  Rng rng(10);
  Matd z = rng.normal_mat<double>(2, 3);
  Matd vel = rng.normal_mat<double>(2, 3);
  LatentSequence<double> a{z, Vecd::Ones(2), 0};
  LatentSequence<double> b = a;
  StepConfig c8 = StepConfig::hard(8), c16 = StepConfig::hard(16);
  auto sa = make_refinement_state(a, c8);
  sa = ode_step(sa, vel, c8);
  auto sb = make_refinement_state(b, c16);
  sb = ode_step(sb, vel, c16);
  sb = ode_step(sb, vel, c16);
  CHECK((sa.seq.latents - sb.seq.latents).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("config and sequence validation") {
  StepConfig bad;
  bad.k_max = 10;
  bad.dt = 0.2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  LatentSequence<double> seq{Matd::Zero(2, 2), Vecd::Constant(2, 1.5), 0};
  CHECK_THROWS_AS(seq.validate(), std::domain_error);
  LatentSequence<double> seq2{Matd::Zero(2, 2), Vecd::Zero(2), 3};
  CHECK_THROWS_AS(seq2.validate(), std::invalid_argument);
}
