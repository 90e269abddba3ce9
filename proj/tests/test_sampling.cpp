#include <doctest.h>

#include <cmath>

#include "evo/sampling.hpp"

using namespace evo;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 32;
  cfg.k_max = 4;
  cfg.max_seq_len = 32;
  cfg.dropout = 0.0;
  return cfg;
}

// brute-force minimal-prefix oracle
Vecd nucleus_oracle(const Vecd& probs, double top_p) {
  std::vector<int> order(static_cast<std::size_t>(probs.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
  std::size_t kept = order.size();
  for (std::size_t k = 1; k <= order.size(); ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i < k; ++i) mass += probs[order[i]];
    if (mass >= top_p) {
      kept = k;
      break;
    }
  }
  Vecd out = Vecd::Zero(probs.size());
  double mass = 0.0;
  for (std::size_t i = 0; i < kept; ++i) mass += probs[order[i]];
  for (std::size_t i = 0; i < kept; ++i) out[order[i]] = probs[order[i]] / mass;
  return out;
}

}  // namespace

TEST_CASE("nucleus filter keeps the minimal prefix and renormalizes") {
  Vecd p(4);
  p << 0.5, 0.3, 0.15, 0.05;
  Vecd f = nucleus_filter(p, 0.9);
  CHECK(f[0] == doctest::Approx(0.5 / 0.95).epsilon(1e-9));
  CHECK(f[1] == doctest::Approx(0.3 / 0.95).epsilon(1e-9));
  CHECK(f[2] == doctest::Approx(0.15 / 0.95).epsilon(1e-9));
  CHECK(f[3] == 0.0);
  CHECK(f[0] == doctest::Approx(0.52631578947).epsilon(1e-9));
}

TEST_CASE("top_p = 1 leaves the distribution unchanged") {
  Vecd p(4);
  p << 0.5, 0.3, 0.15, 0.05;
  Vecd f = nucleus_filter(p, 1.0);
  for (Index i = 0; i < 4; ++i) CHECK(f[i] == doctest::Approx(p[i]).epsilon(1e-12));
}

TEST_CASE("probability ties break toward smaller ids") {
  Vecd p = Vecd::Constant(4, 0.25);
  Vecd f = nucleus_filter(p, 0.5);
  CHECK(f[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f[2] == 0.0);
  CHECK(f[3] == 0.0);
}

TEST_CASE("nucleus filter matches the brute-force oracle on random simplexes") {
  Rng rng(100);
  for (int rep = 0; rep < 2000; ++rep) {
    Vecd p(256);
    for (Index i = 0; i < 256; ++i) p[i] = -std::log(1.0 - rng.uniform());
    p /= p.sum();
    double top_p = 0.05 + 0.95 * rng.uniform();
    Vecd mine = nucleus_filter(p, top_p);
    Vecd oracle = nucleus_oracle(p, top_p);
    CHECK((mine - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("nucleus filter input validation") {
  Vecd p(3);
  p << 0.5, 0.4, 0.2;  // sums to 1.1
  CHECK_THROWS_AS(nucleus_filter(p, 0.9), std::invalid_argument);
  Vecd neg(2);
  neg << 1.5, -0.5;
  CHECK_THROWS_AS(nucleus_filter(neg, 0.9), std::domain_error);
  CHECK_THROWS_AS(nucleus_filter(Vecd(), 0.9), std::domain_error);
}

TEST_CASE("sample_init: determinism, prompt freezing, greedy limit") {
  auto params = Parameters<float>::init(small_config(), 50);
  SamplerConfig cfg;
  cfg.max_new_tokens = 8;
  cfg.k_max = 4;
  cfg.seed = 3;
  std::vector<int> prompt = {1, 2, 3};

  SUBCASE("same seed gives a bitwise-identical sequence") {
    Rng r1 = Rng::stream(cfg.seed, 1);
    Rng r2 = Rng::stream(cfg.seed, 1);
    auto a = sample_init(params, prompt, cfg, r1);
    auto b = sample_init(params, prompt, cfg, r2);
    CHECK(a.latents == b.latents);
    CHECK(a.times == b.times);
  }
  SUBCASE("prompt rows carry embeddings at t = 0") {
    Rng rng = Rng::stream(cfg.seed, 1);
    auto seq = sample_init(params, prompt, cfg, rng);
    CHECK(seq.prompt_len == 3);
    for (Index i = 0; i < 3; ++i) {
      CHECK(seq.latents.row(i) == params.tok_embed.row(prompt[static_cast<std::size_t>(i)]));
      CHECK(seq.times[i] == 0.0f);
    }
  }
  SUBCASE("temperature -> 0 recovers argmax initialization") {
    SamplerConfig greedy = cfg;
    greedy.temperature = 1e-6;
    Mat<float> logits = decode_logits(params, Mat<float>(params.start_latent.transpose()));
    Index argmax = 0;
    logits.row(0).maxCoeff(&argmax);
    Rng rng = Rng::stream(cfg.seed, 1);
    auto seq = sample_init(params, {}, greedy, rng);
    for (Index i = 0; i < seq.size(); ++i)
      CHECK(seq.latents.row(i) == params.tok_embed.row(argmax));
  }
  SUBCASE("capacity error") {
    SamplerConfig big = cfg;
    big.max_new_tokens = 64;
    Rng rng = Rng::stream(cfg.seed, 1);
    CHECK_THROWS_AS(sample_init(params, prompt, big, rng), std::length_error);
  }
}

TEST_CASE("generate: determinism, counters and K_max = 0 edge") {
  auto params = Parameters<float>::init(small_config(), 51);
  SamplerConfig cfg;
  cfg.max_new_tokens = 8;
  cfg.k_max = 4;
  cfg.seed = 9;
  std::vector<int> prompt = {4, 5};

  SUBCASE("two runs produce identical tokens") {
    auto a = generate(params, prompt, cfg);
    auto b = generate(params, prompt, cfg);
    CHECK(a.tokens == b.tokens);
    CHECK(a.times == b.times);
  }
  SUBCASE("counted updates equal the depth sum") {
    auto res = generate(params, prompt, cfg);
    Rng rng = Rng::stream(cfg.seed, 0x9a3du);
    auto seq = sample_init(params, prompt, cfg, rng);
    long expect = 0;
    for (Index i = seq.prompt_len; i < seq.size(); ++i)
      expect += depth(static_cast<double>(seq.times[i]), cfg.k_max);
    CHECK(res.stats.token_updates == expect);
  }
  SUBCASE("steps_used records the depth of each kept token") {
    auto res = generate(params, prompt, cfg);
    for (std::size_t i = 0; i < res.tokens.size(); ++i)
      CHECK(res.steps_used[i] == depth(res.times[i], cfg.k_max));
  }
  SUBCASE("K_max = 0 decodes the initial latents") {
    SamplerConfig flat = cfg;
    flat.k_max = 0;
    auto res = generate(params, prompt, flat);
    Rng rng = Rng::stream(cfg.seed, 0x9a3du);
    auto seq = sample_init(params, prompt, flat, rng);
    Mat<float> logits = decode_logits(params, Mat<float>(seq.latents.bottomRows(8)));
    for (Index i = 0; i < 8; ++i) {
      Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      CHECK(res.tokens[static_cast<std::size_t>(i)] == static_cast<int>(arg));
    }
    CHECK(res.stats.token_updates == 0);
  }
  SUBCASE("refinement without noise is bitwise reproducible") {
    Rng rng = Rng::stream(cfg.seed, 0x9a3du);
    auto seq = sample_init(params, prompt, cfg, rng);
    StepConfig sc = StepConfig::hard(cfg.k_max);
    VelocityField<float> field = [&](const Mat<float>& latents, const Vec<float>& times, int k) {
      LatentSequence<float> cur{latents, times, seq.prompt_len};
      return field_eval(params, cur, k);
    };
    auto r1 = refine_trajectory(seq, field, sc);
    auto r2 = refine_trajectory(seq, field, sc);
    CHECK(r1.latents == r2.latents);
  }
  SUBCASE("tokens_per_second is tokens over elapsed") {
    auto res = generate(params, prompt, cfg);
    CHECK(res.tokens_per_second ==
          doctest::Approx(res.tokens.size() / res.elapsed_s).epsilon(1e-9));
  }
}

TEST_CASE("nearest-neighbor decode path works end to end") {
  auto params = Parameters<float>::init(small_config(), 52);
  SamplerConfig cfg;
  cfg.max_new_tokens = 6;
  cfg.k_max = 2;
  cfg.decode = DecodeMode::nearest_neighbor;
  auto res = generate(params, {1}, cfg);
  CHECK(res.tokens.size() == 6);
  for (int id : res.tokens) {
    CHECK(id >= 0);
    CHECK(id < 32);
  }
}

TEST_CASE("bench aggregates and doubling K_max doubles counted work at t = 1") {
  auto params = Parameters<float>::init(small_config(), 53);
  SamplerConfig cfg;
  cfg.max_new_tokens = 6;
  cfg.k_max = 2;
  cfg.t_override = 1.0;

  SUBCASE("single prompt: aggregate equals the entry") {
    auto rep = bench(params, {{1, 2}}, cfg);
    REQUIRE(rep.entries.size() == 1);
    CHECK(rep.total_tokens == rep.entries[0].tokens);
    CHECK(rep.total_elapsed_s == doctest::Approx(rep.entries[0].elapsed_s));
  }
  SUBCASE("identical prompts produce identical outputs") {
    auto r1 = generate(params, {1, 2}, cfg);
    auto r2 = generate(params, {1, 2}, cfg);
    CHECK(r1.tokens == r2.tokens);
  }
  SUBCASE("double K_max, double the counted token updates") {
    auto rep1 = bench(params, {{1, 2}}, cfg);
    SamplerConfig cfg2 = cfg;
    cfg2.k_max = 4;
    auto rep2 = bench(params, {{1, 2}}, cfg2);
    CHECK(rep2.entries[0].token_updates == 2 * rep1.entries[0].token_updates);
    CHECK(rep1.entries[0].token_updates == 6 * 2);  // max_new_tokens * k_max
  }
}
