#include <doctest.h>

#include <cmath>

#include "evo/run.hpp"
#include "evo/trainer.hpp"
#include "reference_model.hpp"

using namespace evo;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn_mult = 2;
  cfg.vocab_size = 16;
  cfg.k_max = 4;
  cfg.max_seq_len = 16;
  cfg.dropout = 0.0;
  return cfg;
}

BatchLossSettings tiny_settings(const ModelConfig& cfg) {
  BatchLossSettings set;
  set.schedule = NoiseSchedule::cosine(cfg.k_max);
  set.step_config = StepConfig::soft(cfg.k_max, 0.1);
  set.bos_id = 0;
  set.threads = 2;
  return set;
}

}  // namespace

TEST_CASE("anneal_weights endpoints and midpoint") {
  TrainConfig cfg;
  cfg.warmup_steps = 200;
  auto w0 = anneal_weights(0, cfg);
  CHECK(w0.flow == 1.0);
  CHECK(w0.ar == 1.0);
  CHECK(w0.diff == 1.0);
  CHECK(w0.ent == 0.01);
  auto wend = anneal_weights(200, cfg);
  CHECK(wend.ar == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(wend.diff == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(anneal_weights(5000, cfg).ar == doctest::Approx(0.25).epsilon(1e-12));
  auto wmid = anneal_weights(100, cfg);
  CHECK(wmid.ar == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("learning rate warms up linearly then decays on a cosine") {
  TrainConfig cfg;
  cfg.peak_lr = 1e-3;
  cfg.warmup_steps = 100;
  cfg.total_steps = 1100;
  CHECK(learning_rate(99, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(learning_rate(49, cfg) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(learning_rate(600, cfg) == doctest::Approx(0.5e-3).epsilon(1e-9));
  CHECK(learning_rate(1100, cfg) < 1e-9);
}

TEST_CASE("grad_check on a quadratic toy loss is exact; zero tolerance always fails") {
  // quadratic centered at the current parameters plus a linear term, so
  // central differences are exact up to machine roundoff
  auto params = Parameters<double>::init(tiny_config(), 31);
  auto center = params;
  auto slope = Parameters<double>::init(tiny_config(), 32);
  for (auto& v : tensor_views(slope)) v = (v.array().abs() + 0.5).matrix();
  auto value = [&](const Parameters<double>& p) {
    auto pv = tensor_views(const_cast<Parameters<double>&>(p));
    auto cv = tensor_views(center);
    auto sv = tensor_views(slope);
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      acc += (pv[i] - cv[i]).squaredNorm();
      acc += sv[i].dot(pv[i] - cv[i]);
    }
    return acc;
  };
  auto gradient = [&](const Parameters<double>& p, Parameters<double>& g) {
    auto pv = tensor_views(const_cast<Parameters<double>&>(p));
    auto cv = tensor_views(center);
    auto sv = tensor_views(slope);
    auto gv = tensor_views(g);
    for (std::size_t i = 0; i < pv.size(); ++i) gv[i] = 2.0 * (pv[i] - cv[i]) + sv[i];
  };
  auto rep = grad_check(params, value, gradient, 1e-10, 16, 5);
  CHECK(rep.pass);
  CHECK(rep.max_rel_error < 1e-10);
  auto rep0 = grad_check(params, value, gradient, 0.0, 16, 5);
  CHECK_FALSE(rep0.pass);
}

TEST_CASE("composite loss gradients pass the finite-difference check") {
  ModelConfig cfg = tiny_config();
  auto params = Parameters<double>::init(cfg, 7);
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4, 5, 6, 7, 8}, {3, 1, 4, 1, 5, 9, 2, 6}};
  BatchLossSettings set = tiny_settings(cfg);
  set.threads = 1;
  auto value = [&](const Parameters<double>& p) { return batch_loss(p, batch, set).total; };
  auto gradient = [&](const Parameters<double>& p, Parameters<double>& g) {
    batch_loss(p, batch, set, &g);
  };
  auto rep = grad_check(params, value, gradient, 1e-4, 48, 3, 2);
  for (auto& g : rep.groups) {
    INFO(g.group, " max rel ", g.max_rel_error);
    CHECK(g.max_rel_error < 1e-4);
  }
  CHECK(rep.pass);
}

TEST_CASE("EMA contract: frozen parameters shrink the gap by decay^n") {
  auto params = Parameters<double>::init(tiny_config(), 8);
  EMAState<double> ema = EMAState<double>::make(params, 0.99);
  // move the shadow away, then update n times with frozen params
  auto sh = tensor_views(ema.shadow);
  for (auto& v : sh) v.array() += 1.0;
  double gap0 = 0.0;
  auto pv = tensor_views(params);
  for (std::size_t i = 0; i < sh.size(); ++i) gap0 += (sh[i] - pv[i]).squaredNorm();
  gap0 = std::sqrt(gap0);
  const int n = 17;
  for (int k = 0; k < n; ++k) ema.update(params);
  double gap1 = 0.0;
  for (std::size_t i = 0; i < sh.size(); ++i) gap1 += (sh[i] - pv[i]).squaredNorm();
  gap1 = std::sqrt(gap1);
  CHECK(gap1 / gap0 == doctest::Approx(std::pow(0.99, n)).epsilon(1e-9));
}

TEST_CASE("global-norm clipping caps the gradient norm") {
  auto grads = Parameters<double>::init(tiny_config(), 9);
  // scale so the norm is 10
  double norm = 0.0;
  for (auto& v : tensor_views(grads)) norm += v.squaredNorm();
  norm = std::sqrt(norm);
  for (auto& v : tensor_views(grads)) v *= 10.0 / norm;
  double pre = clip_global_norm(grads, 1.0);
  CHECK(pre == doctest::Approx(10.0).epsilon(1e-9));
  double post = 0.0;
  for (auto& v : tensor_views(grads)) post += v.squaredNorm();
  CHECK(std::sqrt(post) <= 1.0 + 1e-6);
}

TEST_CASE("adamw with zero gradients applies only weight decay; EMA converges toward params") {
  auto params = Parameters<double>::init(tiny_config(), 10);
  auto before = params;
  auto opt = AdamState<double>::make(params);
  auto grads = Parameters<double>::zeros_like(params);
  TrainConfig cfg;
  double lr = 1e-2;
  adamw_update(params, grads, opt, lr, cfg);
  auto pv = tensor_views(params);
  auto bv = tensor_views(before);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    Vecd expect = bv[i] - lr * cfg.weight_decay * bv[i];
    CHECK((pv[i] - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("t0 mode with zeroed flow/denoise weights equals a standalone smoothed-CE baseline") {
  ModelConfig cfg = tiny_config();
  auto params = Parameters<double>::init(cfg, 11);
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4, 5, 6}, {9, 8, 7, 6, 5, 4}};
  BatchLossSettings set = tiny_settings(cfg);
  set.time_mode = TimeMode::fixed0;
  set.weights = {0.0, 1.0, 0.0, 0.0};
  double mine = batch_loss(params, batch, set).total;

  double ce_sum = 0.0;
  long tokens = 0;
  for (const auto& seq : batch) {
    Matd logits = refmodel::ar_logits(params, seq, set.bos_id);
    ce_sum += refmodel::smoothed_ce(logits, seq, set.label_smoothing) *
              static_cast<double>(seq.size());
    tokens += static_cast<long>(seq.size());
  }
  double baseline = ce_sum / static_cast<double>(tokens);
  CHECK(std::abs(mine - baseline) < 1e-9);
}

TEST_CASE("train steps are deterministic and reduce the loss on a tiny corpus") {
  ModelConfig cfg = tiny_config();
  NoiseSchedule sched = NoiseSchedule::cosine(cfg.k_max);
  TrainConfig tc;
  tc.seq_len = 8;
  tc.batch_tokens = 16;
  tc.total_steps = 10;
  tc.warmup_steps = 2;
  tc.peak_lr = 3e-3;
  tc.seed = 5;
  tc.threads = 2;
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4, 5, 6, 7, 8}, {8, 7, 6, 5, 4, 3, 2, 1}};

  auto run_once = [&]() {
    auto params = Parameters<float>::init(cfg, 12);
    auto opt = AdamState<float>::make(params);
    auto ema = EMAState<float>::make(params, tc.ema_decay);
    double first = 0.0, last = 0.0;
    for (long s = 0; s < tc.total_steps; ++s) {
      auto res = train_step(params, opt, ema, batch, tc, sched, s, 0);
      REQUIRE(res.applied);
      if (s == 0) first = res.loss.total;
      last = res.loss.total;
    }
    return std::make_tuple(params, first, last);
  };
  auto [p1, first1, last1] = run_once();
  auto [p2, first2, last2] = run_once();
  CHECK(first1 == first2);
  CHECK(last1 == last2);
  auto v1 = tensor_views(p1), v2 = tensor_views(p2);
  for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);  // bitwise
  CHECK(last1 < first1);
}

TEST_CASE("worker count does not change the result") {
  ModelConfig cfg = tiny_config();
  auto params = Parameters<double>::init(cfg, 13);
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4}, {5, 6, 7, 8}, {9, 1, 2, 3}};
  BatchLossSettings set = tiny_settings(cfg);
  set.threads = 1;
  Parameters<double> g1 = Parameters<double>::zeros_like(params);
  auto l1 = batch_loss(params, batch, set, &g1);
  set.threads = 3;
  Parameters<double> g3 = Parameters<double>::zeros_like(params);
  auto l3 = batch_loss(params, batch, set, &g3);
  CHECK(l1.total == l3.total);
  auto a = tensor_views(g1), b = tensor_views(g3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("non-finite parameters abort the step with a diagnostic") {
  ModelConfig cfg = tiny_config();
  auto params = Parameters<float>::init(cfg, 14);
  params.w_vel(0, 0) = std::numeric_limits<float>::quiet_NaN();
  auto opt = AdamState<float>::make(params);
  auto ema = EMAState<float>::make(params, 0.999);
  TrainConfig tc;
  tc.seq_len = 4;
  tc.batch_tokens = 4;
  std::vector<std::vector<int>> batch = {{1, 2, 3, 4}};
  auto before = params;
  auto res = train_step(params, opt, ema, batch, tc, NoiseSchedule::cosine(cfg.k_max), 0, 0);
  CHECK_FALSE(res.applied);
  CHECK_FALSE(res.error.empty());
  auto pv = tensor_views(params), bv = tensor_views(before);
  for (std::size_t i = 0; i < pv.size(); ++i)
    for (Index c = 0; c < pv[i].size(); ++c) {
      bool same = pv[i][c] == bv[i][c] || (std::isnan(pv[i][c]) && std::isnan(bv[i][c]));
      CHECK(same);
    }
}

TEST_CASE("eval_nats on a uniform-logit model equals ln V") {
  ModelConfig cfg = tiny_config();
  cfg.vocab_size = 16;
  auto params = Parameters<double>::init(cfg, 15);
  params.tok_embed.setZero();  // tied head: all logits zero
  double nats = eval_nats(params, {{1, 2, 3, 4, 5}}, 0, 1);
  CHECK(nats == doctest::Approx(std::log(16.0)).epsilon(1e-9));
}
