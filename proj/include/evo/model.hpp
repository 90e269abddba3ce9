#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "evo/flow.hpp"
#include "evo/rng.hpp"
#include "evo/types.hpp"

namespace evo {

struct ModelConfig {
  int d = 128;
  int layers = 4;
  int heads = 4;
  int ffn_mult = 4;
  int vocab_size = 256;
  int k_max = 20;
  int max_seq_len = 256;
  double dropout = 0.1;
  double time_base_freq = 1000.0;

  void validate() const {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("ModelConfig: d must be even and >= 2");
    if (heads < 1 || d % heads != 0)
      throw std::invalid_argument("ModelConfig: d must be divisible by heads");
    if (layers < 1 || ffn_mult < 1 || vocab_size < 2 || max_seq_len < 1 || k_max < 1)
      throw std::invalid_argument("ModelConfig: non-positive dimension");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout must lie in [0,1)");
  }
};

struct TimeEmbeddingSpec {
  int dim = 128;
  double base_freq = 1000.0;

  void validate() const {
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("TimeEmbeddingSpec: dim must be even");
    if (base_freq <= 0.0) throw std::invalid_argument("TimeEmbeddingSpec: base_freq must be positive");
  }
};

// Interleaved sin/cos features at geometrically spaced frequencies
// omega_j = base^(1 - 2j/dim); pair 0 oscillates at the base frequency.
template <class S>
Vec<S> time_embed(double t, const TimeEmbeddingSpec& spec) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("time_embed: t must lie in [0,1]");
  Vec<S> e(spec.dim);
  for (int j = 0; j < spec.dim / 2; ++j) {
    double w = std::pow(spec.base_freq, 1.0 - 2.0 * j / spec.dim);
    e[2 * j] = static_cast<S>(std::sin(w * t));
    e[2 * j + 1] = static_cast<S>(std::cos(w * t));
  }
  return e;
}

// d/dt of time_embed.
template <class S>
Vec<S> time_embed_dt(double t, const TimeEmbeddingSpec& spec) {
  Vec<S> e(spec.dim);
  for (int j = 0; j < spec.dim / 2; ++j) {
    double w = std::pow(spec.base_freq, 1.0 - 2.0 * j / spec.dim);
    e[2 * j] = static_cast<S>(w * std::cos(w * t));
    e[2 * j + 1] = static_cast<S>(-w * std::sin(w * t));
  }
  return e;
}

template <class S>
struct Parameters {
  ModelConfig cfg;

  Mat<S> tok_embed;     // V x d, tied with the decode head
  Mat<S> pos_embed;     // max_seq_len x d
  Vec<S> step_vec;      // d, auxiliary refinement-step channel
  Vec<S> start_latent;  // d, latent prior seed for sampling

  struct Layer {
    Vec<S> ln1_g, ln1_b, ln2_g, ln2_b;
    Mat<S> wq, wk, wv, wo;  // d x d
    Vec<S> bq, bk, bv, bo;
    Mat<S> w1;  // d x hidden
    Vec<S> b1;
    Mat<S> w2;  // hidden x d
    Vec<S> b2;
  };
  std::vector<Layer> layers;

  Vec<S> lnf_g, lnf_b;
  Mat<S> w_vel;  // d x d velocity / reconstruction head
  Vec<S> b_vel;

  Mat<S> w_t1;  // d x d, progression-time head
  Vec<S> b_t1;
  Vec<S> w_t2;  // d
  Vec<S> b_t2;  // size 1

  TimeEmbeddingSpec time_spec() const { return {cfg.d, cfg.time_base_freq}; }

  // Truncated-normal(0.02) projections, unit norms, zero biases; the
  // final layer of the t head starts at zero so every token begins at
  // t = 0.5.
  static Parameters init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Parameters p;
    p.cfg = cfg;
    Rng rng = Rng::stream(seed, 0x1417u);
    auto tn = [&](Index r, Index c) {
      Mat<S> m(r, c);
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) {
          double x = rng.normal();
          while (std::abs(x) > 2.0) x = rng.normal();
          m(i, j) = static_cast<S>(0.02 * x);
        }
      return m;
    };
    const int d = cfg.d, hid = cfg.d * cfg.ffn_mult;
    p.tok_embed = tn(cfg.vocab_size, d);
    p.pos_embed = tn(cfg.max_seq_len, d);
    p.step_vec = tn(d, 1);
    p.start_latent = tn(d, 1);
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
      l.ln1_g = Vec<S>::Ones(d);
      l.ln1_b = Vec<S>::Zero(d);
      l.ln2_g = Vec<S>::Ones(d);
      l.ln2_b = Vec<S>::Zero(d);
      l.wq = tn(d, d);
      l.wk = tn(d, d);
      l.wv = tn(d, d);
      l.wo = tn(d, d);
      l.bq = Vec<S>::Zero(d);
      l.bk = Vec<S>::Zero(d);
      l.bv = Vec<S>::Zero(d);
      l.bo = Vec<S>::Zero(d);
      l.w1 = tn(d, hid);
      l.b1 = Vec<S>::Zero(hid);
      l.w2 = tn(hid, d);
      l.b2 = Vec<S>::Zero(d);
    }
    p.lnf_g = Vec<S>::Ones(d);
    p.lnf_b = Vec<S>::Zero(d);
    p.w_vel = tn(d, d);
    p.b_vel = Vec<S>::Zero(d);
    p.w_t1 = tn(d, d);
    p.b_t1 = Vec<S>::Zero(d);
    p.w_t2 = Vec<S>::Zero(d);
    p.b_t2 = Vec<S>::Zero(1);
    return p;
  }

  long parameter_count() const {
    long n = 0;
    const_cast<Parameters&>(*this).for_each([&](const std::string&, auto& t) { n += t.size(); });
    return n;
  }

  // Visits every tensor in a fixed order (the checkpoint and optimizer
  // layouts both follow it).
  template <class F>
  void for_each(F&& f) {
    f("tok_embed", tok_embed);
    f("pos_embed", pos_embed);
    f("step_vec", step_vec);
    f("start_latent", start_latent);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::string base = "layers." + std::to_string(i) + ".";
      auto& l = layers[i];
      f(base + "ln1_g", l.ln1_g);
      f(base + "ln1_b", l.ln1_b);
      f(base + "wq", l.wq);
      f(base + "bq", l.bq);
      f(base + "wk", l.wk);
      f(base + "bk", l.bk);
      f(base + "wv", l.wv);
      f(base + "bv", l.bv);
      f(base + "wo", l.wo);
      f(base + "bo", l.bo);
      f(base + "ln2_g", l.ln2_g);
      f(base + "ln2_b", l.ln2_b);
      f(base + "w1", l.w1);
      f(base + "b1", l.b1);
      f(base + "w2", l.w2);
      f(base + "b2", l.b2);
    }
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
    f("w_vel", w_vel);
    f("b_vel", b_vel);
    f("t_head.w1", w_t1);
    f("t_head.b1", b_t1);
    f("t_head.w2", w_t2);
    f("t_head.b2", b_t2);
  }

  static Parameters zeros_like(const Parameters& other) {
    Parameters p = other;
    p.for_each([](const std::string&, auto& t) { t.setZero(); });
    return p;
  }
};

// Flat views over every tensor, in visitor order; lets optimizer, EMA,
// clipping and reduction code zip parameter-shaped objects together.
template <class S>
std::vector<Eigen::Map<Vec<S>>> tensor_views(Parameters<S>& p) {
  std::vector<Eigen::Map<Vec<S>>> v;
  p.for_each([&](const std::string&, auto& t) { v.emplace_back(t.data(), t.size()); });
  return v;
}

template <class S>
std::vector<std::string> tensor_names(const Parameters<S>& p) {
  std::vector<std::string> names;
  const_cast<Parameters<S>&>(p).for_each(
      [&](const std::string& n, auto&) { names.push_back(n); });
  return names;
}

// Parameter-group label used by the gradient checker.
inline std::string group_of(const std::string& tensor_name) {
  if (tensor_name.rfind("t_head.", 0) == 0) return "t_head";
  if (tensor_name == "w_vel" || tensor_name == "b_vel") return "vel_head";
  if (tensor_name.find("ln") != std::string::npos) return "norms";
  if (tensor_name.find(".w1") != std::string::npos || tensor_name.find(".b1") != std::string::npos ||
      tensor_name.find(".w2") != std::string::npos || tensor_name.find(".b2") != std::string::npos)
    return "ffn";
  if (tensor_name.find("layers.") == 0) return "attention";
  return "embeddings";
}

// ---------------------------------------------------------------------------
// Backbone forward / backward

template <class S>
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
  Mat<S> mask(Index r, Index c) const {
    Mat<S> m(r, c);
    S scale = static_cast<S>(1.0 / (1.0 - rate));
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = rng->uniform() < rate ? S(0) : scale;
    return m;
  }
};

template <class S>
struct LayerCache {
  Mat<S> h_in;
  Mat<S> ln1_xhat, ln1_out;
  Vec<S> ln1_istd;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // per head, L x L
  Mat<S> attn_concat;
  Mat<S> drop1;
  Mat<S> resid1;
  Mat<S> ln2_xhat, ln2_out;
  Vec<S> ln2_istd;
  Mat<S> ffn_pre, ffn_th, ffn_act;
  Mat<S> drop2;
};

template <class S>
struct BackboneCache {
  Mat<S> input;
  std::vector<LayerCache<S>> layers;
  Mat<S> lnf_xhat;
  Vec<S> lnf_istd;
  Mat<S> out;
  bool causal = false;
};

namespace detail {

constexpr double kLnEps = 1e-5;

template <class S>
void layer_norm(const Mat<S>& x, const Vec<S>& g, const Vec<S>& b, Mat<S>& xhat, Vec<S>& istd,
                Mat<S>& out) {
  Vec<S> mu = x.rowwise().mean();
  xhat = x.colwise() - mu;
  istd = ((xhat.array().square().rowwise().mean()) + static_cast<S>(kLnEps)).rsqrt();
  xhat = (xhat.array().colwise() * istd.array()).matrix();
  out = ((xhat.array().rowwise() * g.transpose().array()).rowwise() +
         b.transpose().array())
            .matrix();
}

template <class S>
void layer_norm_backward(const Mat<S>& dout, const Mat<S>& xhat, const Vec<S>& istd,
                         const Vec<S>& g, Mat<S>& dx, Vec<S>& dg, Vec<S>& db) {
  Mat<S> dxhat = (dout.array().rowwise() * g.transpose().array()).matrix();
  Vec<S> m1 = dxhat.rowwise().mean();
  Vec<S> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  dx = ((dxhat.colwise() - m1).array() - (xhat.array().colwise() * m2.array()))
           .colwise() *
       istd.array();
  dg += (dout.array() * xhat.array()).colwise().sum().matrix().transpose();
  db += dout.colwise().sum().transpose();
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <class S>
void gelu(const Mat<S>& x, Mat<S>& th, Mat<S>& y) {
  auto xa = x.array();
  th = (static_cast<S>(kGeluC) * (xa + static_cast<S>(kGeluA) * xa.cube())).tanh().matrix();
  y = (S(0.5) * xa * (S(1) + th.array())).matrix();
}

template <class S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& th, const Mat<S>& dy) {
  auto xa = x.array();
  auto t = th.array();
  auto du = (S(1) - t.square()) * static_cast<S>(kGeluC) *
            (S(1) + S(3) * static_cast<S>(kGeluA) * xa.square());
  return (dy.array() * (S(0.5) * (S(1) + t) + S(0.5) * xa * du)).matrix();
}

template <class S>
void softmax_rows_masked(Mat<S>& scores, bool causal) {
  const Index rows = scores.rows();
  for (Index i = 0; i < rows; ++i) {
    Index limit = causal ? i + 1 : scores.cols();
    auto row = scores.row(i).head(limit);
    S m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
    if (limit < scores.cols()) scores.row(i).tail(scores.cols() - limit).setZero();
  }
}

}  // namespace detail

// One forward pass of the shared backbone over per-token input rows
// (embeddings / latents with positional, time and step channels already
// added by the caller). Returns the final layer-normed hidden states.
template <class S>
Mat<S> backbone_forward(const Parameters<S>& params, const Mat<S>& input, bool causal,
                        const Dropout<S>& dropout = {}, BackboneCache<S>* cache = nullptr) {
  const auto& cfg = params.cfg;
  const Index len = input.rows();
  if (len > cfg.max_seq_len)
    throw std::length_error("backbone_forward: sequence longer than max_seq_len");
  if (input.cols() != cfg.d) throw std::invalid_argument("backbone_forward: input width != d");
  if (!input.allFinite()) throw std::runtime_error("backbone_forward: non-finite input");

  const int hcount = cfg.heads, dh = cfg.d / cfg.heads;
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  if (cache) {
    cache->layers.resize(cfg.layers);
    cache->input = input;
    cache->causal = causal;
  }

  Mat<S> h = input;
  for (int li = 0; li < cfg.layers; ++li) {
    const auto& l = params.layers[li];
    LayerCache<S> local;
    LayerCache<S>& c = cache ? cache->layers[li] : local;
    c.h_in = h;

    detail::layer_norm(h, l.ln1_g, l.ln1_b, c.ln1_xhat, c.ln1_istd, c.ln1_out);
    c.q = (c.ln1_out * l.wq).rowwise() + l.bq.transpose();
    c.k = (c.ln1_out * l.wk).rowwise() + l.bk.transpose();
    c.v = (c.ln1_out * l.wv).rowwise() + l.bv.transpose();

    c.attn_concat.resize(len, cfg.d);
    c.probs.resize(hcount);
    for (int hd = 0; hd < hcount; ++hd) {
      auto qh = c.q.middleCols(hd * dh, dh);
      auto kh = c.k.middleCols(hd * dh, dh);
      auto vh = c.v.middleCols(hd * dh, dh);
      Mat<S> scores = qh * kh.transpose() * inv_sqrt_dh;
      detail::softmax_rows_masked(scores, causal);
      c.probs[hd] = std::move(scores);
      c.attn_concat.middleCols(hd * dh, dh) = c.probs[hd] * vh;
    }

    Mat<S> attn = (c.attn_concat * l.wo).rowwise() + l.bo.transpose();
    if (dropout.active()) {
      c.drop1 = dropout.mask(len, cfg.d);
      attn = attn.cwiseProduct(c.drop1);
    }
    c.resid1 = h + attn;

    detail::layer_norm(c.resid1, l.ln2_g, l.ln2_b, c.ln2_xhat, c.ln2_istd, c.ln2_out);
    c.ffn_pre = (c.ln2_out * l.w1).rowwise() + l.b1.transpose();
    detail::gelu(c.ffn_pre, c.ffn_th, c.ffn_act);
    Mat<S> f = (c.ffn_act * l.w2).rowwise() + l.b2.transpose();
    if (dropout.active()) {
      c.drop2 = dropout.mask(len, cfg.d);
      f = f.cwiseProduct(c.drop2);
    }
    h = c.resid1 + f;
  }

  Mat<S> out;
  if (cache) {
    detail::layer_norm(h, params.lnf_g, params.lnf_b, cache->lnf_xhat, cache->lnf_istd, out);
    cache->out = out;
  } else {
    Mat<S> xhat;
    Vec<S> istd;
    detail::layer_norm(h, params.lnf_g, params.lnf_b, xhat, istd, out);
  }
  return out;
}

// Reverse pass. Accumulates parameter gradients into `grads` and returns
// the gradient w.r.t. the input rows.
template <class S>
Mat<S> backbone_backward(const Parameters<S>& params, const BackboneCache<S>& cache,
                         const Mat<S>& dout, Parameters<S>& grads) {
  const auto& cfg = params.cfg;
  const int hcount = cfg.heads, dh = cfg.d / cfg.heads;
  const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<S> dh_stream;
  detail::layer_norm_backward(dout, cache.lnf_xhat, cache.lnf_istd, params.lnf_g, dh_stream,
                              grads.lnf_g, grads.lnf_b);

  for (int li = cfg.layers - 1; li >= 0; --li) {
    const auto& l = params.layers[li];
    auto& gl = grads.layers[li];
    const auto& c = cache.layers[li];

    // FFN branch
    Mat<S> df = dh_stream;
    if (c.drop2.size() > 0) df = df.cwiseProduct(c.drop2);
    gl.b2 += df.colwise().sum().transpose();
    gl.w2 += c.ffn_act.transpose() * df;
    Mat<S> dact = df * l.w2.transpose();
    Mat<S> dpre = detail::gelu_backward(c.ffn_pre, c.ffn_th, dact);
    gl.b1 += dpre.colwise().sum().transpose();
    gl.w1 += c.ln2_out.transpose() * dpre;
    Mat<S> dln2_out = dpre * l.w1.transpose();
    Mat<S> dresid1;
    detail::layer_norm_backward(dln2_out, c.ln2_xhat, c.ln2_istd, l.ln2_g, dresid1, gl.ln2_g,
                                gl.ln2_b);
    dresid1 += dh_stream;

    // attention branch
    Mat<S> da = dresid1;
    if (c.drop1.size() > 0) da = da.cwiseProduct(c.drop1);
    gl.bo += da.colwise().sum().transpose();
    gl.wo += c.attn_concat.transpose() * da;
    Mat<S> dconcat = da * l.wo.transpose();

    Mat<S> dq = Mat<S>::Zero(c.q.rows(), c.q.cols());
    Mat<S> dk = Mat<S>::Zero(c.k.rows(), c.k.cols());
    Mat<S> dv = Mat<S>::Zero(c.v.rows(), c.v.cols());
    for (int hd = 0; hd < hcount; ++hd) {
      auto qh = c.q.middleCols(hd * dh, dh);
      auto kh = c.k.middleCols(hd * dh, dh);
      auto vh = c.v.middleCols(hd * dh, dh);
      const Mat<S>& p = c.probs[hd];
      Mat<S> doh = dconcat.middleCols(hd * dh, dh);
      Mat<S> dp = doh * vh.transpose();
      dv.middleCols(hd * dh, dh) = p.transpose() * doh;
      // softmax rows: ds = p .* (dp - rowdot(p, dp))
      Mat<S> ds(p.rows(), p.cols());
      for (Index i = 0; i < p.rows(); ++i) {
        S dot = p.row(i).dot(dp.row(i));
        ds.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
      }
      dq.middleCols(hd * dh, dh) = ds * kh * inv_sqrt_dh;
      dk.middleCols(hd * dh, dh) = ds.transpose() * qh * inv_sqrt_dh;
    }

    gl.bq += dq.colwise().sum().transpose();
    gl.bk += dk.colwise().sum().transpose();
    gl.bv += dv.colwise().sum().transpose();
    gl.wq += c.ln1_out.transpose() * dq;
    gl.wk += c.ln1_out.transpose() * dk;
    gl.wv += c.ln1_out.transpose() * dv;
    Mat<S> dln1_out = dq * l.wq.transpose() + dk * l.wk.transpose() + dv * l.wv.transpose();
    Mat<S> dh_in;
    detail::layer_norm_backward(dln1_out, c.ln1_xhat, c.ln1_istd, l.ln1_g, dh_in, gl.ln1_g,
                                gl.ln1_b);
    dh_stream = dresid1 + dh_in;
  }
  return dh_stream;
}

// ---------------------------------------------------------------------------
// Heads

// Builds the per-token input rows for a refinement pass: latents plus
// positional embedding, sinusoidal embedding of each token's t_i, and the
// global step channel k / K_max.
template <class S>
Mat<S> build_field_input(const Parameters<S>& params, const Mat<S>& latents, const Vec<S>& times,
                         int step) {
  const auto& cfg = params.cfg;
  const Index len = latents.rows();
  if (len > cfg.max_seq_len) throw std::length_error("build_field_input: sequence too long");
  TimeEmbeddingSpec spec = params.time_spec();
  Mat<S> x = latents;
  S sc = static_cast<S>(static_cast<double>(step) / cfg.k_max);
  for (Index i = 0; i < len; ++i) {
    x.row(i) += params.pos_embed.row(i) +
                time_embed<S>(static_cast<double>(times[i]), spec).transpose() +
                sc * params.step_vec.transpose();
  }
  return x;
}

// One non-causal pass of the network over (latents, t_i, step); returns
// per-position velocities.
template <class S>
Mat<S> field_eval(const Parameters<S>& params, const LatentSequence<S>& seq, int step,
                  BackboneCache<S>* cache = nullptr) {
  seq.validate();
  if (!seq.latents.allFinite()) throw std::runtime_error("field_eval: non-finite latents");
  Mat<S> x = build_field_input(params, seq.latents, seq.times, step);
  Mat<S> y = backbone_forward(params, x, /*causal=*/false, {}, cache);
  return ((y * params.w_vel).rowwise() + params.b_vel.transpose()).eval();
}

template <class S>
struct TimeHeadCache {
  Mat<S> input;
  Mat<S> pre, th, act;
  Vec<S> t;
};

// Two-layer GELU MLP with a final sigmoid; the zero-initialized output
// layer starts every token at t = 0.5. Outputs are clamped to
// [1e-6, 1 - 1e-6] so the open interval survives 32-bit rounding.
template <class S>
Vec<S> predict_times(const Parameters<S>& params, const Mat<S>& initial_latents,
                     TimeHeadCache<S>* cache = nullptr) {
  if (initial_latents.cols() != params.cfg.d)
    throw std::invalid_argument("predict_times: latent width != d");
  TimeHeadCache<S> local;
  TimeHeadCache<S>& c = cache ? *cache : local;
  c.input = initial_latents;
  c.pre = (initial_latents * params.w_t1).rowwise() + params.b_t1.transpose();
  detail::gelu(c.pre, c.th, c.act);
  Vec<S> logit = c.act * params.w_t2 + Vec<S>::Constant(initial_latents.rows(), params.b_t2[0]);
  c.t.resize(logit.size());
  for (Index i = 0; i < logit.size(); ++i) {
    double v = 1.0 / (1.0 + std::exp(-static_cast<double>(logit[i])));
    v = std::min(1.0 - 1e-6, std::max(1e-6, v));
    c.t[i] = static_cast<S>(v);
  }
  return c.t;
}

// Backprop of dL/dt through the time head; accumulates parameter
// gradients and returns the gradient w.r.t. the input latents.
template <class S>
Mat<S> predict_times_backward(const Parameters<S>& params, const TimeHeadCache<S>& cache,
                              const Vec<S>& dt, Parameters<S>& grads) {
  // sigmoid'(x) = t (1 - t); the clamp is flat outside the open interval.
  Vec<S> dlogit(dt.size());
  for (Index i = 0; i < dt.size(); ++i) {
    S t = cache.t[i];
    bool clamped = t <= static_cast<S>(1e-6) || t >= static_cast<S>(1.0 - 1e-6);
    dlogit[i] = clamped ? S(0) : dt[i] * t * (S(1) - t);
  }
  grads.b_t2[0] += dlogit.sum();
  grads.w_t2 += cache.act.transpose() * dlogit;
  Mat<S> dact = dlogit * params.w_t2.transpose();
  Mat<S> dpre = detail::gelu_backward(cache.pre, cache.th, dact);
  grads.b_t1 += dpre.colwise().sum().transpose();
  grads.w_t1 += cache.input.transpose() * dpre;
  return dpre * params.w_t1.transpose();
}

// Tied decode head: unnormalized scores over the vocabulary.
template <class S>
Mat<S> decode_logits(const Parameters<S>& params, const Mat<S>& final_latents) {
  if (final_latents.cols() != params.cfg.d)
    throw std::invalid_argument("decode_logits: latent width != d");
  return final_latents * params.tok_embed.transpose();
}

// Nearest-neighbor decoding over an embedding table; ties go to the
// smallest id.
template <class S>
std::vector<int> nn_decode(const Mat<S>& final_latents, const Mat<S>& embedding_table) {
  if (embedding_table.rows() == 0) throw std::domain_error("nn_decode: empty embedding table");
  if (!embedding_table.allFinite()) throw std::runtime_error("nn_decode: non-finite table");
  if (final_latents.cols() != embedding_table.cols())
    throw std::invalid_argument("nn_decode: dimension mismatch");
  std::vector<int> ids(final_latents.rows());
  for (Index i = 0; i < final_latents.rows(); ++i) {
    S best = std::numeric_limits<S>::max();
    int arg = 0;
    for (Index v = 0; v < embedding_table.rows(); ++v) {
      S dist = (final_latents.row(i) - embedding_table.row(v)).squaredNorm();
      if (dist < best) {
        best = dist;
        arg = static_cast<int>(v);
      }
    }
    ids[i] = arg;
  }
  return ids;
}

}  // namespace evo
