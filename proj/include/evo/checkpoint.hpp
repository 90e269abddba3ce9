#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "evo/model.hpp"
#include "evo/trainer.hpp"

namespace evo {

// Checkpoint container: an 8-byte magic, a little-endian u64 manifest
// length, the JSON manifest, then the raw little-endian float32 tensor
// data concatenated in manifest order. Loading and re-saving reproduces
// the file byte for byte.
struct NamedTensor {
  std::string name;
  std::vector<long> shape;
  std::vector<float> data;
};

struct CheckpointData {
  int format_version = 1;
  nlohmann::json model_config;
  nlohmann::json extra;  // step counters etc.
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

void save_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint_file(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// --------------------------------------------------------------------------
// Parameters <-> tensor blobs

template <class S>
void append_tensors(Parameters<S>& params, const std::string& prefix, CheckpointData& out) {
  params.for_each([&](const std::string& name, auto& t) {
    NamedTensor nt;
    nt.name = prefix + name;
    if (t.cols() == 1)
      nt.shape = {static_cast<long>(t.rows())};
    else
      nt.shape = {static_cast<long>(t.rows()), static_cast<long>(t.cols())};
    nt.data.resize(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i)
      nt.data[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
    out.tensors.push_back(std::move(nt));
  });
}

template <class S>
void read_tensors(const CheckpointData& in, const std::string& prefix, Parameters<S>& params) {
  params.for_each([&](const std::string& name, auto& t) {
    const NamedTensor* nt = in.find(prefix + name);
    if (!nt) throw std::runtime_error("checkpoint: missing tensor " + prefix + name);
    if (static_cast<Index>(nt->data.size()) != t.size())
      throw std::runtime_error("checkpoint: size mismatch for " + prefix + name);
    for (Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<S>(nt->data[static_cast<std::size_t>(i)]);
  });
}

template <class S>
CheckpointData make_model_checkpoint(const Parameters<S>& params, long step = 0) {
  CheckpointData data;
  data.model_config = model_config_to_json(params.cfg);
  data.extra["step"] = step;
  append_tensors(const_cast<Parameters<S>&>(params), "", data);
  return data;
}

template <class S>
Parameters<S> params_from_checkpoint(const CheckpointData& data) {
  ModelConfig cfg = model_config_from_json(data.model_config);
  Parameters<S> p = Parameters<S>::init(cfg, 0);
  read_tensors(data, "", p);
  return p;
}

// Full training state (parameters + optimizer moments + EMA shadow).
template <class S>
CheckpointData make_train_checkpoint(const Parameters<S>& params, const AdamState<S>& opt,
                                     const EMAState<S>& ema, long step) {
  CheckpointData data = make_model_checkpoint(params, step);
  data.extra["adam_step"] = opt.step;
  data.extra["ema_decay"] = ema.decay;
  append_tensors(const_cast<Parameters<S>&>(opt.m), "adam.m.", data);
  append_tensors(const_cast<Parameters<S>&>(opt.v), "adam.v.", data);
  append_tensors(const_cast<Parameters<S>&>(ema.shadow), "ema.", data);
  return data;
}

template <class S>
struct TrainState {
  Parameters<S> params;
  AdamState<S> opt;
  EMAState<S> ema;
  long step = 0;
};

template <class S>
TrainState<S> train_state_from_checkpoint(const CheckpointData& data) {
  TrainState<S> st;
  st.params = params_from_checkpoint<S>(data);
  st.opt = AdamState<S>::make(st.params);
  st.ema = EMAState<S>::make(st.params, data.extra.value("ema_decay", 0.9999));
  st.step = data.extra.value("step", 0L);
  st.opt.step = data.extra.value("adam_step", 0L);
  if (data.find("adam.m.tok_embed")) {
    read_tensors(data, "adam.m.", st.opt.m);
    read_tensors(data, "adam.v.", st.opt.v);
    read_tensors(data, "ema.", st.ema.shadow);
  }
  return st;
}

}  // namespace evo
