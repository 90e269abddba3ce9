#include "evo/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace evo {

namespace {
constexpr char kMagic[8] = {'E', 'V', 'O', 'C', 'K', 'P', 'T', '1'};
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return {{"d", cfg.d},
          {"layers", cfg.layers},
          {"heads", cfg.heads},
          {"ffn_mult", cfg.ffn_mult},
          {"vocab_size", cfg.vocab_size},
          {"k_max", cfg.k_max},
          {"max_seq_len", cfg.max_seq_len},
          {"dropout", cfg.dropout},
          {"time_base_freq", cfg.time_base_freq}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d = j.at("d").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ffn_mult = j.at("ffn_mult").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.k_max = j.at("k_max").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.time_base_freq = j.value("time_base_freq", 1000.0);
  cfg.validate();
  return cfg;
}

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
  nlohmann::json manifest;
  manifest["format_version"] = data.format_version;
  manifest["model_config"] = data.model_config;
  manifest["extra"] = data.extra;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& t : data.tensors)
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  std::string mstr = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  std::uint64_t mlen = mstr.size();
  f.write(reinterpret_cast<const char*>(&mlen), 8);
  f.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  for (const auto& t : data.tensors)
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write on checkpoint: " + path);
}

CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("not an evo checkpoint: " + path);
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), 8);
  std::string mstr(mlen, '\0');
  f.read(mstr.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw std::runtime_error("truncated checkpoint manifest: " + path);
  nlohmann::json manifest = nlohmann::json::parse(mstr);

  CheckpointData data;
  data.format_version = manifest.at("format_version").get<int>();
  if (data.format_version != 1)
    throw std::runtime_error("unsupported checkpoint format version");
  data.model_config = manifest.at("model_config");
  data.extra = manifest.value("extra", nlohmann::json::object());
  for (const auto& tj : manifest.at("tensors")) {
    NamedTensor t;
    t.name = tj.at("name").get<std::string>();
    t.shape = tj.at("shape").get<std::vector<long>>();
    long n = 1;
    for (long s : t.shape) n *= s;
    t.data.resize(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("truncated checkpoint tensor data: " + path);
    data.tensors.push_back(std::move(t));
  }
  return data;
}

}  // namespace evo
