#ifndef SETMARGIN_CHECKPOINT_HPP
#define SETMARGIN_CHECKPOINT_HPP

// Model checkpoints as versioned JSON: arch descriptor, input normalizer and
// the flat parameter vector. Doubles are written with round-trip precision,
// so save/load is exact.

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "setmargin/common.hpp"
#include "setmargin/encoder.hpp"

namespace setmargin {

inline constexpr const char* kCheckpointFormat = "setmargin-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const EncoderArch& a) {
  return {{"cell", to_string(a.cell)},
          {"input_channels", a.input_channels},
          {"hidden_dim", a.hidden_dim},
          {"num_recurrent_layers", a.num_layers},
          {"embedding_dim", a.embedding_dim},
          {"dropout_rate", a.dropout_rate}};
}

inline EncoderArch arch_from_json(const nlohmann::json& j) {
  EncoderArch a;
  a.cell = cell_from_string(j.value("cell", std::string("lstm")));
  a.input_channels = j.value("input_channels", kFeatureChannels);
  a.hidden_dim = j.value("hidden_dim", a.hidden_dim);
  a.num_layers = j.value("num_recurrent_layers", a.num_layers);
  a.embedding_dim = j.value("embedding_dim", a.embedding_dim);
  a.dropout_rate = j.value("dropout_rate", a.dropout_rate);
  a.validate();
  return a;
}

inline nlohmann::json checkpoint_to_json(const ModelParams& p) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["arch"] = arch_to_json(p.arch);
  j["input_norm"] = {{"enabled", p.input_norm.enabled}, {"mean", p.input_norm.mean}, {"scale", p.input_norm.scale}};
  j["params"] = p.values;
  return j;
}

inline ModelParams checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat) throw DataError("checkpoint: unrecognized format");
  if (j.value("version", 0) != kCheckpointVersion) throw DataError("checkpoint: unsupported version");
  ModelParams p;
  p.arch = arch_from_json(j.at("arch"));
  const auto& n = j.at("input_norm");
  p.input_norm.enabled = n.at("enabled").get<bool>();
  p.input_norm.mean = n.at("mean").get<std::array<double, kFeatureChannels>>();
  p.input_norm.scale = n.at("scale").get<std::array<double, kFeatureChannels>>();
  p.values = j.at("params").get<Vec>();
  if (p.values.size() != param_count(p.arch)) {
    throw DataError("checkpoint: " + std::to_string(p.values.size()) + " parameters, arch needs " + std::to_string(param_count(p.arch)));
  }
  return p;
}

inline std::string checkpoint_text(const ModelParams& p) { return checkpoint_to_json(p).dump() + "\n"; }

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << checkpoint_text(p);
  if (!out) throw DataError("failed writing checkpoint " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace setmargin

#endif  // SETMARGIN_CHECKPOINT_HPP
