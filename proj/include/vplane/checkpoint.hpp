#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vplane/common.hpp"
#include "vplane/network.hpp"

namespace vplane {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"topology", to_string(cfg.topology)},
                        {"input_dims", {{"width", cfg.input_dims.width}, {"height", cfg.input_dims.height}}},
                        {"lane_categories", cfg.lane_categories},
                        {"base_channels", cfg.base_channels},
                        {"encoder_depth", cfg.encoder_depth},
                        {"heatmap_stride", cfg.heatmap_stride},
                        {"middle_channels", cfg.middle_channels}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.topology = parse_topology(j.at("topology").get<std::string>());
  cfg.input_dims.width = j.at("input_dims").at("width").get<int>();
  cfg.input_dims.height = j.at("input_dims").at("height").get<int>();
  cfg.lane_categories = j.at("lane_categories").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.encoder_depth = j.at("encoder_depth").get<int>();
  cfg.heatmap_stride = j.at("heatmap_stride").get<int>();
  cfg.middle_channels = j.at("middle_channels").get<int>();
  return cfg;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::uint32_t u32() {
    std::uint32_t v;
    take(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    take(reinterpret_cast<char*>(&v), 8);
    return v;
  }
  std::string str(std::size_t len) {
    std::string s(len, '\0');
    take(s.data(), len);
    return s;
  }
  void take(char* dst, std::size_t len) {
    if (pos_ + len > bytes_.size()) {
      throw IoError("checkpoint: " + name_ + " is truncated");
    }
    std::memcpy(dst, bytes_.data() + pos_, len);
    pos_ += len;
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Single-file archive: magic, format version, the model config as JSON, then
// named float32 parameter arrays in the model's declaration order.
inline constexpr char kCheckpointMagic[4] = {'V', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, Model<T>& model) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg = model_config_to_json(model.config()).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  detail::put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put_u64(out, static_cast<std::uint64_t>(p.value->size()));
    for (const T v : *p.value) {
      const float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  }
  atomic_write(path, out);
}

// Rebuilds the model from the stored config and installs the stored arrays.
// Any divergence between the stored parameter list and the rebuilt model's
// (names, sizes, order) is an error, never a silent re-shape.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path.string());

  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw IoError("load_checkpoint: " + path.string() + " is not a checkpoint archive");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("load_checkpoint: unsupported format version " + std::to_string(version));
  }
  nlohmann::json cfg_json;
  try {
    cfg_json = nlohmann::json::parse(r.str(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("load_checkpoint: bad embedded config: " + std::string(e.what()));
  }
  Model<T> model(model_config_from_json(cfg_json), 0);

  const std::uint32_t count = r.u32();
  auto& params = model.params();
  if (count != params.size()) {
    throw IoError("load_checkpoint: archive has " + std::to_string(count) + " arrays, model has " +
                  std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::string name = r.str(r.u32());
    if (name != p.name) {
      throw IoError("load_checkpoint: parameter order mismatch, archive '" + name +
                    "' vs model '" + p.name + "'");
    }
    const std::uint64_t n = r.u64();
    if (n != p.value->size()) {
      throw IoError("load_checkpoint: size mismatch for '" + name + "': archive " +
                    std::to_string(n) + ", model " + std::to_string(p.value->size()));
    }
    for (std::uint64_t i = 0; i < n; ++i) {
      float f;
      r.take(reinterpret_cast<char*>(&f), 4);
      (*p.value)[i] = static_cast<T>(f);
    }
  }
  if (!r.exhausted()) {
    throw IoError("load_checkpoint: trailing bytes in " + path.string());
  }
  return model;
}

}  // namespace vplane
