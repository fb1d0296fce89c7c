#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "ctseg/network.hpp"

namespace ctseg {

// Flat binary parameter container: 8-byte magic, u64 little-endian manifest
// length, JSON manifest (names, shapes, float offsets, network config), then
// the 32-bit little-endian float payload.
namespace checkpoint {

constexpr char MAGIC[8] = {'C', 'T', 'S', 'E', 'G', 'P', 'R', 'M'};

inline nlohmann::json network_config_to_json(const NetworkConfig& cfg) {
  return {
      {"in_channels", cfg.in_channels},
      {"num_classes", cfg.num_classes},
      {"base_features", cfg.base_features},
      {"num_stages", cfg.num_stages},
      {"decoder_upsampling", cfg.decoder_upsampling == Upsampling::transposed ? "transposed" : "trilinear"},
      {"conv_style", cfg.conv_style == ConvStyle::regular ? "regular" : "separable"},
      {"se_reduction", cfg.se_reduction},
  };
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig cfg;
  cfg.in_channels = j.at("in_channels").get<int64_t>();
  cfg.num_classes = j.at("num_classes").get<int64_t>();
  cfg.base_features = j.at("base_features").get<int64_t>();
  cfg.num_stages = j.at("num_stages").get<int>();
  const std::string up = j.at("decoder_upsampling").get<std::string>();
  require(up == "transposed" || up == "trilinear", "checkpoint: bad decoder_upsampling: " + up);
  cfg.decoder_upsampling = up == "transposed" ? Upsampling::transposed : Upsampling::trilinear;
  const std::string style = j.at("conv_style").get<std::string>();
  require(style == "regular" || style == "separable", "checkpoint: bad conv_style: " + style);
  cfg.conv_style = style == "regular" ? ConvStyle::regular : ConvStyle::separable;
  cfg.se_reduction = j.at("se_reduction").get<int64_t>();
  return cfg;
}

}  // namespace checkpoint

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                     const NetworkConfig& config) {
  nlohmann::json manifest;
  manifest["format"] = 1;
  manifest["network"] = checkpoint::network_config_to_json(config);
  manifest["tensors"] = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& name : params.order) {
    const Tensor<T>& t = params.at(name);
    manifest["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint: " + path.string());
  out.write(checkpoint::MAGIC, 8);
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> buffer;
  for (const auto& name : params.order) {
    const Tensor<T>& t = params.at(name);
    buffer.resize(static_cast<size_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i)
      buffer[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  }
  if (!out) throw io_error("checkpoint write failed: " + path.string());
}

template <typename T>
struct LoadedCheckpoint {
  ModelParams<T> params;
  NetworkConfig config;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, checkpoint::MAGIC, 8) != 0)
    throw unsupported_format_error("not a parameter container: " + path.string());
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw io_error("truncated checkpoint manifest: " + path.string());

  LoadedCheckpoint<T> out;
  try {
    const nlohmann::json manifest = nlohmann::json::parse(text);
    out.config = checkpoint::network_config_from_json(manifest.at("network"));
    for (const auto& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      Tensor<T> t(shape);
      std::vector<float> buffer(static_cast<size_t>(t.size()));
      in.read(reinterpret_cast<char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
      if (!in) throw io_error("truncated checkpoint payload: " + path.string());
      for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = static_cast<T>(buffer[static_cast<size_t>(i)]);
      out.params.order.push_back(name);
      out.params.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ctseg
