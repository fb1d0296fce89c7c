#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "ctseg/volume.hpp"

namespace ctseg {

namespace fs = std::filesystem;

namespace detail {

inline void write_file(const fs::path& path, const void* data, size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw io_error("write failed: " + path.string());
}

inline std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw io_error("cannot open for reading: " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<char> data(static_cast<size_t>(size));
  in.read(data.data(), size);
  if (!in) throw io_error("read failed: " + path.string());
  return data;
}

// ITK-style FROM-codes: the letter names where the axis starts, so the
// canonical grid (axes toward L, P, S in the LPS frame) is coded "RAI".
inline std::string orientation_code(const Volume& v) {
  static const char from_codes[3][2] = {{'R', 'L'}, {'A', 'P'}, {'I', 'S'}};
  const OrientationMap map = quantize_orientation(v);
  std::string code(3, '?');
  for (int c = 0; c < 3; ++c) {
    const int r = map.patient_axis[static_cast<size_t>(c)];
    code[static_cast<size_t>(c)] = from_codes[r][map.flip[static_cast<size_t>(c)] > 0 ? 0 : 1];
  }
  return code;
}

}  // namespace detail

// Native volume format: a JSON manifest next to a raw little-endian payload
// (float32 for images, uint8 for masks).
inline void write_volume(const fs::path& dir, const std::string& basename, const Volume& v) {
  fs::create_directories(dir);
  const std::string payload_name = basename + ".raw";
  nlohmann::json manifest;
  manifest["extents"] = v.extents;
  manifest["spacing"] = v.spacing;
  manifest["direction"] = v.direction;
  manifest["orientation"] = detail::orientation_code(v);
  manifest["dtype"] = v.kind == VolumeKind::image ? "float32" : "uint8";
  manifest["payload"] = payload_name;
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file(dir / (basename + ".json"), text.data(), text.size());
  if (v.kind == VolumeKind::image) {
    detail::write_file(dir / payload_name, v.image.data(), v.image.size() * sizeof(float));
  } else {
    detail::write_file(dir / payload_name, v.labels.data(), v.labels.size());
  }
}

inline Volume read_volume(const fs::path& manifest_path) {
  nlohmann::json manifest;
  {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open volume manifest: " + manifest_path.string());
    in >> manifest;
  }
  Volume v;
  try {
    v.extents = manifest.at("extents").get<std::array<int64_t, 3>>();
    v.spacing = manifest.at("spacing").get<std::array<double, 3>>();
    v.direction = manifest.at("direction").get<std::array<double, 9>>();
    const std::string dtype = manifest.at("dtype").get<std::string>();
    const std::string payload = manifest.at("payload").get<std::string>();
    const fs::path payload_path = manifest_path.parent_path() / payload;
    const std::vector<char> raw = detail::read_file(payload_path);
    const size_t voxels = static_cast<size_t>(v.voxel_count());
    if (dtype == "float32") {
      v.kind = VolumeKind::image;
      if (raw.size() != voxels * sizeof(float))
        throw io_error("payload size mismatch: " + payload_path.string());
      v.image.resize(voxels);
      std::memcpy(v.image.data(), raw.data(), raw.size());
    } else if (dtype == "uint8") {
      v.kind = VolumeKind::mask;
      if (raw.size() != voxels)
        throw io_error("payload size mismatch: " + payload_path.string());
      v.labels.assign(raw.begin(), raw.end());
    } else {
      throw unsupported_format_error("unknown dtype in " + manifest_path.string() + ": " + dtype);
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed volume manifest " + manifest_path.string() + ": " + e.what());
  }
  return v;
}

// Dataset manifest: case ids, splits, and volume file names. Labels of the
// unlabeled split are withheld.
struct DatasetEntry {
  std::string id;
  std::string split;
  fs::path image_path;
  fs::path label_path;  // empty when withheld
};

inline void write_dataset(const fs::path& dir, const std::vector<Case>& cases,
                          int64_t num_classes) {
  fs::create_directories(dir / "cases");
  nlohmann::json manifest;
  manifest["num_classes"] = num_classes;
  manifest["cases"] = nlohmann::json::array();
  for (const Case& c : cases) {
    write_volume(dir / "cases", c.id + "_image", c.image);
    nlohmann::json entry;
    entry["id"] = c.id;
    entry["split"] = c.split;
    entry["image"] = "cases/" + c.id + "_image.json";
    if (c.label.has_value() && c.split != "unlabeled") {
      write_volume(dir / "cases", c.id + "_label", *c.label);
      entry["label"] = "cases/" + c.id + "_label.json";
    }
    manifest["cases"].push_back(entry);
  }
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file(dir / "dataset.json", text.data(), text.size());
}

struct DatasetManifest {
  int64_t num_classes = 0;
  std::vector<DatasetEntry> entries;

  std::vector<std::string> ids_of(const std::string& split) const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(e.id);
    return out;
  }

  const DatasetEntry& entry(const std::string& id) const {
    for (const auto& e : entries)
      if (e.id == id) return e;
    throw io_error("dataset: unknown case id " + id);
  }
};

inline DatasetManifest read_dataset(const fs::path& dir) {
  nlohmann::json manifest;
  {
    std::ifstream in(dir / "dataset.json");
    if (!in) throw io_error("cannot open dataset manifest: " + (dir / "dataset.json").string());
    in >> manifest;
  }
  DatasetManifest out;
  try {
    out.num_classes = manifest.at("num_classes").get<int64_t>();
    for (const auto& entry : manifest.at("cases")) {
      DatasetEntry e;
      e.id = entry.at("id").get<std::string>();
      e.split = entry.at("split").get<std::string>();
      e.image_path = dir / entry.at("image").get<std::string>();
      if (entry.contains("label")) e.label_path = dir / entry.at("label").get<std::string>();
      out.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw io_error("malformed dataset manifest: " + std::string(e.what()));
  }
  return out;
}

inline Case load_case(const DatasetEntry& entry) {
  Case c;
  c.id = entry.id;
  c.split = entry.split;
  c.image = read_volume(entry.image_path);
  if (!entry.label_path.empty()) c.label = read_volume(entry.label_path);
  return c;
}

}  // namespace ctseg
