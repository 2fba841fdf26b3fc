#pragma once

// Checkpoint directory layout:
//   manifest.json  format/version, config, shapes, history
//   arrays.bin     raw little-endian float64 arrays in manifest order

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frera/error.hpp"
#include "frera/train.hpp"

namespace frera {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "frera-checkpoint";

static_assert(std::endian::native == std::endian::little, "checkpoint arrays assume a little-endian host");

namespace detail {

struct NamedArray {
  std::string name;
  nn::Matrix* value;
};

inline std::vector<NamedArray> checkpoint_arrays(Checkpoint& ck) {
  std::vector<NamedArray> out;
  auto& st = ck.state;
  for (auto* p : st.encoder.parameters()) out.push_back({p->name, &p->value});
  for (auto* b : st.encoder.buffers()) out.push_back({b->name, &b->value});
  for (auto* p : st.projector.parameters()) out.push_back({p->name, &p->value});
  out.push_back({st.importance.name, &st.importance.value});
  auto params = st.model_parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    out.push_back({"sgd.velocity." + params[i]->name, &st.model_optimizer.velocity[i]});
  out.push_back({"adam.first_moment.importance", &st.importance_optimizer.first_moment.at(0)});
  out.push_back({"adam.second_moment.importance", &st.importance_optimizer.second_moment.at(0)});
  if (ck.selected_encoder) {
    for (auto* p : ck.selected_encoder->parameters()) out.push_back({"selected." + p->name, &p->value});
    for (auto* b : ck.selected_encoder->buffers()) out.push_back({"selected." + b->name, &b->value});
  }
  return out;
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ck_in, const fs::path& dir) {
  Checkpoint ck = ck_in;
  ck.state.init_optimizer_state();
  fs::create_directories(dir);
  nlohmann::json m;
  m["format"] = kCheckpointFormat;
  m["version"] = kCheckpointVersion;
  m["config"] = ck.config;
  m["length"] = ck.length;
  m["channels"] = ck.channels;
  m["classes"] = ck.classes;
  m["epoch"] = ck.epoch;
  m["augmentation"] = ck.config.augmentation_name();
  m["adam_steps"] = ck.state.importance_optimizer.steps;
  m["has_selected_encoder"] = ck.selected_encoder.has_value();
  m["selected_epoch"] = ck.selected_epoch;
  m["history"] = ck.history;
  m["data_file"] = "arrays.bin";

  auto arrays = detail::checkpoint_arrays(ck);
  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  std::ofstream bin(dir / "arrays.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write '" + (dir / "arrays.bin").string() + "'");
  for (const auto& a : arrays) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(a.value->size()) * sizeof(double);
    entries.push_back({{"name", a.name},
                       {"shape", {a.value->rows(), a.value->cols()}},
                       {"dtype", "float64"},
                       {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(a.value->data()), static_cast<std::streamsize>(bytes));
    offset += bytes;
  }
  if (!bin) throw DataError("short write to '" + (dir / "arrays.bin").string() + "'");
  m["arrays"] = entries;
  m["total_bytes"] = offset;
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open checkpoint manifest '" + manifest_path.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  if (m.value("format", std::string{}) != kCheckpointFormat)
    throw DataError(manifest_path.string() + ": not a checkpoint manifest");
  if (m.value("version", -1) != kCheckpointVersion)
    throw DataError(manifest_path.string() + ": unsupported checkpoint version " + m.value("version", nlohmann::json(-1)).dump() +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  for (const char* key : {"config", "length", "channels", "classes", "epoch", "arrays", "total_bytes", "history"})
    if (!m.contains(key)) throw DataError(manifest_path.string() + ": missing field '" + key + "'");

  Checkpoint ck;
  try {
    ck.config = m["config"].get<TrainConfig>();
    ck.length = m["length"].get<std::size_t>();
    ck.channels = m["channels"].get<std::size_t>();
    ck.classes = m["classes"].get<std::size_t>();
    ck.epoch = m["epoch"].get<std::size_t>();
    ck.history = m["history"].get<std::vector<EpochRecord>>();
    ck.selected_epoch = m.value("selected_epoch", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  Rng scratch(0);
  ck.state = ModelState::create(ck.length, ck.channels, ck.config, scratch);
  ck.state.importance_optimizer.steps = m.value("adam_steps", std::int64_t{0});
  if (m.value("has_selected_encoder", false)) ck.selected_encoder = ck.state.encoder;

  // Validate every declared array against the architecture before reading data.
  auto arrays = detail::checkpoint_arrays(ck);
  const auto& entries = m["arrays"];
  if (!entries.is_array() || entries.size() != arrays.size())
    throw DataError(manifest_path.string() + ": expected " + std::to_string(arrays.size()) + " arrays, manifest declares " +
                    std::to_string(entries.is_array() ? entries.size() : 0));
  std::uint64_t expected_offset = 0;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    const auto& e = entries[i];
    const auto& a = arrays[i];
    if (e.value("name", std::string{}) != a.name)
      throw DataError(manifest_path.string() + ": array " + std::to_string(i) + " is '" + e.value("name", std::string{}) +
                      "', expected '" + a.name + "'");
    if (e.value("dtype", std::string{}) != "float64")
      throw DataError(manifest_path.string() + ": array '" + a.name + "' must be float64");
    const auto shape = e.value("shape", std::vector<long long>{});
    if (shape.size() != 2 || shape[0] != a.value->rows() || shape[1] != a.value->cols())
      throw DataError(manifest_path.string() + ": array '" + a.name + "' has shape " + e["shape"].dump() + ", expected [" +
                      std::to_string(a.value->rows()) + "," + std::to_string(a.value->cols()) + "]");
    if (e.value("offset", std::uint64_t{0}) != expected_offset)
      throw DataError(manifest_path.string() + ": array '" + a.name + "' offset inconsistent with declared order");
    expected_offset += static_cast<std::uint64_t>(a.value->size()) * sizeof(double);
  }
  if (m["total_bytes"].get<std::uint64_t>() != expected_offset)
    throw DataError(manifest_path.string() + ": total_bytes does not match the declared arrays");

  const fs::path bin_path = dir / m.value("data_file", std::string("arrays.bin"));
  std::error_code ec;
  const auto file_bytes = fs::file_size(bin_path, ec);
  if (ec) throw DataError("cannot stat '" + bin_path.string() + "'");
  if (file_bytes != expected_offset)
    throw DataError(bin_path.string() + ": expected " + std::to_string(expected_offset) + " bytes, found " +
                    std::to_string(file_bytes));
  std::ifstream bin(bin_path, std::ios::binary);
  for (auto& a : arrays)
    bin.read(reinterpret_cast<char*>(a.value->data()), static_cast<std::streamsize>(a.value->size() * sizeof(double)));
  if (!bin) throw DataError(bin_path.string() + ": read failed");
  return ck;
}

} // namespace frera
