#pragma once

// Binary checkpoint layout (all integers and floats little-endian):
//
//   bytes 0..3   magic "HDRF"
//   u32          format version (1)
//   u64          length L of the config block
//   L bytes      UTF-8 JSON: model config, bounds, render settings, scene
//                near/far, intrinsics, pose list, training step
//   u64          number P of parameter scalars
//   P x f64      parameters in ModelBundle::parameters() order, each tensor
//                row-major

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "hdrnerf/error.hpp"
#include "hdrnerf/fsutil.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/render.hpp"

namespace hdrnerf {

inline constexpr char kCheckpointMagic[4] = {'H', 'D', 'R', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelBundle model;
  RenderSettings render;
  double near = 2.0;
  double far = 6.0;
  Intrinsics intrinsics;
  std::vector<std::array<double, 16>> poses;
  std::uint64_t step = 0;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  auto bits = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(bits.data(), bits.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  std::array<char, sizeof(T)> bits;
  std::memcpy(bits.data(), in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"trunk_depth", c.trunk_depth},
          {"trunk_width", c.trunk_width},
          {"tone_hidden", c.tone_hidden},
          {"levels_position", c.encoding.levels_position},
          {"levels_direction", c.encoding.levels_direction},
          {"include_input", c.encoding.include_input},
          {"monotone_tone_mapper", c.monotone_tone_mapper},
          {"init_seed", c.init_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.trunk_depth = j.value("trunk_depth", c.trunk_depth);
  c.trunk_width = j.value("trunk_width", c.trunk_width);
  c.tone_hidden = j.value("tone_hidden", c.tone_hidden);
  c.encoding.levels_position = j.value("levels_position", c.encoding.levels_position);
  c.encoding.levels_direction = j.value("levels_direction", c.encoding.levels_direction);
  c.encoding.include_input = j.value("include_input", c.encoding.include_input);
  c.monotone_tone_mapper = j.value("monotone_tone_mapper", c.monotone_tone_mapper);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  using nlohmann::json;
  const auto& b = ck.model.bounds;
  const auto& k = ck.intrinsics;
  json cfg = {{"model", model_config_json(ck.model.config)},
              {"bounds", {{"min", {b.min.x, b.min.y, b.min.z}}, {"max", {b.max.x, b.max.y, b.max.z}}}},
              {"render", {{"n_coarse", ck.render.n_coarse}, {"n_fine", ck.render.n_fine},
                          {"weight_floor", ck.render.weight_floor}}},
              {"near", ck.near},
              {"far", ck.far},
              {"intrinsics", {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
                              {"height", k.height}}},
              {"poses", ck.poses},
              {"step", ck.step}};
  const std::string text = cfg.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  const auto params = ck.model.parameters();
  std::uint64_t count = 0;
  for (const auto& p : params) count += p.size();
  detail::put_le<std::uint64_t>(out, count);
  for (const auto& p : params) {
    for (double v : p.data()) detail::put_le<double>(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto len = detail::get_le<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw FormatError("checkpoint truncated in config block");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(bytes.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  pos += len;
  Checkpoint ck;
  try {
    const ModelConfig mc = model_config_from_json(cfg.at("model"));
    const auto& bb = cfg.at("bounds");
    const auto mn = bb.at("min").get<std::array<double, 3>>();
    const auto mx = bb.at("max").get<std::array<double, 3>>();
    ck.model = ModelBundle::init(mc, Aabb{{mn[0], mn[1], mn[2]}, {mx[0], mx[1], mx[2]}});
    const auto& r = cfg.at("render");
    ck.render.n_coarse = r.at("n_coarse").get<int>();
    ck.render.n_fine = r.at("n_fine").get<int>();
    ck.render.weight_floor = r.at("weight_floor").get<double>();
    ck.near = cfg.at("near").get<double>();
    ck.far = cfg.at("far").get<double>();
    const auto& k = cfg.at("intrinsics");
    ck.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                     k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    ck.poses = cfg.at("poses").get<std::vector<std::array<double, 16>>>();
    ck.step = cfg.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const auto count = detail::get_le<std::uint64_t>(bytes, pos);
  auto params = ck.model.parameters();
  std::uint64_t expected = 0;
  for (const auto& p : params) expected += p.size();
  if (count != expected) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, config implies " +
                      std::to_string(expected));
  }
  for (auto& p : params) {
    for (double& v : p.mutable_data()) v = detail::get_le<double>(bytes, pos);
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace hdrnerf
