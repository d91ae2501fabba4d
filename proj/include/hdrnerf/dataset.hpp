#pragma once

// On-disk dataset: meta.json plus train/ (PNG), test_ldr/ (PNG) and
// test_hdr/ (PFM). A test view "test_ldr/<pose>_<tag>.png" finds its
// ground-truth HDR at "test_hdr/<pose>.pfm".

#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hdrnerf/error.hpp"
#include "hdrnerf/fsutil.hpp"
#include "hdrnerf/geometry.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/image_io.hpp"
#include "hdrnerf/render.hpp"

namespace hdrnerf {

inline constexpr const char* kDatasetVersion = "1.0";

struct CrfParams {
  double gamma = 2.2;
  double gain = 1.0;
  friend bool operator==(const CrfParams&, const CrfParams&) = default;
};

struct DatasetView {
  std::string file;  // relative to the dataset root
  bool train = true;
  CameraView camera;
  Image image;                 // LDR, normalized
  std::optional<Image> hdr;    // ground truth for test views, when present
  std::size_t pose_index = 0;  // index into DatasetBundle::poses()
};

struct DatasetBundle {
  std::string version = kDatasetVersion;
  Aabb bbox;
  double near = 2.0;
  double far = 6.0;
  Intrinsics intrinsics;
  std::optional<CrfParams> crf;
  std::optional<double> c0_gt;
  std::vector<DatasetView> views;

  std::vector<std::size_t> indices(bool train) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (views[i].train == train) out.push_back(i);
    }
    return out;
  }

  /// Distinct poses in order of first appearance.
  std::vector<std::array<double, 16>> poses() const {
    std::vector<std::array<double, 16>> out;
    for (const auto& v : views) {
      const auto m = v.camera.c2w();
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    return out;
  }

  std::vector<double> train_exposures() const {
    std::vector<double> out;
    for (const auto& v : views) {
      if (v.train && std::find(out.begin(), out.end(), v.camera.exposure_time) == out.end()) {
        out.push_back(v.camera.exposure_time);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void assign_pose_indices() {
    const auto p = poses();
    for (auto& v : views) {
      v.pose_index = static_cast<std::size_t>(std::find(p.begin(), p.end(), v.camera.c2w()) - p.begin());
    }
  }
};

inline std::string hdr_file_for(const std::string& ldr_file) {
  const std::filesystem::path p(ldr_file);
  std::string stem = p.stem().string();
  if (const auto cut = stem.rfind('_'); cut != std::string::npos) stem.resize(cut);
  return "test_hdr/" + stem + ".pfm";
}

inline nlohmann::json dataset_meta(const DatasetBundle& d) {
  using nlohmann::json;
  json j;
  j["version"] = d.version;
  j["bbox"] = {{"min", {d.bbox.min.x, d.bbox.min.y, d.bbox.min.z}}, {"max", {d.bbox.max.x, d.bbox.max.y, d.bbox.max.z}}};
  j["near"] = d.near;
  j["far"] = d.far;
  const auto& k = d.intrinsics;
  j["intrinsics"] = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  j["crf"] = d.crf ? json{{"gamma", d.crf->gamma}, {"gain", d.crf->gain}} : json(nullptr);
  j["c0_gt"] = d.c0_gt ? json(*d.c0_gt) : json(nullptr);
  j["views"] = json::array();
  for (const auto& v : d.views) {
    j["views"].push_back({{"file", v.file},
                          {"split", v.train ? "train" : "test"},
                          {"c2w", v.camera.c2w()},
                          {"exposure_time_s", v.camera.exposure_time}});
  }
  return j;
}

/// Writes images and meta.json under `dir`. Test views with an HDR image
/// also write the matching PFM.
inline void write_dataset(const std::filesystem::path& dir, const DatasetBundle& d) {
  for (const auto& v : d.views) {
    write_png(dir / v.file, v.image);
    if (!v.train && v.hdr) write_pfm(dir / hdr_file_for(v.file), *v.hdr);
  }
  write_file_atomic(dir / "meta.json", dataset_meta(d).dump(2) + "\n");
}

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw InputError(where + ": missing key '" + key + "'");
  return j.at(key);
}

inline double number(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_number()) throw InputError(where + ": '" + key + "' must be a number");
  return v.get<double>();
}

inline Vec3 vec3(const nlohmann::json& j, const char* key, const std::string& where) {
  const auto& v = require(j, key, where);
  if (!v.is_array() || v.size() != 3) throw InputError(where + ": '" + key + "' must be 3 numbers");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace detail

/// Loads and validates a dataset directory. Fails on the first
/// inconsistency with a message naming the offending entry.
inline DatasetBundle load_dataset(const std::filesystem::path& dir, bool load_images = true) {
  using detail::number;
  using detail::require;
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw InputError("missing " + meta_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(meta_path.string() + ": " + e.what());
  }
  const std::string where = meta_path.string();
  DatasetBundle d;
  try {
    const auto& ver = require(j, "version", where);
    if (!ver.is_string()) throw InputError(where + ": 'version' must be a string");
    d.version = ver.get<std::string>();
    if (d.version.substr(0, d.version.find('.')) != "1") {
      throw InputError(where + ": unsupported dataset major version '" + d.version + "'");
    }
    const auto& bbox = require(j, "bbox", where);
    d.bbox = {detail::vec3(bbox, "min", where + " bbox"), detail::vec3(bbox, "max", where + " bbox")};
    d.near = number(j, "near", where);
    d.far = number(j, "far", where);
    if (!(d.near < d.far) || d.near < 0) throw InputError(where + ": need 0 <= near < far");
    const auto& k = require(j, "intrinsics", where);
    d.intrinsics = {number(k, "fx", where), number(k, "fy", where), number(k, "cx", where), number(k, "cy", where),
                    static_cast<int>(number(k, "width", where)), static_cast<int>(number(k, "height", where))};
    if (d.intrinsics.width < 1 || d.intrinsics.height < 1) throw InputError(where + ": bad image size");
    const auto& crf = require(j, "crf", where);
    if (!crf.is_null()) d.crf = CrfParams{number(crf, "gamma", where), number(crf, "gain", where)};
    const auto& c0 = require(j, "c0_gt", where);
    if (!c0.is_null()) {
      if (!c0.is_number()) throw InputError(where + ": 'c0_gt' must be a number or null");
      d.c0_gt = c0.get<double>();
    }
    const auto& views = require(j, "views", where);
    if (!views.is_array()) throw InputError(where + ": 'views' must be an array");
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& v = views[i];
      const std::string vw = where + " view " + std::to_string(i);
      DatasetView view;
      view.file = require(v, "file", vw).get<std::string>();
      const std::string split = require(v, "split", vw).get<std::string>();
      if (split != "train" && split != "test") throw InputError(vw + " (" + view.file + "): bad split '" + split + "'");
      view.train = split == "train";
      const auto c2w = require(v, "c2w", vw).get<std::vector<double>>();
      if (c2w.size() != 16) throw InputError(vw + " (" + view.file + "): c2w needs 16 values");
      const double dt = number(v, "exposure_time_s", vw);
      if (!(dt > 0.0)) {
        throw InputError(vw + " (" + view.file + "): exposure_time_s must be positive, got " + std::to_string(dt));
      }
      view.camera = CameraView::from_c2w(c2w, d.intrinsics, dt);
      try {
        view.camera.validate();
      } catch (const InputError& e) {
        throw InputError(vw + " (" + view.file + "): " + e.what());
      }
      const auto path = dir / view.file;
      if (!std::filesystem::exists(path)) throw InputError(vw + ": missing image file " + path.string());
      if (load_images) {
        view.image = read_png(path);
        if (view.image.width != d.intrinsics.width || view.image.height != d.intrinsics.height) {
          throw InputError(vw + ": " + path.string() + " is " + std::to_string(view.image.width) + "x" +
                           std::to_string(view.image.height) + ", intrinsics declare " +
                           std::to_string(d.intrinsics.width) + "x" + std::to_string(d.intrinsics.height));
        }
        if (!view.train) {
          const auto hdr_path = dir / hdr_file_for(view.file);
          if (std::filesystem::exists(hdr_path)) {
            view.hdr = read_pfm(hdr_path);
            if (!view.hdr->same_shape(view.image)) throw InputError(vw + ": HDR size mismatch in " + hdr_path.string());
          }
        }
      }
      d.views.push_back(std::move(view));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(where + ": schema violation: " + e.what());
  }
  if (d.indices(true).empty()) throw InputError(where + ": dataset has no training views");
  d.assign_pose_indices();
  return d;
}

}  // namespace hdrnerf
