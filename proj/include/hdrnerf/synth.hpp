#pragma once

// Ground-truth generator: an analytic emissive/absorbing scene, a parametric
// gamma+gain camera response, and multi-exposure LDR dataset emission.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "hdrnerf/dataset.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/geometry.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/parallel.hpp"
#include "hdrnerf/render.hpp"
#include "hdrnerf/rng.hpp"

namespace hdrnerf {

struct GroundTruthCrf {
  double gamma = 2.2;
  double gain = 1.0;
  int bits = 8;

  double max_code() const { return static_cast<double>((1 << bits) - 1); }

  /// Unquantized normalized response clamp(gain * exposure, 0, 1)^(1/gamma).
  double response(double exposure) const { return std::pow(std::clamp(gain * exposure, 0.0, 1.0), 1.0 / gamma); }

  /// Exposure that produces normalized color c in (0, 1].
  double inverse(double c) const { return std::pow(c, gamma) / gain; }

  /// Gain placing unit exposure at normalized color `c0`.
  static GroundTruthCrf anchored(double gamma, double c0) { return {gamma, std::pow(c0, gamma), 8}; }
};

/// Integer code Z = round(255 * clamp(k H dt, 0, 1)^(1/gamma)) per channel.
inline std::array<int, 3> apply_crf(const std::array<double, 3>& hdr, double dt, const GroundTruthCrf& crf) {
  if (!(dt > 0.0)) throw InputError("apply_crf needs a positive exposure time");
  std::array<int, 3> z{};
  for (int c = 0; c < 3; ++c) {
    z[c] = static_cast<int>(std::lround(crf.max_code() * crf.response(std::max(hdr[c], 0.0) * dt)));
  }
  return z;
}

struct Primitive {
  enum class Shape { sphere, box };
  Shape shape = Shape::sphere;
  Vec3 center;
  double radius = 0.5;
  Vec3 half_extents{0.5, 0.5, 0.5};
  double density = 10.0;
  std::array<double, 3> radiance{1, 1, 1};
  double smooth_width = 0.0;  // 0: hard boundary

  double signed_distance(Vec3 p) const {
    if (shape == Shape::sphere) return norm(p - center) - radius;
    const Vec3 q = abs(p - center) - half_extents;
    const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
    return norm(outside) + std::min(std::max({q.x, q.y, q.z}), 0.0);
  }

  // Density fraction at p: a step for hard primitives, a smoothstep across
  // [-w/2, w/2] of the signed distance otherwise.
  double coverage(Vec3 p) const {
    const double d = signed_distance(p);
    if (smooth_width <= 0.0) return d <= 0.0 ? 1.0 : 0.0;
    const double f = std::clamp(0.5 - d / smooth_width, 0.0, 1.0);
    return f * f * (3.0 - 2.0 * f);
  }
};

struct CameraRig {
  double radius = 4.0;
  double azimuth_span_deg = 50.0;
  double elevation_span_deg = 24.0;
  int elevation_rows = 5;
  double fov_deg = 40.0;
  int width = 64;
  int height = 64;
};

struct SceneSpec {
  Aabb bbox{{-1.5, -1.5, -1.5}, {1.5, 1.5, 1.5}};
  std::vector<Primitive> primitives;
  double ambient_density = 0.0;
  std::array<double, 3> floor_radiance{1e-3, 1e-3, 1e-3};
  double near = 2.0;
  double far = 6.5;
  CameraRig rig;
  GroundTruthCrf crf = GroundTruthCrf::anchored(2.2, 0.5);
  std::vector<double> exposure_times{1.0 / 64, 1.0 / 16, 1.0 / 4, 1.0, 4.0};
  std::vector<int> train_exposures{0, 2, 4};  // indices into exposure_times
  std::vector<int> test_exposures{2, 3};
  int n_poses = 35;
  int gt_samples = 1536;

  void validate() const {
    for (std::size_t i = 0; i < exposure_times.size(); ++i) {
      if (!(exposure_times[i] > 0.0)) throw InputError("exposure times must be positive");
      if (i > 0 && !(exposure_times[i] > exposure_times[i - 1])) {
        throw InputError("exposure times must be strictly increasing");
      }
    }
    for (const auto* list : {&train_exposures, &test_exposures}) {
      if (list->empty()) throw InputError("exposure index lists must be non-empty");
      for (int e : *list) {
        if (e < 0 || e >= static_cast<int>(exposure_times.size())) throw InputError("exposure index out of range");
      }
    }
    if (n_poses < 2) throw InputError("need at least 2 poses (one train, one test)");
    if (!(near < far) || near < 0) throw InputError("need 0 <= near < far");
    if (gt_samples < 1) throw InputError("gt_samples must be positive");
    if (!(crf.gamma > 0.0) || !(crf.gain > 0.0)) throw InputError("CRF gamma and gain must be positive");
    for (const auto& p : primitives) {
      if (p.density < 0) throw InputError("primitive density must be non-negative");
      for (double e : p.radiance) {
        if (!(e > 0.0)) throw InputError("primitive radiance must be positive");
      }
    }
  }

  /// Ratio between the brightest and dimmest primitive radiance channel.
  double dynamic_range() const {
    double lo = INFINITY, hi = 0.0;
    for (const auto& p : primitives) {
      for (double e : p.radiance) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
      }
    }
    return primitives.empty() ? 1.0 : hi / lo;
  }

  Intrinsics intrinsics() const {
    const double f = 0.5 * rig.width / std::tan(0.5 * rig.fov_deg * std::numbers::pi / 180.0);
    return {f, f, 0.5 * rig.width, 0.5 * rig.height, rig.width, rig.height};
  }

  /// C0_GT: the response at unit exposure, normalized by the max code.
  double c0_gt() const { return crf.response(1.0); }
};

struct FieldValue {
  std::array<double, 3> radiance{};
  double sigma = 0.0;
};

/// Density of the densest primitive at p and that primitive's radiance;
/// floor radiance and ambient density where no primitive exceeds ambient.
inline FieldValue scene_field(const SceneSpec& spec, Vec3 p) {
  FieldValue out{spec.floor_radiance, spec.ambient_density};
  for (const auto& prim : spec.primitives) {
    const double s = prim.density * prim.coverage(p);
    if (s > out.sigma) {
      out.sigma = s;
      out.radiance = prim.radiance;
    }
  }
  return out;
}

inline std::array<double, 3> trace_gt_ray(const SceneSpec& spec, const Ray& ray, int n_samples) {
  const auto depths = stratified_sample(ray, static_cast<std::size_t>(n_samples), nullptr);
  std::vector<double> sigma(depths.size());
  std::vector<std::array<double, 3>> values(depths.size());
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const FieldValue f = scene_field(spec, ray.at(depths[i]));
    sigma[i] = f.sigma;
    values[i] = f.radiance;
  }
  return composite(sigma, values, depths).value;
}

struct GtRender {
  Image image;          // rendered with 2 * n_samples
  double max_rel_delta = 0.0;  // worst pixel change between n and 2n samples
  bool converged = true;
};

/// Ground-truth HDR image through the same quadrature as the learned
/// renderer, at n and 2n midpoint samples. The 2n image is returned; a pixel
/// change above 0.5% (relative to max(pixel, 1% of the image mean)) marks
/// the render as not converged.
inline GtRender render_gt_hdr(const SceneSpec& spec, const CameraView& view, int n_samples) {
  if (n_samples < 1) throw InputError("render_gt_hdr needs at least one sample");
  const auto& k = view.intrinsics;
  GtRender out;
  out.image = Image(k.width, k.height);
  Image coarse(k.width, k.height);
  parallel_for(static_cast<std::size_t>(k.height), [&](std::size_t row) {
    for (int col = 0; col < k.width; ++col) {
      const Ray ray = pixel_ray(view, static_cast<int>(row), col, spec.near, spec.far);
      const auto a = trace_gt_ray(spec, ray, n_samples);
      const auto b = trace_gt_ray(spec, ray, 2 * n_samples);
      for (int c = 0; c < 3; ++c) {
        coarse.at(static_cast<int>(row), col, c) = a[c];
        out.image.at(static_cast<int>(row), col, c) = b[c];
      }
    }
  });
  double mean = 0.0;
  for (double v : out.image.data) mean += v;
  mean /= std::max<std::size_t>(1, out.image.data.size());
  const double floor = std::max(0.01 * mean, 1e-12);
  for (std::size_t i = 0; i < out.image.data.size(); ++i) {
    const double d = std::abs(out.image.data[i] - coarse.data[i]) / std::max(std::abs(out.image.data[i]), floor);
    out.max_rel_delta = std::max(out.max_rel_delta, d);
  }
  out.converged = out.max_rel_delta < 0.005;
  return out;
}

inline Image apply_crf_image(const Image& hdr, double dt, const GroundTruthCrf& crf) {
  Image out(hdr.width, hdr.height);
  for (std::size_t p = 0; p < hdr.pixels(); ++p) {
    const auto z = apply_crf({hdr.data[3 * p], hdr.data[3 * p + 1], hdr.data[3 * p + 2]}, dt, crf);
    for (int c = 0; c < 3; ++c) out.data[3 * p + c] = z[c] / crf.max_code();
  }
  return out;
}

/// Look-at poses on a spherical arc around the scene center, row-major over
/// an elevation x azimuth grid.
inline std::vector<CameraView> rig_poses(const SceneSpec& spec) {
  const auto& rig = spec.rig;
  const int rows = std::max(1, std::min(rig.elevation_rows, spec.n_poses));
  const int cols = (spec.n_poses + rows - 1) / rows;
  const Vec3 target = spec.bbox.center();
  const double deg = std::numbers::pi / 180.0;
  std::vector<CameraView> views;
  for (int i = 0; i < spec.n_poses; ++i) {
    const int r = i / cols, c = i % cols;
    const double az = cols > 1 ? (-0.5 + static_cast<double>(c) / (cols - 1)) * rig.azimuth_span_deg * deg : 0.0;
    const double el = rows > 1 ? (-0.5 + static_cast<double>(r) / (rows - 1)) * rig.elevation_span_deg * deg : 0.0;
    const Vec3 eye = target + rig.radius * Vec3{std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el)};
    CameraView v;
    v.rotation = look_at_rotation(eye, target);
    v.position = eye;
    v.intrinsics = spec.intrinsics();
    views.push_back(v);
  }
  return views;
}

inline std::string pose_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "pose_%02d", i);
  return buf;
}

struct SynthReport {
  double worst_gt_delta = 0.0;
  bool converged = true;
};

/// Builds the dataset in memory: even poses train (one exposure each, drawn
/// by a seeded balanced shuffle of the training exposure levels), odd poses
/// test (one LDR view per test exposure plus the ground-truth HDR image).
inline DatasetBundle make_dataset(const SceneSpec& spec, std::uint64_t seed, SynthReport* report = nullptr) {
  spec.validate();
  const auto poses = rig_poses(spec);
  DatasetBundle d;
  d.bbox = spec.bbox;
  d.near = spec.near;
  d.far = spec.far;
  d.intrinsics = spec.intrinsics();
  d.crf = CrfParams{spec.crf.gamma, spec.crf.gain};
  d.c0_gt = spec.c0_gt();

  const int n_train = (spec.n_poses + 1) / 2;
  std::vector<int> levels;
  for (int i = 0; i < n_train; ++i) levels.push_back(spec.train_exposures[i % spec.train_exposures.size()]);
  Rng rng(seed, 0xe4905e);
  for (std::size_t i = levels.size(); i > 1; --i) std::swap(levels[i - 1], levels[rng.below(i)]);

  std::vector<GtRender> gt(poses.size());
  parallel_for(poses.size(), [&](std::size_t i) { gt[i] = render_gt_hdr(spec, poses[i], spec.gt_samples); }, 1);

  SynthReport rep;
  int train_seen = 0;
  for (int i = 0; i < spec.n_poses; ++i) {
    rep.worst_gt_delta = std::max(rep.worst_gt_delta, gt[i].max_rel_delta);
    rep.converged = rep.converged && gt[i].converged;
    if (i % 2 == 0) {
      const int level = levels[train_seen++];
      DatasetView v;
      v.train = true;
      v.file = "train/" + pose_name(i) + "_t" + std::to_string(level + 1) + ".png";
      v.camera = poses[i];
      v.camera.exposure_time = spec.exposure_times[level];
      v.image = apply_crf_image(gt[i].image, v.camera.exposure_time, spec.crf);
      d.views.push_back(std::move(v));
    } else {
      for (int level : spec.test_exposures) {
        DatasetView v;
        v.train = false;
        v.file = "test_ldr/" + pose_name(i) + "_t" + std::to_string(level + 1) + ".png";
        v.camera = poses[i];
        v.camera.exposure_time = spec.exposure_times[level];
        v.image = apply_crf_image(gt[i].image, v.camera.exposure_time, spec.crf);
        Image hdr = gt[i].image;
        // Stored as float32 on disk; keep the in-memory copy identical to a reload.
        for (double& x : hdr.data) x = static_cast<float>(x);
        v.hdr = std::move(hdr);
        d.views.push_back(std::move(v));
      }
    }
  }
  if (!rep.converged) {
    std::fprintf(stderr, "warning: ground-truth HDR not converged (max relative change %.4f)\n", rep.worst_gt_delta);
  }
  if (report) *report = rep;
  d.assign_pose_indices();
  return d;
}

// ---------------------------------------------------------------------------
// Scene JSON

namespace detail {

inline std::array<double, 3> arr3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw InputError("expected an array of 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Vec3 v3(const nlohmann::json& j) {
  const auto a = arr3(j);
  return {a[0], a[1], a[2]};
}

}  // namespace detail

/// Parses a scene description. Keys other than "primitives" are optional and
/// default to the SceneSpec defaults.
inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  try {
    if (j.contains("bbox")) s.bbox = {detail::v3(j["bbox"].at("min")), detail::v3(j["bbox"].at("max"))};
    s.ambient_density = j.value("ambient_density", s.ambient_density);
    if (j.contains("floor_radiance")) s.floor_radiance = detail::arr3(j["floor_radiance"]);
    s.near = j.value("near", s.near);
    s.far = j.value("far", s.far);
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      s.rig.radius = c.value("radius", s.rig.radius);
      s.rig.azimuth_span_deg = c.value("azimuth_span_deg", s.rig.azimuth_span_deg);
      s.rig.elevation_span_deg = c.value("elevation_span_deg", s.rig.elevation_span_deg);
      s.rig.elevation_rows = c.value("elevation_rows", s.rig.elevation_rows);
      s.rig.fov_deg = c.value("fov_deg", s.rig.fov_deg);
      s.rig.width = c.value("width", s.rig.width);
      s.rig.height = c.value("height", s.rig.height);
    }
    if (j.contains("crf")) {
      const auto& c = j["crf"];
      s.crf.gamma = c.value("gamma", s.crf.gamma);
      if (c.contains("gain")) {
        s.crf.gain = c["gain"].get<double>();
      } else {
        s.crf = GroundTruthCrf::anchored(s.crf.gamma, c.value("c0", 0.5));
      }
    }
    if (j.contains("exposure_times")) s.exposure_times = j["exposure_times"].get<std::vector<double>>();
    if (j.contains("train_exposures")) s.train_exposures = j["train_exposures"].get<std::vector<int>>();
    if (j.contains("test_exposures")) s.test_exposures = j["test_exposures"].get<std::vector<int>>();
    s.n_poses = j.value("n_poses", s.n_poses);
    s.gt_samples = j.value("gt_samples", s.gt_samples);
    for (const auto& p : j.at("primitives")) {
      Primitive prim;
      const std::string shape = p.at("shape").get<std::string>();
      if (shape == "sphere") {
        prim.shape = Primitive::Shape::sphere;
        prim.radius = p.at("radius").get<double>();
      } else if (shape == "box") {
        prim.shape = Primitive::Shape::box;
        prim.half_extents = detail::v3(p.at("half_extents"));
      } else {
        throw InputError("unknown primitive shape '" + shape + "'");
      }
      prim.center = detail::v3(p.at("center"));
      prim.density = p.at("density").get<double>();
      prim.radiance = detail::arr3(p.at("radiance"));
      if (p.contains("falloff")) {
        const auto& f = p["falloff"];
        if (f.is_string() && f.get<std::string>() == "hard") {
          prim.smooth_width = 0.0;
        } else if (f.is_object() && f.contains("smooth")) {
          prim.smooth_width = f["smooth"].get<double>();
        } else {
          throw InputError("falloff must be \"hard\" or {\"smooth\": width}");
        }
      }
      s.primitives.push_back(prim);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scene description: ") + e.what());
  }
  s.validate();
  return s;
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  try {
    return scene_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

/// The reference desk-scale scene: a dim back wall and four primitives whose
/// radiances span three decades.
inline SceneSpec default_scene() {
  SceneSpec s;
  auto box = [](Vec3 c, Vec3 h, double sigma, std::array<double, 3> e, double w) {
    Primitive p;
    p.shape = Primitive::Shape::box;
    p.center = c;
    p.half_extents = h;
    p.density = sigma;
    p.radiance = e;
    p.smooth_width = w;
    return p;
  };
  auto sphere = [](Vec3 c, double r, double sigma, std::array<double, 3> e, double w) {
    Primitive p;
    p.shape = Primitive::Shape::sphere;
    p.center = c;
    p.radius = r;
    p.density = sigma;
    p.radiance = e;
    p.smooth_width = w;
    return p;
  };
  s.primitives = {
      box({0.0, 0.0, -1.1}, {1.45, 1.45, 0.2}, 40.0, {0.30, 0.22, 0.16}, 0.04),
      sphere({-0.55, 0.35, -0.1}, 0.38, 40.0, {40.0, 30.0, 16.0}, 0.08),
      sphere({0.5, -0.3, 0.15}, 0.42, 40.0, {0.8, 2.5, 1.2}, 0.08),
      box({0.35, 0.55, -0.45}, {0.28, 0.22, 0.2}, 40.0, {0.04, 0.06, 0.09}, 0.04),
      sphere({-0.35, -0.6, 0.3}, 0.25, 40.0, {6.0, 1.5, 0.5}, 0.08),
  };
  return s;
}

}  // namespace hdrnerf
