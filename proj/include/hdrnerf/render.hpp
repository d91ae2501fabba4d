#pragma once

// Pinhole ray generation, stratified and importance sampling along rays, and
// the discrete volume-rendering quadrature. LDR rendering tone maps every
// sample before compositing; HDR rendering composites exp(ln e) directly.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "hdrnerf/autodiff.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/geometry.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/parallel.hpp"
#include "hdrnerf/rng.hpp"

namespace hdrnerf {

// Distance assigned to the last sample of every ray, so it absorbs whatever
// transmittance remains.
inline constexpr double kTerminalDelta = 1e10;

struct Ray {
  Vec3 origin;
  Vec3 direction;
  double near = 0.0;
  double far = 1.0;

  Vec3 at(double s) const { return origin + s * direction; }

  void validate() const {
    if (!(near < far)) throw InputError("ray near bound must be below far bound");
    if (std::abs(norm(direction) - 1.0) > 1e-6) throw InputError("ray direction must be unit length");
  }
};

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// Camera-to-world pose (OpenGL convention: the camera looks down -z, +y up)
/// plus intrinsics and the exposure time of the view.
struct CameraView {
  Mat3 rotation;
  Vec3 position;
  Intrinsics intrinsics;
  double exposure_time = 1.0;

  void validate() const {
    if (orthonormality_error(rotation) > 1e-6) throw InputError("camera rotation is not orthonormal");
    if (!(exposure_time > 0.0)) throw InputError("exposure time must be positive");
    if (intrinsics.width < 1 || intrinsics.height < 1) throw InputError("image size must be positive");
  }

  /// Row-major 4x4 camera-to-world matrix.
  std::array<double, 16> c2w() const {
    std::array<double, 16> m{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) m[r * 4 + c] = rotation(r, c);
      m[r * 4 + 3] = position[r];
    }
    m[15] = 1.0;
    return m;
  }

  static CameraView from_c2w(std::span<const double> m, const Intrinsics& k, double dt) {
    if (m.size() != 16) throw InputError("c2w needs 16 values");
    CameraView v;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) v.rotation(r, c) = m[r * 4 + c];
      v.position[r] = m[r * 4 + 3];
    }
    v.intrinsics = k;
    v.exposure_time = dt;
    return v;
  }
};

/// Camera at `eye` looking at `target`, with `up` as the approximate up vector.
inline Mat3 look_at_rotation(Vec3 eye, Vec3 target, Vec3 up = {0, 1, 0}) {
  const Vec3 back = normalize(eye - target);  // camera +z
  const Vec3 right = normalize(cross(up, back));
  const Vec3 true_up = cross(back, right);
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    r(i, 0) = right[i];
    r(i, 1) = true_up[i];
    r(i, 2) = back[i];
  }
  return r;
}

struct PixelIndex {
  int row = 0;
  int col = 0;
};

inline Ray pixel_ray(const CameraView& view, int row, int col, double near, double far) {
  const auto& k = view.intrinsics;
  if (row < 0 || col < 0 || row >= k.height || col >= k.width) {
    throw InputError("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside " +
                     std::to_string(k.width) + "x" + std::to_string(k.height) + " image");
  }
  const Vec3 cam{(col + 0.5 - k.cx) / k.fx, -(row + 0.5 - k.cy) / k.fy, -1.0};
  return Ray{view.position, normalize(view.rotation * cam), near, far};
}

inline std::vector<Ray> generate_rays(const CameraView& view, std::span<const PixelIndex> pixels, double near,
                                      double far) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& p : pixels) rays.push_back(pixel_ray(view, p.row, p.col, near, far));
  return rays;
}

/// n depths, the i-th drawn uniformly from the i-th of n equal bins of
/// [near, far]. Without an rng the bin midpoints are returned.
inline std::vector<double> stratified_sample(const Ray& ray, std::size_t n, Rng* rng) {
  if (n == 0) throw InputError("stratified_sample needs at least one sample");
  std::vector<double> s(n);
  const double step = (ray.far - ray.near) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng ? rng->uniform() : 0.5;
    s[i] = ray.near + (static_cast<double>(i) + u) * step;
  }
  return s;
}

inline std::vector<double> uniform_bin_edges(double near, double far, std::size_t bins) {
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = near + (far - near) * static_cast<double>(i) / static_cast<double>(bins);
  e.back() = far;
  return e;
}

/// Inverse-CDF sampling of the piecewise-constant density over `bin_edges`
/// proportional to weights + floor. The n uniforms are stratified over [0, 1)
/// (or placed at stratum midpoints without an rng), so output is sorted.
inline std::vector<double> hierarchical_sample(std::span<const double> bin_edges, std::span<const double> weights,
                                               std::size_t n, Rng* rng, double floor = 1e-5) {
  if (n == 0) throw InputError("hierarchical_sample needs at least one sample");
  if (bin_edges.size() != weights.size() + 1 || weights.empty()) {
    throw ShapeError("hierarchical_sample needs bins + 1 edges");
  }
  const std::size_t bins = weights.size();
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t i = 0; i < bins; ++i) {
    if (!(weights[i] >= 0.0)) throw InputError("hierarchical_sample weights must be non-negative");
    cdf[i + 1] = cdf[i] + weights[i] + floor;
  }
  const double total = cdf.back();
  if (!(total > 0.0)) throw DegenerateError("all importance weights are zero");
  for (double& c : cdf) c /= total;
  cdf.back() = 1.0;

  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = (static_cast<double>(j) + (rng ? rng->uniform() : 0.5)) / static_cast<double>(n);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t k = static_cast<std::size_t>(std::distance(cdf.begin(), it));
    k = std::clamp<std::size_t>(k, 1, bins) - 1;
    const double mass = cdf[k + 1] - cdf[k];
    const double t = mass > 0.0 ? std::clamp((u - cdf[k]) / mass, 0.0, 1.0) : 0.5;
    out[j] = bin_edges[k] + t * (bin_edges[k + 1] - bin_edges[k]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature

struct CompositeOutput {
  std::vector<double> weights;
  std::vector<double> transmittance;  // T_i, before sample i
  std::array<double, 3> value{};
  double opacity = 0.0;
  double depth = 0.0;
  double final_transmittance = 1.0;
};

inline void check_composite_inputs(std::span<const double> sigmas, std::span<const double> depths) {
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw InputError("composite density must be non-negative");
  }
  for (std::size_t i = 1; i < depths.size(); ++i) {
    if (depths[i] < depths[i - 1]) throw InputError("composite depths must be sorted");
  }
}

/// Alpha compositing along one ray: delta_i = s_{i+1} - s_i (terminal delta
/// for the last sample), alpha_i = 1 - exp(-sigma_i delta_i),
/// T_i = prod_{j<i}(1 - alpha_j), w_i = T_i alpha_i, value = sum w_i v_i.
inline CompositeOutput composite(std::span<const double> sigmas, std::span<const std::array<double, 3>> values,
                                 std::span<const double> depths) {
  const std::size_t n = sigmas.size();
  if (values.size() != n || depths.size() != n) throw ShapeError("composite inputs differ in length");
  check_composite_inputs(sigmas, depths);
  CompositeOutput out;
  out.weights.resize(n);
  out.transmittance.resize(n);
  double t = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double delta = i + 1 < n ? depths[i + 1] - depths[i] : kTerminalDelta;
    const double alpha = -std::expm1(-sigmas[i] * delta);
    out.transmittance[i] = t;
    const double w = t * alpha;
    out.weights[i] = w;
    for (int c = 0; c < 3; ++c) out.value[c] += w * values[i][c];
    out.opacity += w;
    out.depth += w * depths[i];
    t *= std::exp(-sigmas[i] * delta);
  }
  out.final_transmittance = t;
  return out;
}

struct CompositeBatch {
  ad::Tensor value;              // rays x 3
  std::vector<double> weights;   // rays x per_ray
};

/// Tape-aware compositing of `rays` rays with `per_ray` samples each.
/// sigma is N x 1, values N x 3, depths has N entries (sorted per ray).
inline CompositeBatch composite_batch(ad::Tape& tape, const ad::Tensor& sigma, const ad::Tensor& values,
                                      std::span<const double> depths, std::size_t per_ray) {
  const std::size_t n = sigma.size();
  if (per_ray == 0 || n % per_ray != 0 || values.rows() != n || values.cols() != 3 || depths.size() != n) {
    throw ShapeError("composite_batch: inconsistent sample layout");
  }
  const std::size_t rays = n / per_ray;
  check_composite_inputs(sigma.data(), {});
  std::vector<double> delta(n);
  for (std::size_t r = 0; r < rays; ++r) {
    const std::size_t b = r * per_ray;
    for (std::size_t i = 0; i < per_ray; ++i) {
      if (i + 1 < per_ray) {
        delta[b + i] = depths[b + i + 1] - depths[b + i];
        if (delta[b + i] < 0.0) throw InputError("composite depths must be sorted");
      } else {
        delta[b + i] = kTerminalDelta;
      }
    }
  }
  const auto sg = sigma.data();
  const auto v = values.data();
  CompositeBatch result;
  result.weights.resize(n);
  std::vector<double> attenuation(n);  // exp(-sigma delta)
  std::vector<double> trans(n);        // T_i
  std::vector<double> out(rays * 3, 0.0);
  for (std::size_t r = 0; r < rays; ++r) {
    double t = 1.0;
    for (std::size_t i = r * per_ray; i < (r + 1) * per_ray; ++i) {
      const double x = sg[i] * delta[i];
      attenuation[i] = std::exp(-x);
      trans[i] = t;
      const double w = t * -std::expm1(-x);
      result.weights[i] = w;
      for (int c = 0; c < 3; ++c) out[r * 3 + c] += w * v[i * 3 + c];
      t *= attenuation[i];
    }
  }
  result.value = tape.custom(
      "composite", {rays, 3}, std::move(out), {sigma, values},
      [per_ray, rays, delta = std::move(delta), attenuation = std::move(attenuation), trans = std::move(trans),
       weights = result.weights](ad::Record& rec) {
        const auto& g = rec.output->grad;
        const auto& vals = rec.inputs[1]->value;
        if (rec.inputs[1]->requires_grad) {
          auto dv = rec.inputs[1]->grad_slot();
          for (std::size_t r = 0; r < rays; ++r) {
            for (std::size_t i = r * per_ray; i < (r + 1) * per_ray; ++i) {
              for (int c = 0; c < 3; ++c) dv[i * 3 + c] += weights[i] * g[r * 3 + c];
            }
          }
        }
        if (rec.inputs[0]->requires_grad) {
          // d out / d sigma_k = delta_k (T_{k+1} v_k - sum_{i>k} w_i v_i), projected on g.
          auto ds = rec.inputs[0]->grad_slot();
          for (std::size_t r = 0; r < rays; ++r) {
            double behind = 0.0;  // sum_{i>k} w_i (v_i . g)
            for (std::size_t k = (r + 1) * per_ray; k-- > r * per_ray;) {
              double vg = 0.0;
              for (int c = 0; c < 3; ++c) vg += vals[k * 3 + c] * g[r * 3 + c];
              const double t_next = trans[k] * attenuation[k];
              const double d = t_next * vg - behind;
              if (d != 0.0) ds[k] += delta[k] * d;
              behind += weights[k] * vg;
            }
          }
        }
      });
  return result;
}

// ---------------------------------------------------------------------------
// Ray batches through the model

struct RenderSettings {
  int n_coarse = 32;
  int n_fine = 32;  // importance samples added in the fine stage
  bool perturb = false;
  double weight_floor = 1e-5;

  void validate() const {
    if (n_coarse < 1 || n_fine < 0) throw InputError("sample counts must be n_coarse >= 1, n_fine >= 0");
  }
};

enum class Stage { coarse, fine };

struct StageOutput {
  FieldOutput field;
  std::vector<double> depths;  // rays x per_ray
  std::size_t per_ray = 0;
};

inline StageOutput run_field_stage(ad::Tape& tape, const ModelBundle& model, const FieldParams& field,
                                   std::span<const Ray> rays, std::vector<double> depths, std::size_t per_ray) {
  const std::size_t n = rays.size() * per_ray;
  std::vector<Vec3> pos(n), dir(n);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for (std::size_t i = 0; i < per_ray; ++i) {
      pos[r * per_ray + i] = rays[r].at(depths[r * per_ray + i]);
      dir[r * per_ray + i] = rays[r].direction;
    }
  }
  auto [ep, ed] = encode_samples(model.config, model.bounds, pos, dir);
  StageOutput s;
  s.field = field_forward(tape, field, ep, ed);
  s.depths = std::move(depths);
  s.per_ray = per_ray;
  return s;
}

inline std::vector<double> coarse_depths(std::span<const Ray> rays, const RenderSettings& cfg, Rng* rng) {
  std::vector<double> d;
  d.reserve(rays.size() * cfg.n_coarse);
  for (const auto& ray : rays) {
    const auto s = stratified_sample(ray, static_cast<std::size_t>(cfg.n_coarse), rng);
    d.insert(d.end(), s.begin(), s.end());
  }
  return d;
}

/// Coarse depths merged with importance samples drawn from coarse weights.
inline std::vector<double> fine_depths(std::span<const Ray> rays, std::span<const double> coarse,
                                       std::span<const double> coarse_weights, const RenderSettings& cfg, Rng* rng) {
  const std::size_t nc = static_cast<std::size_t>(cfg.n_coarse);
  const std::size_t per_ray = nc + static_cast<std::size_t>(cfg.n_fine);
  std::vector<double> d;
  d.reserve(rays.size() * per_ray);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto edges = uniform_bin_edges(rays[r].near, rays[r].far, nc);
    std::vector<double> merged(coarse.begin() + r * nc, coarse.begin() + (r + 1) * nc);
    if (cfg.n_fine > 0) {
      const auto extra = hierarchical_sample(edges, coarse_weights.subspan(r * nc, nc),
                                             static_cast<std::size_t>(cfg.n_fine), rng, cfg.weight_floor);
      merged.insert(merged.end(), extra.begin(), extra.end());
      std::sort(merged.begin(), merged.end());
    }
    d.insert(d.end(), merged.begin(), merged.end());
  }
  return d;
}

inline ad::Tensor repeat_per_sample(std::span<const double> per_ray_values, std::size_t per_ray) {
  std::vector<double> v;
  v.reserve(per_ray_values.size() * per_ray);
  for (double x : per_ray_values) v.insert(v.end(), per_ray, x);
  const std::size_t n = v.size();
  return ad::Tensor::from({n, 1}, std::move(v));
}

struct LdrPrediction {
  ad::Tensor coarse;  // rays x 3
  ad::Tensor fine;    // rays x 3
};

/// Differentiable coarse + fine LDR rendering of a ray batch, one exposure
/// time per ray. Importance sampling uses the (non-differentiated) coarse
/// weights.
inline LdrPrediction render_rays_ldr(ad::Tape& tape, const ModelBundle& model, std::span<const Ray> rays,
                                     std::span<const double> exposure_times, const RenderSettings& cfg, Rng* rng) {
  if (exposure_times.size() != rays.size()) throw ShapeError("one exposure time per ray required");
  std::vector<double> log_dt(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) {
    if (!(exposure_times[i] > 0.0)) throw InputError("exposure time must be positive");
    log_dt[i] = std::log(exposure_times[i]);
  }
  Rng* jitter = cfg.perturb ? rng : nullptr;
  const std::size_t nc = static_cast<std::size_t>(cfg.n_coarse);
  auto cd = coarse_depths(rays, cfg, jitter);
  const StageOutput coarse = run_field_stage(tape, model, model.coarse, rays, std::move(cd), nc);
  const ad::Tensor coarse_colors =
      tone_forward(tape, model.tone, coarse.field.log_radiance, repeat_per_sample(log_dt, nc));
  const CompositeBatch cc = composite_batch(tape, coarse.field.sigma, coarse_colors, coarse.depths, nc);

  auto fd = fine_depths(rays, coarse.depths, cc.weights, cfg, jitter);
  const std::size_t nf = nc + static_cast<std::size_t>(cfg.n_fine);
  const StageOutput fine = run_field_stage(tape, model, model.fine, rays, std::move(fd), nf);
  const ad::Tensor fine_colors = tone_forward(tape, model.tone, fine.field.log_radiance, repeat_per_sample(log_dt, nf));
  const CompositeBatch fc = composite_batch(tape, fine.field.sigma, fine_colors, fine.depths, nf);
  return {cc.value, fc.value};
}

/// Inference output for a ray batch: HDR radiance plus LDR colors at each
/// requested exposure, all from one set of samples.
struct RayRender {
  std::vector<double> hdr;               // rays x 3
  std::vector<std::vector<double>> ldr;  // per exposure, rays x 3
  std::vector<double> opacity;           // rays
};

/// With `with_hdr` false the HDR output is left empty, so LDR renders do not
/// depend on exp(ln e) staying finite.
inline RayRender render_rays(const ModelBundle& model, std::span<const Ray> rays, std::span<const double> exposures,
                             Stage which, const RenderSettings& cfg, Rng* rng, bool with_hdr = true) {
  for (const auto& r : rays) r.validate();
  ad::Tape tape(false);
  Rng* jitter = cfg.perturb ? rng : nullptr;
  const std::size_t nc = static_cast<std::size_t>(cfg.n_coarse);
  auto cd = coarse_depths(rays, cfg, jitter);
  StageOutput stage = run_field_stage(tape, model, model.coarse, rays, std::move(cd), nc);
  if (which == Stage::fine) {
    // Coarse weights only steer sampling, so the coarse colors do not matter:
    // compositing the density alone yields identical weights.
    const ad::Tensor dummy = ad::Tensor::zeros({stage.depths.size(), 3});
    const CompositeBatch cc = composite_batch(tape, stage.field.sigma, dummy, stage.depths, nc);
    auto fd = fine_depths(rays, stage.depths, cc.weights, cfg, jitter);
    stage = run_field_stage(tape, model, model.fine, rays, std::move(fd), nc + static_cast<std::size_t>(cfg.n_fine));
  }
  const std::size_t per_ray = stage.per_ray;
  const std::size_t n = stage.depths.size();

  RayRender out;
  if (with_hdr) {
    std::vector<double> radiance(n * 3);
    const auto lr = stage.field.log_radiance.data();
    for (std::size_t i = 0; i < n * 3; ++i) radiance[i] = std::exp(lr[i]);
    const ad::Tensor hdr = composite_batch(tape, stage.field.sigma, ad::Tensor::from({n, 3}, std::move(radiance)),
                                           stage.depths, per_ray)
                               .value;
    out.hdr.assign(hdr.data().begin(), hdr.data().end());
  }

  const CompositeBatch ones = composite_batch(tape, stage.field.sigma, ad::Tensor::from({n, 3}, std::vector<double>(n * 3, 1.0)),
                                              stage.depths, per_ray);
  out.opacity.resize(rays.size());
  for (std::size_t r = 0; r < rays.size(); ++r) out.opacity[r] = ones.value.at(r, 0);

  for (double dt : exposures) {
    if (!(dt > 0.0)) throw InputError("exposure time must be positive");
    const ad::Tensor colors = tone_forward(tape, model.tone, stage.field.log_radiance, ad::Tensor::scalar(std::log(dt)));
    const ad::Tensor ldr = composite_batch(tape, stage.field.sigma, colors, stage.depths, per_ray).value;
    out.ldr.emplace_back(ldr.data().begin(), ldr.data().end());
  }
  return out;
}

inline std::array<double, 3> render_ldr(const Ray& ray, double dt, const ModelBundle& model, Stage which,
                                        const RenderSettings& cfg, Rng* rng = nullptr) {
  const double exposures[1] = {dt};
  const auto r = render_rays(model, std::span(&ray, 1), exposures, which, cfg, rng, false);
  return {r.ldr[0][0], r.ldr[0][1], r.ldr[0][2]};
}

inline std::array<double, 3> render_hdr(const Ray& ray, const ModelBundle& model, Stage which,
                                        const RenderSettings& cfg, Rng* rng = nullptr) {
  const auto r = render_rays(model, std::span(&ray, 1), {}, which, cfg, rng);
  return {r.hdr[0], r.hdr[1], r.hdr[2]};
}

struct ViewRender {
  Image hdr;
  std::vector<Image> ldr;  // one per requested exposure
};

/// Renders every pixel of `view` through the fine model. Pixels are split
/// into fixed chunks rendered in parallel; per-chunk RNG streams derive from
/// (seed, chunk index), so the output does not depend on the worker count.
inline ViewRender render_view(const CameraView& view, const ModelBundle& model, std::span<const double> exposures,
                              double near, double far, const RenderSettings& cfg, std::uint64_t seed = 0,
                              bool with_hdr = true) {
  view.validate();
  cfg.validate();
  const auto& k = view.intrinsics;
  const std::size_t total = static_cast<std::size_t>(k.width) * k.height;
  constexpr std::size_t kChunk = 512;
  const std::size_t chunks = (total + kChunk - 1) / kChunk;
  ViewRender out;
  if (with_hdr) out.hdr = Image(k.width, k.height);
  out.ldr.assign(exposures.size(), Image(k.width, k.height));
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kChunk, end = std::min(total, begin + kChunk);
    std::vector<Ray> rays;
    rays.reserve(end - begin);
    for (std::size_t p = begin; p < end; ++p) {
      rays.push_back(pixel_ray(view, static_cast<int>(p / k.width), static_cast<int>(p % k.width), near, far));
    }
    Rng rng(seed, c);
    const RayRender rr = render_rays(model, rays, exposures, Stage::fine, cfg, &rng, with_hdr);
    for (std::size_t p = begin; p < end; ++p) {
      for (int ch = 0; ch < 3; ++ch) {
        if (with_hdr) out.hdr.data[p * 3 + ch] = rr.hdr[(p - begin) * 3 + ch];
        for (std::size_t e = 0; e < exposures.size(); ++e) out.ldr[e].data[p * 3 + ch] = rr.ldr[e][(p - begin) * 3 + ch];
      }
    }
  });
  return out;
}

struct RenderMode {
  bool hdr = false;
  double exposure_time = 1.0;

  static RenderMode ldr(double dt) { return {false, dt}; }
  static RenderMode high_dynamic_range() { return {true, 1.0}; }
};

inline Image render_image(const CameraView& view, const ModelBundle& model, RenderMode mode, double near, double far,
                          const RenderSettings& cfg, std::uint64_t seed = 0) {
  if (mode.hdr) return render_view(view, model, {}, near, far, cfg, seed).hdr;
  const double dt[1] = {mode.exposure_time};
  return std::move(render_view(view, model, dt, near, far, cfg, seed, false).ldr[0]);
}

}  // namespace hdrnerf
