#pragma once

// Losses, learning-rate schedule and the optimization loop.
//
//   L = L_c + lambda_u * L_u
//   L_c = mean over rays of |C_coarse - C|^2 + |C_fine - C|^2
//   L_u = |g(0) - C0|^2
//
// Each iteration draws batch_rays (view, pixel) pairs uniformly with
// replacement from the training views. The batch is split into fixed-size
// chunks, each differentiated on its own tape against a private copy of the
// parameters; chunk gradients are summed in chunk order, so the result is
// independent of the worker count.

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hdrnerf/autodiff.hpp"
#include "hdrnerf/checkpoint.hpp"
#include "hdrnerf/dataset.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/fsutil.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/parallel.hpp"
#include "hdrnerf/render.hpp"
#include "hdrnerf/rng.hpp"

namespace hdrnerf {

using Rgb = std::array<double, 3>;

// ---------------------------------------------------------------------------
// Losses on plain values

inline double color_loss(std::span<const Rgb> pred_coarse, std::span<const Rgb> pred_fine, std::span<const Rgb> target) {
  if (target.empty()) throw InputError("color_loss of an empty batch");
  if (pred_coarse.size() != target.size() || pred_fine.size() != target.size()) {
    throw ShapeError("color_loss batch lengths differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double dc = pred_coarse[i][c] - target[i][c];
      const double df = pred_fine[i][c] - target[i][c];
      s += dc * dc + df * df;
    }
  }
  return s / static_cast<double>(target.size());
}

inline double unit_exposure_loss(const ToneMapperParams& tone, const Rgb& c0) {
  const Rgb g0 = tone_map(tone, {0.0, 0.0, 0.0}, 0.0);
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (g0[c] - c0[c]) * (g0[c] - c0[c]);
  return s;
}

inline double total_loss(double color, double unit, double lambda_u) { return color + lambda_u * unit; }

/// Exponential decay from lr_start at step 0 to lr_end at total_steps.
inline double lr_schedule(long long step, long long total_steps, double lr_start, double lr_end) {
  if (total_steps <= 0) throw InputError("lr_schedule needs total_steps > 0");
  if (step < 0 || step > total_steps) throw InputError("lr_schedule step outside [0, total_steps]");
  return lr_start * std::pow(lr_end / lr_start, static_cast<double>(step) / static_cast<double>(total_steps));
}

// ---------------------------------------------------------------------------
// Tape versions

/// g(0) - C0 penalty recorded on the tape.
inline ad::Tensor unit_exposure_loss(ad::Tape& tape, const ToneMapperParams& tone, const Rgb& c0) {
  const ad::Tensor g0 = tone_forward(tape, tone, ad::Tensor::zeros({1, 3}), ad::Tensor::scalar(0.0));
  return tape.mean_sq_err(g0, ad::Tensor::from({1, 3}, {c0[0], c0[1], c0[2]}));
}

struct LossTerms {
  ad::Tensor color_coarse;
  ad::Tensor color_fine;
  ad::Tensor unit;
  ad::Tensor total;
};

/// Full objective for a ray batch. `color_scale` rescales the color terms so
/// that chunks of a larger batch sum to the batch mean; `include_unit`
/// controls whether this tape carries the (once-per-batch) L_u term.
inline LossTerms batch_loss(ad::Tape& tape, const ModelBundle& model, std::span<const Ray> rays,
                            std::span<const double> exposure_times, const ad::Tensor& target,
                            const RenderSettings& render, Rng* rng, double lambda_u, const Rgb& c0,
                            double color_scale = 1.0, bool include_unit = true) {
  const LdrPrediction pred = render_rays_ldr(tape, model, rays, exposure_times, render, rng);
  const ad::Tensor scale = ad::Tensor::scalar(color_scale);
  LossTerms t;
  t.color_coarse = tape.mul(tape.mean_sq_err(pred.coarse, target), scale);
  t.color_fine = tape.mul(tape.mean_sq_err(pred.fine, target), scale);
  t.total = tape.add(t.color_coarse, t.color_fine);
  if (include_unit) {
    t.unit = unit_exposure_loss(tape, model.tone, c0);
    t.total = tape.add(t.total, tape.mul(t.unit, ad::Tensor::scalar(lambda_u)));
  } else {
    t.unit = ad::Tensor::scalar(0.0);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  int batch_rays = 1024;
  long long iterations = 20000;
  double lr_start = 5e-4;
  double lr_end = 5e-5;
  double lambda_u = 0.5;
  std::optional<Rgb> c0;  // unset: dataset c0_gt when present, else 0.5
  std::uint64_t seed = 0;
  int n_coarse = 32;
  int n_fine = 32;
  bool perturb = true;
  long long checkpoint_every = 1000;  // 0 disables periodic checkpoints
  int chunk_rays = 256;
  ModelConfig model;

  void validate() const {
    if (batch_rays < 1) throw InputError("batch_rays must be >= 1");
    if (iterations < 1) throw InputError("iterations must be >= 1");
    if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw InputError("need lr_start >= lr_end > 0");
    if (!(lambda_u >= 0.0)) throw InputError("lambda_u must be >= 0");
    if (c0) {
      for (double v : *c0) {
        if (!(v > 0.0 && v < 1.0)) throw InputError("C0 components must lie in (0, 1)");
      }
    }
    if (n_coarse < 1 || n_fine < 0) throw InputError("bad sample counts");
    if (chunk_rays < 1) throw InputError("chunk_rays must be >= 1");
    if (checkpoint_every < 0) throw InputError("checkpoint_every must be >= 0");
    model.validate();
  }

  RenderSettings render(bool training) const {
    RenderSettings r;
    r.n_coarse = n_coarse;
    r.n_fine = n_fine;
    r.perturb = training && perturb;
    return r;
  }

  Rgb resolve_c0(const DatasetBundle& d) const {
    if (c0) return *c0;
    if (d.c0_gt) return {*d.c0_gt, *d.c0_gt, *d.c0_gt};
    return {0.5, 0.5, 0.5};
  }
};

/// Applies keys present in `j` over `cfg`. Unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg = {}) {
  static const char* known[] = {"batch_rays", "iterations", "lr_start", "lr_end", "lambda_u", "c0", "seed",
                                "n_coarse", "n_fine", "perturb", "checkpoint_every", "chunk_rays", "model"};
  if (!j.is_object()) throw InputError("train config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known)) {
      throw InputError("unknown train config key '" + key + "'");
    }
  }
  try {
    cfg.batch_rays = j.value("batch_rays", cfg.batch_rays);
    cfg.iterations = j.value("iterations", cfg.iterations);
    cfg.lr_start = j.value("lr_start", cfg.lr_start);
    cfg.lr_end = j.value("lr_end", cfg.lr_end);
    cfg.lambda_u = j.value("lambda_u", cfg.lambda_u);
    if (j.contains("c0")) {
      const auto& c = j["c0"];
      if (c.is_null()) {
        cfg.c0.reset();
      } else if (c.is_number()) {
        const double v = c.get<double>();
        cfg.c0 = Rgb{v, v, v};
      } else {
        cfg.c0 = c.get<Rgb>();
      }
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_coarse = j.value("n_coarse", cfg.n_coarse);
    cfg.n_fine = j.value("n_fine", cfg.n_fine);
    cfg.perturb = j.value("perturb", cfg.perturb);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.chunk_rays = j.value("chunk_rays", cfg.chunk_rays);
    if (j.contains("model")) cfg.model = model_config_from_json(j["model"], cfg.model);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("train config: ") + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Loop

struct LossReport {
  long long step = 0;
  double lr = 0.0;
  double color_coarse = 0.0;
  double color_fine = 0.0;
  double unit = 0.0;
  double total = 0.0;
};

inline std::string loss_history_csv(std::span<const LossReport> history) {
  std::ostringstream out;
  out.precision(17);
  out << "step,lr,loss_total,loss_color_coarse,loss_color_fine,loss_unit\n";
  for (const auto& r : history) {
    out << r.step << ',' << r.lr << ',' << r.total << ',' << r.color_coarse << ',' << r.color_fine << ',' << r.unit
        << '\n';
  }
  return out.str();
}

struct TrainResult {
  ModelBundle model;
  std::vector<LossReport> history;
};

inline Checkpoint make_checkpoint(const ModelBundle& model, const TrainConfig& cfg, const DatasetBundle& d,
                                  std::uint64_t step) {
  Checkpoint ck;
  ck.model = model.clone();
  ck.render = cfg.render(false);
  ck.near = d.near;
  ck.far = d.far;
  ck.intrinsics = d.intrinsics;
  ck.poses = d.poses();
  ck.step = step;
  return ck;
}

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints + loss.csv
  std::function<void(const LossReport&)> on_step;
  std::size_t workers = 0;  // 0: worker_count()
};

/// Optimizes both fields and the tone mapper on the dataset's training views.
/// With an output directory, model.hdrf is rewritten every checkpoint_every
/// steps and at the end, and loss.csv at the end. A non-finite loss aborts
/// with NumericError after saving the last good parameters.
inline TrainResult train(const DatasetBundle& dataset, const TrainConfig& cfg, const TrainOptions& opts = {},
                         std::optional<ModelBundle> initial = std::nullopt) {
  cfg.validate();
  const auto train_views = dataset.indices(true);
  if (train_views.empty()) throw InputError("dataset has no training views");
  for (std::size_t v : train_views) {
    const auto& view = dataset.views[v];
    if (view.image.width != view.camera.intrinsics.width || view.image.height != view.camera.intrinsics.height) {
      throw InputError("training view " + view.file + " has no image matching its intrinsics");
    }
    if (!(view.camera.exposure_time > 0.0)) throw InputError("training view " + view.file + " has no exposure time");
  }
  const Rgb c0 = cfg.resolve_c0(dataset);
  const RenderSettings render = cfg.render(true);
  TrainResult result;
  result.model = initial ? initial->clone() : ModelBundle::init(cfg.model, dataset.bbox);
  ModelBundle& model = result.model;
  std::vector<ad::Tensor> params = model.parameters();

  const std::size_t workers = std::max<std::size_t>(1, opts.workers ? opts.workers : worker_count());
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_rays);
  const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_rays);
  const std::size_t n_chunks = (batch + chunk - 1) / chunk;
  std::vector<ModelBundle> local(std::min(workers, n_chunks));
  for (auto& m : local) m = model.clone();

  ad::AdamState adam;
  Rng sampler(cfg.seed, 0xba7c4);

  auto save = [&](std::uint64_t step) {
    if (opts.out_dir) save_checkpoint(*opts.out_dir / "model.hdrf", make_checkpoint(model, cfg, dataset, step));
  };

  for (long long step = 0; step < cfg.iterations; ++step) {
    const double lr = lr_schedule(step, cfg.iterations, cfg.lr_start, cfg.lr_end);
    std::vector<Ray> rays(batch);
    std::vector<double> dts(batch);
    std::vector<double> targets(batch * 3);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& view = dataset.views[train_views[sampler.below(train_views.size())]];
      const auto& k = view.camera.intrinsics;
      const auto pixel = sampler.below(static_cast<std::uint64_t>(k.width) * k.height);
      const int row = static_cast<int>(pixel / k.width), col = static_cast<int>(pixel % k.width);
      rays[i] = pixel_ray(view.camera, row, col, dataset.near, dataset.far);
      dts[i] = view.camera.exposure_time;
      for (int c = 0; c < 3; ++c) targets[i * 3 + c] = view.image.at(row, col, c);
    }

    for (auto& m : local) {
      auto dst = m.parameters();
      for (std::size_t p = 0; p < params.size(); ++p) {
        std::copy(params[p].data().begin(), params[p].data().end(), dst[p].mutable_data().begin());
      }
    }
    std::vector<std::vector<std::vector<double>>> chunk_grads(n_chunks);
    std::vector<std::array<double, 3>> chunk_terms(n_chunks);  // coarse, fine, unit
    try {
      parallel_for(
          n_chunks,
          [&](std::size_t c) {
            const std::size_t begin = c * chunk, end = std::min(batch, begin + chunk);
            const std::size_t n = end - begin;
            ModelBundle& m = local[c % local.size()];
            auto mp = m.parameters();
            Rng rng(mix64(cfg.seed) ^ static_cast<std::uint64_t>(step), c);
            ad::Tape tape;
            const ad::Tensor target = ad::Tensor::from(
                {n, 3}, std::vector<double>(targets.begin() + begin * 3, targets.begin() + end * 3));
            const LossTerms t = batch_loss(tape, m, std::span(rays).subspan(begin, n), std::span(dts).subspan(begin, n),
                                           target, render, &rng, cfg.lambda_u, c0,
                                           static_cast<double>(n) / static_cast<double>(batch), c == 0);
            tape.backward(t.total, mp);
            chunk_terms[c] = {t.color_coarse.item(), t.color_fine.item(), t.unit.item()};
            auto& g = chunk_grads[c];
            g.reserve(mp.size());
            for (const auto& p : mp) g.emplace_back(p.grad().begin(), p.grad().end());
          },
          workers);
    } catch (const NumericError&) {
      save(static_cast<std::uint64_t>(step));
      throw;
    }

    LossReport rep;
    rep.step = step;
    rep.lr = lr;
    std::vector<std::vector<double>> grads = std::move(chunk_grads[0]);
    for (std::size_t c = 0; c < n_chunks; ++c) {
      rep.color_coarse += chunk_terms[c][0];
      rep.color_fine += chunk_terms[c][1];
      rep.unit += chunk_terms[c][2];
      if (c == 0) continue;
      for (std::size_t p = 0; p < grads.size(); ++p) {
        for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += chunk_grads[c][p][j];
      }
    }
    rep.total = total_loss(rep.color_coarse + rep.color_fine, rep.unit, cfg.lambda_u);
    if (!std::isfinite(rep.total)) {
      save(static_cast<std::uint64_t>(step));
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    result.history.push_back(rep);
    if (opts.on_step) opts.on_step(rep);

    ad::adam_step(params, grads, adam, lr);
    if (cfg.model.monotone_tone_mapper) model.tone.project_monotone();

    if (opts.out_dir && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.iterations) {
      save(static_cast<std::uint64_t>(step + 1));
    }
  }
  if (opts.out_dir) {
    save(static_cast<std::uint64_t>(cfg.iterations));
    write_file_atomic(*opts.out_dir / "loss.csv", loss_history_csv(result.history));
  }
  return result;
}

}  // namespace hdrnerf
