#pragma once

// The two learned functions: a radiance field mapping an encoded sample to
// (log-radiance, density) and a per-channel tone mapper mapping
// log-exposure = ln e + ln dt to an LDR color in (0, 1).

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hdrnerf/autodiff.hpp"
#include "hdrnerf/encoding.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/geometry.hpp"
#include "hdrnerf/rng.hpp"

namespace hdrnerf {

struct ModelConfig {
  int trunk_depth = 4;
  int trunk_width = 64;
  int tone_hidden = 32;
  EncodingConfig encoding;
  // Projects tone-mapper weights onto [0, inf) after every update, which
  // makes each channel curve non-decreasing.
  bool monotone_tone_mapper = false;
  std::uint64_t init_seed = 0;

  int radiance_hidden() const { return std::max(1, trunk_width / 2); }
  std::size_t position_features() const { return 3 * encoded_width(encoding.levels_position, encoding.include_input); }
  std::size_t direction_features() const {
    return 3 * encoded_width(encoding.levels_direction, encoding.include_input);
  }

  void validate() const {
    encoding.validate();
    if (trunk_depth < 1 || trunk_width < 1 || tone_hidden < 1) throw InputError("model sizes must be positive");
  }

  /// The published architecture: 8 x 256 trunk, 128-wide tone-mapper MLPs.
  static ModelConfig paper_scale() {
    ModelConfig c;
    c.trunk_depth = 8;
    c.trunk_width = 256;
    c.tone_hidden = 128;
    return c;
  }
};

/// Dense layer y = x W + b with W stored fan_in x fan_out and b as 1 x fan_out.
struct Linear {
  ad::Tensor weight;
  ad::Tensor bias;

  static Linear glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = rng.uniform(-limit, limit);
    return {ad::Tensor::from({fan_in, fan_out}, std::move(w), true), ad::Tensor::zeros({1, fan_out}, true)};
  }

  ad::Tensor operator()(ad::Tape& tape, const ad::Tensor& x,
                        ad::Tape::Activation act = ad::Tape::Activation::none) const {
    return tape.affine(x, weight, bias, act);
  }
};

struct FieldParams {
  std::vector<Linear> trunk;
  Linear density;
  Linear radiance_hidden;  // consumes [trunk features, encoded direction]
  Linear radiance_out;     // three log-radiance outputs

  static FieldParams init(const ModelConfig& cfg, Rng& rng) {
    FieldParams f;
    std::size_t fan_in = cfg.position_features();
    const auto width = static_cast<std::size_t>(cfg.trunk_width);
    for (int l = 0; l < cfg.trunk_depth; ++l) {
      f.trunk.push_back(Linear::glorot(fan_in, width, rng));
      fan_in = width;
    }
    f.density = Linear::glorot(width, 1, rng);
    const auto hidden = static_cast<std::size_t>(cfg.radiance_hidden());
    f.radiance_hidden = Linear::glorot(width + cfg.direction_features(), hidden, rng);
    f.radiance_out = Linear::glorot(hidden, 3, rng);
    return f;
  }

  void collect(std::vector<ad::Tensor>& out) const {
    for (const auto& l : trunk) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    for (const Linear* l : {&density, &radiance_hidden, &radiance_out}) {
      out.push_back(l->weight);
      out.push_back(l->bias);
    }
  }
};

struct ToneChannel {
  Linear hidden;  // 1 -> H
  Linear out;     // H -> 1
};

struct ToneMapperParams {
  std::array<ToneChannel, 3> channels;

  // Glorot magnitudes with non-negative signs, relu kinks spread evenly over
  // log exposure [kKnotLo, kKnotHi] and the output bias placing g(0) at 0.5.
  // Every channel thus starts as an increasing S-curve. Sign-random weights
  // with kinks all at 0 start about half the channel halves decreasing, and
  // training then settles on a mirrored or flat mapper.
  static constexpr double kKnotLo = -8.0;
  static constexpr double kKnotHi = 4.0;

  static ToneMapperParams init(const ModelConfig& cfg, Rng& rng) {
    ToneMapperParams t;
    const auto h = static_cast<std::size_t>(cfg.tone_hidden);
    for (auto& ch : t.channels) {
      ch.hidden = Linear::glorot(1, h, rng);
      ch.out = Linear::glorot(h, 1, rng);
      auto w = ch.hidden.weight.mutable_data();
      auto b = ch.hidden.bias.mutable_data();
      auto v = ch.out.weight.mutable_data();
      double at_zero = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        w[j] = std::abs(w[j]);
        v[j] = std::abs(v[j]);
        const double knot = h == 1 ? 0.0 : kKnotLo + (kKnotHi - kKnotLo) * static_cast<double>(j) / static_cast<double>(h - 1);
        b[j] = -w[j] * knot;
        at_zero += v[j] * std::max(b[j], 0.0);
      }
      ch.out.bias.mutable_data()[0] = -at_zero;
    }
    return t;
  }

  void collect(std::vector<ad::Tensor>& out) const {
    for (const auto& ch : channels) {
      out.push_back(ch.hidden.weight);
      out.push_back(ch.hidden.bias);
      out.push_back(ch.out.weight);
      out.push_back(ch.out.bias);
    }
  }

  // Clamps every weight (not bias) to be non-negative.
  void project_monotone() {
    for (auto& ch : channels) {
      for (ad::Tensor* w : {&ch.hidden.weight, &ch.out.weight}) {
        for (double& v : w->mutable_data()) v = std::max(v, 0.0);
      }
    }
  }
};

/// Coarse and fine fields share architecture; one tone mapper serves both.
struct ModelBundle {
  ModelConfig config;
  Aabb bounds;  // positions are normalized by this box before encoding
  FieldParams coarse;
  FieldParams fine;
  ToneMapperParams tone;

  static ModelBundle init(const ModelConfig& cfg, const Aabb& bounds) {
    cfg.validate();
    Rng rng(cfg.init_seed, 0x5eed);
    ModelBundle b;
    b.config = cfg;
    b.bounds = bounds;
    b.coarse = FieldParams::init(cfg, rng);
    b.fine = FieldParams::init(cfg, rng);
    b.tone = ToneMapperParams::init(cfg, rng);
    return b;
  }

  /// Every learnable tensor in checkpoint order: coarse field, fine field,
  /// tone mapper (red, green, blue). Within a field: trunk layers, density
  /// head, radiance hidden, radiance out; each as (weight, bias).
  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> p;
    coarse.collect(p);
    fine.collect(p);
    tone.collect(p);
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.size();
    return n;
  }

  /// Deep copy; the clone's tensors share no storage with this bundle.
  ModelBundle clone() const {
    ModelBundle b = init(config, bounds);
    auto dst = b.parameters();
    const auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::copy(src[i].data().begin(), src[i].data().end(), dst[i].mutable_data().begin());
    }
    return b;
  }

  const FieldParams& field(bool fine_stage) const { return fine_stage ? fine : coarse; }
};

// ---------------------------------------------------------------------------
// Batched forward passes on a tape

struct FieldOutput {
  ad::Tensor sigma;       // N x 1, >= 0
  ad::Tensor log_radiance;  // N x 3
};

/// Encodes N sample positions (world space) and their ray directions.
/// Returns (N x position_features, N x direction_features) constant tensors.
inline std::pair<ad::Tensor, ad::Tensor> encode_samples(const ModelConfig& cfg, const Aabb& bounds,
                                                        std::span<const Vec3> positions,
                                                        std::span<const Vec3> directions) {
  if (positions.size() != directions.size()) throw ShapeError("positions and directions differ in count");
  const std::size_t n = positions.size();
  std::vector<double> pos, dir;
  pos.reserve(n * cfg.position_features());
  dir.reserve(n * cfg.direction_features());
  const auto& e = cfg.encoding;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 p = bounds.normalize(positions[i]);
    const double pv[3] = {p.x, p.y, p.z};
    const double dv[3] = {directions[i].x, directions[i].y, directions[i].z};
    positional_encode_into(pv, e.levels_position, e.include_input, pos);
    positional_encode_into(dv, e.levels_direction, e.include_input, dir);
  }
  return {ad::Tensor::from({n, cfg.position_features()}, std::move(pos)),
          ad::Tensor::from({n, cfg.direction_features()}, std::move(dir))};
}

inline FieldOutput field_forward(ad::Tape& tape, const FieldParams& f, const ad::Tensor& enc_pos,
                                 const ad::Tensor& enc_dir) {
  ad::Tensor h = enc_pos;
  using Act = ad::Tape::Activation;
  for (const auto& layer : f.trunk) h = layer(tape, h, Act::relu);
  FieldOutput out;
  out.sigma = f.density(tape, h, Act::softplus);
  const ad::Tensor feat = f.radiance_hidden(tape, tape.concat({h, enc_dir}), Act::relu);
  out.log_radiance = f.radiance_out(tape, feat);
  return out;
}

/// Tone maps N x 3 log-radiance with per-row log exposure time (N x 1, or a
/// single value shared by all rows). Channel c sees only ln_e[:, c] + ln_dt.
inline ad::Tensor tone_forward(ad::Tape& tape, const ToneMapperParams& t, const ad::Tensor& log_radiance,
                               const ad::Tensor& log_dt) {
  if (log_radiance.cols() != 3) throw ShapeError("tone mapper expects N x 3 log-radiance");
  std::vector<ad::Tensor> colors;
  colors.reserve(3);
  for (std::size_t c = 0; c < 3; ++c) {
    const ad::Tensor x = tape.add(tape.column(log_radiance, c), log_dt);
    const auto& ch = t.channels[c];
    colors.push_back(ch.out(tape, ch.hidden(tape, x, ad::Tape::Activation::relu), ad::Tape::Activation::sigmoid));
  }
  return tape.concat(colors);
}

// ---------------------------------------------------------------------------
// Single-sample evaluation

struct FieldSample {
  std::array<double, 3> log_radiance{};
  double sigma = 0.0;
};

inline FieldSample field_eval(const ModelBundle& model, const FieldParams& f, Vec3 position, Vec3 direction) {
  if (std::abs(norm(direction) - 1.0) > 1e-6) throw InputError("field_eval direction must be unit length");
  const Vec3 p[1] = {position};
  const Vec3 d[1] = {direction};
  auto [ep, ed] = encode_samples(model.config, model.bounds, p, d);
  ad::Tape tape(false);
  const FieldOutput out = field_forward(tape, f, ep, ed);
  FieldSample s;
  for (int c = 0; c < 3; ++c) s.log_radiance[c] = out.log_radiance.data()[c];
  s.sigma = out.sigma.item();
  return s;
}

inline std::array<double, 3> tone_map(const ToneMapperParams& t, const std::array<double, 3>& log_radiance,
                                      double log_dt) {
  for (double v : log_radiance) {
    if (!std::isfinite(v)) throw NumericError("tone_map of non-finite log-radiance");
  }
  if (!std::isfinite(log_dt)) throw NumericError("tone_map of non-finite log exposure time");
  ad::Tape tape(false);
  const ad::Tensor out = tone_forward(tape, t, ad::Tensor::from({1, 3}, {log_radiance.begin(), log_radiance.end()}),
                                      ad::Tensor::scalar(log_dt));
  return {out.data()[0], out.data()[1], out.data()[2]};
}

/// Per-channel curve sampled on a shared log-exposure grid.
struct CrfCurve {
  std::vector<double> log_exposure;
  std::array<std::vector<double>, 3> color;
};

inline CrfCurve crf_curve_export(const ToneMapperParams& t, std::span<const double> grid) {
  if (grid.empty()) throw InputError("CRF export grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!std::isfinite(grid[i])) throw InputError("CRF export grid has a non-finite value");
    if (i > 0 && grid[i] < grid[i - 1]) throw InputError("CRF export grid must be sorted");
  }
  const std::size_t n = grid.size();
  std::vector<double> x3(n * 3);
  for (std::size_t i = 0; i < n; ++i) x3[3 * i] = x3[3 * i + 1] = x3[3 * i + 2] = grid[i];
  ad::Tape tape(false);
  const ad::Tensor out = tone_forward(tape, t, ad::Tensor::from({n, 3}, std::move(x3)), ad::Tensor::scalar(0.0));
  CrfCurve curve;
  curve.log_exposure.assign(grid.begin(), grid.end());
  for (int c = 0; c < 3; ++c) {
    curve.color[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) curve.color[c][i] = out.at(i, c);
  }
  return curve;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

}  // namespace hdrnerf
