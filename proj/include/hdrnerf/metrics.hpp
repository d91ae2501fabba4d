#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "hdrnerf/dataset.hpp"
#include "hdrnerf/error.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/render.hpp"

namespace hdrnerf {

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("image sizes differ");
  if (a.data.empty()) throw InputError("empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

/// 10 log10(peak^2 / MSE); +infinity for identical images.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  if (!(peak > 0.0)) throw InputError("PSNR peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Mean SSIM with a Gaussian window over every fully contained window
/// position, averaged over channels.
inline double ssim(const Image& a, const Image& b, const SsimOptions& o = {}) {
  if (!a.same_shape(b)) throw ShapeError("image sizes differ");
  if (a.width < o.window || a.height < o.window) throw InputError("image smaller than the SSIM window");
  const int r = o.window / 2;
  std::vector<double> kernel(o.window);
  double ksum = 0.0;
  for (int i = 0; i < o.window; ++i) {
    kernel[i] = std::exp(-0.5 * (i - r) * (i - r) / (o.sigma * o.sigma));
    ksum += kernel[i];
  }
  for (double& k : kernel) k /= ksum;
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
  const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  const int out_w = a.width - o.window + 1, out_h = a.height - o.window + 1;

  // Separable valid-mode filtering of x, y, x^2, y^2, xy.
  auto filter = [&](auto&& value, int c) {
    std::vector<double> tmp(static_cast<std::size_t>(a.height) * out_w);
    for (int y = 0; y < a.height; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double s = 0.0;
        for (int k = 0; k < o.window; ++k) s += kernel[k] * value(y, x + k, c);
        tmp[static_cast<std::size_t>(y) * out_w + x] = s;
      }
    }
    std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double s = 0.0;
        for (int k = 0; k < o.window; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(y + k) * out_w + x];
        out[static_cast<std::size_t>(y) * out_w + x] = s;
      }
    }
    return out;
  };

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto mx = filter([&](int y, int x, int ch) { return a.at(y, x, ch); }, c);
    const auto my = filter([&](int y, int x, int ch) { return b.at(y, x, ch); }, c);
    const auto xx = filter([&](int y, int x, int ch) { return a.at(y, x, ch) * a.at(y, x, ch); }, c);
    const auto yy = filter([&](int y, int x, int ch) { return b.at(y, x, ch) * b.at(y, x, ch); }, c);
    const auto xy = filter([&](int y, int x, int ch) { return a.at(y, x, ch) * b.at(y, x, ch); }, c);
    double s = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = xx[i] - mx[i] * mx[i];
      const double vy = yy[i] - my[i] * my[i];
      const double cov = xy[i] - mx[i] * my[i];
      s += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += s / static_cast<double>(mx.size());
  }
  return total / 3.0;
}

inline double mu_law(double e, double mu = 5000.0) {
  if (!(e >= 0.0 && e <= 1.0)) throw InputError("mu-law input must lie in [0, 1], got " + std::to_string(e));
  return std::log1p(mu * e) / std::log1p(mu);
}

inline Image mu_law(const Image& img, double mu = 5000.0) {
  Image out = img;
  for (double& v : out.data) v = mu_law(v, mu);
  return out;
}

struct ScaleAlignment {
  std::array<double, 3> alpha{1, 1, 1};
};

/// Per-channel alpha = exp(mean(ln gt - ln pred)) over pixels where both
/// exceed eps, the minimizer of the mean squared log error.
inline std::pair<ScaleAlignment, Image> align_scale(const Image& pred, const Image& gt, double eps = 1e-6) {
  if (!pred.same_shape(gt)) throw ShapeError("image sizes differ");
  ScaleAlignment s;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
      const double x = pred.data[3 * p + c], y = gt.data[3 * p + c];
      if (x > eps && y > eps) {
        sum += std::log(y) - std::log(x);
        ++n;
      }
    }
    if (n == 0) throw InputError("align_scale: no valid pixels in channel " + std::to_string(c));
    s.alpha[c] = std::exp(sum / static_cast<double>(n));
  }
  Image aligned = pred;
  for (std::size_t p = 0; p < aligned.pixels(); ++p) {
    for (int c = 0; c < 3; ++c) aligned.data[3 * p + c] *= s.alpha[c];
  }
  return {s, aligned};
}

/// Divides both images by the ground truth's maximum, clamps to [0, 1] and
/// applies the mu-law.
inline std::pair<Image, Image> mu_law_pair(const Image& pred, const Image& gt, double mu = 5000.0) {
  const double peak = *std::max_element(gt.data.begin(), gt.data.end());
  if (!(peak > 0.0)) throw InputError("ground-truth HDR image is black");
  Image p = pred, g = gt;
  for (double& v : p.data) v = std::clamp(v / peak, 0.0, 1.0);
  for (double& v : g.data) v = std::clamp(v / peak, 0.0, 1.0);
  return {mu_law(p, mu), mu_law(g, mu)};
}

struct HdrScores {
  double psnr = 0.0;
  double ssim = 0.0;
};

inline HdrScores hdr_scores(const Image& pred, const Image& gt, bool align) {
  const Image p = align ? align_scale(pred, gt).second : pred;
  const auto [mp, mg] = mu_law_pair(p, gt);
  return {psnr(mp, mg), ssim(mp, mg)};
}

// ---------------------------------------------------------------------------
// Evaluation table

struct MetricRow {
  std::string split;
  std::string metric;
  double value = 0.0;
};

struct EvalTable {
  std::vector<MetricRow> rows;
  std::vector<std::string> notices;

  std::optional<double> get(const std::string& split, const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.split == split && r.metric == metric) return r.value;
    }
    return std::nullopt;
  }

  std::string csv() const {
    std::ostringstream out;
    out.precision(10);
    out << "split,metric,value\n";
    for (const auto& r : rows) {
      out << r.split << ',' << r.metric << ',';
      if (std::isinf(r.value)) {
        out << (r.value > 0 ? "inf" : "-inf");
      } else {
        out << r.value;
      }
      out << '\n';
    }
    return out.str();
  }
};

/// Predicted images for each test view of a dataset (same order as
/// dataset.indices(false)); hdr is per view too (views at one pose share it).
struct TestPredictions {
  std::vector<Image> ldr;
  std::vector<Image> hdr;
};

/// LDR-OE: test views whose exposure appears among the training exposures.
/// LDR-NE: the remaining test views. HDR: per-channel scale-aligned,
/// mu-law mapped comparison with the ground truth, one entry per test pose;
/// HDR-unaligned skips the alignment. Metrics are averaged over images.
inline EvalTable evaluate(const DatasetBundle& d, const TestPredictions& pred) {
  const auto tests = d.indices(false);
  if (tests.empty()) throw InputError("dataset has no test views");
  if (pred.ldr.size() != tests.size() || pred.hdr.size() != tests.size()) {
    throw ShapeError("one prediction per test view required");
  }
  const auto train_dts = d.train_exposures();
  struct Acc {
    double psnr = 0, ssim = 0;
    int n = 0;
    bool inf = false;
  };
  Acc oe, ne, hdr, raw;
  EvalTable table;
  std::vector<std::size_t> seen_poses;
  auto add = [](Acc& a, double p, double s) {
    if (std::isinf(p)) a.inf = true; else a.psnr += p;
    a.ssim += s;
    ++a.n;
  };
  for (std::size_t t = 0; t < tests.size(); ++t) {
    const auto& v = d.views[tests[t]];
    const double p = psnr(pred.ldr[t], v.image);
    const double s = ssim(pred.ldr[t], v.image);
    const bool original =
        std::find(train_dts.begin(), train_dts.end(), v.camera.exposure_time) != train_dts.end();
    add(original ? oe : ne, p, s);
    if (v.hdr && std::find(seen_poses.begin(), seen_poses.end(), v.pose_index) == seen_poses.end()) {
      seen_poses.push_back(v.pose_index);
      const auto u = hdr_scores(pred.hdr[t], *v.hdr, false);
      HdrScores a = u;
      try {
        a = hdr_scores(pred.hdr[t], *v.hdr, true);
      } catch (const InputError& e) {
        // A black prediction has nothing to align; score it as is.
        table.notices.push_back("HDR pose " + std::to_string(v.pose_index) + ": " + e.what() + ", scored unaligned");
      }
      add(hdr, a.psnr, a.ssim);
      add(raw, u.psnr, u.ssim);
    }
  }
  auto emit = [&](const std::string& split, const Acc& a) {
    if (a.n == 0) {
      table.notices.push_back(split + ": no views, row omitted");
      return;
    }
    const double inf = std::numeric_limits<double>::infinity();
    table.rows.push_back({split, "psnr", a.inf ? inf : a.psnr / a.n});
    table.rows.push_back({split, "ssim", a.ssim / a.n});
  };
  emit("LDR-OE", oe);
  emit("LDR-NE", ne);
  if (hdr.n == 0) {
    table.notices.push_back("HDR: no ground-truth HDR images, row omitted");
  } else {
    emit("HDR", hdr);
    emit("HDR-unaligned", raw);
  }
  return table;
}

/// Renders every test view of the dataset with the model (fine stage,
/// deterministic sampling) and returns the images in test-view order.
inline TestPredictions predict_test_views(const DatasetBundle& d, const ModelBundle& model,
                                          const RenderSettings& render) {
  const auto tests = d.indices(false);
  TestPredictions out;
  out.ldr.resize(tests.size());
  out.hdr.resize(tests.size());
  std::vector<bool> done(tests.size(), false);
  RenderSettings r = render;
  r.perturb = false;
  for (std::size_t t = 0; t < tests.size(); ++t) {
    if (done[t]) continue;
    const auto& v = d.views[tests[t]];
    std::vector<std::size_t> group;
    std::vector<double> dts;
    for (std::size_t u = t; u < tests.size(); ++u) {
      if (d.views[tests[u]].pose_index == v.pose_index) {
        group.push_back(u);
        dts.push_back(d.views[tests[u]].camera.exposure_time);
      }
    }
    const ViewRender vr = render_view(v.camera, model, dts, d.near, d.far, r);
    for (std::size_t g = 0; g < group.size(); ++g) {
      out.ldr[group[g]] = vr.ldr[g];
      out.hdr[group[g]] = vr.hdr;
      done[group[g]] = true;
    }
  }
  return out;
}

}  // namespace hdrnerf
