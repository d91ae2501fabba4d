#pragma once

// Classical nonparametric response recovery from a fixed-pose exposure
// stack (least squares over the discrete inverse log response g[0..255] and
// per-site log irradiance), plus gauge-aligned curve comparison.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hdrnerf/error.hpp"
#include "hdrnerf/image.hpp"
#include "hdrnerf/model.hpp"
#include "hdrnerf/rng.hpp"
#include "hdrnerf/synth.hpp"

namespace hdrnerf {

inline constexpr int kCodes = 256;
inline constexpr int kGaugeCode = 128;

/// Hat weighting: z - z_min below the mid code, z_max - z above it.
inline double hat_weight(int z, int z_min = 0, int z_max = 255) {
  const double mid = 0.5 * (z_min + z_max);
  return z <= mid ? z - z_min : z_max - z;
}

/// One channel of an exposure stack: codes[i][j] is site i at exposure j.
struct ExposureStack {
  std::vector<std::vector<int>> codes;
  std::vector<double> log_exposure_times;

  std::size_t sites() const { return codes.size(); }
  std::size_t exposures() const { return log_exposure_times.size(); }
};

struct DiscreteCrf {
  std::array<double, kCodes> g{};  // log exposure producing each code, g[128] = 0
  std::vector<double> log_irradiance;
  double smoothness = 50.0;
  double residual = 0.0;  // root of the least-squares objective
};

inline std::string code_histogram(const ExposureStack& s) {
  std::array<int, 8> bins{};
  for (const auto& site : s.codes) {
    for (int z : site) bins[std::clamp(z, 0, 255) / 32]++;
  }
  std::ostringstream out;
  out << "code coverage by 32-code bin:";
  for (int b : bins) out << ' ' << b;
  return out.str();
}

/// Least-squares solve with rows
///   w(Z_ij) (g(Z_ij) - lnE_i) = w(Z_ij) ln dt_j     (data)
///   lambda w(z) (g(z-1) - 2 g(z) + g(z+1)) = 0       (smoothness, z = 1..254)
///   g(128) = 0                                       (gauge)
/// via column-pivoted Householder QR.
inline DiscreteCrf solve_crf(const ExposureStack& stack, double smoothness = 50.0) {
  const std::size_t p = stack.sites(), j = stack.exposures();
  if (j < 2) throw SolveError("response recovery needs at least two exposures, got " + std::to_string(j));
  if (!(smoothness > 0.0)) throw SolveError("smoothness weight must be positive");
  if (p == 0) throw SolveError("exposure stack has no sites");
  for (const auto& site : stack.codes) {
    if (site.size() != j) throw SolveError("site has the wrong number of exposures");
    for (int z : site) {
      if (z < 0 || z > 255) throw SolveError("code outside [0, 255]");
    }
  }
  const std::size_t unknowns = kCodes + p;
  const std::size_t rows = p * j + (kCodes - 2) + 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(unknowns));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows));
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t e = 0; e < j; ++e, ++k) {
      const int z = stack.codes[i][e];
      const double w = hat_weight(z);
      a(k, z) = w;
      a(k, static_cast<Eigen::Index>(kCodes + i)) = -w;
      b(k) = w * stack.log_exposure_times[e];
    }
  }
  for (int z = 1; z < kCodes - 1; ++z, ++k) {
    const double w = smoothness * hat_weight(z);
    a(k, z - 1) = w;
    a(k, z) = -2.0 * w;
    a(k, z + 1) = w;
  }
  a(k, kGaugeCode) = 1.0;

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < static_cast<Eigen::Index>(unknowns)) {
    throw SolveError("rank-deficient system (rank " + std::to_string(qr.rank()) + " of " + std::to_string(unknowns) +
                     "); " + code_histogram(stack));
  }
  const Eigen::VectorXd x = qr.solve(b);
  DiscreteCrf out;
  out.smoothness = smoothness;
  for (int z = 0; z < kCodes; ++z) out.g[z] = x(z);
  out.log_irradiance.resize(p);
  for (std::size_t i = 0; i < p; ++i) out.log_irradiance[i] = x(static_cast<Eigen::Index>(kCodes + i));
  out.residual = (a * x - b).norm();
  return out;
}

/// Noiseless stack: each irradiance seen through `crf` at every exposure time.
inline ExposureStack synthetic_stack(const GroundTruthCrf& crf, std::span<const double> irradiance,
                                     std::span<const double> exposure_times) {
  ExposureStack s;
  for (double dt : exposure_times) s.log_exposure_times.push_back(std::log(dt));
  for (double h : irradiance) {
    std::vector<int> codes;
    for (double dt : exposure_times) codes.push_back(apply_crf({h, h, h}, dt, crf)[0]);
    s.codes.push_back(std::move(codes));
  }
  return s;
}

/// ln of the exposure that the unquantized response maps to code z.
inline double analytic_log_inverse(const GroundTruthCrf& crf, int z) { return std::log(crf.inverse(z / crf.max_code())); }

enum class SiteStrategy { stratified, random };

/// Picks pixel sites for one channel of a same-pose image stack (images in
/// increasing exposure). Pixels saturated or black in every exposure are
/// never chosen. The stratified strategy buckets usable pixels by their code
/// in the middle exposure and draws round-robin across buckets.
inline std::vector<std::size_t> sample_sites(std::span<const Image> images, int channel, std::size_t n_sites,
                                             SiteStrategy strategy, std::uint64_t seed) {
  if (images.size() < 2) throw InputError("site sampling needs at least two exposures");
  const std::size_t minimum = (255 + images.size() - 1) / (images.size() - 1);
  if (n_sites < minimum) {
    throw InputError("need at least " + std::to_string(minimum) + " sites for " + std::to_string(images.size()) +
                     " exposures, asked for " + std::to_string(n_sites));
  }
  const std::size_t pixels = images[0].pixels();
  for (const auto& im : images) {
    if (!im.same_shape(images[0])) throw InputError("stack images differ in size");
  }
  auto code = [&](const Image& im, std::size_t p) { return static_cast<int>(std::lround(im.data[p * 3 + channel] * 255.0)); };
  std::vector<std::size_t> usable;
  for (std::size_t p = 0; p < pixels; ++p) {
    bool all_high = true, all_low = true;
    for (const auto& im : images) {
      const int z = code(im, p);
      all_high = all_high && z >= 255;
      all_low = all_low && z <= 0;
    }
    if (!all_high && !all_low) usable.push_back(p);
  }
  if (usable.size() < minimum) {
    throw InputError("only " + std::to_string(usable.size()) + " usable (not always saturated or black) pixels");
  }
  Rng rng(seed, 0x517e5);
  auto shuffle = [&](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  std::vector<std::size_t> picked;
  if (strategy == SiteStrategy::random) {
    shuffle(usable);
    usable.resize(std::min(n_sites, usable.size()));
    picked = std::move(usable);
  } else {
    const Image& mid = images[images.size() / 2];
    std::map<int, std::vector<std::size_t>> buckets;
    for (std::size_t p : usable) buckets[code(mid, p)].push_back(p);
    for (auto& [_, v] : buckets) shuffle(v);
    for (std::size_t round = 0; picked.size() < n_sites; ++round) {
      bool any = false;
      for (auto& [_, v] : buckets) {
        if (round < v.size() && picked.size() < n_sites) {
          picked.push_back(v[round]);
          any = true;
        }
      }
      if (!any) break;
    }
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

inline ExposureStack build_stack(std::span<const Image> images, std::span<const double> exposure_times, int channel,
                                 std::span<const std::size_t> sites) {
  if (images.size() != exposure_times.size()) throw InputError("one exposure time per image required");
  ExposureStack s;
  for (double dt : exposure_times) s.log_exposure_times.push_back(std::log(dt));
  for (std::size_t p : sites) {
    std::vector<int> codes;
    for (const auto& im : images) codes.push_back(static_cast<int>(std::lround(im.data[p * 3 + channel] * 255.0)));
    s.codes.push_back(std::move(codes));
  }
  return s;
}

/// Solves all three channels of a same-pose stack.
inline std::array<DiscreteCrf, 3> calibrate_stack(std::span<const Image> images, std::span<const double> exposure_times,
                                                  std::size_t n_sites, double smoothness, std::uint64_t seed) {
  std::array<DiscreteCrf, 3> out;
  for (int c = 0; c < 3; ++c) {
    const auto sites = sample_sites(images, c, n_sites, SiteStrategy::stratified, seed + c);
    out[c] = solve_crf(build_stack(images, exposure_times, c, sites), smoothness);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Curves

/// Resamples recovered responses onto a shared log-exposure grid: color
/// z/255 sits at log exposure g[z]; between codes the color is linearly
/// interpolated, beyond the end codes it is clamped.
inline CrfCurve discrete_to_curve(const std::array<DiscreteCrf, 3>& crf, std::size_t samples = 256) {
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& c : crf) {
    lo = std::min(lo, *std::min_element(c.g.begin(), c.g.end()));
    hi = std::max(hi, *std::max_element(c.g.begin(), c.g.end()));
  }
  CrfCurve curve;
  curve.log_exposure = linspace(lo, hi, samples);
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<std::pair<double, double>> pts;
    for (int z = 0; z < kCodes; ++z) pts.emplace_back(crf[ch].g[z], z / 255.0);
    std::sort(pts.begin(), pts.end());
    curve.color[ch].resize(samples);
    for (std::size_t i = 0; i < samples; ++i) {
      const double x = curve.log_exposure[i];
      auto it = std::lower_bound(pts.begin(), pts.end(), std::make_pair(x, -1.0));
      if (it == pts.begin()) {
        curve.color[ch][i] = pts.front().second;
      } else if (it == pts.end()) {
        curve.color[ch][i] = pts.back().second;
      } else {
        const auto& [x1, c1] = *it;
        const auto& [x0, c0] = *(it - 1);
        curve.color[ch][i] = x1 > x0 ? c0 + (c1 - c0) * (x - x0) / (x1 - x0) : c1;
      }
    }
  }
  return curve;
}

/// Unquantized ground-truth response on a log-exposure grid.
inline CrfCurve gt_curve(const GroundTruthCrf& crf, std::span<const double> grid) {
  CrfCurve curve;
  curve.log_exposure.assign(grid.begin(), grid.end());
  for (int c = 0; c < 3; ++c) {
    for (double x : grid) curve.color[c].push_back(crf.response(std::exp(x)));
  }
  return curve;
}

inline std::string crf_curve_csv(const CrfCurve& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "log_exposure,red,green,blue\n";
  for (std::size_t i = 0; i < curve.log_exposure.size(); ++i) {
    out << curve.log_exposure[i] << ',' << curve.color[0][i] << ',' << curve.color[1][i] << ',' << curve.color[2][i]
        << '\n';
  }
  return out.str();
}

inline CrfCurve parse_crf_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("log_exposure,red,green,blue", 0) != 0) {
    throw FormatError("CRF curve CSV must start with 'log_exposure,red,green,blue'");
  }
  CrfCurve curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::array<double, 4> v{};
    char sep = 0;
    row >> v[0] >> sep >> v[1] >> sep >> v[2] >> sep >> v[3];
    if (!row) throw FormatError("malformed CRF curve row: " + line);
    curve.log_exposure.push_back(v[0]);
    for (int c = 0; c < 3; ++c) curve.color[c].push_back(v[c + 1]);
  }
  return curve;
}

/// Log exposure where the channel curve first crosses `level`.
inline double crossing(const std::vector<double>& x, const std::vector<double>& c, double level) {
  for (std::size_t i = 0; i + 1 < x.size(); ++i) {
    const double a = c[i] - level, b = c[i + 1] - level;
    if (a == 0.0) return x[i];
    if ((a < 0.0) != (b < 0.0) || b == 0.0) return x[i] + (x[i + 1] - x[i]) * (a / (a - b));
  }
  throw InputError("curve never reaches color " + std::to_string(level));
}

inline double interpolate(const std::vector<double>& x, const std::vector<double>& y, double at) {
  if (at <= x.front()) return y.front();
  if (at >= x.back()) return y.back();
  const auto it = std::upper_bound(x.begin(), x.end(), at);
  const std::size_t i = static_cast<std::size_t>(it - x.begin());
  const double t = (at - x[i - 1]) / (x[i] - x[i - 1]);
  return y[i - 1] + t * (y[i] - y[i - 1]);
}

struct CrfComparison {
  std::array<double, 3> rmse{};
  std::array<double, 3> max_abs{};
  std::array<double, 3> shift{};  // log-exposure offset applied to `curve`
  std::array<std::size_t, 3> points{};

  double worst_rmse() const { return *std::max_element(rmse.begin(), rmse.end()); }
  double worst_max_abs() const { return *std::max_element(max_abs.begin(), max_abs.end()); }
};

/// Aligns both curves so each channel crosses color 0.5 at log exposure 0,
/// then compares `curve` against `reference` at the reference grid points
/// whose color lies in [lo, hi] and which fall inside `curve`'s domain.
inline CrfComparison compare_crf(const CrfCurve& curve, const CrfCurve& reference, double lo = 0.05, double hi = 0.95) {
  CrfComparison out;
  for (int c = 0; c < 3; ++c) {
    const double ca = crossing(curve.log_exposure, curve.color[c], 0.5);
    const double cb = crossing(reference.log_exposure, reference.color[c], 0.5);
    out.shift[c] = cb - ca;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < reference.log_exposure.size(); ++i) {
      const double col = reference.color[c][i];
      if (col < lo || col > hi) continue;
      const double x = reference.log_exposure[i] - out.shift[c];  // in `curve`'s frame
      if (x < curve.log_exposure.front() || x > curve.log_exposure.back()) continue;
      const double d = interpolate(curve.log_exposure, curve.color[c], x) - col;
      sum += d * d;
      out.max_abs[c] = std::max(out.max_abs[c], std::abs(d));
      ++n;
    }
    if (n == 0) throw InputError("curves share no domain in the compared color range");
    out.rmse[c] = std::sqrt(sum / static_cast<double>(n));
    out.points[c] = n;
  }
  return out;
}

/// Largest decrease between consecutive grid points (0 for monotone curves).
inline double monotonicity_violation(const CrfCurve& curve) {
  double worst = 0.0;
  for (const auto& col : curve.color) {
    for (std::size_t i = 1; i < col.size(); ++i) worst = std::max(worst, col[i - 1] - col[i]);
  }
  return worst;
}

}  // namespace hdrnerf
