#include <gtest/gtest.h>

#include <cmath>

#include "hdrnerf/calib.hpp"

using namespace hdrnerf;

namespace {

std::vector<double> log_uniform(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * (i + 0.5) / n);
  return v;
}

// Root-mean-square of g - analytic over codes [lo, hi], after removing the
// mean offset (the two differ by a gauge constant).
double gauge_rmse(const DiscreteCrf& crf, const GroundTruthCrf& gt, int lo, int hi) {
  double mean = 0.0;
  for (int z = lo; z <= hi; ++z) mean += crf.g[z] - analytic_log_inverse(gt, z);
  mean /= hi - lo + 1;
  double s = 0.0;
  for (int z = lo; z <= hi; ++z) {
    const double d = crf.g[z] - analytic_log_inverse(gt, z) - mean;
    s += d * d;
  }
  return std::sqrt(s / (hi - lo + 1));
}

const std::vector<double> kTimes{1.0 / 64, 1.0 / 16, 1.0 / 4, 1.0, 4.0};

// Horizontal ramp of linear radiance spanning [lo, hi] across 256 columns.
std::vector<Image> ramp_stack(const GroundTruthCrf& crf, double lo, double hi, std::span<const double> dts) {
  std::vector<Image> out;
  const auto e = log_uniform(lo, hi, 256);
  for (double dt : dts) {
    Image img(256, 4);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 256; ++c) {
        const auto z = apply_crf({e[c], e[c] * 0.5, e[c] * 2.0}, dt, crf);
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = z[ch] / 255.0;
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

TEST(HatWeight, Shape) {
  EXPECT_EQ(hat_weight(0), 0.0);
  EXPECT_EQ(hat_weight(255), 0.0);
  EXPECT_EQ(hat_weight(127), 127.0);
  EXPECT_EQ(hat_weight(128), 127.0);
}

TEST(SolveCrf, LinearSensorReciprocity) {
  const GroundTruthCrf linear{1.0, 1.0, 8};
  std::vector<double> dts;
  for (int j = 0; j < 7; ++j) dts.push_back(std::ldexp(1.0 / 256, j));
  // Irradiances that land exactly on integer codes at the shortest exposure.
  std::vector<double> h;
  for (int z = 1; z <= 254; ++z) h.push_back(z / 255.0 / dts[0]);
  const DiscreteCrf crf = solve_crf(synthetic_stack(linear, h, dts));
  for (int z : {48, 64, 80, 100, 120}) {
    EXPECT_NEAR(crf.g[2 * z] - crf.g[z], std::log(2.0), 1e-3) << "code " << z;
  }
  EXPECT_NEAR(crf.g[kGaugeCode], 0.0, 1e-9);
}

TEST(SolveCrf, RecoversGammaCurve) {
  const GroundTruthCrf gt = GroundTruthCrf::anchored(2.2, 0.5);
  const DiscreteCrf crf = solve_crf(synthetic_stack(gt, log_uniform(0.02, 60.0, 400), kTimes));
  EXPECT_LE(gauge_rmse(crf, gt, 10, 245), 0.02);
  for (int z = 2; z < 254; ++z) EXPECT_LE(crf.g[z - 1], crf.g[z]) << z;
}

TEST(SolveCrf, ShiftingLogTimesShiftsIrradianceOnly) {
  const GroundTruthCrf gt = GroundTruthCrf::anchored(2.2, 0.5);
  ExposureStack s = synthetic_stack(gt, log_uniform(0.05, 30.0, 300), kTimes);
  const DiscreteCrf a = solve_crf(s);
  for (double& t : s.log_exposure_times) t += 0.7;
  const DiscreteCrf b = solve_crf(s);
  // The gauge pins g(128) = 0, so the shift moves into ln E with opposite sign.
  for (int z = 0; z < kCodes; ++z) EXPECT_NEAR(a.g[z], b.g[z], 1e-8);
  for (std::size_t i = 0; i < a.log_irradiance.size(); ++i) {
    EXPECT_NEAR(b.log_irradiance[i] - a.log_irradiance[i], -0.7, 1e-8);
  }
}

TEST(SolveCrf, ResidualShrinksWithSmoothness) {
  const GroundTruthCrf gt = GroundTruthCrf::anchored(2.2, 0.5);
  const ExposureStack s = synthetic_stack(gt, log_uniform(0.05, 30.0, 300), kTimes);
  double prev = INFINITY;
  for (double lambda : {100.0, 10.0, 1.0, 0.1}) {
    const double r = solve_crf(s, lambda).residual;
    EXPECT_LT(r, prev) << lambda;
    prev = r;
  }
}

TEST(SolveCrf, Preconditions) {
  ExposureStack one;
  one.log_exposure_times = {0.0};
  one.codes = {{100}};
  EXPECT_THROW(solve_crf(one), SolveError);
  ExposureStack empty;
  empty.log_exposure_times = {0.0, 1.0};
  EXPECT_THROW(solve_crf(empty), SolveError);
  ExposureStack bad = empty;
  bad.codes = {{10, 300}};
  EXPECT_THROW(solve_crf(bad), SolveError);
  EXPECT_THROW(solve_crf(synthetic_stack(GroundTruthCrf{}, std::vector<double>{0.1}, kTimes), 0.0), SolveError);
}

TEST(Sites, AllSaturatedIsInputError) {
  std::vector<Image> imgs(3, Image(32, 32, 1.0));
  EXPECT_THROW(sample_sites(imgs, 0, 200, SiteStrategy::stratified, 1), InputError);
  std::vector<Image> black(3, Image(32, 32, 0.0));
  EXPECT_THROW(sample_sites(black, 0, 200, SiteStrategy::random, 1), InputError);
}

TEST(Sites, TooFewRequestedIsInputError) {
  const auto imgs = ramp_stack(GroundTruthCrf::anchored(2.2, 0.5), 0.01, 100.0, kTimes);
  // Five exposures need ceil(255 / 4) = 64 sites.
  EXPECT_THROW(sample_sites(imgs, 0, 63, SiteStrategy::stratified, 1), InputError);
  EXPECT_EQ(sample_sites(imgs, 0, 64, SiteStrategy::stratified, 1).size(), 64u);
}

TEST(Sites, GradientImageCoversManyCodes) {
  // Radiance ramp whose middle exposure steps through every code once.
  const GroundTruthCrf crf = GroundTruthCrf::anchored(2.2, 0.5);
  std::vector<Image> imgs;
  for (double dt : kTimes) {
    Image img(256, 1);
    for (int c = 0; c < 256; ++c) {
      const double e = crf.inverse(c / 255.0) / kTimes[2];
      img.at(0, c, 0) = apply_crf({e, e, e}, dt, crf)[0] / 255.0;
    }
    imgs.push_back(std::move(img));
  }
  const auto sites = sample_sites(imgs, 0, 256, SiteStrategy::stratified, 5);
  const ExposureStack s = build_stack(imgs, kTimes, 0, sites);
  std::set<int> codes;
  for (const auto& site : s.codes) codes.insert(site.begin(), site.end());
  EXPECT_GE(codes.size(), 200u);
}

TEST(Sites, FixedSeedFixedSites) {
  const auto imgs = ramp_stack(GroundTruthCrf::anchored(2.2, 0.5), 0.01, 100.0, kTimes);
  for (auto strategy : {SiteStrategy::stratified, SiteStrategy::random}) {
    const auto a = sample_sites(imgs, 1, 100, strategy, 42);
    const auto b = sample_sites(imgs, 1, 100, strategy, 42);
    const auto c = sample_sites(imgs, 1, 100, strategy, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  }
}

TEST(Calibrate, StackRecoversEveryChannel) {
  const GroundTruthCrf gt = GroundTruthCrf::anchored(2.2, 0.5);
  const auto imgs = ramp_stack(gt, 0.002, 400.0, kTimes);
  const auto crf = calibrate_stack(imgs, kTimes, 512, 50.0, 3);
  for (const auto& c : crf) EXPECT_LE(gauge_rmse(c, gt, 10, 245), 0.05);
  // The curve is monotone and lines up with the analytic response.
  const CrfCurve curve = discrete_to_curve(crf);
  EXPECT_EQ(monotonicity_violation(curve), 0.0);
  const CrfComparison cmp = compare_crf(curve, gt_curve(gt, linspace(-8, 3, 400)));
  EXPECT_LE(cmp.worst_rmse(), 0.02);
}

TEST(CompareCrf, SelfAndShifted) {
  const GroundTruthCrf gt = GroundTruthCrf::anchored(2.2, 0.5);
  const auto grid = linspace(-8, 3, 300);
  const CrfCurve a = gt_curve(gt, grid);
  const CrfComparison self = compare_crf(a, a);
  EXPECT_EQ(self.worst_rmse(), 0.0);
  CrfCurve shifted = a;
  for (double& x : shifted.log_exposure) x += 1.3;
  const CrfComparison s = compare_crf(shifted, a);
  EXPECT_NEAR(s.worst_rmse(), 0.0, 1e-12);
  for (double k : s.shift) EXPECT_NEAR(k, -1.3, 1e-9);
}

TEST(CompareCrf, NoOverlapIsInputError) {
  CrfCurve flat;
  flat.log_exposure = {0, 1};
  for (auto& c : flat.color) c = {0.2, 0.3};
  const CrfCurve gt = gt_curve(GroundTruthCrf::anchored(2.2, 0.5), linspace(-8, 3, 50));
  EXPECT_THROW(compare_crf(flat, gt), InputError);
  CrfCurve narrow;
  narrow.log_exposure = {-0.01, 0.01};
  for (auto& c : narrow.color) c = {0.4999, 0.5001};
  // Both cross 0.5, but the reference grid has no point in that sliver.
  EXPECT_THROW(compare_crf(narrow, gt, 0.4999, 0.5001), InputError);
}

TEST(CurveCsv, RoundTripAndBadHeader) {
  const CrfCurve a = gt_curve(GroundTruthCrf::anchored(2.2, 0.5), linspace(-3, 1, 9));
  const CrfCurve b = parse_crf_curve_csv(crf_curve_csv(a));
  EXPECT_EQ(a.log_exposure, b.log_exposure);
  EXPECT_EQ(a.color, b.color);
  EXPECT_THROW(parse_crf_curve_csv("x,r,g,b\n0,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_crf_curve_csv("log_exposure,red,green,blue\n0,zz\n"), FormatError);
}
