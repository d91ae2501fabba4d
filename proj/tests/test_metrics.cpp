#include <gtest/gtest.h>

#include <cmath>

#include "hdrnerf/metrics.hpp"
#include "hdrnerf/synth.hpp"

using namespace hdrnerf;

namespace {

Image noise_image(int w, int h, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed, 0);
  Image img(w, h);
  for (double& v : img.data) v = lo + (hi - lo) * rng.uniform();
  return img;
}

DatasetBundle small_dataset() {
  SceneSpec s = default_scene();
  s.rig.width = s.rig.height = 16;
  s.n_poses = 5;
  s.gt_samples = 64;
  return make_dataset(s, 4);
}

}  // namespace

TEST(MuLaw, EndpointsAndMidValue) {
  EXPECT_EQ(mu_law(0.0), 0.0);
  EXPECT_EQ(mu_law(1.0), 1.0);
  EXPECT_NEAR(mu_law(0.1), std::log(501.0) / std::log(5001.0), 1e-12);
  EXPECT_NEAR(mu_law(0.1), 0.7299, 1e-4);
  EXPECT_THROW(mu_law(1.5), InputError);
  EXPECT_THROW(mu_law(-0.01), InputError);
  double prev = -1;
  for (double e = 0.0; e <= 1.0; e += 1e-3) {
    EXPECT_GT(mu_law(e), prev);
    prev = mu_law(e);
  }
}

TEST(Psnr, FormulaAndSentinel) {
  Image a(4, 4, 0.5), b(4, 4, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
  // Halving both images and the peak leaves PSNR unchanged.
  Image ha = a, hb = b;
  for (double& v : ha.data) v *= 0.5;
  for (double& v : hb.data) v *= 0.5;
  EXPECT_NEAR(psnr(ha, hb, 0.5), psnr(a, b), 1e-12);
  EXPECT_THROW(psnr(a, Image(3, 4)), ShapeError);
  EXPECT_THROW(psnr(a, b, 0.0), InputError);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const Image a(16, 16, 0.25), b(16, 16, 0.75);
  const double c1 = 1e-4;
  const double expected = (2 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  EXPECT_NEAR(ssim(a, b), expected, 1e-12);
  EXPECT_NEAR(ssim(a, b), 0.6001, 1e-4);
}

TEST(Ssim, IdentitySymmetryAndSize) {
  const Image a = noise_image(20, 17, 1), b = noise_image(20, 17, 2);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  EXPECT_LT(ssim(a, b), 0.2);
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), InputError);
}

TEST(AlignScale, ExactRatios) {
  const Image gt = noise_image(8, 8, 3, 0.1, 5.0);
  EXPECT_EQ(align_scale(gt, gt).first.alpha, (std::array<double, 3>{1, 1, 1}));
  Image half = gt;
  for (std::size_t p = 0; p < half.pixels(); ++p) half.data[3 * p] /= 2;
  const auto [s, aligned] = align_scale(half, gt);
  EXPECT_NEAR(s.alpha[0], 2.0, 1e-12);
  EXPECT_NEAR(s.alpha[1], 1.0, 1e-12);
  EXPECT_NEAR(s.alpha[2], 1.0, 1e-12);
  for (std::size_t k = 0; k < gt.data.size(); ++k) EXPECT_NEAR(aligned.data[k], gt.data[k], 1e-12);
}

TEST(AlignScale, MinimizesLogErrorAgainstGridSearch) {
  const Image gt = noise_image(8, 8, 5, 0.1, 5.0);
  const Image pred = noise_image(8, 8, 6, 0.1, 5.0);
  const auto s = align_scale(pred, gt).first;
  for (int c = 0; c < 3; ++c) {
    auto err = [&](double alpha) {
      double e = 0.0;
      for (std::size_t p = 0; p < gt.pixels(); ++p) {
        const double d = std::log(gt.data[3 * p + c]) - std::log(alpha * pred.data[3 * p + c]);
        e += d * d;
      }
      return e;
    };
    // Coarse grid over ln alpha, then ternary search around the best cell.
    double best = 0.0, best_err = INFINITY;
    for (double la = -2.0; la <= 2.0; la += 1e-3) {
      const double e = err(std::exp(la));
      if (e < best_err) {
        best_err = e;
        best = la;
      }
    }
    double lo = best - 1e-3, hi = best + 1e-3;
    for (int it = 0; it < 100; ++it) {
      const double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
      if (err(std::exp(m1)) < err(std::exp(m2))) {
        hi = m2;
      } else {
        lo = m1;
      }
    }
    EXPECT_NEAR(std::log(s.alpha[c]), 0.5 * (lo + hi), 1e-6) << c;
  }
}

TEST(AlignScale, InvariantToPerChannelPrescale) {
  const Image gt = noise_image(8, 8, 7, 0.1, 5.0);
  const Image pred = noise_image(8, 8, 8, 0.1, 5.0);
  Image scaled = pred;
  for (std::size_t p = 0; p < scaled.pixels(); ++p) {
    scaled.data[3 * p] *= 3.7;
    scaled.data[3 * p + 1] *= 0.02;
    scaled.data[3 * p + 2] *= 150.0;
  }
  const Image a = align_scale(pred, gt).second, b = align_scale(scaled, gt).second;
  for (std::size_t k = 0; k < a.data.size(); ++k) EXPECT_NEAR(a.data[k], b.data[k], 1e-9);
  EXPECT_THROW(align_scale(Image(4, 4), gt), ShapeError);
  EXPECT_THROW(align_scale(Image(8, 8), gt), InputError);
}

TEST(Evaluate, GroundTruthAgainstItself) {
  const DatasetBundle d = small_dataset();
  TestPredictions p;
  for (std::size_t i : d.indices(false)) {
    p.ldr.push_back(d.views[i].image);
    p.hdr.push_back(*d.views[i].hdr);
  }
  const EvalTable t = evaluate(d, p);
  for (const char* split : {"LDR-OE", "LDR-NE", "HDR", "HDR-unaligned"}) {
    ASSERT_TRUE(t.get(split, "psnr")) << split;
    EXPECT_TRUE(std::isinf(*t.get(split, "psnr"))) << split;
    EXPECT_NEAR(*t.get(split, "ssim"), 1.0, 1e-12) << split;
  }
  EXPECT_NE(t.csv().find("LDR-OE,psnr,inf"), std::string::npos);
}

TEST(Evaluate, BlackPredictionIsFiniteAndWorse) {
  const DatasetBundle d = small_dataset();
  const auto tests = d.indices(false);
  TestPredictions p;
  for (std::size_t k = 0; k < tests.size(); ++k) {
    p.ldr.emplace_back(16, 16, 0.0);
    p.hdr.emplace_back(16, 16, 0.0);
  }
  const EvalTable t = evaluate(d, p);
  for (const char* split : {"LDR-OE", "LDR-NE", "HDR"}) {
    ASSERT_TRUE(t.get(split, "psnr")) << split;
    EXPECT_TRUE(std::isfinite(*t.get(split, "psnr"))) << split;
  }
  EXPECT_FALSE(t.notices.empty());
  p.ldr.pop_back();
  EXPECT_THROW(evaluate(d, p), ShapeError);
}

TEST(Evaluate, MissingHdrOmitsRow) {
  DatasetBundle d = small_dataset();
  TestPredictions p;
  for (std::size_t i : d.indices(false)) {
    p.ldr.push_back(d.views[i].image);
    p.hdr.push_back(*d.views[i].hdr);
    d.views[i].hdr.reset();
  }
  const EvalTable t = evaluate(d, p);
  EXPECT_FALSE(t.get("HDR", "psnr"));
  EXPECT_TRUE(t.get("LDR-NE", "psnr"));
  ASSERT_EQ(t.notices.size(), 1u);
}
