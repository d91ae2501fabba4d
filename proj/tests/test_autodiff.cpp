#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "hdrnerf/autodiff.hpp"
#include "hdrnerf/rng.hpp"

using namespace hdrnerf;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(Rng& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(ad::shape_size(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Reduces an op output to a scalar with fixed random weights so every
// output element contributes a distinct gradient.
Tensor weighted_sum(Tape& tape, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = random_tensor(rng, y.shape(), 0.5, 1.5, false);
  return tape.sum(tape.mul(y, w));
}

void expect_fd(const std::function<Tensor(Tape&, std::vector<Tensor>&)>& build, std::vector<Tensor> params,
               const char* what) {
  auto eval = [&](Tape& t) { return build(t, params); };
  const auto report = ad::finite_diff_check(eval, params, {1e-5, 1e-5, 1e-8});
  EXPECT_TRUE(report.passed) << what << ": max rel err " << report.max_rel_error << " analytic "
                             << report.worst_analytic << " numeric " << report.worst_numeric;
}

}  // namespace

TEST(Autodiff, MatmulOfOnesGivesRowSums) {
  Tape tape;
  const Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  const Tensor b = Tensor::from({3, 1}, std::vector<double>(3, 1.0));
  const Tensor c = tape.matmul(a, b);
  ASSERT_EQ(c.shape(), (ad::Shape{2, 1}));
  EXPECT_EQ(c.data()[0], 3.0);
  EXPECT_EQ(c.data()[1], 3.0);
}

TEST(Autodiff, MatmulShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(tape.matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Autodiff, SigmoidGradientAtZero) {
  Tensor x = Tensor::scalar(0.0, true);
  Tape tape;
  tape.backward(tape.sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Autodiff, SumGradientIsOnes) {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tape tape;
  tape.backward(tape.sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autodiff, UnusedParameterGetsZeroGradient) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = Tensor::scalar(3.0, true);
  Tape tape;
  std::vector<Tensor> params{x, y};
  tape.backward(tape.exp(y), params);
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_NEAR(y.grad()[0], std::exp(3.0), 1e-12);
}

TEST(Autodiff, NonScalarLossThrows) {
  Tensor x = Tensor::from({2, 1}, {1, 2}, true);
  Tape tape;
  EXPECT_THROW(tape.backward(tape.exp(x)), ShapeError);
}

TEST(Autodiff, SecondBackwardIsRejected) {
  Tensor x = Tensor::scalar(1.0, true);
  Tape tape;
  const Tensor y = tape.mul(x, x);
  tape.backward(y);
  EXPECT_THROW(tape.backward(y), Error);
}

TEST(Autodiff, GradientsAreOverwrittenAcrossTapes) {
  Tensor x = Tensor::scalar(3.0, true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(tape.mul(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  }
}

TEST(Autodiff, LogOfNonPositiveIsDomainError) {
  Tape tape;
  EXPECT_THROW(tape.log(Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(tape.log(Tensor::scalar(-1.0)), DomainError);
}

TEST(Autodiff, NonFiniteForwardValueIsNumericError) {
  Tape tape;
  EXPECT_THROW(tape.exp(Tensor::scalar(1000.0)), NumericError);
}

TEST(Autodiff, ChainRuleOnScalarChain) {
  // d/dx exp(sigmoid(x)) = exp(s) * s (1 - s)
  Tensor x = Tensor::scalar(0.3, true);
  Tape tape;
  tape.backward(tape.exp(tape.sigmoid(x)));
  const double s = 1.0 / (1.0 + std::exp(-0.3));
  EXPECT_NEAR(x.grad()[0], std::exp(s) * s * (1 - s), 1e-14);
}

TEST(Autodiff, BinaryBroadcastModes) {
  Tape tape;
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor row = Tensor::from({1, 2}, {10, 20});
  const Tensor s = Tensor::scalar(2.0);
  const Tensor r = tape.add(a, row);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{11, 22, 13, 24}));
  const Tensor m = tape.mul(a, s);
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), (std::vector<double>{2, 4, 6, 8}));
  EXPECT_THROW(tape.add(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST(Autodiff, ApplyDispatchesByKind) {
  Tape tape;
  const Tensor a = Tensor::from({1, 2}, {1, 2});
  const Tensor in[2] = {a, a};
  EXPECT_EQ(tape.apply(ad::OpKind::add, in).data()[1], 4.0);
  EXPECT_THROW(tape.apply(ad::OpKind::exp, in), ShapeError);
}

// Every op kind against central differences at 10 random points.
TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  using Act = Tape::Activation;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(trial, 1);
    const std::uint64_t ws = 100 + trial;
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.matmul(p[0], p[1]), ws); },
              {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 2})}, "matmul");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.add(p[0], p[1]), ws); },
              {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 2})}, "add");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.add(p[0], p[1]), ws); },
              {random_tensor(rng, {3, 2}), random_tensor(rng, {1, 2})}, "add row");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.mul(p[0], p[1]), ws); },
              {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 2})}, "mul");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.mul(p[0], p[1]), ws); },
              {random_tensor(rng, {3, 2}), random_tensor(rng, {1, 1})}, "mul scalar");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.exp(p[0]), ws); }, {random_tensor(rng, {2, 3})},
              "exp");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.log(p[0]), ws); },
              {random_tensor(rng, {2, 3}, 0.2, 2.0)}, "log");
    // Keep relu inputs away from the kink so central differences are valid.
    Tensor r = random_tensor(rng, {2, 3}, 0.05, 1.0);
    for (std::size_t i = 0; i < r.size(); i += 2) r.mutable_data()[i] = -r.data()[i];
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.relu(p[0]), ws); }, {r}, "relu");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.softplus(p[0]), ws); },
              {random_tensor(rng, {2, 3}, -3, 3)}, "softplus");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.sigmoid(p[0]), ws); },
              {random_tensor(rng, {2, 3}, -3, 3)}, "sigmoid");
    expect_fd([&](Tape& t, auto& p) { return t.mul(t.sum(p[0]), t.sum(p[0])); }, {random_tensor(rng, {2, 3})},
              "sum");
    expect_fd([&](Tape& t, auto& p) { return t.mean_sq_err(p[0], p[1]); },
              {random_tensor(rng, {4, 3}), random_tensor(rng, {4, 3})}, "mean_sq_err");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.concat({p[0], p[1]}), ws); },
              {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 1})}, "concat");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.broadcast(p[0], 4), ws); },
              {random_tensor(rng, {1, 3})}, "broadcast");
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.column(p[0], 1), ws); },
              {random_tensor(rng, {3, 3})}, "column");
    for (Act act : {Act::none, Act::softplus, Act::sigmoid}) {
      expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.affine(p[0], p[1], p[2], act), ws); },
                {random_tensor(rng, {5, 3}), random_tensor(rng, {3, 4}), random_tensor(rng, {1, 4})}, "affine");
    }
    // relu variant: bias pushes pre-activations well away from zero.
    Tensor x = random_tensor(rng, {4, 2}, 0.1, 1.0);
    Tensor w = Tensor::from({2, 2}, {1, -1, 1, -1}, true);
    Tensor b = Tensor::from({1, 2}, {0.5, 0.2}, true);
    expect_fd([&](Tape& t, auto& p) { return weighted_sum(t, t.affine(p[0], p[1], p[2], Act::relu), ws); }, {x, w, b},
              "affine relu");
  }
}

TEST(Autodiff, AffineMatchesUnfusedOps) {
  Rng rng(7);
  const Tensor x = random_tensor(rng, {6, 3});
  const Tensor w = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {1, 4});
  Tape tape(false);
  const Tensor fused = tape.affine(x, w, b, Tape::Activation::softplus);
  const Tensor plain = tape.softplus(tape.add(tape.matmul(x, w), b));
  for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused.data()[i], plain.data()[i], 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  Tensor p = Tensor::from({1, 3}, {0.0, 0.0, 0.0}, true);
  std::vector<Tensor> params{p};
  const std::vector<std::vector<double>> g{{0.3, -2.0, 1e-3}};
  ad::AdamState s;
  ad::adam_step(params, g, s, 0.01);
  EXPECT_EQ(s.t, 1);
  EXPECT_NEAR(p.data()[0], -0.01, 1e-8);
  EXPECT_NEAR(p.data()[1], 0.01, 1e-8);
  EXPECT_NEAR(p.data()[2], -0.01, 1e-5);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor p = Tensor::from({1, 2}, {0.5, -0.5}, true);
  std::vector<Tensor> params{p};
  ad::AdamState s;
  ad::adam_step(params, std::vector<std::vector<double>>{{0.0, 0.0}}, s, 0.1);
  EXPECT_EQ(p.data()[0], 0.5);
  EXPECT_EQ(p.data()[1], -0.5);
}

TEST(Adam, ConstantGradientKeepsStepNearLearningRate) {
  Tensor p = Tensor::from({1, 1}, {0.0}, true);
  std::vector<Tensor> params{p};
  ad::AdamState s;
  const std::vector<std::vector<double>> g{{0.7}};
  ad::adam_step(params, g, s, 0.01);
  const double after_one = p.data()[0];
  ad::adam_step(params, g, s, 0.01);
  EXPECT_NEAR(p.data()[0] - after_one, -0.01, 1e-8);
}

TEST(Adam, ShapeMismatchThrows) {
  Tensor p = Tensor::from({1, 2}, {0, 0}, true);
  std::vector<Tensor> params{p};
  ad::AdamState s;
  EXPECT_THROW(ad::adam_step(params, std::vector<std::vector<double>>{{1.0}}, s, 0.1), ShapeError);
}

TEST(FiniteDiff, QuadraticIsExact) {
  Tensor x = Tensor::scalar(3.0, true);
  std::vector<Tensor> params{x};
  const auto r = ad::finite_diff_check([&](Tape& t) { return t.mul(params[0], params[0]); }, params);
  EXPECT_NEAR(r.worst_analytic, 6.0, 1e-12);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(FiniteDiff, SigmoidAtZero) {
  Tensor x = Tensor::scalar(0.0, true);
  std::vector<Tensor> params{x};
  const auto r = ad::finite_diff_check([&](Tape& t) { return t.sigmoid(params[0]); }, params);
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-12);
  EXPECT_NEAR(r.worst_numeric, 0.25, 1e-6);
  EXPECT_TRUE(r.passed);
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradients) {
  Tensor x = Tensor::scalar(1.5, true);
  std::vector<Tensor> params{x};
  const auto r = ad::finite_diff_check([&](Tape&) { return Tensor::scalar(4.0); }, params);
  EXPECT_EQ(r.max_abs_error, 0.0);
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(FiniteDiff, NondeterministicEvaluationIsDetected) {
  Tensor x = Tensor::scalar(1.0, true);
  std::vector<Tensor> params{x};
  int calls = 0;
  EXPECT_THROW(ad::finite_diff_check(
                   [&](Tape& t) { return t.mul(params[0], Tensor::scalar(static_cast<double>(++calls))); }, params),
               DeterminismError);
}
