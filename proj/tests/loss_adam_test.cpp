#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "nucleoseg/adam.hpp"
#include "nucleoseg/loss.hpp"
#include "test_util.hpp"

using namespace nseg;

TEST(Loss, EqualLogitsGiveLogTwo) {
  Tensor<double> logits(Dims{1, 2, 2, 2}, 0.0);
  LabelBatch labels{1, 2, 2, {0, 1, 1, 0}};
  auto res = softmax_cross_entropy(logits, labels, {1.0, 1.0});
  EXPECT_NEAR(res.loss, std::log(2.0), 1e-12);
  EXPECT_EQ(res.pixels, 4u);
}

TEST(Loss, SinglePixelFixture) {
  Tensor<double> logits(Dims{1, 2, 1, 1});
  logits.at(0, 0, 0, 0) = 1.0;
  logits.at(0, 1, 0, 0) = 2.0;
  LabelBatch labels{1, 1, 1, {1}};
  auto res = softmax_cross_entropy(logits, labels, {1.0, 1.0});
  EXPECT_NEAR(res.loss, 0.3132616875182228, 1e-12);  // -log(e^2/(e^1+e^2))
  EXPECT_NEAR(res.grad_logits.at(0, 0, 0, 0), 0.2689414213699951, 1e-12);
  EXPECT_NEAR(res.grad_logits.at(0, 1, 0, 0), -0.2689414213699951, 1e-12);
  EXPECT_EQ(res.correct, 1u);
}

TEST(Loss, ClassWeightsRescalePixels) {
  Tensor<double> logits(Dims{1, 2, 1, 2}, 0.0);
  LabelBatch labels{1, 1, 2, {0, 1}};
  auto res = softmax_cross_entropy(logits, labels, {1.0, 3.0});
  // both pixels contribute log 2; weights 1 and 3 normalize to 1/4, 3/4
  EXPECT_NEAR(res.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(res.grad_logits.at(0, 0, 0, 0), (0.5 - 1.0) * 0.25, 1e-12);
  EXPECT_NEAR(res.grad_logits.at(0, 0, 0, 1), 0.5 * 0.75, 1e-12);
}

TEST(Loss, HugeLogitsStayFinite) {
  Tensor<double> logits(Dims{1, 2, 1, 1});
  logits.at(0, 0, 0, 0) = 800.0;
  logits.at(0, 1, 0, 0) = -800.0;
  LabelBatch labels{1, 1, 1, {0}};
  auto res = softmax_cross_entropy(logits, labels, {1.0, 1.0});
  EXPECT_NEAR(res.loss, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(res.grad_logits[0]));
}

TEST(Loss, RejectsOutOfRangeLabels) {
  Tensor<double> logits(Dims{1, 2, 1, 1}, 0.0);
  EXPECT_THROW(softmax_cross_entropy(logits, LabelBatch{1, 1, 1, {2}}, {1.0, 1.0}),
               DataError);
  EXPECT_THROW(softmax_cross_entropy(logits, LabelBatch{1, 1, 1, {-1}}, {1.0, 1.0}),
               DataError);
  EXPECT_THROW(softmax_cross_entropy(logits, LabelBatch{1, 2, 1, {0, 0}}, {1.0, 1.0}),
               ShapeError);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(111);
  Tensor<double> logits = testutil::random_tensor(Dims{2, 2, 3, 3}, rng, -2, 2);
  LabelBatch labels{2, 3, 3, {}};
  for (std::size_t i = 0; i < 18; ++i)
    labels.ids.push_back(std::int32_t(rng.below(2)));
  std::vector<double> weights{1.0, 2.5};
  auto res = softmax_cross_entropy(logits, labels, weights);
  auto loss = [&] { return softmax_cross_entropy(logits, labels, weights).loss; };
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double num = testutil::fd_derivative(&logits.data()[i], loss);
    ASSERT_LE(testutil::rel_error(res.grad_logits[i], num), testutil::kFdTol) << i;
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // with l2 = 0 and t = 1, mhat/vhat reduce to g/|g|, so the step is
  // lr * sign(g) up to eps
  Tensor<float> theta(Dims{1, 1, 1, 2}, 0.5f);
  theta.grad()[0] = 0.3f;
  theta.grad()[1] = -0.02f;
  std::vector<ParamRef<float>> params{{"p", &theta, true}};
  AdamConfig cfg;
  cfg.lr = 1e-2;
  cfg.l2 = 0;
  Adam<float> opt(cfg);
  opt.step(params);
  EXPECT_NEAR(theta[0], 0.5 - 1e-2, 1e-6);
  EXPECT_NEAR(theta[1], 0.5 + 1e-2, 1e-6);
  EXPECT_EQ(theta.grad()[0], 0.0f);  // cleared after the step
}

TEST(Adam, L2FoldsIntoGradient) {
  Tensor<float> theta(Dims{1, 1, 1, 1}, 1.0f);
  theta.grad();  // zero gradient; only the l2 pull moves theta
  std::vector<ParamRef<float>> params{{"p", &theta, true}};
  AdamConfig cfg;
  cfg.lr = 1e-3;
  cfg.l2 = 0.1;
  Adam<float> opt(cfg);
  opt.step(params);
  EXPECT_NEAR(theta[0], 1.0 - 1e-3, 1e-6);
}

TEST(Adam, MatchesScalarReferenceOverManySteps) {
  Rng rng(121);
  Tensor<float> theta(Dims{1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) theta[i] = float(rng.uniform(-1, 1));
  AdamConfig cfg;  // defaults: lr 5e-4, betas 0.9/0.999, eps 1e-8, l2 2e-4
  Adam<float> opt(cfg);
  std::vector<ParamRef<float>> params{{"p", &theta, true}};

  double m[4] = {0, 0, 0, 0}, v[4] = {0, 0, 0, 0};
  double ref[4];
  for (std::size_t i = 0; i < 4; ++i) ref[i] = theta[i];

  for (int t = 1; t <= 25; ++t) {
    float gs[4];
    for (std::size_t i = 0; i < 4; ++i) gs[i] = float(rng.uniform(-2, 2));
    for (std::size_t i = 0; i < 4; ++i) theta.grad()[i] = gs[i];
    opt.step(params);
    for (std::size_t i = 0; i < 4; ++i) {
      double g = double(gs[i]) + cfg.l2 * ref[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      double mhat = m[i] / (1 - std::pow(cfg.beta1, t));
      double vhat = v[i] / (1 - std::pow(cfg.beta2, t));
      ref[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      ASSERT_NEAR(theta[i], ref[i], 5e-5) << "step " << t << " param " << i;
    }
  }
  EXPECT_EQ(opt.steps(), 25);
}

TEST(Adam, NonFiniteGradientIsRejected) {
  Tensor<float> theta(Dims{1, 1, 1, 1}, 0.0f);
  theta.grad()[0] = std::numeric_limits<float>::quiet_NaN();
  std::vector<ParamRef<float>> params{{"p", &theta, true}};
  Adam<float> opt;
  EXPECT_THROW(opt.step(params), NumericError);
}

TEST(Adam, SkipsNonTrainableEntries) {
  Tensor<float> theta(Dims{1, 1, 1, 1}, 1.0f);
  Tensor<float> buffer(Dims{1, 1, 1, 1}, 5.0f);
  theta.grad()[0] = 1.0f;
  std::vector<ParamRef<float>> params{{"p", &theta, true}, {"b", &buffer, false}};
  Adam<float> opt;
  opt.step(params);
  EXPECT_EQ(buffer[0], 5.0f);
  EXPECT_NE(theta[0], 1.0f);
}
