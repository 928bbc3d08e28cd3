#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rmau/losses.hpp"
#include "test_util.hpp"

using namespace rmau;
using rmau::testing::random_mask;
using rmau::testing::random_prob;

namespace {

ProbMap prob_of(int h, int w, std::initializer_list<float> v) {
  ProbMap p(h, w);
  p.values.assign(v);
  return p;
}

MaskImage mask_of(int h, int w, std::initializer_list<std::uint8_t> v) {
  MaskImage m(h, w);
  m.values.assign(v);
  return m;
}

ProbMap as_prob(const MaskImage& m) {
  ProbMap p(m.height, m.width);
  for (std::size_t k = 0; k < m.values.size(); ++k) p.values[k] = m.values[k];
  return p;
}

LossConfig with_kind(LossKind k) {
  LossConfig c;
  c.kind = k;
  return c;
}

constexpr LossKind kAllKinds[] = {LossKind::cross_entropy, LossKind::focal,   LossKind::iou,
                                  LossKind::focal_iou,     LossKind::tversky, LossKind::log_cosh_dice};

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::BadConfig;
}

}  // namespace

// ---- cross-entropy with L2

TEST(CrossEntropyL2, SinglePixelHalf) {
  EXPECT_NEAR(cross_entropy_l2(prob_of(1, 1, {0.5f}), mask_of(1, 1, {1}), 0.0, LossConfig{}), std::log(2.0), 1e-6);
}

TEST(CrossEntropyL2, PerfectPredictionLeavesOnlyTheL2Term) {
  Xoshiro256 rng(1);
  const MaskImage y = random_mask(8, 8, rng);
  LossConfig cfg;
  EXPECT_NEAR(cross_entropy_l2(as_prob(y), y, 0.0, cfg), 0.0, 1e-6);
  cfg.lambda_l2 = 0.0001;
  EXPECT_NEAR(cross_entropy_l2(as_prob(y), y, 200.0, cfg), 0.01, 1e-6);
}

TEST(CrossEntropyL2, UsesBothTermsOfBinaryCrossEntropy) {
  // y = 0 pixels are penalised too
  const double v = cross_entropy_l2(prob_of(1, 2, {0.8f, 0.3f}), mask_of(1, 2, {1, 0}), 0.0, LossConfig{});
  EXPECT_NEAR(v, -(std::log(0.8) + std::log(0.7)) / 2.0, 1e-6);
}

TEST(CrossEntropyL2, ShapeMismatch) {
  EXPECT_EQ(code_of([] { cross_entropy_l2(ProbMap(2, 2), MaskImage(3, 3), 0.0, LossConfig{}); }),
            Errc::ShapeMismatch);
}

// ---- focal

TEST(FocalLoss, PerfectPredictionIsZero) {
  Xoshiro256 rng(2);
  const MaskImage y = random_mask(8, 8, rng);
  EXPECT_NEAR(focal_loss(as_prob(y), y, LossConfig{}), 0.0, 1e-6);
}

TEST(FocalLoss, GammaZeroAlphaOneIsCrossEntropy) {
  Xoshiro256 rng(3);
  LossConfig cfg;
  cfg.focal_gamma = 0.0;
  cfg.focal_alpha = 1.0;
  for (int trial = 0; trial < 10; ++trial) {
    const ProbMap p = random_prob(8, 8, rng, 0.01, 0.99);
    const MaskImage y = random_mask(8, 8, rng);
    EXPECT_NEAR(focal_loss(p, y, cfg), cross_entropy_l2(p, y, 0.0, cfg), 1e-12);
  }
}

TEST(FocalLoss, SinglePixelHalf) {
  EXPECT_NEAR(focal_loss(prob_of(1, 1, {0.5f}), mask_of(1, 1, {1}), LossConfig{}), 0.25 * 0.25 * std::log(2.0), 1e-6);
  EXPECT_NEAR(0.25 * 0.25 * std::log(2.0), 0.0433, 1e-4);
}

// ---- soft IoU

TEST(IouLoss, Examples) {
  Xoshiro256 rng(4);
  const MaskImage y = random_mask(8, 8, rng);
  EXPECT_NEAR(iou_loss(as_prob(y), y, LossConfig{}), 0.0, 1e-6);
  EXPECT_NEAR(iou_loss(ProbMap(2, 2, 0.5f), MaskImage(2, 2, 1), LossConfig{}), 0.5, 1e-6);
  EXPECT_NEAR(iou_loss(ProbMap(4, 4, 0.0f), MaskImage(4, 4, 0), LossConfig{}), 0.0, 1e-6);
}

// ---- combination

TEST(CombinedFocalIou, Endpoints) {
  Xoshiro256 rng(5);
  const ProbMap p = random_prob(8, 8, rng, 0.05, 0.95);
  const MaskImage y = random_mask(8, 8, rng);
  LossConfig cfg;
  cfg.alpha = 1.0;
  EXPECT_EQ(combined_focal_iou(p, y, cfg), focal_loss(p, y, cfg));
  cfg.alpha = 0.0;
  EXPECT_EQ(combined_focal_iou(p, y, cfg), iou_loss(p, y, cfg));
}

TEST(CombinedFocalIou, HalfWeightArithmetic) {
  // focal 0.04 and iou 0.5 at alpha 0.5
  EXPECT_NEAR(0.5 * 0.04 + 0.5 * 0.5, 0.27, 1e-12);
  // two one-pixel maps whose components are known in closed form
  const ProbMap p = prob_of(1, 1, {0.5f});
  const MaskImage y = mask_of(1, 1, {1});
  LossConfig cfg;
  const double f = 0.25 * 0.25 * std::log(2.0);
  const double i = 1.0 - (0.5 + 1e-6) / (1.0 + 1e-6);
  EXPECT_NEAR(combined_focal_iou(p, y, cfg), 0.5 * f + 0.5 * i, 1e-9);
}

TEST(CombinedFocalIou, ExactlyLinearInAlpha) {
  Xoshiro256 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const ProbMap p = random_prob(8, 8, rng, 0.05, 0.95);
    const MaskImage y = random_mask(8, 8, rng);
    LossConfig cfg;
    const double f = focal_loss(p, y, cfg);
    const double i = iou_loss(p, y, cfg);
    for (double a : {0.0, 0.25, 0.5, 1.0}) {
      cfg.alpha = a;
      EXPECT_EQ(combined_focal_iou(p, y, cfg), a * f + (1.0 - a) * i) << "alpha " << a;
    }
  }
}

// ---- Tversky, Dice, log-cosh Dice

TEST(TverskyLoss, Examples) {
  Xoshiro256 rng(7);
  const MaskImage y = random_mask(8, 8, rng);
  EXPECT_NEAR(tversky_loss(as_prob(y), y, LossConfig{}), 0.0, 1e-6);
  // tp = 1.5, fp = 0.2, fn = 0.5 -> 1 - 1.5 / (1.5 + 0.3*0.2 + 0.7*0.5)
  const ProbMap p = prob_of(2, 2, {1.0f, 0.5f, 0.2f, 0.0f});
  const MaskImage t = mask_of(2, 2, {1, 1, 0, 0});
  EXPECT_NEAR(tversky_loss(p, t, LossConfig{}), 1.0 - 1.5 / 1.91, 1e-6);
}

TEST(TverskyLoss, EqualWeightsReduceToDice) {
  Xoshiro256 rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const ProbMap p = random_prob(8, 8, rng);
    const MaskImage y = random_mask(8, 8, rng);
    LossConfig cfg;
    cfg.tversky_alpha = cfg.tversky_beta = 0.5;
    double tp = 0, sp = 0, sy = 0;
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      tp += p.values[k] * y.values[k];
      sp += p.values[k];
      sy += y.values[k];
    }
    const double dice = 1.0 - (2.0 * tp + 2e-6) / (sp + sy + 2e-6);
    EXPECT_NEAR(tversky_loss(p, y, cfg), dice, 1e-12);
    EXPECT_NEAR(dice_loss(p, y, LossConfig{}), dice, 1e-12);
  }
}

TEST(LogCoshDiceLoss, Examples) {
  Xoshiro256 rng(9);
  const MaskImage y = random_mask(8, 8, rng);
  EXPECT_NEAR(log_cosh_dice_loss(as_prob(y), y, LossConfig{}), 0.0, 1e-6);
  const ProbMap p = prob_of(2, 2, {1.0f, 0.5f, 0.2f, 0.0f});
  const MaskImage t = mask_of(2, 2, {1, 1, 0, 0});
  const double dice = 1.0 - 3.0 / 3.7;  // 2*1.5 / (1.7 + 2)
  EXPECT_NEAR(log_cosh_dice_loss(p, t, LossConfig{}), std::log(std::cosh(dice)), 1e-6);
  // log cosh x = x^2/2 - x^4/12 + ...: a small Dice loss is roughly halved and squared
  EXPECT_NEAR(std::log(std::cosh(dice)), dice * dice / 2.0 - std::pow(dice, 4) / 12.0, 1e-5);
}

TEST(LogCoshDiceLoss, IsLogCoshOfDice) {
  Xoshiro256 rng(10);
  const ProbMap p = random_prob(8, 8, rng);
  const MaskImage y = random_mask(8, 8, rng);
  EXPECT_NEAR(log_cosh_dice_loss(p, y, LossConfig{}), std::log(std::cosh(dice_loss(p, y, LossConfig{}))), 1e-12);
}

// ---- multi-head

TEST(MultiHeadLoss, IdenticalHeadsEqualSingleHead) {
  Xoshiro256 rng(11);
  const ProbMap p = random_prob(8, 8, rng);
  const MaskImage y = random_mask(8, 8, rng);
  const LossConfig cfg;
  EXPECT_NEAR(multi_head_loss({p, p, p}, y, cfg), pixel_loss(p, y, cfg), 1e-12);
}

TEST(MultiHeadLoss, MeanOfPerHeadLosses) {
  // all-landslide target, constant heads at 2S / S / S/2: IoU loss = 1 - p
  const MaskImage y(2, 2, 1);
  const LossConfig cfg = with_kind(LossKind::iou);
  const std::vector<ProbMap> heads = {ProbMap(4, 4, 0.7f), ProbMap(2, 2, 0.4f), ProbMap(1, 1, 0.1f)};
  EXPECT_NEAR(pixel_loss(heads[0], resample_mask(y, 4), cfg), 0.3, 1e-6);
  EXPECT_NEAR(pixel_loss(heads[1], y, cfg), 0.6, 1e-6);
  EXPECT_NEAR(pixel_loss(heads[2], resample_mask(y, 1), cfg), 0.9, 1e-6);
  EXPECT_NEAR(multi_head_loss(heads, y, cfg), 0.6, 1e-6);
}

TEST(MultiHeadLoss, ZeroWhenEveryHeadIsPerfect) {
  MaskImage y(4, 4);
  y.at(0, 0) = y.at(0, 1) = y.at(1, 0) = y.at(1, 1) = 1;
  const LossConfig cfg = with_kind(LossKind::iou);
  const std::vector<ProbMap> heads = {as_prob(resample_mask(y, 8)), as_prob(y), as_prob(resample_mask(y, 2))};
  EXPECT_NEAR(multi_head_loss(heads, y, cfg), 0.0, 1e-6);
}

TEST(MultiHeadLoss, MissingHead) {
  EXPECT_EQ(code_of([] { multi_head_loss({}, MaskImage(2, 2), LossConfig{}); }), Errc::MissingHead);
  EXPECT_EQ(code_of([] { multi_head_loss({ProbMap{}}, MaskImage(2, 2), LossConfig{}); }), Errc::MissingHead);
}

TEST(ResampleMask, NearestUpAndMaxPoolDown) {
  const MaskImage m = mask_of(2, 2, {1, 0, 0, 0});
  const MaskImage up = resample_mask(m, 4);
  EXPECT_EQ(up.values, (std::vector<std::uint8_t>{1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  MaskImage big(4, 4);
  big.at(3, 2) = 1;
  EXPECT_EQ(resample_mask(big, 2).values, (std::vector<std::uint8_t>{0, 0, 0, 1}));
  EXPECT_EQ(resample_mask(m, 2), m);
}

// ---- detection

TEST(DetectionLoss, Examples) {
  EXPECT_NEAR(detection_loss(0.0, 1), std::log(2.0), 1e-12);
  EXPECT_NEAR(detection_loss(0.0, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(detection_loss(10.0, 1), 4.54e-5, 1e-7);
  EXPECT_NEAR(detection_loss(-10.0, 1), 10.0, 1e-4);
  EXPECT_NEAR(detection_loss(10.0, 1), -std::log(1.0 / (1.0 + std::exp(-10.0))), 1e-15);
  EXPECT_TRUE(std::isfinite(detection_loss(-800.0, 1)));
}

TEST(DetectionLoss, GradientMatchesFiniteDifference) {
  for (double z : {-3.0, -0.2, 0.0, 1.7}) {
    for (int y : {0, 1}) {
      const double h = 1e-6;
      const double fd = (detection_loss(z + h, y) - detection_loss(z - h, y)) / (2 * h);
      EXPECT_NEAR(detection_loss_grad(z, y), fd, 1e-8);
    }
  }
}

// ---- properties

TEST(LossProperty, NonNegativeAndPermutationInvariant) {
  Xoshiro256 rng(12);
  for (LossKind kind : kAllKinds) {
    const LossConfig cfg = with_kind(kind);
    for (int trial = 0; trial < 20; ++trial) {
      const ProbMap p = random_prob(8, 8, rng);
      const MaskImage y = random_mask(8, 8, rng);
      const double v = pixel_loss(p, y, cfg);
      EXPECT_GE(v, 0.0);
      std::vector<std::size_t> perm(64);
      std::iota(perm.begin(), perm.end(), 0);
      fisher_yates(perm, rng);
      ProbMap pp(8, 8);
      MaskImage yy(8, 8);
      for (std::size_t k = 0; k < 64; ++k) {
        pp.values[k] = p.values[perm[k]];
        yy.values[k] = y.values[perm[k]];
      }
      EXPECT_NEAR(pixel_loss(pp, yy, cfg), v, 1e-12) << to_string(kind);
    }
  }
}

TEST(LossProperty, ZeroAtPerfectPrediction) {
  Xoshiro256 rng(13);
  for (LossKind kind : kAllKinds) {
    const MaskImage y = random_mask(8, 8, rng);
    EXPECT_NEAR(pixel_loss(as_prob(y), y, with_kind(kind)), 0.0, 2e-6) << to_string(kind);
  }
}

TEST(LossGradient, AnalyticMatchesCentralDifferencesOnRandomMaps) {
  Xoshiro256 rng(14);
  double worst = 0.0;
  for (LossKind kind : kAllKinds) {
    const LossConfig cfg = with_kind(kind);
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<double> p(64);
      for (auto& v : p) v = rng.uniform(0.02, 0.98);
      const MaskImage y = random_mask(8, 8, rng);
      const LossGrad g = pixel_loss_grad<double>(p, y.values, cfg);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double h = 1e-6;
        auto q = p;
        q[k] = p[k] + h;
        const double up = pixel_loss_grad<double>(q, y.values, cfg).value;
        q[k] = p[k] - h;
        const double down = pixel_loss_grad<double>(q, y.values, cfg).value;
        const double fd = (up - down) / (2 * h);
        const double rel = std::abs(fd - g.grad[k]) / std::max(1e-6, std::abs(fd) + std::abs(g.grad[k]));
        worst = std::max(worst, rel);
        EXPECT_LT(rel, 1e-3) << to_string(kind) << " pixel " << k << " fd " << fd << " analytic " << g.grad[k];
      }
    }
  }
  RecordProperty("worst_rel_err", std::to_string(worst));
}

// ---- batched heads

TEST(HeadLossGrad, PooledBatchMatchesPerImageMeanForPixelLosses) {
  Xoshiro256 rng(15);
  const int n = 3;
  nn::Tensor<double> probs({n, 4, 4});
  for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = rng.uniform(0.05, 0.95);
  std::vector<MaskImage> ys;
  for (int b = 0; b < n; ++b) ys.push_back(random_mask(4, 4, rng));
  for (LossKind kind : {LossKind::cross_entropy, LossKind::focal}) {
    const LossConfig cfg = with_kind(kind);
    double mean = 0.0;
    for (int b = 0; b < n; ++b) {
      ProbMap p(4, 4);
      for (int k = 0; k < 16; ++k) p.values[k] = static_cast<float>(probs[b * 16 + k]);
      std::vector<double> pd(probs.data() + b * 16, probs.data() + (b + 1) * 16);
      mean += pixel_loss_grad<double>(pd, ys[b].values, cfg).value / n;
    }
    EXPECT_NEAR(head_loss_grad<double>(probs, ys, cfg, nullptr), mean, 1e-12);
  }
}

TEST(HeadLossGrad, LogitGradientMatchesFiniteDifferences) {
  Xoshiro256 rng(16);
  const int n = 2;
  std::vector<double> logits(n * 9);
  for (auto& z : logits) z = rng.uniform(-2.0, 2.0);
  std::vector<MaskImage> ys = {random_mask(3, 3, rng, 0.4), random_mask(3, 3, rng, 0.4)};
  auto loss_at = [&](const std::vector<double>& z, const LossConfig& cfg, nn::Tensor<double>* d) {
    nn::Tensor<double> p({n, 3, 3});
    for (std::size_t k = 0; k < z.size(); ++k) p[k] = nn::sigmoid(z[k]);
    return head_loss_grad(p, ys, cfg, d);
  };
  for (LossKind kind : kAllKinds) {
    const LossConfig cfg = with_kind(kind);
    nn::Tensor<double> d;
    loss_at(logits, cfg, &d);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      auto z = logits;
      z[k] += 1e-6;
      const double up = loss_at(z, cfg, nullptr);
      z[k] -= 2e-6;
      const double fd = (up - loss_at(z, cfg, nullptr)) / 2e-6;
      EXPECT_NEAR(d[k], fd, 1e-3 * std::max(1e-4, std::abs(fd))) << to_string(kind) << " " << k;
    }
  }
}

TEST(HeadLossGrad, Errors) {
  nn::Tensor<double> probs({2, 2, 2});
  EXPECT_EQ(code_of([&] { head_loss_grad<double>(probs, {MaskImage(2, 2)}, LossConfig{}, nullptr); }), Errc::LengthMismatch);
  EXPECT_EQ(code_of([&] { head_loss_grad<double>(probs, {MaskImage(3, 3), MaskImage(3, 3)}, LossConfig{}, nullptr); }),
            Errc::ShapeMismatch);
}

// ---- configuration

TEST(LossConfigText, RoundTripAndValidation) {
  LossConfig c;
  c.kind = LossKind::tversky;
  c.alpha = 0.25;
  c.tversky_beta = 0.8;
  LossConfig d;
  d.apply(parse_key_values(c.to_text()));
  EXPECT_EQ(d.to_text(), c.to_text());
  EXPECT_EQ(c.lambda_l2, 1e-4);
  EXPECT_EQ(LossConfig{}.kind, LossKind::focal_iou);
  EXPECT_EQ(LossConfig{}.alpha, 0.5);
  LossConfig e;
  EXPECT_EQ(code_of([&] { e.apply(parse_key_values("loss.alpha=1.5\n")); }), Errc::BadConfig);
  EXPECT_EQ(code_of([&] { e.apply(parse_key_values("loss.epsilon=0\n")); }), Errc::BadConfig);
  EXPECT_EQ(code_of([&] { e.apply(parse_key_values("loss.bogus=1\n")); }), Errc::BadConfig);
  EXPECT_EQ(code_of([&] { e.apply(parse_key_values("loss.kind=lovasz\n")); }), Errc::BadConfig);
}
