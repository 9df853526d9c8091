// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gdcunet/gradcheck.hpp"
#include "gdcunet/losses.hpp"
#include "gdcunet/metrics.hpp"
#include "oracles.hpp"

using namespace gdc;

namespace {

BinaryMask pixel(std::size_t h, std::size_t w, std::size_t y, std::size_t x) {
  BinaryMask m(h, w);
  m(y, x) = 1;
  return m;
}

double loss_value(const Tensor<double>& logits, const Tensor<double>& targets) {
  return bce_dice_loss(Var<double>(logits), targets).value()[0];
}

}  // namespace

TEST(Loss, WorkedExample) {
  const Tensor<double> logits(Shape{1, 2, 2, 1}, 0.0), targets(Shape{1, 2, 2, 1}, 1.0);
  const double bce = std::log(2.0);
  const double dice = 1.0 - (2 * 0.5 * 4 + 1e-5) / (0.5 * 4 + 4 + 1e-5);
  EXPECT_NEAR(loss_value(logits, targets), 0.5 * bce + dice, 1e-12);
  EXPECT_NEAR(loss_value(logits, targets), 0.679907, 1e-6);
}

TEST(Loss, SaturatedCorrectLogitsApproachZero) {
  const Tensor<double> targets(Shape{1, 4, 4, 1}, 1.0);
  EXPECT_LT(loss_value(Tensor<double>(Shape{1, 4, 4, 1}, 40.0), targets), 1e-6);
}

TEST(Loss, StableForHugeLogits) {
  Tensor<double> logits(Shape{1, 1, 2, 1}, {800.0, -800.0});
  const Tensor<double> targets(Shape{1, 1, 2, 1}, {0.0, 1.0});
  const double v = loss_value(logits, targets);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.5 * 800 + 1.0 - 1e-5 / (2.0 + 1e-5), 1e-9);
}

TEST(Loss, RejectsNonBinaryTargets) {
  const Tensor<double> logits(Shape{1, 2, 2, 1});
  EXPECT_THROW(bce_dice_loss(Var<double>(logits), Tensor<double>(Shape{1, 2, 2, 1}, 0.5)), ValidationError);
  EXPECT_THROW(bce_dice_loss(Var<double>(logits), Tensor<double>(Shape{1, 2, 3, 1})), ShapeError);
}

TEST(Loss, DecreasesWhenEveryLogitMovesTowardItsLabel) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> logits(Shape{2, 4, 4, 1}), targets(logits.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      logits[i] = u(rng);
      targets[i] = coin(rng) ? 1.0 : 0.0;
    }
    auto better = logits;
    for (std::size_t i = 0; i < better.size(); ++i) better[i] += targets[i] > 0 ? 0.25 : -0.25;
    EXPECT_LT(loss_value(better, targets), loss_value(logits, targets));
  }
}

TEST(Threshold, StrictAtZeroAndSymmetric) {
  const Tensor<double> logits(Shape{1, 1, 4, 1}, {0.0, 3.0, -3.0, 1e-300});
  const auto m = threshold(logits);
  EXPECT_EQ(m.data, (std::vector<std::uint8_t>{0, 1, 0, 1}));
  auto neg = logits;
  for (auto& v : neg.values()) v = -v;
  const auto n = threshold(neg);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(n.data[i], 1 - m.data[i]);
  EXPECT_EQ(n.data[0], 0);
}

TEST(Overlap, WorkedFourByFour) {
  BinaryMask p(4, 4), g(4, 4);
  for (std::size_t i : {0, 1, 2, 3, 4, 5}) p.data[i] = 1;
  for (std::size_t i : {0, 1, 2, 15}) g.data[i] = 1;
  const auto m = overlap_metrics(p, g);
  EXPECT_DOUBLE_EQ(m.iou, 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(m.dice, 6.0 / 10.0);
  EXPECT_DOUBLE_EQ(m.precision, 3.0 / 6.0);
  EXPECT_DOUBLE_EQ(m.recall, 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(m.specificity, 9.0 / 12.0);
}

TEST(Overlap, IdenticalAndDisjoint) {
  const auto a = pixel(5, 5, 1, 2), b = pixel(5, 5, 3, 3);
  const auto same = overlap_metrics(a, a);
  EXPECT_EQ(same.iou, 1.0);
  EXPECT_EQ(same.dice, 1.0);
  EXPECT_EQ(same.recall, 1.0);
  EXPECT_EQ(same.precision, 1.0);
  const auto apart = overlap_metrics(a, b);
  EXPECT_EQ(apart.iou, 0.0);
  EXPECT_EQ(apart.dice, 0.0);
}

TEST(Overlap, DegenerateConventions) {
  const BinaryMask empty(3, 3);
  const auto both = overlap_metrics(empty, empty);
  EXPECT_EQ(both.iou, 1.0);
  EXPECT_EQ(both.dice, 1.0);
  EXPECT_EQ(both.recall, 1.0);
  EXPECT_EQ(both.precision, 1.0);
  EXPECT_EQ(both.specificity, 1.0);
  const auto one = overlap_metrics(empty, pixel(3, 3, 0, 0));
  EXPECT_EQ(one.iou, 0.0);
  EXPECT_EQ(one.dice, 0.0);
  EXPECT_EQ(one.recall, 0.0);
  EXPECT_EQ(one.precision, 0.0);
}

TEST(Overlap, ExtentMismatchThrows) {
  EXPECT_THROW(overlap_metrics(BinaryMask(3, 3), BinaryMask(3, 4)), ShapeError);
  EXPECT_THROW(hausdorff(BinaryMask(3, 3), BinaryMask(4, 3)), ShapeError);
}

TEST(Hausdorff, SinglePixelsFormThreeFourFive) {
  const auto h = hausdorff(pixel(8, 8, 0, 0), pixel(8, 8, 3, 4));
  ASSERT_TRUE(h);
  EXPECT_EQ(h->hd, 5.0);
  EXPECT_EQ(h->hd95, 5.0);
}

TEST(Hausdorff, IdenticalIsZeroAndOneEmptyUndefined) {
  const auto a = pixel(6, 6, 2, 2);
  EXPECT_EQ(hausdorff(a, a)->hd, 0.0);
  EXPECT_FALSE(hausdorff(a, BinaryMask(6, 6)));
  const auto r = evaluate_masks(a, BinaryMask(6, 6));
  EXPECT_FALSE(r.hd);
  std::ostringstream os;
  write_metrics_row(os, "x", r);
  EXPECT_NE(os.str().find("undefined"), std::string::npos);
}

TEST(Hausdorff, DistanceTransformMatchesAllPairs) {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const auto m = oracle::random_mask(7, 9, rng);
    const auto dt = squared_distance_transform(m);
    if (m.count() == 0) {
      EXPECT_TRUE(dt.empty());
      continue;
    }
    BinaryMask all(7, 9);
    std::fill(all.data.begin(), all.data.end(), 1);
    const auto d = oracle::directed(all, m);
    for (std::size_t k = 0; k < d.size(); ++k) EXPECT_EQ(std::sqrt(double(dt[k])), d[k]);
  }
}

TEST(Metrics, RandomPairsMatchOraclesBitwise) {
  Rng rng(22);
  for (int i = 0; i < 300; ++i) {
    const auto p = oracle::random_mask(8, 8, rng), g = oracle::random_mask(8, 8, rng);
    const auto m = overlap_metrics(p, g);
    const auto o = oracle::overlap(p, g);
    EXPECT_EQ(m.iou, o.iou);
    EXPECT_EQ(m.dice, o.dice);
    EXPECT_EQ(m.recall, o.recall);
    EXPECT_EQ(m.specificity, o.specificity);
    EXPECT_EQ(m.precision, o.precision);
    const auto h = hausdorff(p, g);
    const auto oh = oracle::hausdorff(p, g);
    ASSERT_EQ(h.has_value(), oh.has_value());
    if (h) {
      EXPECT_EQ(h->hd, oh->hd);
      EXPECT_EQ(h->hd95, oh->hd95);
      EXPECT_LE(h->hd95, h->hd);
    }
  }
}

TEST(Metrics, SymmetryAndDiceIouIdentity) {
  Rng rng(23);
  for (int i = 0; i < 300; ++i) {
    const auto p = oracle::random_mask(6, 7, rng), g = oracle::random_mask(6, 7, rng);
    const auto pg = overlap_metrics(p, g), gp = overlap_metrics(g, p);
    EXPECT_EQ(pg.iou, gp.iou);
    EXPECT_EQ(pg.dice, gp.dice);
    EXPECT_EQ(pg.precision, gp.recall);
    const auto c = pg.counts;
    const std::uint64_t u = c.tp + c.fp + c.fn;
    if (u == 0) {
      EXPECT_EQ(pg.dice, 1.0);
      continue;
    }
    // dice = 2 iou / (1 + iou) in exact rationals: 2tp / (u + tp)
    EXPECT_EQ(2 * c.tp + c.fp + c.fn, u + c.tp);
    EXPECT_NEAR(pg.dice, 2 * pg.iou / (1 + pg.iou), 1e-15);
    auto h1 = hausdorff(p, g), h2 = hausdorff(g, p);
    ASSERT_EQ(h1.has_value(), h2.has_value());
    if (h1) {
      EXPECT_EQ(h1->hd, h2->hd);
      EXPECT_EQ(h1->hd95, h2->hd95);
    }
  }
}

TEST(Metrics, MeanReportSkipsUndefinedHausdorff) {
  MetricsReport a, b;
  a.iou = 0.5;
  a.hd = 2;
  a.hd95 = 1;
  b.iou = 1.0;
  const auto m = mean_report({a, b});
  EXPECT_DOUBLE_EQ(m.iou, 0.75);
  EXPECT_EQ(*m.hd, 2.0);
  EXPECT_FALSE(mean_report({b, b}).hd);
}

TEST(Metrics, CsvColumnOrder) {
  EXPECT_STREQ(metrics_csv_header(), "id,iou,dice,hd,hd95,recall,specificity,precision");
}

TEST(GradCheck, LossScopePasses) {
  const GradCheckOptions o;
  const auto reports = run_gradcheck("loss", o);
  ASSERT_FALSE(reports.empty());
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed(o.tolerance)) << r.op << " worst " << r.worst;
    EXPECT_GE(r.instances, 20);
  }
}
