#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "augmap/metrics.hpp"

using namespace augmap;

namespace {

Polyline hline(double y, MapClass c = MapClass::Div) { return {c, {{-10, y}, {10, y}}, false}; }

ScoredPolyline scored(const Polyline& p, double conf, int frame = 0, int inst = 0) {
  return {frame, inst, p.cls, p.points, conf};
}

RasterMap rect(int r0, int r1, int c0, int c1, int ch = 0) {
  RasterMap m(GridSpec::desk(), 3);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.at(ch, r, c) = 1.0f;
  return m;
}

}  // namespace

TEST(AP, ExactPredictionScoresOne) {
  const auto g = hline(0);
  EXPECT_DOUBLE_EQ(*average_precision({scored(g, 1.0)}, {{g}}, 0.5), 1.0);
}

TEST(AP, FarPredictionScoresZero) {
  const auto g = hline(0);
  EXPECT_DOUBLE_EQ(*average_precision({scored(hline(2.0), 1.0)}, {{g}}, 1.5), 0.0);
}

TEST(AP, HandBuiltThreePredictionsTwoGt) {
  // Ranked TP, FP, TP: PR points (0.5, 1), (0.5, 0.5), (1, 2/3). The
  // envelope gives 0.5 * 1 + 0.5 * 2/3.
  const auto a = hline(0), b = hline(5);
  const std::vector<ScoredPolyline> preds{scored(hline(0.1), 0.9, 0, 0), scored(hline(-5), 0.8, 0, 1),
                                          scored(hline(5.2), 0.7, 0, 2)};
  EXPECT_NEAR(*average_precision(preds, {{a, b}}, 1.0), 0.5 + 0.5 * 2.0 / 3.0, 1e-12);
}

TEST(AP, DuplicateMatchesCountAsFalsePositives) {
  const auto a = hline(0);
  const std::vector<ScoredPolyline> preds{scored(hline(0.1), 0.9, 0, 0), scored(hline(0.05), 0.8, 0, 1)};
  EXPECT_DOUBLE_EQ(*average_precision(preds, {{a}}, 1.0), 1.0);
  const std::vector<ScoredPolyline> swapped{scored(hline(3), 0.9, 0, 0), scored(hline(0.05), 0.8, 0, 1)};
  EXPECT_DOUBLE_EQ(*average_precision(swapped, {{a}}, 1.0), 0.5);
}

TEST(AP, AbsentWithoutGt) {
  EXPECT_FALSE(average_precision({scored(hline(0), 0.9)}, {{}}, 1.0).has_value());
}

TEST(AP, PredictionsOnlyMatchTheirOwnFrame) {
  const auto a = hline(0);
  EXPECT_DOUBLE_EQ(*average_precision({scored(a, 0.9, 1)}, {{a}, {}}, 1.0), 0.0);
}

TEST(APProperty, MonotoneInThresholdBoundedAndTieInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> jitter(0, 0.8);
  std::uniform_int_distribution<int> conf_level(1, 4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Polyline>> gts(4);
    std::vector<ScoredPolyline> preds;
    for (int f = 0; f < 4; ++f) {
      for (int k = 0; k < 3; ++k) gts[f].push_back(hline(4.0 * k - 4.0 + jitter(rng)));
      for (int k = 0; k < 4; ++k)
        preds.push_back(scored(hline(4.0 * k - 4.0 + jitter(rng)), 0.25 * conf_level(rng), f, k));
    }
    double prev = 2.0;
    for (double tau : {2.0, 1.5, 1.0, 0.5, 0.25}) {
      const double ap = *average_precision(preds, gts, tau);
      EXPECT_GE(ap, 0.0);
      EXPECT_LE(ap, 1.0);
      EXPECT_LE(ap, prev + 1e-15);
      prev = ap;
    }
    const double base = *average_precision(preds, gts, 1.0);
    auto shuffled = preds;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(*average_precision(shuffled, gts, 1.0), base);
    auto padded = preds;
    for (int f = 0; f < 4; ++f) padded.push_back(scored(gts[f][0], 0.0, f, 99));
    EXPECT_EQ(*average_precision(padded, gts, 1.0), base);
  }
}

TEST(MapScore, IdenticalPredictionScoresOne) {
  std::vector<VectorMap> gts(3);
  std::vector<ScoredPolyline> preds;
  for (int f = 0; f < 3; ++f) {
    gts[f].polylines = {hline(-3, MapClass::Bound), hline(0), hline(3, MapClass::Bound),
                        {MapClass::Ped, {{1, -4}, {4, -4}, {4, 4}, {1, 4}}, true}};
    for (std::size_t k = 0; k < gts[f].polylines.size(); ++k) {
      const auto& g = gts[f].polylines[k];
      ScoredPolyline s = scored(g, 0.9, f, static_cast<int>(k));
      if (g.closed) s.points.push_back(g.points.front());
      preds.push_back(s);
    }
  }
  const auto m = map_score(preds, gts, {});
  EXPECT_DOUBLE_EQ(m.mAP, 1.0);
  for (const auto& ap : m.ap) EXPECT_DOUBLE_EQ(*ap, 1.0);
}

TEST(MapScore, MeanOfPresentClasses) {
  EXPECT_NEAR(mean_present({0.2, 0.4, 0.6}), 0.4, 1e-15);
  EXPECT_NEAR(mean_present({0.2, std::nullopt, 0.6}), 0.4, 1e-15);
  std::vector<VectorMap> gts(1);
  gts[0].polylines = {hline(0)};
  const auto m = map_score({scored(hline(0), 1.0)}, gts, {});
  EXPECT_FALSE(m.ap[0].has_value());
  EXPECT_DOUBLE_EQ(m.mAP, 1.0);
}

TEST(MapScore, DefaultThresholds) {
  EXPECT_EQ(EvalConfig{}.thresholds, (std::vector<double>{0.5, 1.0, 1.5}));
  EvalConfig bad;
  bad.thresholds = {1.0, 0.5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ScorePredictions, DropsEmptyArgmax) {
  MapPrediction p;
  p.instances.push_back({{{0, 0}, {1, 0}}, {0.0, 2.0, 0.0, 1.0}, {}});
  p.instances.push_back({{{0, 0}, {1, 0}}, {0.0, 0.0, 0.0, 3.0}, {}});
  const auto s = score_predictions(p, 7);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].cls, MapClass::Div);
  EXPECT_EQ(s[0].frame, 7);
  EXPECT_NEAR(s[0].confidence, 1.0 - softmax(p.instances[0].class_logits)[3], 1e-15);
}

TEST(Iou, Examples) {
  const auto a = rect(0, 10, 0, 10);
  auto r = iou(a, a);
  EXPECT_DOUBLE_EQ(*r.iou[0], 1.0);
  EXPECT_FALSE(r.iou[1].has_value());
  EXPECT_DOUBLE_EQ(r.mIoU, 1.0);

  EXPECT_DOUBLE_EQ(*iou(rect(0, 10, 0, 10), rect(20, 30, 0, 10)).iou[0], 0.0);
  EXPECT_NEAR(*iou(rect(0, 10, 0, 10), rect(5, 15, 0, 10)).iou[0], 1.0 / 3.0, 1e-15);
}

TEST(Iou, BinarizesProbabilities) {
  auto p = rect(0, 10, 0, 10);
  for (auto& v : p.data) v *= 0.4f;
  EXPECT_DOUBLE_EQ(*iou(p, rect(0, 10, 0, 10)).iou[0], 0.0);
  EXPECT_DOUBLE_EQ(*iou(p, rect(0, 10, 0, 10), 0.3).iou[0], 1.0);
}
