#include <gtest/gtest.h>

#include "marsail/metrics.hpp"
#include "support.hpp"

using namespace marsail::metrics;
using testing_support::Gen;

namespace {

Detection det_box(const std::string& img, const std::string& label, double conf, Box b) {
  return {img, label, conf, Footprint(b)};
}

GroundTruth gt_box(const std::string& img, const std::string& label, Box b) { return {img, label, Footprint(b)}; }

std::vector<RankedHit> ranked(const std::vector<bool>& tps) {
  std::vector<RankedHit> out;
  for (std::size_t i = 0; i < tps.size(); ++i) out.push_back({1.0 - 0.1 * static_cast<double>(i), i, tps[i]});
  return out;
}

}  // namespace

TEST(Prf, WorkedExample) {
  const auto m = prf_metrics(8, 2, 3);
  EXPECT_NEAR(m.precision, 0.8, 1e-9);
  EXPECT_NEAR(m.recall, 0.727272727, 1e-9);
  EXPECT_NEAR(m.f1, 0.761904762, 1e-9);
}

TEST(Prf, PerfectAndVacuous) {
  const auto p = prf_metrics(5, 0, 0);
  EXPECT_EQ(p.precision, 1.0);
  EXPECT_EQ(p.recall, 1.0);
  EXPECT_EQ(p.f1, 1.0);
  EXPECT_EQ(p.accuracy, 1.0);
  const auto v = prf_metrics(0, 0, 0, 10);
  EXPECT_EQ(v.precision, 1.0);
  EXPECT_EQ(v.recall, 1.0);
  EXPECT_EQ(v.accuracy, 1.0);
  EXPECT_EQ(prf_metrics(0, 3, 4).f1, 0.0);
  EXPECT_DOUBLE_EQ(prf_metrics(2, 1, 1, 6).accuracy, 0.8);
}

TEST(Prf, F1IsHarmonicMean) {
  Gen g(121);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t tp = g.index(1, 50), fp = g.index(0, 50), fn = g.index(0, 50);
    const auto m = prf_metrics(tp, fp, fn);
    EXPECT_NEAR(1.0 / m.f1, 0.5 * (1.0 / m.precision + 1.0 / m.recall), 1e-12);
    EXPECT_LE(m.f1, std::max(m.precision, m.recall));
    EXPECT_GE(m.f1, std::min(m.precision, m.recall));
  }
}

TEST(Matching, ThresholdSemantics) {
  // 10x10 GT and a 10x8 detection inside it: IoU 0.8.
  const std::vector<GroundTruth> gts{gt_box("a", "dent", {0, 0, 10, 10})};
  const std::vector<Detection> dets{det_box("a", "dent", 0.9, {0, 0, 10, 8})};
  for (double thr : {0.5, 0.75}) {
    const auto m = match_detections(dets, gts, thr);
    EXPECT_EQ(m.detections[0].status, MatchStatus::kTruePositive);
    EXPECT_DOUBLE_EQ(m.detections[0].iou, 0.8);
    EXPECT_TRUE(m.gt_matched[0]);
  }
  const auto m = match_detections(dets, gts, 0.85);
  EXPECT_EQ(m.detections[0].status, MatchStatus::kFalsePositive);
  EXPECT_FALSE(m.gt_matched[0]);
}

TEST(Matching, SingleMatchPerGt) {
  const std::vector<GroundTruth> gts{gt_box("a", "dent", {0, 0, 10, 10})};
  const std::vector<Detection> dets{det_box("a", "dent", 0.6, {0, 0, 10, 10}), det_box("a", "dent", 0.9, {0, 0, 10, 9})};
  const auto m = match_detections(dets, gts, 0.5);
  ASSERT_EQ(m.detections.size(), 2u);
  EXPECT_EQ(m.detections[0].detection, 1u);
  EXPECT_EQ(m.detections[0].status, MatchStatus::kTruePositive);
  EXPECT_EQ(m.detections[1].status, MatchStatus::kFalsePositive);
}

TEST(Matching, ClassesAreSeparate) {
  const std::vector<GroundTruth> gts{gt_box("a", "dent", {0, 0, 10, 10})};
  const std::vector<Detection> dets{det_box("a", "scratch", 0.9, {0, 0, 10, 10})};
  EXPECT_EQ(match_detections(dets, gts, 0.5).detections[0].status, MatchStatus::kFalsePositive);
  EXPECT_THROW(match_detections({det_box("a", "dent", 1.2, {0, 0, 1, 1})}, gts, 0.5), marsail::InputError);
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision(ranked({true}), 1), 1.0);
  EXPECT_EQ(average_precision(ranked({true, false}), 1), 1.0);
  // Every recall level, including r = 0, sees the envelope value 0.5.
  EXPECT_DOUBLE_EQ(average_precision(ranked({false, true}), 1), 0.5);
  EXPECT_EQ(average_precision({}, 3), 0.0);
  EXPECT_THROW(average_precision(ranked({true}), 0), marsail::InputError);
}

TEST(AveragePrecision, MatchesDefinition) {
  Gen g(122);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = g.index(0, 12), n_gt = g.index(1, 8);
    std::vector<RankedHit> hits;
    std::vector<std::pair<double, std::pair<std::size_t, bool>>> ref_hits;
    std::size_t tps = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool tp = tps < n_gt && g.coin();
      tps += tp ? 1 : 0;
      const double conf = static_cast<double>(g.index(0, 10)) / 10.0;
      hits.push_back({conf, i, tp});
      ref_hits.push_back({conf, {i, tp}});
    }
    std::sort(ref_hits.begin(), ref_hits.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second.first < b.second.first);
    });
    EXPECT_EQ(average_precision(hits, n_gt), testing_support::ref::ap_definition(ref_hits, n_gt));
  }
}

TEST(MeanAp, Examples) {
  EXPECT_NEAR(mean_ap({{"a", 0.27}, {"b", 0.28}, {"c", 0.55}}), 0.366666667, 1e-9);
  EXPECT_EQ(mean_ap({{"a", 0.42}}), 0.42);
  EXPECT_EQ(mean_ap({{"a", 0.3}, {"b", 0.3}, {"c", 0.3}, {"d", 0.3}}), 0.3);
  EXPECT_THROW(mean_ap({}), marsail::InputError);
}

TEST(CocoSuite, PerfectDetections) {
  std::vector<GroundTruth> gts{gt_box("1", "dent", {0, 0, 10, 10}), gt_box("1", "scratch", {50, 50, 40, 40}),
                               gt_box("2", "dent", {0, 0, 100, 120})};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back({g.image_id, g.label, 1.0, g.footprint});
  const auto r = coco_suite(dets, gts);
  EXPECT_EQ(*r.ap50, 1.0);
  EXPECT_EQ(*r.ap75, 1.0);
  EXPECT_EQ(*r.ap50_95, 1.0);
  EXPECT_EQ(*r.ap_small, 1.0);
  EXPECT_EQ(*r.ap_medium, 1.0);
  EXPECT_EQ(*r.ap_large, 1.0);
  for (const auto& [label, aps] : r.per_class)
    for (double v : aps) EXPECT_EQ(v, 1.0);
  const auto j = report_to_json(r);
  EXPECT_EQ(j["AP50:95"], 100.0);
  EXPECT_EQ(j["per_class"]["dent"]["AP95"], 100.0);
  EXPECT_EQ(j["operating_point"]["tp"], 3);
}

TEST(CocoSuite, ThresholdBracket) {
  // IoU 100/190 = 0.526 for every pair.
  std::vector<GroundTruth> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 4; ++i) {
    const std::string img = std::to_string(i);
    gts.push_back(gt_box(img, "dent", {0, 0, 10, 10}));
    dets.push_back(det_box(img, "dent", 0.9, {0, 0, 10, 19}));
  }
  const auto r = coco_suite(dets, gts);
  EXPECT_EQ(*r.ap50, 1.0);
  for (std::size_t t = 1; t < 10; ++t) EXPECT_EQ((*r.map_at)[t], 0.0);
  EXPECT_DOUBLE_EQ(*r.ap50_95, 0.1);
}

TEST(CocoSuite, EmptyPredictions) {
  const std::vector<GroundTruth> gts{gt_box("1", "dent", {0, 0, 10, 10})};
  const auto r = coco_suite({}, gts);
  EXPECT_EQ(*r.ap50_95, 0.0);
  EXPECT_EQ(r.fn, 1u);
  EXPECT_FALSE(r.ap_large.has_value());
  const auto j = report_to_json(r);
  EXPECT_EQ(j["AP50"], 0.0);
  EXPECT_TRUE(j["APl"].is_null());
}

TEST(CocoSuite, ScaleBuckets) {
  const std::vector<GroundTruth> gts{gt_box("1", "dent", {0, 0, 10, 10}), gt_box("1", "dent", {0, 100, 50, 50}),
                                     gt_box("1", "dent", {200, 0, 100, 100})};
  // Small and medium found; large missed; one stray small FP ranked first.
  const std::vector<Detection> dets{det_box("1", "dent", 0.9, {0, 0, 10, 10}), det_box("1", "dent", 0.8, {0, 100, 50, 50}),
                                    det_box("1", "dent", 0.95, {400, 400, 5, 5})};
  const auto r = coco_suite(dets, gts);
  EXPECT_EQ(*r.ap_medium, 1.0);  // the small FP is outside the bucket and ignored
  EXPECT_EQ(*r.ap_large, 0.0);
  EXPECT_DOUBLE_EQ(*r.ap_small, 0.5);
  // Bucket bounds are half-open: an area of exactly 32^2 belongs to medium.
  const std::vector<GroundTruth> edge{gt_box("1", "dent", {0, 0, 32, 32})};
  const auto e = coco_suite({det_box("1", "dent", 1.0, {0, 0, 32, 32})}, edge);
  EXPECT_FALSE(e.ap_small.has_value());
  EXPECT_EQ(*e.ap_medium, 1.0);
}

TEST(CocoSuite, MatchesReferenceEvaluator) {
  Gen g(123);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ds = testing_support::random_micro_dataset(g);
    EXPECT_EQ(coco_suite(ds.dets, ds.gts), testing_support::ref::evaluate(ds.dets, ds.gts)) << "trial " << trial;
  }
}

TEST(CocoSuite, RankingOnlyDependence) {
  Gen g(124);
  for (int trial = 0; trial < 100; ++trial) {
    auto ds = testing_support::random_micro_dataset(g);
    const auto base = coco_suite(ds.dets, ds.gts);
    for (auto& d : ds.dets) d.confidence = 0.05 + 0.9 * d.confidence * d.confidence;
    const auto moved = coco_suite(ds.dets, ds.gts);
    EXPECT_EQ(base.per_class, moved.per_class);
    EXPECT_EQ(base.map_at, moved.map_at);
    EXPECT_EQ(base.ap_small, moved.ap_small);
    EXPECT_EQ(base.ap_large, moved.ap_large);
  }
}

TEST(CocoSuite, ApNonincreasingInThreshold) {
  Gen g(125);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ds = testing_support::random_micro_dataset(g);
    const auto r = coco_suite(ds.dets, ds.gts);
    for (const auto& [label, aps] : r.per_class)
      for (std::size_t t = 1; t < aps.size(); ++t) EXPECT_LE(aps[t], aps[t - 1]) << "trial " << trial << " " << label;
  }
}

TEST(CocoSuite, MeanOfTenThresholds) {
  Gen g(126);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = testing_support::random_micro_dataset(g);
    const auto r = coco_suite(ds.dets, ds.gts);
    if (!r.map_at) continue;
    double s = 0.0;
    for (double v : *r.map_at) s += v;
    EXPECT_EQ(*r.ap50_95, s / 10.0);
  }
}

TEST(CocoSuite, CountTotals) {
  Gen g(127);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = testing_support::random_micro_dataset(g);
    for (double thr : iou_thresholds()) {
      const auto r = coco_suite(ds.dets, ds.gts, OperatingPoint{0.0, thr});
      EXPECT_EQ(r.tp + r.fp, ds.dets.size());
      EXPECT_EQ(r.tp + r.fn, ds.gts.size());
      EXPECT_EQ(r.matched_ious.size(), r.tp);
      for (double v : r.matched_ious) EXPECT_GE(v, thr);
    }
  }
}
