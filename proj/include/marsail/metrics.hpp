#pragma once

// Detection evaluation: confusion-count rates, greedy IoU matching,
// 101-point interpolated AP, mAP and the ten-threshold/scale-bucket suite.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "marsail/error.hpp"
#include "marsail/mask.hpp"

namespace marsail::metrics {

struct PrfMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const PrfMetrics&, const PrfMetrics&) = default;
};

/// Precision and recall are 1 when their denominator is 0; accuracy is 1 for
/// all-zero counts; F1 is 0 when precision + recall is 0.
inline PrfMetrics prf_metrics(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn = 0) {
  const auto d = [](std::size_t v) { return static_cast<double>(v); };
  PrfMetrics m;
  m.precision = tp + fp == 0 ? 1.0 : d(tp) / d(tp + fp);
  m.recall = tp + fn == 0 ? 1.0 : d(tp) / d(tp + fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  const std::size_t all = tp + fp + fn + tn;
  m.accuracy = all == 0 ? 1.0 : d(tp + tn) / d(all);
  return m;
}

/// Axis-aligned box in pixels: [x, x+w) x [y, y+h).
struct Box {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
  double area() const { return w * h; }
};

using Footprint = std::variant<BinaryMask, Box>;

inline double footprint_area(const Footprint& f) {
  if (const auto* m = std::get_if<BinaryMask>(&f)) return static_cast<double>(m->area());
  return std::get<Box>(f).area();
}

inline double box_iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double ih = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0.0 ? 1.0 : inter / uni;
}

inline double footprint_iou(const Footprint& a, const Footprint& b) {
  if (a.index() != b.index()) throw InputError("iou: cannot compare a mask with a box");
  if (const auto* m = std::get_if<BinaryMask>(&a)) return mask_iou(*m, std::get<BinaryMask>(b));
  return box_iou(std::get<Box>(a), std::get<Box>(b));
}

struct Detection {
  std::string image_id;
  std::string label;
  double confidence = 1.0;
  Footprint footprint;
};

struct GroundTruth {
  std::string image_id;
  std::string label;
  Footprint footprint;
};

enum class MatchStatus { kTruePositive, kFalsePositive, kIgnored };

struct DetectionMatch {
  std::size_t detection = 0;  // index into the input detections
  MatchStatus status = MatchStatus::kFalsePositive;
  std::optional<std::size_t> gt;  // index into the input ground truths
  double iou = 0.0;
};

struct MatchResult {
  std::vector<DetectionMatch> detections;  // in matching order
  std::vector<bool> gt_matched;            // per input GT
  std::vector<bool> gt_considered;         // false for GTs outside the area range
};

/// Area interval [lo, hi) used to restrict evaluation to a size bucket.
struct AreaRange {
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  bool contains(double a) const { return a >= lo && a < hi; }
};

/// Greedy matching within one image: detections by descending confidence
/// (input order on ties), each taking the unmatched same-class GT with the
/// highest IoU >= threshold (lowest index on ties). With an area range, GTs
/// outside it are not candidates and unmatched detections outside it are
/// ignored.
inline MatchResult match_detections(const std::vector<Detection>& dets,
                                    const std::vector<GroundTruth>& gts, double iou_threshold,
                                    const std::optional<AreaRange>& range = std::nullopt) {
  for (const auto& d : dets) {
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
      throw InputError("detection confidence outside [0, 1]");
    }
  }
  MatchResult r;
  r.gt_matched.assign(gts.size(), false);
  r.gt_considered.assign(gts.size(), true);
  if (range) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      r.gt_considered[g] = range->contains(footprint_area(gts[g].footprint));
    }
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].confidence > dets[b].confidence;
  });
  for (std::size_t di : order) {
    const Detection& d = dets[di];
    DetectionMatch m{di, MatchStatus::kFalsePositive, std::nullopt, 0.0};
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (r.gt_matched[g] || !r.gt_considered[g] || gts[g].label != d.label) continue;
      if (gts[g].image_id != d.image_id) continue;
      const double iou = footprint_iou(d.footprint, gts[g].footprint);
      if (iou >= iou_threshold && iou > best) {
        best = iou;
        m.gt = g;
      }
    }
    if (m.gt) {
      r.gt_matched[*m.gt] = true;
      m.status = MatchStatus::kTruePositive;
      m.iou = best;
    } else if (range && !range->contains(footprint_area(d.footprint))) {
      m.status = MatchStatus::kIgnored;
    }
    r.detections.push_back(m);
  }
  return r;
}

/// One ranked detection of a class: its confidence, input position and
/// whether it was a true positive.
struct RankedHit {
  double confidence = 0.0;
  std::size_t order = 0;
  bool tp = false;
};

inline constexpr std::size_t kRecallPoints = 101;

/// 101-point interpolated AP over hits of one class; n_gt must be >= 1.
inline double average_precision(std::vector<RankedHit> hits, std::size_t n_gt) {
  if (n_gt == 0) throw InputError("average_precision: class has no ground truth");
  std::stable_sort(hits.begin(), hits.end(), [](const RankedHit& a, const RankedHit& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.order < b.order;
  });
  std::vector<double> recall, precision;
  std::size_t tp = 0, fp = 0;
  for (const auto& h : hits) {
    (h.tp ? tp : fp) += 1;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  for (std::size_t k = precision.size(); k-- > 1;) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < kRecallPoints; ++i) {
    const double r = static_cast<double>(i) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(kRecallPoints);
}

/// Unweighted mean over classes (summed in key order).
inline double mean_ap(const std::map<std::string, double>& per_class) {
  if (per_class.empty()) throw InputError("mean_ap: no classes");
  double s = 0.0;
  for (const auto& [k, v] : per_class) s += v;
  return s / static_cast<double>(per_class.size());
}

inline constexpr std::size_t kIouThresholdCount = 10;

/// 0.50, 0.55, ..., 0.95.
inline std::array<double, kIouThresholdCount> iou_thresholds() {
  std::array<double, kIouThresholdCount> t{};
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

inline constexpr double kSmallAreaMax = 32.0 * 32.0;
inline constexpr double kMediumAreaMax = 96.0 * 96.0;

struct OperatingPoint {
  double confidence = 0.5;
  double iou = 0.5;
};

struct EvalReport {
  /// Per class with >= 1 GT: AP at each of the ten thresholds.
  std::map<std::string, std::array<double, kIouThresholdCount>> per_class;
  /// mAP at each threshold; empty when no class has ground truth.
  std::optional<std::array<double, kIouThresholdCount>> map_at;
  std::optional<double> ap50, ap75, ap50_95;
  std::optional<double> ap_small, ap_medium, ap_large;
  std::size_t tp = 0, fp = 0, fn = 0;  // at the operating point
  PrfMetrics prf;
  std::vector<double> matched_ious;  // TPs at the operating point, matching order

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

namespace detail {

struct SuiteResult {
  std::map<std::string, std::array<double, kIouThresholdCount>> per_class;
  std::optional<std::array<double, kIouThresholdCount>> map_at;
  std::optional<double> mean;
};

inline std::vector<std::string> image_order(const std::vector<Detection>& dets,
                                            const std::vector<GroundTruth>& gts) {
  std::vector<std::string> ids;
  auto add = [&](const std::string& id) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  };
  for (const auto& g : gts) add(g.image_id);
  for (const auto& d : dets) add(d.image_id);
  return ids;
}

inline SuiteResult evaluate_thresholds(const std::vector<Detection>& dets,
                                       const std::vector<GroundTruth>& gts,
                                       const std::optional<AreaRange>& range) {
  const auto thresholds = iou_thresholds();
  const auto images = image_order(dets, gts);
  std::map<std::string, std::size_t> n_gt;
  for (const auto& g : gts) {
    if (!range || range->contains(footprint_area(g.footprint))) ++n_gt[g.label];
  }
  SuiteResult out;
  if (n_gt.empty()) return out;
  for (const auto& [label, n] : n_gt) out.per_class[label].fill(0.0);

  std::array<double, kIouThresholdCount> maps{};
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    std::map<std::string, std::vector<RankedHit>> hits;
    for (const auto& img : images) {
      std::vector<Detection> d;
      std::vector<std::size_t> d_index;
      std::vector<GroundTruth> g;
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets[i].image_id == img) {
          d.push_back(dets[i]);
          d_index.push_back(i);
        }
      }
      for (const auto& x : gts)
        if (x.image_id == img) g.push_back(x);
      const MatchResult m = match_detections(d, g, thresholds[ti], range);
      for (const auto& dm : m.detections) {
        if (dm.status == MatchStatus::kIgnored) continue;
        const Detection& det = d[dm.detection];
        hits[det.label].push_back(
            {det.confidence, d_index[dm.detection], dm.status == MatchStatus::kTruePositive});
      }
    }
    std::map<std::string, double> aps;
    for (const auto& [label, n] : n_gt) {
      aps[label] = average_precision(hits[label], n);
      out.per_class[label][ti] = aps[label];
    }
    maps[ti] = mean_ap(aps);
  }
  out.map_at = maps;
  double s = 0.0;
  for (double v : maps) s += v;
  out.mean = s / static_cast<double>(kIouThresholdCount);
  return out;
}

}  // namespace detail

/// Full report: AP per class and threshold, AP50/AP75/AP50:95, size-bucket
/// AP50:95 and P/R/F1 at the operating point.
inline EvalReport coco_suite(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                             const OperatingPoint& op = {}) {
  EvalReport rep;
  const auto all = detail::evaluate_thresholds(dets, gts, std::nullopt);
  rep.per_class = all.per_class;
  rep.map_at = all.map_at;
  if (all.map_at) {
    rep.ap50 = (*all.map_at)[0];
    rep.ap75 = (*all.map_at)[5];
    rep.ap50_95 = all.mean;
  }
  rep.ap_small = detail::evaluate_thresholds(dets, gts, AreaRange{0.0, kSmallAreaMax}).mean;
  rep.ap_medium = detail::evaluate_thresholds(dets, gts, AreaRange{kSmallAreaMax, kMediumAreaMax}).mean;
  rep.ap_large = detail::evaluate_thresholds(dets, gts, AreaRange{kMediumAreaMax,
                                                                  std::numeric_limits<double>::infinity()})
                     .mean;

  for (const auto& img : detail::image_order(dets, gts)) {
    std::vector<Detection> d;
    std::vector<GroundTruth> g;
    for (const auto& x : dets)
      if (x.image_id == img && x.confidence >= op.confidence) d.push_back(x);
    for (const auto& x : gts)
      if (x.image_id == img) g.push_back(x);
    const MatchResult m = match_detections(d, g, op.iou);
    for (const auto& dm : m.detections) {
      if (dm.status == MatchStatus::kTruePositive) {
        ++rep.tp;
        rep.matched_ious.push_back(dm.iou);
      } else {
        ++rep.fp;
      }
    }
    for (bool b : m.gt_matched) rep.fn += b ? 0 : 1;
  }
  rep.prf = prf_metrics(rep.tp, rep.fp, rep.fn);
  return rep;
}

/// v * 100 rounded to 3 decimals.
inline double percent3(double v) { return std::round(v * 100000.0) / 1000.0; }

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(percent3(*v)) : nlohmann::json(nullptr);
  };
  nlohmann::json j;
  j["AP50"] = opt(r.ap50);
  j["AP75"] = opt(r.ap75);
  j["AP50:95"] = opt(r.ap50_95);
  j["APs"] = opt(r.ap_small);
  j["APm"] = opt(r.ap_medium);
  j["APl"] = opt(r.ap_large);
  nlohmann::json per_class = nlohmann::json::object();
  const auto th = iou_thresholds();
  for (const auto& [label, aps] : r.per_class) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t i = 0; i < th.size(); ++i) {
      row["AP" + std::to_string(50 + 5 * i)] = percent3(aps[i]);
    }
    per_class[label] = row;
  }
  j["per_class"] = per_class;
  j["operating_point"] = {{"tp", r.tp},
                          {"fp", r.fp},
                          {"fn", r.fn},
                          {"precision", percent3(r.prf.precision)},
                          {"recall", percent3(r.prf.recall)},
                          {"f1", percent3(r.prf.f1)}};
  nlohmann::json hist = nlohmann::json::array();
  std::array<std::size_t, 10> bins{};
  for (double v : r.matched_ious) bins[std::min<std::size_t>(9, static_cast<std::size_t>(v * 10.0))]++;
  for (auto b : bins) hist.push_back(b);
  double mean = 0.0;
  for (double v : r.matched_ious) mean += v;
  j["iou"] = {{"histogram", hist},
              {"mean", r.matched_ious.empty() ? nlohmann::json(nullptr)
                                              : nlohmann::json(percent3(mean / r.matched_ious.size()))}};
  return j;
}

}  // namespace marsail::metrics
