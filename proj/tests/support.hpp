#pragma once

// Random generators and independent reference implementations shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "marsail/decode.hpp"
#include "marsail/losses.hpp"
#include "marsail/mask.hpp"
#include "marsail/metrics.hpp"
#include "marsail/nn/attention.hpp"
#include "marsail/nn/gru.hpp"
#include "marsail/tensor.hpp"

namespace testing_support {

using marsail::Tensor;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return uniform() < p; }

  Tensor tensor(const marsail::Shape& shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  /// Normalized log-probabilities [T x (A+1)], logits in [-spread, spread].
  Tensor log_probs(std::size_t steps, std::size_t alphabet, double spread = 2.0) {
    Tensor t = tensor({steps, alphabet + 1}, -spread, spread);
    for (std::size_t r = 0; r < steps; ++r) {
      auto row = t.row(r);
      double m = *std::max_element(row.begin(), row.end());
      double s = 0.0;
      for (double v : row) s += std::exp(v - m);
      const double lse = m + std::log(s);
      for (double& v : row) v -= lse;
    }
    return t;
  }

  /// Target over 1..A that fits in `steps`.
  std::vector<std::size_t> feasible_target(std::size_t steps, std::size_t alphabet, std::size_t max_len) {
    while (true) {
      std::vector<std::size_t> t(index(0, max_len));
      for (auto& l : t) l = index(1, alphabet);
      if (marsail::losses::ctc_min_steps(t) <= steps) return t;
    }
  }

  marsail::BinaryMask mask(std::size_t h, std::size_t w, double p) {
    marsail::BinaryMask m(h, w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) m.set(y, x, coin(p));
    return m;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Filled ellipse, possibly with a rectangular bite taken out; single
/// 4-connected component of at least `min_area` pixels.
inline marsail::BinaryMask random_blob(Gen& g, std::size_t frame, std::size_t min_area) {
  while (true) {
    marsail::BinaryMask m(frame, frame);
    const double cx = g.uniform(frame * 0.35, frame * 0.65), cy = g.uniform(frame * 0.35, frame * 0.65);
    const double rx = g.uniform(5.0, frame * 0.33), ry = g.uniform(5.0, frame * 0.33);
    const double th = g.uniform(0.0, 3.14159);
    for (std::size_t y = 0; y < frame; ++y) {
      for (std::size_t x = 0; x < frame; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = dx * std::cos(th) + dy * std::sin(th);
        const double v = -dx * std::sin(th) + dy * std::cos(th);
        if ((u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0) m.set(y, x, true);
      }
    }
    if (g.coin()) {
      const std::size_t bx = g.index(0, frame - 1), by = g.index(0, frame - 1);
      const std::size_t bw = g.index(2, frame / 4), bh = g.index(2, frame / 4);
      for (std::size_t y = by; y < std::min(frame, by + bh); ++y)
        for (std::size_t x = bx; x < std::min(frame, bx + bw); ++x) m.set(y, x, false);
    }
    const auto comps = marsail::connected_components(m);
    if (comps.size() == 1 && comps[0].area() >= min_area) return comps[0];
  }
}

/// Pixel count plus enclosed holes: the area an outer crack outline
/// encloses. Background cells that reach the frame through corners are
/// outside, so the flood fill is 8-connected over a one-pixel margin.
inline std::size_t filled_area(const marsail::BinaryMask& m) {
  const long h = static_cast<long>(m.height()) + 2, w = static_cast<long>(m.width()) + 2;
  auto fg = [&](long y, long x) {
    return y > 0 && x > 0 && y < h - 1 && x < w - 1 && m.at(static_cast<std::size_t>(y - 1), static_cast<std::size_t>(x - 1));
  };
  std::vector<char> seen(static_cast<std::size_t>(h * w), 0);
  std::vector<long> stack{0};
  seen[0] = 1;
  std::size_t outside = 0;
  while (!stack.empty()) {
    const long c = stack.back();
    stack.pop_back();
    ++outside;
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long y = c / w + dy, x = c % w + dx;
        if (y < 0 || x < 0 || y >= h || x >= w || fg(y, x) || seen[static_cast<std::size_t>(y * w + x)]) continue;
        seen[static_cast<std::size_t>(y * w + x)] = 1;
        stack.push_back(y * w + x);
      }
  }
  return static_cast<std::size_t>(h * w) - outside;
}

/// Every path of length T, probability summed per collapsed labeling.
inline std::map<std::vector<std::size_t>, double> labeling_masses(const Tensor& lp) {
  const std::size_t T = lp.dim(0), K = lp.dim(1);
  std::map<std::vector<std::size_t>, double> mass;
  std::vector<std::size_t> path(T, 0);
  while (true) {
    double s = 0.0;
    for (std::size_t t = 0; t < T; ++t) s += std::max(lp(t, path[t]), marsail::losses::kLogProbFloor);
    mass[marsail::losses::ctc_collapse(path)] += std::exp(s);
    std::size_t t = T;
    bool done = true;
    while (t > 0) {
      --t;
      if (++path[t] < K) {
        done = false;
        break;
      }
      path[t] = 0;
    }
    if (done) return mass;
  }
}

/// Argmax labeling by enumeration (lexicographically smallest on ties).
inline std::vector<std::size_t> best_labeling(const Tensor& lp) {
  const auto mass = labeling_masses(lp);
  auto best = mass.begin();
  for (auto it = mass.begin(); it != mass.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

/// Naive per-head attention with explicit loops.
inline Tensor naive_attention(const Tensor& z, const marsail::nn::AttentionWeights& w) {
  const std::size_t T = z.dim(0), C = z.dim(1), dk = w.head_dim();
  Tensor concat({T, w.heads * dk});
  for (std::size_t h = 0; h < w.heads; ++h) {
    auto proj = [&](const Tensor& m, std::size_t i, std::size_t j) {
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += z(i, c) * m(c, h * dk + j);
      return s;
    };
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> score(T);
      double mx = -1e300;
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dk; ++d) s += proj(w.wq, i, d) * proj(w.wk, j, d);
        score[j] = s / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, score[j]);
      }
      double tot = 0.0;
      for (auto& s : score) tot += (s = std::exp(s - mx));
      for (std::size_t d = 0; d < dk; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += score[j] / tot * proj(w.wv, j, d);
        concat(i, h * dk + d) = acc;
      }
    }
  }
  Tensor out({T, C});
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < w.heads * dk; ++k) s += concat(i, k) * w.wo(k, c);
      out(i, c) = s;
    }
  return out;
}

inline marsail::nn::AttentionWeights random_attention(Gen& g, std::size_t c, std::size_t heads,
                                                      std::size_t dk, double scale = 0.6) {
  marsail::nn::AttentionWeights w;
  w.heads = heads;
  w.wq = g.tensor({c, heads * dk}, -scale, scale);
  w.wk = g.tensor({c, heads * dk}, -scale, scale);
  w.wv = g.tensor({c, heads * dk}, -scale, scale);
  w.wo = g.tensor({heads * dk, c}, -scale, scale);
  return w;
}

inline marsail::nn::GruWeights random_gru(Gen& g, std::size_t d, std::size_t h) {
  marsail::nn::GruWeights w;
  w.wz = g.tensor({d, h});
  w.wr = g.tensor({d, h});
  w.wh = g.tensor({d, h});
  w.uz = g.tensor({h, h});
  w.ur = g.tensor({h, h});
  w.uh = g.tensor({h, h});
  w.bz = g.tensor({h});
  w.br = g.tensor({h});
  w.bh = g.tensor({h});
  return w;
}

// ---------------------------------------------------------------------------
// Reference evaluator: written from the matching/AP definitions without
// sharing code paths with marsail::metrics beyond the data types.

namespace ref {

using marsail::metrics::Detection;
using marsail::metrics::GroundTruth;

struct Bucket {
  bool active = false;
  double lo = 0.0, hi = 0.0;
  bool in(double a) const { return !active || (a >= lo && a < hi); }
};

inline double area_of(const marsail::metrics::Footprint& f) { return marsail::metrics::footprint_area(f); }

inline double iou_of(const marsail::metrics::Footprint& a, const marsail::metrics::Footprint& b) {
  if (const auto* ma = std::get_if<marsail::BinaryMask>(&a)) {
    const auto& mb = std::get<marsail::BinaryMask>(b);
    std::size_t i = 0, u = 0;
    for (std::size_t k = 0; k < ma->size(); ++k) {
      i += ((*ma)[k] && mb[k]) ? 1 : 0;
      u += ((*ma)[k] || mb[k]) ? 1 : 0;
    }
    return u == 0 ? 1.0 : static_cast<double>(i) / static_cast<double>(u);
  }
  const auto& ba = std::get<marsail::metrics::Box>(a);
  const auto& bb = std::get<marsail::metrics::Box>(b);
  const double x1 = std::max(ba.x, bb.x), y1 = std::max(ba.y, bb.y);
  const double x2 = std::min(ba.x + ba.w, bb.x + bb.w), y2 = std::min(ba.y + ba.h, bb.y + bb.h);
  const double inter = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
  const double uni = ba.w * ba.h + bb.w * bb.h - inter;
  return uni <= 0.0 ? 1.0 : inter / uni;
}

struct Outcome {
  std::size_t det;  // global index
  int kind;         // 1 TP, 0 FP, -1 ignored
};

/// Greedy matching by scanning all detections of an image repeatedly for
/// the highest remaining confidence (earliest index on ties).
inline std::vector<Outcome> match_image(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                        const std::string& image, double thr, const Bucket& b,
                                        std::vector<double>* ious = nullptr) {
  std::vector<std::size_t> di, gi;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].image_id == image) di.push_back(i);
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (gts[i].image_id == image) gi.push_back(i);
  std::vector<bool> used_det(di.size(), false), used_gt(gi.size(), false);
  std::vector<Outcome> out;
  for (std::size_t round = 0; round < di.size(); ++round) {
    std::size_t pick = di.size();
    for (std::size_t k = 0; k < di.size(); ++k) {
      if (used_det[k]) continue;
      if (pick == di.size() || dets[di[k]].confidence > dets[di[pick]].confidence) pick = k;
    }
    used_det[pick] = true;
    const Detection& d = dets[di[pick]];
    std::size_t best = gi.size();
    double best_iou = 0.0;
    for (std::size_t k = 0; k < gi.size(); ++k) {
      const GroundTruth& gt = gts[gi[k]];
      if (used_gt[k] || gt.label != d.label || !b.in(area_of(gt.footprint))) continue;
      const double v = iou_of(d.footprint, gt.footprint);
      if (v < thr) continue;
      if (best == gi.size() || v > best_iou) {
        best = k;
        best_iou = v;
      }
    }
    if (best != gi.size()) {
      used_gt[best] = true;
      out.push_back({di[pick], 1});
      if (ious) ious->push_back(best_iou);
    } else {
      out.push_back({di[pick], b.in(area_of(d.footprint)) ? 0 : -1});
    }
  }
  return out;
}

/// AP from the definition: for every recall level, the best precision of
/// any prefix of the ranking that reaches it.
inline double ap_definition(const std::vector<std::pair<double, std::pair<std::size_t, bool>>>& ranked,
                            std::size_t n_gt) {
  std::vector<double> rec, prec;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp += ranked[k].second.second ? 1 : 0;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
  }
  double sum = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = static_cast<double>(i) / 100.0;
    double best = 0.0;
    for (std::size_t k = 0; k < rec.size(); ++k)
      if (rec[k] >= r) best = std::max(best, prec[k]);
    sum += best;
  }
  return sum / 101.0;
}

struct Suite {
  std::map<std::string, std::array<double, 10>> per_class;
  std::optional<std::array<double, 10>> maps;
  std::optional<double> mean;
};

inline Suite suite(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, const Bucket& b) {
  std::vector<std::string> images;
  for (const auto& g : gts)
    if (std::find(images.begin(), images.end(), g.image_id) == images.end()) images.push_back(g.image_id);
  for (const auto& d : dets)
    if (std::find(images.begin(), images.end(), d.image_id) == images.end()) images.push_back(d.image_id);
  std::map<std::string, std::size_t> n_gt;
  for (const auto& g : gts)
    if (b.in(area_of(g.footprint))) n_gt[g.label]++;
  Suite s;
  if (n_gt.empty()) return s;
  std::array<double, 10> maps{};
  for (int ti = 0; ti < 10; ++ti) {
    const double thr = static_cast<double>(50 + 5 * ti) / 100.0;
    std::map<std::string, std::vector<std::pair<double, std::pair<std::size_t, bool>>>> ranked;
    for (const auto& img : images) {
      for (const auto& o : match_image(dets, gts, img, thr, b)) {
        if (o.kind < 0) continue;
        ranked[dets[o.det].label].push_back({dets[o.det].confidence, {o.det, o.kind == 1}});
      }
    }
    double tot = 0.0;
    for (const auto& [label, n] : n_gt) {
      auto r = ranked[label];
      std::sort(r.begin(), r.end(), [](const auto& a, const auto& c) {
        return a.first > c.first || (a.first == c.first && a.second.first < c.second.first);
      });
      const double ap = ap_definition(r, n);
      s.per_class[label][ti] = ap;
      tot += ap;
    }
    maps[ti] = tot / static_cast<double>(n_gt.size());
  }
  s.maps = maps;
  double m = 0.0;
  for (double v : maps) m += v;
  s.mean = m / 10.0;
  return s;
}

inline marsail::metrics::EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
  marsail::metrics::EvalReport r;
  const Suite all = suite(dets, gts, Bucket{});
  r.per_class = all.per_class;
  r.map_at = all.maps;
  if (all.maps) {
    r.ap50 = (*all.maps)[0];
    r.ap75 = (*all.maps)[5];
    r.ap50_95 = all.mean;
  }
  r.ap_small = suite(dets, gts, Bucket{true, 0.0, 1024.0}).mean;
  r.ap_medium = suite(dets, gts, Bucket{true, 1024.0, 9216.0}).mean;
  r.ap_large = suite(dets, gts, Bucket{true, 9216.0, 1e300}).mean;

  std::vector<Detection> confident;
  for (const auto& d : dets)
    if (d.confidence >= 0.5) confident.push_back(d);
  std::vector<std::string> images;
  for (const auto& g : gts)
    if (std::find(images.begin(), images.end(), g.image_id) == images.end()) images.push_back(g.image_id);
  for (const auto& d : dets)
    if (std::find(images.begin(), images.end(), d.image_id) == images.end()) images.push_back(d.image_id);
  for (const auto& img : images) {
    const auto out = match_image(confident, gts, img, 0.5, Bucket{}, &r.matched_ious);
    std::size_t gts_here = 0;
    for (const auto& g : gts) gts_here += g.image_id == img ? 1 : 0;
    std::size_t tps = 0;
    for (const auto& o : out) (o.kind == 1 ? tps : r.fp) += 1;
    r.tp += tps;
    r.fn += gts_here - tps;
  }
  r.prf = marsail::metrics::prf_metrics(r.tp, r.fp, r.fn);
  return r;
}

}  // namespace ref

/// Micro-dataset: up to 5 images, up to 6 detections each, mask or box
/// footprints, coarse confidences so that ties occur.
struct MicroDataset {
  std::vector<marsail::metrics::Detection> dets;
  std::vector<marsail::metrics::GroundTruth> gts;
};

inline MicroDataset random_micro_dataset(Gen& g) {
  MicroDataset ds;
  const bool boxes = g.coin();
  const std::vector<std::string> labels{"dent", "scratch", "crack"};
  const std::size_t images = g.index(1, 5);
  auto random_box = [&] {
    const double scale = g.coin(0.3) ? 60.0 : (g.coin() ? 25.0 : 8.0);
    return marsail::metrics::Box{std::round(g.uniform(0, 100)), std::round(g.uniform(0, 100)),
                                 std::round(g.uniform(1, scale * 2)), std::round(g.uniform(1, scale * 2))};
  };
  auto jitter = [&](const marsail::metrics::Box& b) {
    return marsail::metrics::Box{b.x + std::round(g.uniform(-3, 3)), b.y + std::round(g.uniform(-3, 3)),
                                 std::max(1.0, b.w + std::round(g.uniform(-3, 3))),
                                 std::max(1.0, b.h + std::round(g.uniform(-3, 3)))};
  };
  auto random_mask = [&](std::size_t frame) {
    marsail::BinaryMask m(frame, frame);
    const std::size_t x0 = g.index(0, frame - 2), y0 = g.index(0, frame - 2);
    const std::size_t w = g.index(1, frame - x0), h = g.index(1, frame - y0);
    return marsail::BinaryMask::rectangle(frame, frame, x0, y0, w, h);
  };
  auto perturb = [&](const marsail::BinaryMask& m) {
    marsail::BinaryMask out = m;
    for (std::size_t y = 0; y < m.height(); ++y)
      for (std::size_t x = 0; x < m.width(); ++x)
        if (g.coin(0.12)) out.set(y, x, !out.at(y, x));
    return out;
  };
  for (std::size_t i = 0; i < images; ++i) {
    const std::string id = "img" + std::to_string(i);
    const std::size_t frame = 10;
    const std::size_t n_gt = g.index(0, 4);
    std::vector<marsail::metrics::Footprint> gt_fp;
    for (std::size_t k = 0; k < n_gt; ++k) {
      marsail::metrics::Footprint f = boxes ? marsail::metrics::Footprint(random_box())
                                            : marsail::metrics::Footprint(random_mask(frame));
      gt_fp.push_back(f);
      ds.gts.push_back({id, labels[g.index(0, labels.size() - 1)], f});
    }
    const std::size_t n_det = g.index(0, 6);
    for (std::size_t k = 0; k < n_det; ++k) {
      marsail::metrics::Footprint f;
      std::string label = labels[g.index(0, labels.size() - 1)];
      if (!gt_fp.empty() && g.coin(0.7)) {
        const std::size_t src = g.index(0, gt_fp.size() - 1);
        if (g.coin(0.7)) label = ds.gts[ds.gts.size() - gt_fp.size() + src].label;
        if (boxes) f = jitter(std::get<marsail::metrics::Box>(gt_fp[src]));
        else f = perturb(std::get<marsail::BinaryMask>(gt_fp[src]));
      } else {
        f = boxes ? marsail::metrics::Footprint(random_box()) : marsail::metrics::Footprint(random_mask(frame));
      }
      ds.dets.push_back({id, label, static_cast<double>(g.index(0, 10)) / 10.0, f});
    }
  }
  return ds;
}

}  // namespace testing_support
