#pragma once

// Variance-driven quadtree partition of a feature map and its serialization
// into a node sequence (one pooled feature row per leaf).

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail::quadtree {

struct Region {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t width = 1;
  std::size_t height = 1;

  std::size_t area() const noexcept { return width * height; }
  bool contains(std::size_t x, std::size_t y) const noexcept {
    return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
  }
  friend bool operator==(const Region&, const Region&) = default;
};

struct QuadtreeConfig {
  double tau = 0.01;
  int max_depth = 6;
  std::size_t min_side = 1;

  void validate() const {
    if (!(tau >= 0.0)) throw ConfigError("quadtree: tau must be >= 0");
    if (max_depth < 0) throw ConfigError("quadtree: max_depth must be >= 0");
    if (min_side < 1) throw ConfigError("quadtree: min_side must be >= 1");
  }
};

struct Leaf {
  Region region;
  int depth = 0;
  double variance = 0.0;
  friend bool operator==(const Leaf&, const Leaf&) = default;
};

inline constexpr const char* kOrderTag = "dfs-tl-tr-bl-br";

struct NodeSequence {
  std::vector<Leaf> leaves;
  Tensor features;  // [T x C]
  std::string order_tag = kOrderTag;
  std::size_t height = 0;  // extent of the decomposed frame
  std::size_t width = 0;

  std::size_t size() const noexcept { return leaves.size(); }
};

namespace detail {

inline void require_feature_map(const Tensor& feat) {
  marsail::detail::require_rank(feat, 3, "quadtree feature map");
}

inline void require_inside(const Tensor& feat, const Region& r) {
  if (r.width < 1 || r.height < 1) throw ShapeError("quadtree: empty region");
  if (r.x0 + r.width > feat.dim(1) || r.y0 + r.height > feat.dim(0)) {
    throw ShapeError("quadtree: region outside image bounds");
  }
}

inline double channel_mean(const Tensor& feat, std::size_t y, std::size_t x) {
  const std::size_t c = feat.dim(2);
  double s = 0.0;
  for (std::size_t k = 0; k < c; ++k) s += feat(y, x, k);
  return s / static_cast<double>(c);
}

}  // namespace detail

/// Population variance of the per-pixel channel mean over `r`.
inline double region_variance(const Tensor& feat, const Region& r) {
  detail::require_feature_map(feat);
  detail::require_inside(feat, r);
  const double n = static_cast<double>(r.area());
  double mean = 0.0;
  for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
    for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) mean += detail::channel_mean(feat, y, x);
  mean /= n;
  double var = 0.0;
  for (std::size_t y = r.y0; y < r.y0 + r.height; ++y) {
    for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) {
      const double d = detail::channel_mean(feat, y, x) - mean;
      var += d * d;
    }
  }
  return var / n;
}

/// TL, TR, BL, BR. The left/top half gets the floor of the split.
inline std::vector<Region> split_quadrants(const Region& r) {
  const std::size_t wl = r.width / 2, wr = r.width - wl;
  const std::size_t ht = r.height / 2, hb = r.height - ht;
  return {
      Region{r.x0, r.y0, wl, ht},
      Region{r.x0 + wl, r.y0, wr, ht},
      Region{r.x0, r.y0 + ht, wl, hb},
      Region{r.x0 + wl, r.y0 + ht, wr, hb},
  };
}

namespace detail {

inline void decompose_into(const Tensor& feat, const Region& r, int depth,
                           const QuadtreeConfig& cfg, std::vector<Leaf>& out) {
  const double var = region_variance(feat, r);
  const bool stop = var < cfg.tau || depth >= cfg.max_depth ||
                    std::min(r.width, r.height) <= cfg.min_side;
  if (stop) {
    out.push_back(Leaf{r, depth, var});
    return;
  }
  for (const Region& q : split_quadrants(r)) decompose_into(feat, q, depth + 1, cfg, out);
}

}  // namespace detail

/// Leaves of the recursive partition of `root`, in depth-first pre-order.
inline std::vector<Leaf> decompose(const Tensor& feat, const QuadtreeConfig& cfg,
                                   const Region& root) {
  detail::require_feature_map(feat);
  cfg.validate();
  detail::require_inside(feat, root);
  std::vector<Leaf> leaves;
  detail::decompose_into(feat, root, 0, cfg, leaves);
  return leaves;
}

inline std::vector<Leaf> decompose(const Tensor& feat, const QuadtreeConfig& cfg) {
  detail::require_feature_map(feat);
  return decompose(feat, cfg, Region{0, 0, feat.dim(1), feat.dim(0)});
}

/// Mean-pooled feature per region: row i = mean of feat over regions[i].
inline Tensor node_features(const Tensor& feat, const std::vector<Region>& regions) {
  detail::require_feature_map(feat);
  const std::size_t c = feat.dim(2);
  if (regions.empty()) throw ShapeError("node_features: no regions");
  Tensor out({regions.size(), c});
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const Region& r = regions[i];
    detail::require_inside(feat, r);
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
        for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) s += feat(y, x, k);
      out(i, k) = s / static_cast<double>(r.area());
    }
  }
  return out;
}

inline std::vector<Region> regions_of(const std::vector<Leaf>& leaves) {
  std::vector<Region> out;
  out.reserve(leaves.size());
  for (const Leaf& l : leaves) out.push_back(l.region);
  return out;
}

inline NodeSequence serialize_sequence(const Tensor& feat, const QuadtreeConfig& cfg) {
  NodeSequence seq;
  seq.height = feat.dim(0);
  seq.width = feat.dim(1);
  seq.leaves = decompose(feat, cfg);
  seq.features = node_features(feat, regions_of(seq.leaves));
  return seq;
}

/// Index map [H x W] -> leaf index containing each pixel.
inline std::vector<std::size_t> leaf_index_map(const std::vector<Leaf>& leaves, std::size_t height,
                                               std::size_t width) {
  std::vector<std::size_t> owner(height * width, leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Region& r = leaves[i].region;
    for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
      for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) owner[y * width + x] = i;
  }
  return owner;
}

}  // namespace marsail::quadtree
