#pragma once

// Mask reconstruction from node embeddings, contour extraction, polygon
// simplification and polygon measurements. Coordinates are (x, y) with y
// pointing down the image; "counter-clockwise" means as seen on screen.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/mask.hpp"
#include "marsail/quadtree.hpp"
#include "marsail/tensor.hpp"

namespace marsail::geometry {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Polygon {
  std::vector<Point> vertices;  // closed implicitly
};

struct PolygonConfig {
  double rdp_epsilon = 1.0;
  double area_tolerance = 0.1;  // fraction of mask area

  void validate() const {
    if (!(rdp_epsilon >= 0.0)) throw ConfigError("polygon: rdp_epsilon must be >= 0");
    if (!(area_tolerance > 0.0)) throw ConfigError("polygon: area_tolerance must be > 0");
  }
};

/// M(x, y) = sigmoid(w_i . z_i + bias) for the unique node i containing (x, y).
/// `projection` is either one shared [C] vector or per-node [T x C] rows.
inline Tensor reconstruct_mask(const quadtree::NodeSequence& seq, const Tensor& refined,
                               const Tensor& projection, double bias = 0.0) {
  marsail::detail::require_rank(refined, 2, "reconstruct_mask features");
  if (refined.dim(0) != seq.leaves.size()) {
    throw ShapeError("reconstruct_mask: " + std::to_string(refined.dim(0)) + " feature rows for " +
                     std::to_string(seq.leaves.size()) + " regions");
  }
  const std::size_t c = refined.dim(1);
  const bool shared = projection.rank() == 1;
  if (shared ? projection.size() != c : projection.shape() != refined.shape()) {
    throw ShapeError("reconstruct_mask: projection " + shape_string(projection.shape()) +
                     " incompatible with features " + shape_string(refined.shape()));
  }
  if (seq.height == 0 || seq.width == 0) throw ShapeError("reconstruct_mask: sequence has no frame");
  Tensor mask({seq.height, seq.width});
  for (std::size_t i = 0; i < seq.leaves.size(); ++i) {
    double logit = bias;
    for (std::size_t k = 0; k < c; ++k) {
      logit += (shared ? projection[k] : projection(i, k)) * refined(i, k);
    }
    const double v = sigmoid(logit);
    const quadtree::Region& r = seq.leaves[i].region;
    for (std::size_t y = r.y0; y < r.y0 + r.height; ++y)
      for (std::size_t x = r.x0; x < r.x0 + r.width; ++x) mask(y, x) = v;
  }
  return mask;
}

struct Boundary {
  std::vector<Point> points;  // pixel coordinates of boundary pixels
  bool degenerate = false;    // single-pixel foreground
};

namespace detail {

// Screen-CCW ring starting at north: N, NW, W, SW, S, SE, E, NE.
inline constexpr std::array<std::array<int, 2>, 8> kRing{{
    {0, -1}, {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}}};

inline int ring_index(int dx, int dy) {
  for (int i = 0; i < 8; ++i)
    if (kRing[i][0] == dx && kRing[i][1] == dy) return i;
  throw InvariantViolation("ring_index: not a neighbor offset");
}

inline BinaryMask single_component(const BinaryMask& m, const char* what) {
  const auto comps = connected_components(m);
  if (comps.empty()) throw DegenerateError(std::string(what) + ": empty mask");
  if (comps.size() != 1) {
    throw DegenerateError(std::string(what) + ": expected one 4-connected component, found " +
                          std::to_string(comps.size()));
  }
  return comps.front();
}

inline std::pair<long, long> first_pixel(const BinaryMask& m) {
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x)
      if (m.at(y, x)) return {static_cast<long>(x), static_cast<long>(y)};
  throw DegenerateError("empty mask");
}

}  // namespace detail

/// Moore-neighbor trace of the outer boundary, counter-clockwise from the
/// top-most then left-most foreground pixel.
inline Boundary trace_boundary(const BinaryMask& mask) {
  const BinaryMask m = detail::single_component(mask, "trace_boundary");
  const auto [sx, sy] = detail::first_pixel(m);
  Boundary out;
  out.points.push_back({static_cast<double>(sx), static_cast<double>(sy)});
  long px = sx, py = sy;
  int back = 0;  // north of the start pixel is background
  const std::size_t limit = 8 * m.size() + 16;
  for (std::size_t iter = 0; iter < limit; ++iter) {
    int found = -1;
    for (int step = 1; step < 8; ++step) {
      const int d = (back + step) % 8;
      if (m.at_or_false(py + detail::kRing[d][1], px + detail::kRing[d][0])) {
        found = d;
        break;
      }
    }
    if (found < 0) {
      out.degenerate = true;
      return out;
    }
    const long cx = px + detail::kRing[found][0], cy = py + detail::kRing[found][1];
    if (px == sx && py == sy && out.points.size() >= 2 &&
        out.points[1] == Point{static_cast<double>(cx), static_cast<double>(cy)}) {
      out.points.pop_back();
      return out;
    }
    const int prev = (found + 7) % 8;
    back = detail::ring_index(static_cast<int>(px + detail::kRing[prev][0] - cx),
                              static_cast<int>(py + detail::kRing[prev][1] - cy));
    px = cx;
    py = cy;
    out.points.push_back({static_cast<double>(px), static_cast<double>(py)});
  }
  throw InvariantViolation("trace_boundary: contour did not close");
}

inline Boundary trace_boundary(const Tensor& soft, double threshold = 0.5) {
  return trace_boundary(BinaryMask::threshold(soft, threshold));
}

/// Outer outline along pixel edges (lattice corners), counter-clockwise from
/// the top-left corner of the top-most, left-most pixel. The enclosed area
/// equals the pixel count of a hole-free component.
inline std::vector<Point> trace_outline(const BinaryMask& mask) {
  const BinaryMask m = detail::single_component(mask, "trace_outline");
  const auto [sx, sy] = detail::first_pixel(m);
  auto floor_half = [](long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); };
  auto pixel = [&](long vx, long vy, int dx, int dy, int ox, int oy) {
    return m.at_or_false(floor_half(2 * vy + dy + oy), floor_half(2 * vx + dx + ox));
  };
  std::vector<Point> out;
  long vx = sx, vy = sy;
  int dx = 0, dy = 1;  // walk south first: foreground on the left
  const std::size_t limit = 4 * m.size() + 16;
  for (std::size_t iter = 0; iter < limit; ++iter) {
    out.push_back({static_cast<double>(vx), static_cast<double>(vy)});
    vx += dx;
    vy += dy;
    if (vx == sx && vy == sy) return out;
    const int lx = dy, ly = -dx;  // left of travel
    const bool ahead_left = pixel(vx, vy, dx, dy, lx, ly);
    const bool ahead_right = pixel(vx, vy, dx, dy, -lx, -ly);
    if (!ahead_left) {
      std::tie(dx, dy) = std::pair{lx, ly};
    } else if (ahead_right) {
      std::tie(dx, dy) = std::pair{-lx, -ly};
    }
  }
  throw InvariantViolation("trace_outline: outline did not close");
}

inline double point_segment_distance(const Point& p, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  if (len2 == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * vx), p.y - (a.y + t * vy));
}

inline double signed_area(const std::vector<Point>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& a = v[i];
    const Point& b = v[(i + 1) % v.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

/// Absolute shoelace area.
inline double polygon_area(const Polygon& p) {
  if (p.vertices.size() < 3) throw DegenerateError("polygon_area: fewer than 3 vertices");
  const double a = std::abs(signed_area(p.vertices));
  if (a == 0.0) throw DegenerateError("polygon_area: zero-area polygon");
  return a;
}

namespace detail {

inline double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline bool on_segment(const Point& p, const Point& a, const Point& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  return (d1 == 0 && on_segment(a, c, d)) || (d2 == 0 && on_segment(b, c, d)) ||
         (d3 == 0 && on_segment(c, a, b)) || (d4 == 0 && on_segment(d, a, b));
}

inline void rdp_recurse(const std::vector<Point>& pts, std::size_t first, std::size_t last,
                        double eps, std::vector<char>& keep) {
  if (last <= first + 1) return;
  double best = -1.0;
  std::size_t idx = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = point_segment_distance(pts[i], pts[first], pts[last]);
    if (d > best) {
      best = d;
      idx = i;
    }
  }
  if (best > eps) {
    keep[idx] = 1;
    rdp_recurse(pts, first, idx, eps, keep);
    rdp_recurse(pts, idx, last, eps, keep);
  }
}

}  // namespace detail

/// True when no two non-adjacent edges touch and adjacent edges only share
/// their common vertex.
inline bool is_simple(const Polygon& p) {
  const auto& v = p.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Adjacent edges fold back on each other only if collinear and overlapping.
        const std::size_t shared = (j == i + 1) ? j : i;
        const Point& a = v[(shared + n - 1) % n];
        const Point& s = v[shared];
        const Point& b = v[(shared + 1) % n];
        if (detail::cross(s, a, b) == 0.0 && (a.x - s.x) * (b.x - s.x) + (a.y - s.y) * (b.y - s.y) > 0) {
          return false;
        }
        continue;
      }
      if (detail::segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
    }
  }
  return true;
}

/// Largest distance from any contour point to the closed chain through the
/// kept vertices; `kept` indexes into `contour` in increasing order.
inline double rdp_max_deviation(const std::vector<Point>& contour,
                                const std::vector<std::size_t>& kept) {
  double worst = 0.0;
  for (std::size_t s = 0; s < kept.size(); ++s) {
    const std::size_t a = kept[s];
    const std::size_t b = (s + 1 < kept.size()) ? kept[s + 1] : contour.size();
    const Point& pa = contour[a];
    const Point& pb = contour[b % contour.size()];
    for (std::size_t i = a + 1; i < b; ++i) {
      worst = std::max(worst, point_segment_distance(contour[i], pa, pb));
    }
  }
  return worst;
}

struct Simplification {
  Polygon polygon;
  std::vector<std::size_t> kept;  // contour indices of the retained vertices
  double max_deviation = 0.0;
};

/// Ramer-Douglas-Peucker on a closed contour. The first point and the point
/// farthest from it are anchors; each half is simplified independently.
/// Throws DegenerateError when fewer than three vertices survive.
inline Simplification rdp_simplify_detailed(const std::vector<Point>& contour,
                                            const PolygonConfig& cfg) {
  cfg.validate();
  if (contour.size() < 3) throw DegenerateError("rdp_simplify: fewer than 3 points");
  const std::size_t n = contour.size();
  std::size_t far = 0;
  double far_d = -1.0;
  for (std::size_t i = 1; i < n; ++i) {
    const double d = std::hypot(contour[i].x - contour[0].x, contour[i].y - contour[0].y);
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  if (!(far_d > 0.0)) throw DegenerateError("rdp_simplify: all points coincide");
  std::vector<Point> loop = contour;
  loop.push_back(contour.front());
  std::vector<char> keep(loop.size(), 0);
  keep[0] = keep[far] = keep[n] = 1;
  detail::rdp_recurse(loop, 0, far, cfg.rdp_epsilon, keep);
  detail::rdp_recurse(loop, far, n, cfg.rdp_epsilon, keep);

  Simplification out;
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) {
      out.kept.push_back(i);
      out.polygon.vertices.push_back(contour[i]);
    }
  }
  out.max_deviation = rdp_max_deviation(contour, out.kept);
  if (out.max_deviation > cfg.rdp_epsilon + 1e-9) {
    throw InvariantViolation("rdp_simplify: discarded point at distance " +
                             std::to_string(out.max_deviation) + " exceeds epsilon " +
                             std::to_string(cfg.rdp_epsilon));
  }
  if (out.polygon.vertices.size() < 3 || signed_area(out.polygon.vertices) == 0.0) {
    throw DegenerateError("rdp_simplify: simplified contour has " +
                          std::to_string(out.polygon.vertices.size()) +
                          " vertices and no enclosed area");
  }
  return out;
}

inline Polygon rdp_simplify(const std::vector<Point>& contour, const PolygonConfig& cfg) {
  return rdp_simplify_detailed(contour, cfg).polygon;
}

/// Principal-axis angle of the vertex covariance in degrees, in [0, 180),
/// measured from +x toward +y.
inline double polygon_orientation(const Polygon& p) {
  const auto& v = p.vertices;
  if (v.size() < 2) throw DegenerateError("polygon_orientation: fewer than 2 vertices");
  double mx = 0.0, my = 0.0;
  for (const Point& q : v) {
    mx += q.x;
    my += q.y;
  }
  mx /= static_cast<double>(v.size());
  my /= static_cast<double>(v.size());
  double cxx = 0.0, cyy = 0.0, cxy = 0.0;
  for (const Point& q : v) {
    cxx += (q.x - mx) * (q.x - mx);
    cyy += (q.y - my) * (q.y - my);
    cxy += (q.x - mx) * (q.y - my);
  }
  if (cxx == 0.0 && cyy == 0.0) throw DegenerateError("polygon_orientation: all vertices coincide");
  double deg = 0.5 * std::atan2(2.0 * cxy, cxx - cyy) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 180.0;
  if (deg >= 180.0) deg -= 180.0;
  return deg;
}

/// Polygon for one instance mask: pixel-edge outline simplified by RDP.
/// Falls back to smaller epsilons if the simplification self-intersects.
inline Polygon mask_polygon(const BinaryMask& mask, const PolygonConfig& cfg) {
  const std::vector<Point> outline = trace_outline(mask);
  PolygonConfig attempt = cfg;
  for (int i = 0; i < 8; ++i) {
    Polygon p = rdp_simplify(outline, attempt);
    if (is_simple(p)) return p;
    attempt.rdp_epsilon *= 0.5;
  }
  attempt.rdp_epsilon = 0.0;
  return rdp_simplify(outline, attempt);
}

}  // namespace marsail::geometry
