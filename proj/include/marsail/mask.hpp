#pragma once

// Binary masks, thresholding, 4-connected components and mask IoU.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail {

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width)
      : height_(height), width_(width), bits_(height * width, 0) {}

  /// Pixels with value >= threshold become foreground.
  static BinaryMask threshold(const Tensor& soft, double threshold = 0.5) {
    detail::require_rank(soft, 2, "BinaryMask::threshold");
    BinaryMask m(soft.dim(0), soft.dim(1));
    for (std::size_t i = 0; i < soft.size(); ++i) m.bits_[i] = soft[i] >= threshold ? 1 : 0;
    return m;
  }

  /// Axis-aligned filled rectangle [x0, x0+w) x [y0, y0+h), clipped to the frame.
  static BinaryMask rectangle(std::size_t height, std::size_t width, std::size_t x0,
                              std::size_t y0, std::size_t w, std::size_t h) {
    BinaryMask m(height, width);
    for (std::size_t y = y0; y < std::min(height, y0 + h); ++y)
      for (std::size_t x = x0; x < std::min(width, x0 + w); ++x) m.set(y, x, true);
    return m;
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }

  bool at(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
  /// Out-of-frame coordinates read as background.
  bool at_or_false(long y, long x) const {
    if (y < 0 || x < 0 || y >= static_cast<long>(height_) || x >= static_cast<long>(width_)) {
      return false;
    }
    return at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  void set(std::size_t y, std::size_t x, bool v) { bits_[y * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }

  std::size_t area() const {
    std::size_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }

  Tensor to_tensor() const {
    Tensor t({height_, width_});
    for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i] ? 1.0 : 0.0;
    return t;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline void require_same_extent(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError(std::string(what) + ": mask extents differ (" + std::to_string(a.height()) +
                     "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

/// |a & b| / |a | b|; two empty masks agree perfectly (1.0).
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_extent(a, b, "mask_iou");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// 4-connected components, numbered in row-major order of their first pixel.
inline std::vector<BinaryMask> connected_components(const BinaryMask& m) {
  const std::size_t h = m.height(), w = m.width();
  constexpr std::size_t kUnset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> label(h * w, kUnset);
  std::vector<BinaryMask> comps;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!m[start] || label[start] != kUnset) continue;
    const std::size_t id = comps.size();
    comps.emplace_back(h, w);
    stack.push_back(start);
    label[start] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t y = p / w, x = p % w;
      comps[id].set(y, x, true);
      auto visit = [&](std::size_t q) {
        if (m[q] && label[q] == kUnset) {
          label[q] = id;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
  }
  return comps;
}

}  // namespace marsail
