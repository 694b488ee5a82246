#pragma once

// 3x3 convolution (plain and deformable), 1x1 projections, resampling and
// top-down FPN fusion. Feature maps are [H x W x C].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail::nn {

enum class Padding { kZero, kClamp };

/// 3x3 kernel [3 x 3 x C_in x C_out]; tap (ky, kx) reads offset (ky-1, kx-1).
struct ConvKernel {
  Tensor weight;
  Tensor bias;  // [C_out] or empty

  std::size_t in_channels() const { return weight.dim(2); }
  std::size_t out_channels() const { return weight.dim(3); }

  double w(std::size_t ky, std::size_t kx, std::size_t ci, std::size_t co) const {
    return weight[((ky * 3 + kx) * in_channels() + ci) * out_channels() + co];
  }

  void validate(std::size_t c_in) const {
    if (weight.rank() != 4 || weight.dim(0) != 3 || weight.dim(1) != 3 || weight.dim(2) != c_in) {
      throw ShapeError("conv: kernel must be [3 x 3 x " + std::to_string(c_in) + " x C_out], got " +
                       shape_string(weight.shape()));
    }
    if (!bias.empty() && bias.size() != out_channels()) {
      throw ShapeError("conv: bias length does not match C_out");
    }
  }
};

namespace detail {

inline double read_pixel(const Tensor& x, long y, long xx, std::size_t c, Padding pad) {
  const long h = static_cast<long>(x.dim(0)), w = static_cast<long>(x.dim(1));
  if (pad == Padding::kClamp) {
    y = std::clamp(y, 0L, h - 1);
    xx = std::clamp(xx, 0L, w - 1);
    return x(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c);
  }
  if (y < 0 || y >= h || xx < 0 || xx >= w) return 0.0;
  return x(static_cast<std::size_t>(y), static_cast<std::size_t>(xx), c);
}

}  // namespace detail

/// Standard 3x3 stride-1 "same" convolution.
inline Tensor conv2d_3x3(const Tensor& x, const ConvKernel& k, Padding pad = Padding::kZero) {
  marsail::detail::require_rank(x, 3, "conv2d input");
  k.validate(x.dim(2));
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = k.out_channels();
  Tensor out({h, w, cout});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
            const long sx = static_cast<long>(xx) + static_cast<long>(kx) - 1;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += k.w(ky, kx, ci, co) * detail::read_pixel(x, sy, sx, ci, pad);
            }
          }
        }
        if (!k.bias.empty()) acc += k.bias[co];
        out(y, xx, co) = acc;
      }
    }
  }
  return out;
}

/// Bilinear sample at fractional (y, x); each of the four corners that falls
/// outside the frame contributes 0.
inline double bilinear_sample(const Tensor& x, double py, double px, std::size_t c) {
  const double fy = std::floor(py), fx = std::floor(px);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double ly = py - fy, lx = px - fx;
  if (ly == 0.0 && lx == 0.0) return detail::read_pixel(x, y0, x0, c, Padding::kZero);
  const double v00 = detail::read_pixel(x, y0, x0, c, Padding::kZero);
  const double v01 = detail::read_pixel(x, y0, x0 + 1, c, Padding::kZero);
  const double v10 = detail::read_pixel(x, y0 + 1, x0, c, Padding::kZero);
  const double v11 = detail::read_pixel(x, y0 + 1, x0 + 1, c, Padding::kZero);
  return (1.0 - ly) * ((1.0 - lx) * v00 + lx * v01) + ly * ((1.0 - lx) * v10 + lx * v11);
}

/// Per-location, per-tap offsets [H x W x 9 x 2], stored (dy, dx) in pixels.
/// Tap index is ky * 3 + kx.
struct DeformableOffsets {
  Tensor values;

  static DeformableOffsets zeros(std::size_t h, std::size_t w) {
    return DeformableOffsets{Tensor({h, w, 9, 2})};
  }
  /// Same (dy, dx) for every location and tap.
  static DeformableOffsets uniform(std::size_t h, std::size_t w, double dy, double dx) {
    DeformableOffsets o = zeros(h, w);
    for (std::size_t i = 0; i < o.values.size(); i += 2) {
      o.values[i] = dy;
      o.values[i + 1] = dx;
    }
    return o;
  }
  double dy(std::size_t y, std::size_t x, std::size_t tap) const {
    return values[((y * values.dim(1) + x) * 9 + tap) * 2];
  }
  double dx(std::size_t y, std::size_t x, std::size_t tap) const {
    return values[((y * values.dim(1) + x) * 9 + tap) * 2 + 1];
  }
};

/// y(p0) = sum_k w_k x(p0 + p_k + dp_k), bilinear sampling, zero outside.
inline Tensor deformable_conv2d(const Tensor& x, const ConvKernel& k,
                                const DeformableOffsets& offsets) {
  marsail::detail::require_rank(x, 3, "deformable_conv2d input");
  k.validate(x.dim(2));
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2), cout = k.out_channels();
  if (offsets.values.shape() != Shape{h, w, 9, 2}) {
    throw ShapeError("deformable_conv2d: offsets must be [H x W x 9 x 2], got " +
                     shape_string(offsets.values.shape()));
  }
  if (!offsets.values.all_finite()) throw ShapeError("deformable_conv2d: non-finite offsets");
  Tensor out({h, w, cout});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t xx = 0; xx < w; ++xx) {
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t tap = ky * 3 + kx;
            const double sy = static_cast<double>(y) + static_cast<double>(ky) - 1.0 +
                              offsets.dy(y, xx, tap);
            const double sx = static_cast<double>(xx) + static_cast<double>(kx) - 1.0 +
                              offsets.dx(y, xx, tap);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += k.w(ky, kx, ci, co) * bilinear_sample(x, sy, sx, ci);
            }
          }
        }
        if (!k.bias.empty()) acc += k.bias[co];
        out(y, xx, co) = acc;
      }
    }
  }
  return out;
}

/// Per-pixel projection [H x W x C_in] * [C_in x C_out].
inline Tensor conv1x1(const Tensor& x, const Tensor& weight) {
  marsail::detail::require_rank(x, 3, "conv1x1 input");
  if (weight.rank() != 2 || weight.dim(0) != x.dim(2)) {
    throw ShapeError("conv1x1: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.shape()));
  }
  return matmul(x.reshaped({x.dim(0) * x.dim(1), x.dim(2)}), weight)
      .reshaped({x.dim(0), x.dim(1), weight.dim(1)});
}

inline Tensor upsample_nearest2x(const Tensor& x) {
  marsail::detail::require_rank(x, 3, "upsample input");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({2 * h, 2 * w, c});
  for (std::size_t y = 0; y < 2 * h; ++y)
    for (std::size_t xx = 0; xx < 2 * w; ++xx)
      for (std::size_t k = 0; k < c; ++k) out(y, xx, k) = x(y / 2, xx / 2, k);
  return out;
}

inline Tensor avg_pool2x(const Tensor& x) {
  marsail::detail::require_rank(x, 3, "avg_pool input");
  if (x.dim(0) % 2 != 0 || x.dim(1) % 2 != 0) {
    throw ShapeError("avg_pool2x: odd extent " + shape_string(x.shape()));
  }
  const std::size_t h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t k = 0; k < c; ++k)
        out(y, xx, k) = 0.25 * (x(2 * y, 2 * xx, k) + x(2 * y, 2 * xx + 1, k) +
                                x(2 * y + 1, 2 * xx, k) + x(2 * y + 1, 2 * xx + 1, k));
  return out;
}

/// Top-down fusion: out_L = lat_L(F_L), out_l = lat_l(F_l) + Up(out_{l+1}).
/// levels[0] is the finest map; each next level is exactly half its size.
inline Tensor fpn_fuse(const std::vector<Tensor>& levels, const std::vector<Tensor>& laterals) {
  if (levels.empty()) throw ShapeError("fpn_fuse: no levels");
  if (levels.size() != laterals.size()) throw ShapeError("fpn_fuse: one lateral per level required");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    marsail::detail::require_rank(levels[l], 3, "fpn level");
    if (l + 1 < levels.size()) {
      const Tensor& fine = levels[l];
      const Tensor& coarse = levels[l + 1];
      if (coarse.rank() != 3 || fine.dim(0) != 2 * coarse.dim(0) || fine.dim(1) != 2 * coarse.dim(1)) {
        throw ShapeError("fpn_fuse: level " + std::to_string(l + 1) + " " +
                         shape_string(coarse.shape()) + " is not half of " +
                         shape_string(fine.shape()));
      }
    }
  }
  Tensor acc = conv1x1(levels.back(), laterals.back());
  for (std::size_t l = levels.size() - 1; l-- > 0;) {
    Tensor lat = conv1x1(levels[l], laterals[l]);
    const Tensor up = upsample_nearest2x(acc);
    marsail::detail::require_same_shape(lat, up, "fpn_fuse lateral channels");
    acc = add(lat, up);
  }
  return acc;
}

}  // namespace marsail::nn
