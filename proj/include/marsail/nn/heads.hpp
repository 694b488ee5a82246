#pragma once

// Instance heads: dynamic per-query mask filters, damage/part/fake
// classifiers, Gaussian peak amplification and the adaptive dropout rate.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include "marsail/error.hpp"
#include "marsail/labels.hpp"
#include "marsail/tensor.hpp"

namespace marsail::nn {

struct AdaptiveDropoutConfig {
  double p_min = 0.1;
  double p_max = 0.5;

  void validate() const {
    if (!(0.0 <= p_min && p_min <= p_max && p_max <= 1.0)) {
      throw ConfigError("adaptive dropout: require 0 <= p_min <= p_max <= 1");
    }
  }
};

/// p = p_min + sigmoid(gate) (p_max - p_min). Rate only; no sampling.
inline double adaptive_dropout_rate(double gate, const AdaptiveDropoutConfig& cfg) {
  cfg.validate();
  const double p = cfg.p_min + sigmoid(gate) * (cfg.p_max - cfg.p_min);
  return std::clamp(p, cfg.p_min, cfg.p_max);
}

/// Affine map from a query to a 1x1 filter over C channels plus a bias:
/// kernel = weight * q + bias, entries [0, C) are channel weights and entry C
/// is the filter bias.
struct DynamicMaskWeights {
  Tensor weight;  // [(C+1) x d]
  Tensor bias;    // [C+1]

  std::size_t channels() const { return weight.dim(0) - 1; }
  std::size_t query_dim() const { return weight.dim(1); }
};

namespace detail {

inline Tensor dynamic_kernel(const Tensor& q, const DynamicMaskWeights& w) {
  if (w.weight.rank() != 2 || w.weight.dim(0) < 2 || w.bias.size() != w.weight.dim(0) ||
      q.size() != w.weight.dim(1)) {
    throw ShapeError("dynamic_mask_head: weight " + shape_string(w.weight.shape()) + ", bias " +
                     shape_string(w.bias.shape()) + ", query " + shape_string(q.shape()));
  }
  Tensor k({w.weight.dim(0)});
  for (std::size_t i = 0; i < w.weight.dim(0); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < w.weight.dim(1); ++j) acc += w.weight(i, j) * q[j];
    k[i] = acc + w.bias[i];
  }
  return k;
}

}  // namespace detail

/// m(y, x) = sigmoid(sum_c k_c F(y, x, c) + k_C) with k = phi(q).
inline Tensor dynamic_mask_head(const Tensor& q, const Tensor& features,
                                const DynamicMaskWeights& w) {
  marsail::detail::require_rank(features, 3, "dynamic_mask_head features");
  const Tensor k = detail::dynamic_kernel(q, w);
  const std::size_t h = features.dim(0), wd = features.dim(1), c = features.dim(2);
  if (c != w.channels()) {
    throw ShapeError("dynamic_mask_head: feature channels " + std::to_string(c) +
                     " vs filter channels " + std::to_string(w.channels()));
  }
  Tensor m({h, wd});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wd; ++x) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) acc += k[ch] * features(y, x, ch);
      m(y, x) = sigmoid(acc + k[c]);
    }
  }
  return m;
}

struct DynamicMaskGrads {
  Tensor dq, dfeatures, dweight, dbias;
};

inline DynamicMaskGrads dynamic_mask_head_backward(const Tensor& q, const Tensor& features,
                                                   const DynamicMaskWeights& w, const Tensor& mask,
                                                   const Tensor& dmask) {
  const Tensor k = detail::dynamic_kernel(q, w);
  const std::size_t h = features.dim(0), wd = features.dim(1), c = features.dim(2);
  DynamicMaskGrads g;
  g.dfeatures = Tensor(features.shape());
  Tensor dk({c + 1});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < wd; ++x) {
      const double m = mask(y, x);
      const double dl = dmask(y, x) * m * (1.0 - m);
      for (std::size_t ch = 0; ch < c; ++ch) {
        dk[ch] += dl * features(y, x, ch);
        g.dfeatures(y, x, ch) = dl * k[ch];
      }
      dk[c] += dl;
    }
  }
  g.dbias = dk;
  g.dweight = Tensor(w.weight.shape());
  g.dq = Tensor(q.shape());
  for (std::size_t i = 0; i < w.weight.dim(0); ++i) {
    for (std::size_t j = 0; j < w.weight.dim(1); ++j) {
      g.dweight(i, j) = dk[i] * q[j];
      g.dq[j] += dk[i] * w.weight(i, j);
    }
  }
  return g;
}

struct ClassificationWeights {
  Tensor damage;  // [26 x d]
  Tensor part;    // [61 x d]
  Tensor fake;    // [7 x d]
};

struct HeadOutputs {
  Tensor damage;  // softmax, sums to 1
  Tensor part;    // softmax, sums to 1
  Tensor fake;    // independent sigmoids
};

namespace detail {

inline Tensor matvec(const Tensor& m, const Tensor& v) {
  Tensor out({m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.dim(1); ++j) acc += m(i, j) * v[j];
    out[i] = acc;
  }
  return out;
}

inline void require_head(const Tensor& w, std::size_t rows, std::size_t d, const char* name) {
  if (w.rank() != 2 || w.dim(0) != rows || w.dim(1) != d) {
    throw ShapeError(std::string("classification head ") + name + ": expected [" +
                     std::to_string(rows) + " x " + std::to_string(d) + "], got " +
                     shape_string(w.shape()));
  }
}

}  // namespace detail

inline HeadOutputs classification_heads(const Tensor& q, const ClassificationWeights& w) {
  const std::size_t d = q.size();
  detail::require_head(w.damage, kDamageClasses, d, "damage");
  detail::require_head(w.part, kPartClasses, d, "part");
  detail::require_head(w.fake, kFakeClasses, d, "fake");
  return HeadOutputs{softmax(detail::matvec(w.damage, q)), softmax(detail::matvec(w.part, q)),
                     sigmoid(detail::matvec(w.fake, q))};
}

struct HeadGrads {
  Tensor dq, ddamage, dpart, dfake;
};

/// Backpropagates gradients with respect to the three head outputs.
inline HeadGrads classification_heads_backward(const Tensor& q, const ClassificationWeights& w,
                                               const HeadOutputs& out, const Tensor& d_damage,
                                               const Tensor& d_part, const Tensor& d_fake) {
  auto softmax_back = [](const Tensor& p, const Tensor& dp) {
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += dp[i] * p[i];
    Tensor dl(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) dl[i] = p[i] * (dp[i] - dot);
    return dl;
  };
  Tensor dl_fake(out.fake.shape());
  for (std::size_t i = 0; i < out.fake.size(); ++i) {
    dl_fake[i] = d_fake[i] * out.fake[i] * (1.0 - out.fake[i]);
  }
  const Tensor dl_damage = softmax_back(out.damage, d_damage);
  const Tensor dl_part = softmax_back(out.part, d_part);

  HeadGrads g;
  g.dq = Tensor(q.shape());
  auto accumulate = [&](const Tensor& weight, const Tensor& dl, Tensor& dw) {
    dw = Tensor(weight.shape());
    for (std::size_t i = 0; i < weight.dim(0); ++i) {
      for (std::size_t j = 0; j < weight.dim(1); ++j) {
        dw(i, j) = dl[i] * q[j];
        g.dq[j] += dl[i] * weight(i, j);
      }
    }
  };
  accumulate(w.damage, dl_damage, g.ddamage);
  accumulate(w.part, dl_part, g.dpart);
  accumulate(w.fake, dl_fake, g.dfake);
  return g;
}

struct GaussianAmplifyConfig {
  double sigma = 4.0;
  /// Explicit (row, col) center; when empty the argmax pixel of the mask is
  /// used (first in row-major order on ties).
  std::optional<std::pair<std::size_t, std::size_t>> center;
};

inline std::pair<std::size_t, std::size_t> mask_peak(const Tensor& m) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < m.size(); ++i)
    if (m[i] > m[best]) best = i;
  if (!(m[best] > 0.0)) throw DegenerateError("gaussian_amplify: mask has no positive peak");
  return {best / m.dim(1), best % m.dim(1)};
}

/// M'(i, j) = M(i, j) exp(-((i - i*)^2 + (j - j*)^2) / (2 sigma^2)).
inline Tensor gaussian_amplify(const Tensor& m, const GaussianAmplifyConfig& cfg) {
  marsail::detail::require_rank(m, 2, "gaussian_amplify mask");
  if (!(cfg.sigma > 0.0)) throw ConfigError("gaussian_amplify: sigma must be positive");
  const auto [ci, cj] = cfg.center ? *cfg.center : mask_peak(m);
  if (ci >= m.dim(0) || cj >= m.dim(1)) throw ShapeError("gaussian_amplify: center outside mask");
  Tensor out = m;
  const double denom = 2.0 * cfg.sigma * cfg.sigma;
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    for (std::size_t j = 0; j < m.dim(1); ++j) {
      const double di = static_cast<double>(i) - static_cast<double>(ci);
      const double dj = static_cast<double>(j) - static_cast<double>(cj);
      out(i, j) = m(i, j) * std::exp(-(di * di + dj * dj) / denom);
    }
  }
  return out;
}

}  // namespace marsail::nn
