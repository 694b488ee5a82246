#pragma once

// GRU cell and bidirectional GRU over a [T x d_in] sequence.
//
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   h~ = tanh(x Wh + (r * h) Uh + bh)
//   h' = (1 - z) * h + z * h~

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail::nn {

struct GruWeights {
  Tensor wz, wr, wh;  // [d_in x H]
  Tensor uz, ur, uh;  // [H x H]
  Tensor bz, br, bh;  // [H]

  std::size_t input_size() const { return wz.dim(0); }
  std::size_t hidden_size() const { return wz.dim(1); }

  void validate() const {
    if (wz.rank() != 2) throw ShapeError("gru: wz must be rank 2");
    const std::size_t d = wz.dim(0), h = wz.dim(1);
    const Shape in{d, h}, hh{h, h};
    if (wr.shape() != in || wh.shape() != in || uz.shape() != hh || ur.shape() != hh ||
        uh.shape() != hh || bz.size() != h || br.size() != h || bh.size() != h) {
      throw ShapeError("gru: weight shapes inconsistent with input " + std::to_string(d) +
                       ", hidden " + std::to_string(h));
    }
  }

  static GruWeights zeros(std::size_t d_in, std::size_t hidden) {
    GruWeights w;
    w.wz = w.wr = w.wh = Tensor({d_in, hidden});
    w.uz = w.ur = w.uh = Tensor({hidden, hidden});
    w.bz = w.br = w.bh = Tensor({hidden});
    return w;
  }
};

namespace detail {

// y_j = sum_i x_i m(i, j) + b_j
inline void affine_accumulate(std::span<const double> x, const Tensor& m, std::span<double> y) {
  for (std::size_t j = 0; j < m.dim(1); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m.dim(0); ++i) acc += x[i] * m(i, j);
    y[j] += acc;
  }
}

// y_i += sum_j d_j m(i, j)
inline void affine_transpose_accumulate(std::span<const double> d, const Tensor& m,
                                        std::span<double> y) {
  for (std::size_t i = 0; i < m.dim(0); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.dim(1); ++j) acc += d[j] * m(i, j);
    y[i] += acc;
  }
}

inline void outer_accumulate(std::span<const double> a, std::span<const double> b, Tensor& m) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) += a[i] * b[j];
}

}  // namespace detail

struct GruStep {
  std::vector<double> z, r, candidate, h_next;
};

inline GruStep gru_cell(std::span<const double> x, std::span<const double> h, const GruWeights& w) {
  const std::size_t hs = w.hidden_size();
  if (x.size() != w.input_size() || h.size() != hs) {
    throw ShapeError("gru_cell: input/hidden length mismatch");
  }
  GruStep s;
  s.z.assign(w.bz.data().begin(), w.bz.data().end());
  s.r.assign(w.br.data().begin(), w.br.data().end());
  detail::affine_accumulate(x, w.wz, s.z);
  detail::affine_accumulate(h, w.uz, s.z);
  detail::affine_accumulate(x, w.wr, s.r);
  detail::affine_accumulate(h, w.ur, s.r);
  for (auto& v : s.z) v = sigmoid(v);
  for (auto& v : s.r) v = sigmoid(v);
  std::vector<double> rh(hs);
  for (std::size_t j = 0; j < hs; ++j) rh[j] = s.r[j] * h[j];
  s.candidate.assign(w.bh.data().begin(), w.bh.data().end());
  detail::affine_accumulate(x, w.wh, s.candidate);
  detail::affine_accumulate(rh, w.uh, s.candidate);
  for (auto& v : s.candidate) v = std::tanh(v);
  s.h_next.resize(hs);
  for (std::size_t j = 0; j < hs; ++j) {
    s.h_next[j] = (1.0 - s.z[j]) * h[j] + s.z[j] * s.candidate[j];
  }
  return s;
}

struct GruCellGrads {
  std::vector<double> dx, dh;
  GruWeights dw;
};

/// Gradients of a scalar loss through one cell, given dL/dh'.
inline GruCellGrads gru_cell_backward(std::span<const double> x, std::span<const double> h,
                                      const GruWeights& w, const GruStep& step,
                                      std::span<const double> dh_next) {
  const std::size_t hs = w.hidden_size();
  GruCellGrads g;
  g.dx.assign(x.size(), 0.0);
  g.dh.assign(hs, 0.0);
  g.dw = GruWeights::zeros(x.size(), hs);
  std::vector<double> dz_pre(hs), dc_pre(hs), dr_pre(hs), rh(hs), drh(hs, 0.0);
  for (std::size_t j = 0; j < hs; ++j) {
    const double z = step.z[j], c = step.candidate[j];
    g.dh[j] = dh_next[j] * (1.0 - z);
    dz_pre[j] = dh_next[j] * (c - h[j]) * z * (1.0 - z);
    dc_pre[j] = dh_next[j] * z * (1.0 - c * c);
    rh[j] = step.r[j] * h[j];
  }
  detail::affine_transpose_accumulate(dc_pre, w.uh, drh);
  for (std::size_t j = 0; j < hs; ++j) {
    const double r = step.r[j];
    dr_pre[j] = drh[j] * h[j] * r * (1.0 - r);
    g.dh[j] += drh[j] * r;
  }
  detail::affine_transpose_accumulate(dz_pre, w.wz, g.dx);
  detail::affine_transpose_accumulate(dr_pre, w.wr, g.dx);
  detail::affine_transpose_accumulate(dc_pre, w.wh, g.dx);
  detail::affine_transpose_accumulate(dz_pre, w.uz, g.dh);
  detail::affine_transpose_accumulate(dr_pre, w.ur, g.dh);

  detail::outer_accumulate(x, dz_pre, g.dw.wz);
  detail::outer_accumulate(x, dr_pre, g.dw.wr);
  detail::outer_accumulate(x, dc_pre, g.dw.wh);
  detail::outer_accumulate(h, dz_pre, g.dw.uz);
  detail::outer_accumulate(h, dr_pre, g.dw.ur);
  detail::outer_accumulate(rh, dc_pre, g.dw.uh);
  for (std::size_t j = 0; j < hs; ++j) {
    g.dw.bz[j] = dz_pre[j];
    g.dw.br[j] = dr_pre[j];
    g.dw.bh[j] = dc_pre[j];
  }
  return g;
}

/// Runs one direction from a zero state; returns [T x H] hidden states
/// indexed by input position.
inline Tensor gru_sequence(const Tensor& x, const GruWeights& w, bool reverse) {
  marsail::detail::require_rank(x, 2, "gru input");
  w.validate();
  if (x.dim(1) != w.input_size()) {
    throw ShapeError("gru: input width " + std::to_string(x.dim(1)) + " vs weights " +
                     std::to_string(w.input_size()));
  }
  const std::size_t t = x.dim(0), hs = w.hidden_size();
  Tensor out({t, hs});
  std::vector<double> h(hs, 0.0);
  for (std::size_t s = 0; s < t; ++s) {
    const std::size_t pos = reverse ? t - 1 - s : s;
    h = gru_cell(x.row(pos), h, w).h_next;
    std::copy(h.begin(), h.end(), out.row(pos).begin());
  }
  return out;
}

/// [T x 2H]: forward states in the first H columns, backward states after.
inline Tensor bigru_forward(const Tensor& x, const GruWeights& fwd, const GruWeights& bwd) {
  const Tensor f = gru_sequence(x, fwd, false);
  const Tensor b = gru_sequence(x, bwd, true);
  const std::size_t t = x.dim(0), hf = fwd.hidden_size(), hb = bwd.hidden_size();
  Tensor out({t, hf + hb});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = 0; j < hf; ++j) out(i, j) = f(i, j);
    for (std::size_t j = 0; j < hb; ++j) out(i, hf + j) = b(i, j);
  }
  return out;
}

}  // namespace marsail::nn
