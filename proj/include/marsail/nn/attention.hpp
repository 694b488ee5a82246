#pragma once

// Patch embedding, multi-head self-attention and the post-attention
// feed-forward block, with analytic backward passes.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"

namespace marsail::nn {

struct PatchConfig {
  std::size_t patch_size = 8;
  Tensor embedding;   // [(P*P*C) x d]
  Tensor positional;  // [N x d]
};

/// Row i is flatten(patch_i) * E + E_pos[i]; patches ordered row-major over
/// the patch grid, and each patch flattened as (row, col, channel).
inline Tensor patch_embed(const Tensor& image, const PatchConfig& cfg) {
  marsail::detail::require_rank(image, 3, "patch_embed image");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t p = cfg.patch_size;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError("patch_embed: H=" + std::to_string(h) + " W=" + std::to_string(w) +
                     " not divisible by P=" + std::to_string(p));
  }
  const std::size_t n = (h / p) * (w / p);
  const std::size_t flat = p * p * c;
  if (cfg.embedding.rank() != 2 || cfg.embedding.dim(0) != flat) {
    throw ShapeError("patch_embed: embedding must be [" + std::to_string(flat) + " x d], got " +
                     shape_string(cfg.embedding.shape()));
  }
  const std::size_t d = cfg.embedding.dim(1);
  if (cfg.positional.shape() != Shape{n, d}) {
    throw ShapeError("patch_embed: positional table must be [" + std::to_string(n) + " x " +
                     std::to_string(d) + "], got " + shape_string(cfg.positional.shape()));
  }
  Tensor patches({n, flat});
  std::size_t idx = 0;
  for (std::size_t py = 0; py < h / p; ++py) {
    for (std::size_t px = 0; px < w / p; ++px, ++idx) {
      std::size_t f = 0;
      for (std::size_t y = 0; y < p; ++y)
        for (std::size_t x = 0; x < p; ++x)
          for (std::size_t k = 0; k < c; ++k) patches(idx, f++) = image(py * p + y, px * p + x, k);
    }
  }
  return add(matmul(patches, cfg.embedding), cfg.positional);
}

/// Fixed sin/cos positional table; a convenience generator, the embedding
/// itself always adds whatever table the caller supplies.
inline Tensor sinusoidal_table(std::size_t n, std::size_t d) {
  Tensor t({n, d});
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      t(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return t;
}

/// Projections are fused over heads: head j reads columns [j*d_k, (j+1)*d_k)
/// of wq / wk / wv, and wo maps the concatenated heads back to C.
struct AttentionWeights {
  Tensor wq;  // [C x h*d_k]
  Tensor wk;  // [C x h*d_k]
  Tensor wv;  // [C x h*d_k]
  Tensor wo;  // [h*d_k x C]
  std::size_t heads = 1;

  std::size_t model_dim() const { return wq.dim(0); }
  std::size_t head_dim() const { return wq.dim(1) / heads; }

  void validate() const {
    if (heads < 1) throw ShapeError("attention: heads must be >= 1");
    if (wq.rank() != 2 || wk.shape() != wq.shape() || wv.shape() != wq.shape()) {
      throw ShapeError("attention: wq/wk/wv must share a [C x h*d_k] shape");
    }
    if (wq.dim(1) % heads != 0) throw ShapeError("attention: projection width not divisible by heads");
    if (wo.shape() != Shape{wq.dim(1), wq.dim(0)}) {
      throw ShapeError("attention: wo must be [h*d_k x C], got " + shape_string(wo.shape()));
    }
    if (!wq.all_finite() || !wk.all_finite() || !wv.all_finite() || !wo.all_finite()) {
      throw ShapeError("attention: non-finite weights");
    }
  }
};

struct AttentionCache {
  Tensor q, k, v;                 // [T x h*d_k]
  std::vector<Tensor> attention;  // per head [T x T]
  Tensor concat;                  // [T x h*d_k]
};

namespace detail {

inline Tensor head_slice(const Tensor& m, std::size_t head, std::size_t dk) {
  Tensor out({m.dim(0), dk});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < dk; ++j) out(i, j) = m(i, head * dk + j);
  return out;
}

inline void add_head_slice(Tensor& m, const Tensor& part, std::size_t head, std::size_t dk) {
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < dk; ++j) m(i, head * dk + j) += part(i, j);
}

}  // namespace detail

inline Tensor multi_head_attention(const Tensor& z, const AttentionWeights& w,
                                   AttentionCache* cache = nullptr) {
  w.validate();
  marsail::detail::require_rank(z, 2, "attention input");
  if (z.dim(1) != w.model_dim()) {
    throw ShapeError("attention: input " + shape_string(z.shape()) + " vs wq " +
                     shape_string(w.wq.shape()));
  }
  const std::size_t t = z.dim(0), dk = w.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionCache local;
  local.q = matmul(z, w.wq);
  local.k = matmul(z, w.wk);
  local.v = matmul(z, w.wv);
  local.concat = Tensor({t, w.wq.dim(1)});
  for (std::size_t h = 0; h < w.heads; ++h) {
    const Tensor qh = detail::head_slice(local.q, h, dk);
    const Tensor kh = detail::head_slice(local.k, h, dk);
    const Tensor vh = detail::head_slice(local.v, h, dk);
    Tensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    detail::add_head_slice(local.concat, matmul(a, vh), h, dk);
    local.attention.push_back(std::move(a));
  }
  Tensor out = matmul(local.concat, w.wo);
  if (cache) *cache = std::move(local);
  return out;
}

struct AttentionGrads {
  Tensor dz, dwq, dwk, dwv, dwo;
};

inline AttentionGrads multi_head_attention_backward(const Tensor& z, const AttentionWeights& w,
                                                    const AttentionCache& cache,
                                                    const Tensor& dout) {
  const std::size_t t = z.dim(0), dk = w.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  AttentionGrads g;
  g.dwo = matmul(transpose(cache.concat), dout);
  const Tensor dconcat = matmul(dout, transpose(w.wo));
  Tensor dq({t, w.wq.dim(1)}), dkm({t, w.wq.dim(1)}), dv({t, w.wq.dim(1)});
  for (std::size_t h = 0; h < w.heads; ++h) {
    const Tensor& a = cache.attention[h];
    const Tensor qh = detail::head_slice(cache.q, h, dk);
    const Tensor kh = detail::head_slice(cache.k, h, dk);
    const Tensor vh = detail::head_slice(cache.v, h, dk);
    const Tensor dh = detail::head_slice(dconcat, h, dk);
    const Tensor da = matmul(dh, transpose(vh));
    detail::add_head_slice(dv, matmul(transpose(a), dh), h, dk);
    Tensor ds({t, t});
    for (std::size_t i = 0; i < t; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) dot += da(i, j) * a(i, j);
      for (std::size_t j = 0; j < t; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot) * inv_sqrt;
    }
    detail::add_head_slice(dq, matmul(ds, kh), h, dk);
    detail::add_head_slice(dkm, matmul(transpose(ds), qh), h, dk);
  }
  const Tensor zt = transpose(z);
  g.dwq = matmul(zt, dq);
  g.dwk = matmul(zt, dkm);
  g.dwv = matmul(zt, dv);
  g.dz = add(add(matmul(dq, transpose(w.wq)), matmul(dkm, transpose(w.wk))),
             matmul(dv, transpose(w.wv)));
  return g;
}

/// Two-layer ReLU MLP used as the residual refinement after attention.
struct FfnWeights {
  Tensor w1;  // [C x F]
  Tensor b1;  // [F]
  Tensor w2;  // [F x C]
  Tensor b2;  // [C]

  void validate(std::size_t c) const {
    if (w1.rank() != 2 || w1.dim(0) != c || b1.size() != w1.dim(1) ||
        w2.shape() != Shape{w1.dim(1), c} || b2.size() != c) {
      throw ShapeError("ffn: inconsistent weights for model dim " + std::to_string(c) + " (w1 " +
                       shape_string(w1.shape()) + ", w2 " + shape_string(w2.shape()) + ")");
    }
  }
};

struct FfnCache {
  Tensor hidden_pre;  // Z W1 + b1
  Tensor residual;    // Z + FFN(Z), the layer-norm input
};

/// LayerNorm(Z + relu(Z W1 + b1) W2 + b2).
inline Tensor ffn_block(const Tensor& z, const FfnWeights& w, double eps = kLayerNormEps,
                        FfnCache* cache = nullptr) {
  marsail::detail::require_rank(z, 2, "ffn input");
  w.validate(z.dim(1));
  Tensor pre = add_row_bias(matmul(z, w.w1), w.b1);
  Tensor res = add(z, add_row_bias(matmul(relu(pre), w.w2), w.b2));
  Tensor out = layer_norm(res, eps);
  if (cache) *cache = FfnCache{std::move(pre), std::move(res)};
  return out;
}

struct FfnGrads {
  Tensor dz, dw1, db1, dw2, db2;
};

inline FfnGrads ffn_block_backward(const Tensor& z, const FfnWeights& w, const FfnCache& cache,
                                   const Tensor& dout, double eps = kLayerNormEps) {
  FfnGrads g;
  const Tensor dres = layer_norm_backward(cache.residual, dout, eps);
  const Tensor hidden = relu(cache.hidden_pre);
  g.dw2 = matmul(transpose(hidden), dres);
  g.db2 = Tensor({w.b2.size()});
  for (std::size_t i = 0; i < dres.dim(0); ++i)
    for (std::size_t j = 0; j < dres.dim(1); ++j) g.db2[j] += dres(i, j);
  Tensor dpre = matmul(dres, transpose(w.w2));
  for (std::size_t i = 0; i < dpre.size(); ++i)
    if (!(cache.hidden_pre[i] > 0.0)) dpre[i] = 0.0;
  g.dw1 = matmul(transpose(z), dpre);
  g.db1 = Tensor({w.b1.size()});
  for (std::size_t i = 0; i < dpre.dim(0); ++i)
    for (std::size_t j = 0; j < dpre.dim(1); ++j) g.db1[j] += dpre(i, j);
  g.dz = add(dres, matmul(dpre, transpose(w.w1)));
  return g;
}

/// One encoder layer: Z' = MHA(Z), Z'' = LayerNorm(Z' + FFN(Z')).
inline Tensor encoder_layer(const Tensor& z, const AttentionWeights& attn, const FfnWeights& ffn) {
  return ffn_block(multi_head_attention(z, attn), ffn);
}

}  // namespace marsail::nn
