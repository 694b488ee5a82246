#pragma once

// Training objectives: CTC (forward-backward DP plus an enumeration oracle),
// focal CTC, mask BCE and dice, cross-entropy, the part/damage consistency
// penalty and the weighted composites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/tensor.hpp"
#include "marsail/vdc.hpp"

namespace marsail::losses {

inline constexpr double kProbFloor = 1e-12;
inline const double kLogProbFloor = std::log(kProbFloor);
/// Row-sum slack for normalized inputs; wide enough for float32 storage.
inline constexpr double kRowSumTolerance = 1e-6;

inline double log_sum_exp(double a, double b) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Blank is label 0; targets use labels 1..A.
struct CtcProblem {
  Tensor log_probs;  // [T x (A+1)]
  std::vector<std::size_t> target;

  std::size_t steps() const { return log_probs.dim(0); }
  std::size_t alphabet() const { return log_probs.dim(1) - 1; }

  /// Shape and label checks. With `normalized`, each row must exponentiate
  /// to a distribution (within kRowSumTolerance).
  void validate(bool normalized = true) const {
    if (log_probs.rank() != 2 || log_probs.dim(1) < 2) {
      throw ShapeError("ctc: log_probs must be [T x (A+1)] with A >= 1, got " +
                       shape_string(log_probs.shape()));
    }
    for (std::size_t l : target) {
      if (l == 0 || l > alphabet()) {
        throw InputError("ctc: target label " + std::to_string(l) + " outside 1.." +
                         std::to_string(alphabet()));
      }
    }
    if (!log_probs.all_finite()) throw InputError("ctc: non-finite log-probability");
    if (normalized) {
      for (std::size_t t = 0; t < steps(); ++t) {
        double s = 0.0;
        for (double v : log_probs.row(t)) s += std::exp(v);
        if (std::abs(s - 1.0) > kRowSumTolerance) {
          throw InputError("ctc: row " + std::to_string(t) + " probabilities sum to " +
                           std::to_string(s));
        }
      }
    }
  }
};

/// Minimum number of steps any alignment of `target` needs.
inline std::size_t ctc_min_steps(const std::vector<std::size_t>& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1] ? 1 : 0;
  return n;
}

inline void require_feasible(const CtcProblem& p) {
  const std::size_t need = ctc_min_steps(p.target);
  if (need > p.steps()) {
    throw InfeasibleError("ctc: target needs at least " + std::to_string(need) +
                          " steps, only " + std::to_string(p.steps()) + " available");
  }
}

/// Removes adjacent repeats, then blanks.
inline std::vector<std::size_t> ctc_collapse(const std::vector<std::size_t>& path) {
  std::vector<std::size_t> out;
  std::size_t prev = 0;
  for (std::size_t k : path) {
    if (k != 0 && k != prev) out.push_back(k);
    prev = k;
  }
  return out;
}

struct CtcResult {
  double nll = 0.0;
  Tensor grad;  // d nll / d log_probs; empty unless requested
};

namespace detail {

inline double floored(double lp) { return std::max(lp, kLogProbFloor); }

inline CtcResult ctc_forward_backward(const CtcProblem& p, bool with_grad) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const std::size_t T = p.steps();
  const std::size_t S = 2 * p.target.size() + 1;
  std::vector<std::size_t> ext(S, 0);
  for (std::size_t i = 0; i < p.target.size(); ++i) ext[2 * i + 1] = p.target[i];
  auto lp = [&](std::size_t t, std::size_t s) { return floored(p.log_probs(t, ext[s])); };
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kNegInf);
  alpha[0] = lp(0, 0);
  if (S > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_sum_exp(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_sum_exp(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  double log_total = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_total = log_sum_exp(log_total, alpha[(T - 1) * S + S - 2]);
  if (!std::isfinite(log_total)) throw InfeasibleError("ctc: no alignment has nonzero mass");

  CtcResult r{-log_total, Tensor()};
  if (!with_grad) return r;

  std::vector<double> beta(T * S, kNegInf);
  beta[(T - 1) * S + S - 1] = lp(T - 1, S - 1);
  if (S > 1) beta[(T - 1) * S + S - 2] = lp(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_sum_exp(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(s + 2)) b = log_sum_exp(b, beta[(t + 1) * S + s + 2]);
      beta[t * S + s] = b == kNegInf ? kNegInf : b + lp(t, s);
    }
  }
  r.grad = Tensor(p.log_probs.shape());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const double a = alpha[t * S + s], b = beta[t * S + s];
      if (a == kNegInf || b == kNegInf) continue;
      const std::size_t k = ext[s];
      // Clamped entries are locally constant.
      if (p.log_probs(t, k) < kLogProbFloor) continue;
      r.grad(t, k) -= std::exp(a + b - lp(t, s) - log_total);
    }
  }
  return r;
}

}  // namespace detail

/// -log P(target | log_probs) by the blank-interleaved log-space DP.
inline double ctc_neg_log_likelihood(const CtcProblem& p) {
  p.validate();
  require_feasible(p);
  return detail::ctc_forward_backward(p, false).nll;
}

/// Value and gradient with respect to log_probs. Rows need not be
/// normalized, which lets finite differences perturb entries freely.
inline CtcResult ctc_loss_and_grad(const CtcProblem& p) {
  p.validate(false);
  require_feasible(p);
  return detail::ctc_forward_backward(p, true);
}

inline constexpr std::size_t kCtcBruteMaxSteps = 10;
inline constexpr double kCtcBruteMaxPaths = 1e7;

/// Sums the probability of every path whose collapse equals the target.
inline double ctc_brute_force(const CtcProblem& p) {
  p.validate();
  require_feasible(p);
  const std::size_t T = p.steps(), K = p.alphabet() + 1;
  if (T > kCtcBruteMaxSteps || std::pow(static_cast<double>(K), static_cast<double>(T)) > kCtcBruteMaxPaths) {
    throw SizeLimitError("ctc_brute_force: refuses T=" + std::to_string(T) + ", A+1=" +
                         std::to_string(K) + " (limits T <= 10, (A+1)^T <= 1e7)");
  }
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    if (ctc_collapse(path) == p.target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += detail::floored(p.log_probs(t, path[t]));
      total += std::exp(lp);
    }
    std::size_t t = T;
    while (t > 0) {
      --t;
      if (++path[t] < K) break;
      path[t] = 0;
      if (t == 0) return -std::log(total);
    }
  }
}

struct FocalCtcConfig {
  double gamma = 2.0;

  void validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("focal ctc: gamma must be >= 0");
  }
};

struct FocalCtcResult {
  double loss = 0.0;
  double p_t = 0.0;
  double factor = 1.0;  // (1 - p_t)^gamma
};

/// Mean over steps of the largest per-step probability.
inline double ctc_confidence(const Tensor& log_probs) {
  double acc = 0.0;
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    const auto row = log_probs.row(t);
    acc += std::exp(*std::max_element(row.begin(), row.end()));
  }
  return acc / static_cast<double>(log_probs.dim(0));
}

inline FocalCtcResult focal_ctc_loss(const CtcProblem& p, const FocalCtcConfig& cfg) {
  cfg.validate();
  const double l = ctc_neg_log_likelihood(p);
  const double pt = ctc_confidence(p.log_probs);
  const double factor = std::pow(1.0 - pt, cfg.gamma);
  return {factor * l, pt, factor};
}

/// Gradient with the focal factor held constant: factor * d L_CTC.
inline Tensor focal_ctc_grad(const CtcProblem& p, const FocalCtcConfig& cfg) {
  cfg.validate();
  const double factor = std::pow(1.0 - ctc_confidence(p.log_probs), cfg.gamma);
  return scale(ctc_loss_and_grad(p).grad, factor);
}

namespace detail {

inline void require_binary(const Tensor& gt, const char* what) {
  for (double v : gt.data()) {
    if (v != 0.0 && v != 1.0) throw InputError(std::string(what) + ": ground truth must be 0/1");
  }
}

inline void require_unit_interval(const Tensor& p, const char* what) {
  for (double v : p.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError(std::string(what) + ": prediction outside [0, 1]");
  }
}

inline double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

}  // namespace detail

/// Pixel-mean binary cross-entropy.
inline double bce_mask_loss(const Tensor& pred, const Tensor& gt) {
  marsail::detail::require_same_shape(pred, gt, "bce_mask_loss");
  detail::require_unit_interval(pred, "bce_mask_loss");
  detail::require_binary(gt, "bce_mask_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = detail::clamp_prob(pred[i]);
    acc -= gt[i] * std::log(p) + (1.0 - gt[i]) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(pred.size());
}

inline Tensor bce_mask_grad(const Tensor& pred, const Tensor& gt) {
  marsail::detail::require_same_shape(pred, gt, "bce_mask_grad");
  const double n = static_cast<double>(pred.size());
  Tensor g(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = detail::clamp_prob(pred[i]);
    g[i] = (-gt[i] / p + (1.0 - gt[i]) / (1.0 - p)) / n;
  }
  return g;
}

/// 1 - 2 sum(p g) / (sum p + sum g); two empty masks give 0.
inline double dice_loss(const Tensor& pred, const Tensor& gt) {
  marsail::detail::require_same_shape(pred, gt, "dice_loss");
  detail::require_unit_interval(pred, "dice_loss");
  detail::require_binary(gt, "dice_loss");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  if (sp + sg == 0.0) return 0.0;
  return 1.0 - 2.0 * inter / (sp + sg);
}

inline Tensor dice_grad(const Tensor& pred, const Tensor& gt) {
  marsail::detail::require_same_shape(pred, gt, "dice_grad");
  double inter = 0.0, s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    s += pred[i] + gt[i];
  }
  Tensor g(pred.shape());
  if (s == 0.0) return g;
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = -2.0 * (gt[i] * s - inter) / (s * s);
  return g;
}

/// -log probs[target], floored at -log(1e-12).
inline double cross_entropy_loss(const Tensor& probs, std::size_t target) {
  if (probs.rank() != 1) throw ShapeError("cross_entropy_loss: probs must be rank 1");
  if (target >= probs.size()) {
    throw InputError("cross_entropy_loss: target " + std::to_string(target) + " outside 0.." +
                     std::to_string(probs.size() - 1));
  }
  double s = 0.0;
  for (double v : probs.data()) {
    if (!(v >= 0.0)) throw InputError("cross_entropy_loss: negative probability");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw InputError("cross_entropy_loss: probabilities do not sum to 1");
  return -std::log(std::max(probs[target], kProbFloor));
}

/// Cross-entropy of softmax(logits) and its gradient (softmax - onehot).
inline std::pair<double, Tensor> softmax_cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1) throw ShapeError("softmax_cross_entropy: logits must be rank 1");
  if (target >= logits.size()) throw InputError("softmax_cross_entropy: invalid target index");
  Tensor g = softmax(logits);
  const double loss = -std::log(std::max(g[target], kProbFloor));
  g[target] -= 1.0;
  return {loss, g};
}

using PartDamagePair = std::pair<std::string, std::string>;

/// gamma_pen times the number of invalid (part, damage) pairs.
inline double consistency_penalty(const std::vector<PartDamagePair>& pairs,
                                  const vdc::CompatibilityTable& compat, double gamma_pen) {
  if (!(gamma_pen >= 0.0)) throw ConfigError("consistency_penalty: gamma_pen must be >= 0");
  std::size_t invalid = 0;
  for (const auto& [part, damage] : pairs) invalid += compat.is_valid(part, damage) ? 0 : 1;
  return gamma_pen * static_cast<double>(invalid);
}

enum class LossScheme { kMars4, kAlbert4, kAppendix6 };

inline const std::vector<std::string>& scheme_terms(LossScheme s) {
  static const std::vector<std::string> mars{"detect", "coarse", "refine", "inc"};
  static const std::vector<std::string> albert{"mask", "damage", "part", "fake"};
  static const std::vector<std::string> appendix{"mask", "dice", "part", "damage", "cons", "poly"};
  switch (s) {
    case LossScheme::kMars4: return mars;
    case LossScheme::kAlbert4: return albert;
    case LossScheme::kAppendix6: return appendix;
  }
  throw ConfigError("unknown loss scheme");
}

inline const char* scheme_name(LossScheme s) {
  switch (s) {
    case LossScheme::kMars4: return "mars4";
    case LossScheme::kAlbert4: return "albert4";
    case LossScheme::kAppendix6: return "appendix6";
  }
  return "?";
}

inline LossScheme parse_scheme(std::string_view name) {
  if (name == "mars4") return LossScheme::kMars4;
  if (name == "albert4") return LossScheme::kAlbert4;
  if (name == "appendix6") return LossScheme::kAppendix6;
  throw ConfigError("unknown loss scheme '" + std::string(name) + "'");
}

/// Named coefficients; term names follow scheme_terms().
struct LossWeights {
  std::map<std::string, double> lambda;

  static LossWeights defaults(LossScheme s) {
    LossWeights w;
    if (s == LossScheme::kMars4) {
      w.lambda = {{"detect", 0.75}, {"coarse", 0.75}, {"refine", 0.8}, {"inc", 0.5}};
    } else {
      for (const auto& t : scheme_terms(s)) w.lambda[t] = 1.0;
    }
    return w;
  }

  void validate(LossScheme s) const {
    for (const auto& t : scheme_terms(s)) {
      auto it = lambda.find(t);
      if (it == lambda.end()) throw ConfigError(std::string("loss weights: missing lambda for '") + t + "'");
      if (!(it->second >= 0.0) || !std::isfinite(it->second)) {
        throw ConfigError(std::string("loss weights: lambda for '") + t + "' must be >= 0");
      }
    }
  }
};

/// Sum of lambda_i * term_i in scheme order.
inline double composite_loss(const std::map<std::string, double>& terms, LossScheme scheme,
                             const LossWeights& w) {
  w.validate(scheme);
  double total = 0.0;
  for (const auto& name : scheme_terms(scheme)) {
    auto it = terms.find(name);
    if (it == terms.end()) {
      throw InputError(std::string("composite_loss: ") + scheme_name(scheme) + " requires term '" +
                       name + "'");
    }
    total += w.lambda.at(name) * it->second;
  }
  return total;
}

}  // namespace marsail::losses
