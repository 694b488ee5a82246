#pragma once

// CTC greedy and prefix beam decoding; linear-chain CRF Viterbi with an
// exhaustive oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "marsail/error.hpp"
#include "marsail/losses.hpp"
#include "marsail/tensor.hpp"

namespace marsail::decode {

using Labels = std::vector<std::size_t>;

inline void require_log_probs(const Tensor& lp, const char* what) {
  if (lp.rank() != 2 || lp.dim(1) < 2) {
    throw ShapeError(std::string(what) + ": log_probs must be [T x (A+1)], got " +
                     shape_string(lp.shape()));
  }
  if (!lp.all_finite()) throw InputError(std::string(what) + ": non-finite log-probability");
}

/// Per-step argmax (lowest index on ties), then collapse.
inline Labels ctc_greedy_decode(const Tensor& log_probs) {
  require_log_probs(log_probs, "ctc_greedy_decode");
  Labels path;
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    const auto row = log_probs.row(t);
    path.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return losses::ctc_collapse(path);
}

struct BeamConfig {
  std::size_t beam_width = 8;
  /// Symbols whose log-probability at a step falls below this are skipped.
  double prune_log_threshold = -std::numeric_limits<double>::infinity();

  void validate() const {
    if (beam_width < 1) throw ConfigError("beam search: beam_width must be >= 1");
    if (std::isnan(prune_log_threshold)) throw ConfigError("beam search: prune threshold is NaN");
  }
};

struct Hypothesis {
  Labels labels;
  double log_prob = 0.0;
};

/// Prefix beam search in log space. Each surviving labeling is reported
/// with its exact CTC log-probability, sorted descending (ties by
/// lexicographic label order).
inline std::vector<Hypothesis> ctc_beam_search(const Tensor& log_probs, const BeamConfig& cfg) {
  require_log_probs(log_probs, "ctc_beam_search");
  cfg.validate();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  struct Mass {
    double blank = kNegInf;
    double label = kNegInf;
    double total() const { return losses::log_sum_exp(blank, label); }
  };
  using Beam = std::map<Labels, Mass>;
  auto lp = [&](std::size_t t, std::size_t k) { return std::max(log_probs(t, k), losses::kLogProbFloor); };

  Beam beam;
  beam[Labels{}].blank = 0.0;
  const std::size_t K = log_probs.dim(1);
  for (std::size_t t = 0; t < log_probs.dim(0); ++t) {
    Beam next;
    for (const auto& [prefix, m] : beam) {
      for (std::size_t k = 0; k < K; ++k) {
        const double p = lp(t, k);
        if (p < cfg.prune_log_threshold) continue;
        if (k == 0) {
          Mass& dst = next[prefix];
          dst.blank = losses::log_sum_exp(dst.blank, m.total() + p);
          continue;
        }
        Labels extended = prefix;
        extended.push_back(k);
        Mass& dst = next[extended];
        if (!prefix.empty() && prefix.back() == k) {
          dst.label = losses::log_sum_exp(dst.label, m.blank + p);
          Mass& same = next[prefix];
          same.label = losses::log_sum_exp(same.label, m.label + p);
        } else {
          dst.label = losses::log_sum_exp(dst.label, m.total() + p);
        }
      }
    }
    std::vector<std::pair<Labels, Mass>> ranked(next.begin(), next.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second.total() > b.second.total();
    });
    if (ranked.size() > cfg.beam_width) ranked.resize(cfg.beam_width);
    beam = Beam(ranked.begin(), ranked.end());
  }

  // Surviving prefixes are rescored with the full forward pass: the beam
  // mass only counts paths that escaped pruning.
  std::vector<Hypothesis> out;
  for (const auto& [prefix, m] : beam) {
    if (m.total() == kNegInf) continue;
    out.push_back({prefix, -losses::detail::ctc_forward_backward({log_probs, prefix}, false).nll});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
  return out;
}

/// Log-domain potentials of a position-independent linear chain.
struct CrfModel {
  Tensor unary;     // [T x L]
  Tensor pairwise;  // [L x L], pairwise(a, b) scores a followed by b

  std::size_t steps() const { return unary.dim(0); }
  std::size_t labels() const { return unary.dim(1); }

  void validate() const {
    if (unary.rank() != 2 || pairwise.rank() != 2 || pairwise.dim(0) != unary.dim(1) ||
        pairwise.dim(1) != unary.dim(1)) {
      throw ShapeError("crf: unary " + shape_string(unary.shape()) + " and pairwise " +
                       shape_string(pairwise.shape()) + " are incompatible");
    }
    if (!unary.all_finite() || !pairwise.all_finite()) throw InputError("crf: non-finite potential");
  }
};

/// Sum of unary and pairwise scores along `y`, accumulated left to right.
inline double crf_score(const CrfModel& m, const Labels& y) {
  if (y.size() != m.steps()) throw ShapeError("crf_score: label count differs from T");
  double s = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += m.unary(t, y[t]);
    if (t + 1 < y.size()) s += m.pairwise(y[t], y[t + 1]);
  }
  return s;
}

struct CrfResult {
  Labels labels;
  double score = 0.0;
};

/// Highest-scoring labeling; the lexicographically smallest among ties.
inline CrfResult crf_viterbi(const CrfModel& m) {
  m.validate();
  const std::size_t T = m.steps(), L = m.labels();
  // best[t][y]: best score of positions t..T-1 given y_t = y.
  std::vector<double> best(T * L);
  for (std::size_t y = 0; y < L; ++y) best[(T - 1) * L + y] = m.unary(T - 1, y);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t y = 0; y < L; ++y) {
      double b = -std::numeric_limits<double>::infinity();
      for (std::size_t z = 0; z < L; ++z) b = std::max(b, m.pairwise(y, z) + best[(t + 1) * L + z]);
      best[t * L + y] = m.unary(t, y) + b;
    }
  }
  CrfResult r;
  std::size_t y = 0;
  for (std::size_t c = 1; c < L; ++c)
    if (best[c] > best[y]) y = c;
  r.labels.push_back(y);
  for (std::size_t t = 1; t < T; ++t) {
    std::size_t z = 0;
    for (std::size_t c = 1; c < L; ++c) {
      if (m.pairwise(y, c) + best[t * L + c] > m.pairwise(y, z) + best[t * L + z]) z = c;
    }
    r.labels.push_back(z);
    y = z;
  }
  r.score = crf_score(m, r.labels);
  return r;
}

inline constexpr double kCrfBruteMaxSequences = 1e6;

/// Enumerates all L^T labelings in lexicographic order.
inline CrfResult crf_brute_force(const CrfModel& m) {
  m.validate();
  const std::size_t T = m.steps(), L = m.labels();
  if (std::pow(static_cast<double>(L), static_cast<double>(T)) > kCrfBruteMaxSequences) {
    throw SizeLimitError("crf_brute_force: L^T = " + std::to_string(L) + "^" + std::to_string(T) +
                         " exceeds 1e6");
  }
  Labels y(T, 0);
  CrfResult r{y, crf_score(m, y)};
  while (true) {
    std::size_t t = T;
    bool done = true;
    while (t > 0) {
      --t;
      if (++y[t] < L) {
        done = false;
        break;
      }
      y[t] = 0;
    }
    if (done) return r;
    const double s = crf_score(m, y);
    if (s > r.score) r = {y, s};
  }
}

/// Maps labels 1..A to characters of `alphabet`.
inline std::string labels_to_text(const Labels& labels, const std::string& alphabet) {
  std::string s;
  for (std::size_t l : labels) {
    if (l == 0 || l > alphabet.size()) throw InputError("label " + std::to_string(l) + " outside alphabet");
    s.push_back(alphabet[l - 1]);
  }
  return s;
}

inline Labels text_to_labels(const std::string& text, const std::string& alphabet) {
  Labels out;
  for (char c : text) {
    const auto pos = alphabet.find(c);
    if (pos == std::string::npos) throw InputError(std::string("character '") + c + "' not in alphabet");
    out.push_back(pos + 1);
  }
  return out;
}

}  // namespace marsail::decode
