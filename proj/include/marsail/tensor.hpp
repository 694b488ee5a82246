#pragma once

// Dense row-major tensor of doubles plus the handful of math kernels the
// rest of the library is built on. Every kernel sums in a fixed order so
// results are bit-reproducible run to run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "marsail/error.hpp"

namespace marsail {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    validate_extents();
    data_.assign(count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_extents();
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  /// Builds a rank-2 tensor from nested rows.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = 0;
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (r == 0) cols = row.size();
      if (row.size() != cols) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
      ++r;
    }
    return Tensor({r, cols}, std::move(data));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<double> row(std::size_t i) {
    const std::size_t w = row_width();
    return std::span<double>(data_).subspan(i * w, w);
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t w = row_width();
    return std::span<const double>(data_).subspan(i * w, w);
  }

  /// Number of rows when viewed as [rows x last-extent].
  std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
  std::size_t row_width() const { return shape_.empty() ? 0 : shape_.back(); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  void validate_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

/// a[m x k] * b[k x n]. Inner sum runs left to right over k.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  Tensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

/// Adds a length-n bias to every row of an [m x n] tensor.
inline Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.size() != a.dim(1)) {
    throw ShapeError("add_row_bias: " + shape_string(a.shape()) + " with bias " +
                     shape_string(bias.shape()));
  }
  Tensor out = a;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out(i, j) += bias[j];
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = sigmoid(v);
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::max(0.0, v);
  return out;
}

inline void softmax_inplace(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  Tensor out = x;
  for (std::size_t i = 0; i < out.dim(0); ++i) softmax_inplace(out.row(i));
  return out;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  softmax_inplace(out.data());
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row over the last axis to zero mean and unit variance.
inline Tensor layer_norm(const Tensor& x, double eps = kLayerNormEps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: empty tensor");
  if (!(eps > 0.0)) throw Error("layer_norm: eps must be positive");
  Tensor out = x;
  const std::size_t d = x.row_width();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (double& v : row) v = (v - mean) * inv;
  }
  return out;
}

/// Backward pass of layer_norm for one row: given input row x and upstream
/// gradient dy, returns dx.
inline std::vector<double> layer_norm_row_backward(std::span<const double> x,
                                                   std::span<const double> dy,
                                                   double eps = kLayerNormEps) {
  const std::size_t d = x.size();
  const double n = static_cast<double>(d);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + eps);
  double sum_dy = 0.0, sum_dy_xhat = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * inv;
    sum_dy += dy[i];
    sum_dy_xhat += dy[i] * xhat;
  }
  std::vector<double> dx(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * inv;
    dx[i] = inv * (dy[i] - sum_dy / n - xhat * sum_dy_xhat / n);
  }
  return dx;
}

inline Tensor layer_norm_backward(const Tensor& x, const Tensor& dy, double eps = kLayerNormEps) {
  detail::require_same_shape(x, dy, "layer_norm_backward");
  Tensor dx = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto g = layer_norm_row_backward(x.row(r), dy.row(r), eps);
    std::copy(g.begin(), g.end(), dx.row(r).begin());
  }
  return dx;
}

}  // namespace marsail
