#pragma once

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

#include "vtc/error.hpp"
#include "vtc/rng.hpp"

namespace vtc {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major f64 tensor. No strides, no broadcasting: every op takes
/// exactly shaped operands and returns a fresh value.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(checked_count(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_count(shape_)) {
      throw ShapeError("tensor of shape " + shape_str(shape_) + " needs " +
                       std::to_string(shape_count(shape_)) + " elements, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  /// Uniform in [lo, hi) drawn in row-major order.
  static Tensor uniform(Shape shape, SplitMix64& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& r : rows) {
      if (r.size() != n) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({m, n}, std::move(data));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same elements, new extents. Element sequence is untouched.
  Tensor reshape(Shape shape) const {
    if (checked_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  /// Rows [begin, end) of the leading axis.
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    if (rank() == 0 || begin > end || end > shape_[0]) {
      throw ShapeError("row slice [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") out of range for " + shape_str(shape_));
    }
    const std::size_t stride = data_.size() / shape_[0];
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t checked_count(const Shape& s) {
    for (std::size_t e : s) {
      if (e == 0) throw ShapeError("zero extent in shape " + shape_str(s));
    }
    return shape_count(s);
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
  }
}

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same(a, b, op);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

}  // namespace detail

/// c[i][j] = sum_t a[i][t] * b[t][j], accumulated in ascending t. The i-t-j
/// loop order performs the same additions per output element in the same
/// sequence as the textbook triple loop, so results are bit-identical to it.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor c({m, n});
  const auto A = a.data();
  const auto B = b.data();
  auto C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C.data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = A[i * k + t];
      const double* brow = B.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out(i, j) = std::exp(x(i, j) - mx);
      sum += out(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) out(i, j) /= sum;
  }
  return out;
}

inline Tensor transpose2d(const Tensor& x) {
  detail::require_rank(x, 2, "transpose2d");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = x(i, j);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
  return detail::zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::map(a, [s](double x) { return x * s; });
}

/// The one gelu used throughout the repo (tanh approximation):
///   0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline double gelu(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + 0.044715 * x * x * x)));
}

inline Tensor gelu(const Tensor& x) {
  return detail::map(x, [](double v) { return gelu(v); });
}

/// Adds a 1×n (or n) row vector to every row of an m×n matrix. This is the
/// single place a bias is broadcast; there is no implicit broadcasting.
inline Tensor add_row(const Tensor& x, const Tensor& row) {
  detail::require_rank(x, 2, "add_row");
  if (row.size() != x.dim(1)) {
    throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  Tensor out = x;
  const std::size_t n = x.dim(1);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += row[j];
  return out;
}

/// Repeats a 1×n row m times.
inline Tensor expand_rows(const Tensor& row, std::size_t m) {
  Tensor out({m, row.size()});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(row.data().begin(), row.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * row.size()));
  return out;
}

/// Stacks two matrices along the leading axis.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "concat_rows");
  detail::require_rank(b, 2, "concat_rows");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_rows: width mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<double> data(a.values());
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor({a.dim(0) + b.dim(0), a.dim(1)}, std::move(data));
}

/// Columns [begin, end) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  if (begin >= end || end > x.dim(1)) throw ShapeError("slice_cols: bad range for " + shape_str(x.shape()));
  Tensor out({x.dim(0), end - begin});
  for (std::size_t i = 0; i < x.dim(0); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
  return out;
}

/// Writes `src` into columns [begin, begin + src.cols) of `dst`.
inline void assign_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  if (src.dim(0) != dst.dim(0) || begin + src.dim(1) > dst.dim(1)) {
    throw ShapeError("assign_cols: " + shape_str(src.shape()) + " does not fit " + shape_str(dst.shape()));
  }
  for (std::size_t i = 0; i < src.dim(0); ++i)
    for (std::size_t j = 0; j < src.dim(1); ++j) dst(i, begin + j) = src(i, j);
}

/// Per-row layer norm; gamma/beta may be empty for the parameter-free form.
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {},
                              double eps = 1e-5) {
  detail::require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      double v = (x(i, j) - mean) * inv;
      if (!gamma.empty()) v = v * gamma[j] + beta[j];
      out(i, j) = v;
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  detail::require_same(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace vtc
