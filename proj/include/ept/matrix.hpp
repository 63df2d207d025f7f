#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ept/errors.hpp"

namespace ept {

/// Dense row-major matrix of doubles.
///
/// A default-constructed matrix is the empty 0x0 placeholder; every matrix
/// built from explicit dimensions has rows >= 1 and cols >= 1.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be >= 1, got " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0 || data_.size() != rows * cols) {
      throw ShapeError("matrix data of length " + std::to_string(data_.size()) +
                       " does not fit " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix literal must be non-empty");
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix column(std::span<const double> v) {
    return Matrix(v.size(), 1, std::vector<double>(v.begin(), v.end()));
  }

  static Matrix row(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Element-wise exact equality (bitwise for finite values, -0 == +0).
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("cannot compare " + a.shape() + " with " + b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool all_zero(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return v == 0.0; });
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// c = a * b. Each entry accumulates a(i,r) * b(r,j) in ascending r.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape() + " * " + b.shape());
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* crow = c.row_span(i).data();
    for (std::size_t r = 0; r < a.cols(); ++r) {
      const double av = a(i, r);
      const double* brow = b.row_span(r).data();
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// c = a * b^T, ascending summation over the shared dimension.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt shape mismatch: " + a.shape() + " * (" + b.shape() + ")^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_span(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_span(j).data();
      double acc = 0.0;
      for (std::size_t r = 0; r < a.cols(); ++r) acc += arow[r] * brow[r];
      c(i, j) = acc;
    }
  }
  return c;
}

/// c = a^T * b, ascending summation over the shared dimension.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn shape mismatch: (" + a.shape() + ")^T * " + b.shape());
  }
  Matrix c(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double* arow = a.row_span(r).data();
    const double* brow = b.row_span(r).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = arow[i];
      double* crow = c.row_span(i).data();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// y = m * x for a column vector x given as a span.
inline std::vector<double> matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) {
    throw ShapeError("matvec shape mismatch: " + m.shape() + " * " + std::to_string(x.size()));
  }
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m.cols(); ++r) acc += m(i, r) * x[r];
    y[i] = acc;
  }
  return y;
}

/// Top-left rows x cols block of m.
inline Matrix crop(const Matrix& m, std::size_t rows, std::size_t cols) {
  if (rows > m.rows() || cols > m.cols()) {
    throw ShapeError("cannot crop " + m.shape() + " to " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = m(i, j);
  return out;
}

/// Kronecker product z (x) k.
inline Matrix kronecker(const Matrix& z, const Matrix& k) {
  Matrix out(z.rows() * k.rows(), z.cols() * k.cols());
  for (std::size_t a = 0; a < z.rows(); ++a)
    for (std::size_t b = 0; b < z.cols(); ++b)
      for (std::size_t p = 0; p < k.rows(); ++p)
        for (std::size_t q = 0; q < k.cols(); ++q) out(a * k.rows() + p, b * k.cols() + q) = z(a, b) * k(p, q);
  return out;
}

/// Transposed 2-D convolution of a single-channel map with a square kernel.
///
/// Every input element z(a,b) scatters z(a,b) * k into the block anchored at
/// (a*stride, b*stride); overlapping contributions are summed in row-major
/// input order.
inline Matrix transposed_conv2d(const Matrix& z, const Matrix& k, std::size_t stride) {
  if (k.rows() != k.cols()) throw ShapeError("transposed_conv2d needs a square kernel, got " + k.shape());
  if (stride == 0) throw ParameterError("transposed_conv2d stride must be >= 1");
  const std::size_t s = k.rows();
  // Non-overlapping blocks: the scatter reduces to a Kronecker expansion.
  if (stride == s) return kronecker(z, k);
  Matrix out((z.rows() - 1) * stride + s, (z.cols() - 1) * stride + s);
  for (std::size_t a = 0; a < z.rows(); ++a) {
    for (std::size_t b = 0; b < z.cols(); ++b) {
      const double zv = z(a, b);
      for (std::size_t p = 0; p < s; ++p)
        for (std::size_t q = 0; q < s; ++q) out(a * stride + p, b * stride + q) += zv * k(p, q);
    }
  }
  return out;
}

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

/// Softmax of v / tau with the max-shift applied before exponentiation.
inline std::vector<double> softmax_temp(std::span<const double> v, double tau) {
  if (!(tau > 0.0)) throw ParameterError("softmax temperature must be > 0");
  if (v.empty()) throw ShapeError("softmax of an empty vector");
  check_finite(v, "softmax input");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> p(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp((v[i] - mx) / tau);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

/// log-sum-exp with the max-shift.
inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += std::exp(x - mx);
  return mx + std::log(total);
}

/// -log softmax(logits)[target].
inline double cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("cross_entropy target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  check_finite(logits, "cross_entropy logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - mx);
  return std::max(0.0, std::log(total) - (logits[target] - mx));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace ept
