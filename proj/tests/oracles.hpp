#pragma once

// Reference implementations used only by the tests. Each one is written
// differently from the library routine it checks (gather instead of scatter,
// explicit loops instead of shared helpers) so the two cannot share a bug.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "ept/matrix.hpp"

namespace oracle {

using ept::Matrix;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

/// c[i][j] = sum_r a[i][r] * b[r][j], r ascending.
inline Matrix triple_loop_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < a.cols(); ++r) acc += a(i, r) * b(r, j);
      c(i, j) = acc;
    }
  return c;
}

/// Transposed convolution in gather form: every output cell sums the
/// contributions of all input cells whose kernel footprint covers it.
inline Matrix gather_deconv(const Matrix& z, const Matrix& k, std::size_t stride) {
  const std::size_t s = k.rows();
  const std::size_t h = (z.rows() - 1) * stride + s, w = (z.cols() - 1) * stride + s;
  Matrix out(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < z.rows(); ++a) {
        if (i < a * stride || i - a * stride >= s) continue;
        for (std::size_t b = 0; b < z.cols(); ++b) {
          if (j < b * stride || j - b * stride >= s) continue;
          acc += z(a, b) * k(i - a * stride, j - b * stride);
        }
      }
      out(i, j) = acc;
    }
  return out;
}

/// Rank by Gaussian elimination with partial pivoting.
inline std::size_t gauss_rank(Matrix m, double tol = 1e-9) {
  std::size_t rank = 0;
  for (std::size_t col = 0; col < m.cols() && rank < m.rows(); ++col) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < m.rows(); ++r)
      if (std::abs(m(r, col)) > std::abs(m(piv, col))) piv = r;
    if (std::abs(m(piv, col)) <= tol) continue;
    for (std::size_t c = 0; c < m.cols(); ++c) std::swap(m(piv, c), m(rank, c));
    for (std::size_t r = rank + 1; r < m.rows(); ++r) {
      const double f = m(r, col) / m(rank, col);
      for (std::size_t c = col; c < m.cols(); ++c) m(r, c) -= f * m(rank, c);
    }
    ++rank;
  }
  return rank;
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, sorted descending.
inline std::vector<double> jacobi_eigenvalues(Matrix a, int sweeps = 100) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Sample covariance (1/(n-1)) of row-wise points.
inline Matrix covariance(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j) / static_cast<double>(n);
  Matrix c(d, d);
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = 0; q < d; ++q) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += (x(i, p) - mean[p]) * (x(i, q) - mean[q]);
      c(p, q) = acc / static_cast<double>(n - 1);
    }
  return c;
}

/// Solves a x = b by Gauss-Jordan elimination (a square, nonsingular).
inline std::vector<double> solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    for (std::size_t c = 0; c < n; ++c) std::swap(a(piv, c), a(col, c));
    std::swap(b[piv], b[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = 0; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a(i, i);
  return b;
}

/// One-vs-rest least-squares linear probe (with bias) fit on (x, y);
/// returns its training accuracy.
inline double least_squares_probe_accuracy(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                                           std::size_t classes, double ridge = 1e-9) {
  const std::size_t d = x.front().size() + 1;
  Matrix xtx(d, d);
  std::vector<std::vector<double>> xty(classes, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> row(x[i]);
    row.push_back(1.0);
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) xtx(p, q) += row[p] * row[q];
      for (std::size_t c = 0; c < classes; ++c) xty[c][p] += row[p] * (y[i] == c ? 1.0 : 0.0);
    }
  }
  for (std::size_t p = 0; p < d; ++p) xtx(p, p) += ridge;
  std::vector<std::vector<double>> w;
  for (std::size_t c = 0; c < classes; ++c) w.push_back(solve(xtx, xty[c]));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t c = 0; c < classes; ++c) {
      double v = w[c][d - 1];
      for (std::size_t p = 0; p + 1 < d; ++p) v += w[c][p] * x[i][p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    correct += best == y[i];
  }
  return static_cast<double>(correct) / static_cast<double>(x.size());
}

/// Softmax by explicit normalisation, no max shift.
inline std::vector<double> naive_softmax(const std::vector<double>& v, double tau) {
  double z = 0.0;
  for (double x : v) z += std::exp(x / tau);
  std::vector<double> p;
  for (double x : v) p.push_back(std::exp(x / tau) / z);
  return p;
}

inline double naive_cross_entropy(const std::vector<double>& logits, std::size_t target) {
  return -std::log(naive_softmax(logits, 1.0)[target]);
}

/// Central difference of a scalar function of one coordinate.
template <class F>
double central_difference(F&& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

}  // namespace oracle
