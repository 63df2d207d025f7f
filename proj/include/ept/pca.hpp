#pragma once

#include <cmath>
#include <vector>

#include "ept/matrix.hpp"

namespace ept {

struct PcaResult {
  Matrix coords;                      ///< n x 2 projected coordinates
  Matrix components;                  ///< 2 x d unit eigenvectors
  double eigenvalues[2] = {0.0, 0.0};  ///< of the sample covariance (1/(n-1))
};

namespace detail {

inline std::vector<double> power_iterate(const Matrix& c, const std::vector<double>* orth, int max_iter, double tol,
                                         double floor) {
  const std::size_t d = c.rows();
  std::vector<double> v(d, 1.0);
  auto project_out = [&](std::vector<double>& x) {
    if (!orth) return;
    const double p = dot(x, *orth);
    for (std::size_t i = 0; i < d; ++i) x[i] -= p * (*orth)[i];
  };
  auto normalize = [&](std::vector<double>& x) {
    const double n = norm(x);
    if (n == 0.0) return false;
    for (double& e : x) e /= n;
    return true;
  };
  project_out(v);
  for (std::size_t j = 0; !normalize(v) && j < d; ++j) {
    v.assign(d, 0.0);
    v[j] = 1.0;
    project_out(v);
  }
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> next = matvec(c, v);
    project_out(next);
    // Remaining spectrum is numerically zero: normalising the residue would
    // amplify rounding noise, so keep the current orthogonal direction.
    if (norm(next) <= floor) break;
    normalize(next);
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) delta += (next[i] - v[i]) * (next[i] - v[i]);
    v = std::move(next);
    if (std::sqrt(delta) < tol) break;
  }
  for (double x : v) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0)
        for (double& e : v) e = -e;
      break;
    }
  }
  return v;
}

}  // namespace detail

/// Projects rows onto the top two principal directions of their covariance,
/// found by power iteration with deflation.
inline PcaResult pca2d(const Matrix& points, int max_iter = 200, double tol = 1e-10) {
  const std::size_t n = points.rows(), d = points.cols();
  if (n < 3 || d < 2) throw ParameterError("pca2d needs >= 3 points of dimension >= 2, got " + points.shape());
  Matrix centered = points;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += points(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centered(i, j) -= mean;
  }
  Matrix cov = matmul_tn(centered, centered);
  double trace = 0.0;
  for (double& x : cov.data()) x /= static_cast<double>(n - 1);
  for (std::size_t j = 0; j < d; ++j) trace += cov(j, j);
  if (trace == 0.0) throw DegenerateInputError("pca2d input has zero variance (all points identical)");

  const double floor = 1e-12 * trace;
  const auto v1 = detail::power_iterate(cov, nullptr, max_iter, tol, floor);
  const auto v2 = detail::power_iterate(cov, &v1, max_iter, tol, floor);

  PcaResult r;
  r.components = Matrix(2, d);
  for (std::size_t j = 0; j < d; ++j) {
    r.components(0, j) = v1[j];
    r.components(1, j) = v2[j];
  }
  r.eigenvalues[0] = dot(v1, matvec(cov, v1));
  r.eigenvalues[1] = dot(v2, matvec(cov, v2));
  r.coords = matmul_nt(centered, r.components);
  return r;
}

}  // namespace ept
