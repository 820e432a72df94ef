#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace cardecon {

/// Minimal dense row-major matrix; just enough for 35-column statistics.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double* row(std::size_t r) { return data.data() + r * cols; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = at(r, c);
    return out;
  }
};

inline std::vector<double> column_means(const Matrix& x) {
  std::vector<double> mean(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) mean[c] += x.at(r, c);
  for (double& m : mean) m /= static_cast<double>(x.rows);
  return mean;
}

/// Solves A x = b for symmetric positive definite A (in-place Cholesky).
/// Returns nullopt when a pivot is not strictly positive.
inline std::optional<std::vector<double>> cholesky_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows;
  if (a.cols != n || b.size() != n) throw std::invalid_argument("cholesky_solve: shape");
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= a.at(j, k) * a.at(j, k);
    if (!(d > 0.0)) return std::nullopt;
    const double ljj = std::sqrt(d);
    a.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a.at(i, k) * a.at(j, k);
      a.at(i, j) = s / ljj;
    }
  }
  // forward then backward substitution
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a.at(i, k) * b[k];
    b[i] = s / a.at(i, i);
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a.at(k, i) * b[k];
    b[i] = s / a.at(i, i);
  }
  return b;
}

struct EigenSystem {
  std::vector<double> eigenvalues;  // nonincreasing
  Matrix eigenvectors;              // row i is the eigenvector of eigenvalues[i]
};

/// Cyclic Jacobi diagonalization of a symmetric matrix. Small inputs only
/// (n <= a few hundred); robustness is what matters here, not speed.
inline EigenSystem jacobi_eigensystem(Matrix a) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw std::invalid_argument("jacobi_eigensystem: matrix not square");
  Matrix v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) s += a.at(p, q) * a.at(p, q);
    return std::sqrt(s);
  };

  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::fabs(a.at(i, j)));
  const double tol = (scale > 0.0 ? scale : 1.0) * 1e-15 * static_cast<double>(n);

  for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a.at(p, q);
        if (std::fabs(apq) <= tol * 1e-3) continue;
        const double app = a.at(p, p);
        const double aqq = a.at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a.at(k, p);
          const double akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a.at(p, k);
          const double aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at(k, p);
          const double vkq = v.at(k, q);
          v.at(k, p) = c * vkp - s * vkq;
          v.at(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return a.at(x, x) > a.at(y, y);
  });

  EigenSystem out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    out.eigenvalues[i] = a.at(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors.at(i, k) = v.at(k, order[i]);
  }
  return out;
}

}  // namespace cardecon
