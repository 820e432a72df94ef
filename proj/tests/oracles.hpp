#pragma once

// Independent oracles used by the unit and acceptance suites. Everything in
// this header recomputes expected values from first principles and must stay
// free of the library's own CDF/eigen/GLM code paths.

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace oracles {

// --- numerical CDF of a normal/lognormal by Simpson integration -------------

inline double normal_pdf_at(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Integrates the normal density from mu - 12 sigma to x (Simpson, fixed grid).
inline double normal_cdf_by_quadrature(double x, double mu, double sigma, int steps = 40000) {
  const double lo = mu - 12.0 * sigma;
  if (x <= lo) return 0.0;
  const double h = (x - lo) / steps;
  double sum = normal_pdf_at(lo, mu, sigma) + normal_pdf_at(x, mu, sigma);
  for (int i = 1; i < steps; ++i)
    sum += normal_pdf_at(lo + i * h, mu, sigma) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

// --- independent maximum-likelihood family choice ----------------------------

enum class OracleFamily { kNormal, kLognormal };

struct OracleFit {
  OracleFamily family;
  double loglik_normal;
  double loglik_lognormal;  // -inf when ineligible
};

/// Chooses normal vs lognormal by direct log-density summation at the MLE
/// parameters, each computed with its own loops.
inline OracleFit family_choice_by_summation(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  const double sigma = std::sqrt(var);
  double ll_norm = 0.0;
  for (double x : xs) ll_norm += std::log(normal_pdf_at(x, mean, sigma));

  OracleFit out{OracleFamily::kNormal, ll_norm,
                -std::numeric_limits<double>::infinity()};
  bool positive = true;
  for (double x : xs) positive = positive && x > 0.0;
  if (positive) {
    double lmean = 0.0;
    for (double x : xs) lmean += std::log(x);
    lmean /= n;
    double lvar = 0.0;
    for (double x : xs) lvar += (std::log(x) - lmean) * (std::log(x) - lmean);
    lvar /= n;
    if (lvar > 0.0) {
      const double lsigma = std::sqrt(lvar);
      double ll = 0.0;
      for (double x : xs)
        ll += std::log(normal_pdf_at(std::log(x), lmean, lsigma) / x);
      out.loglik_lognormal = ll;
      if (ll > ll_norm + 1e-12) out.family = OracleFamily::kLognormal;
    }
  }
  return out;
}

// --- brute-force symmetric 4x4 eigensolver -----------------------------------

using Mat4 = std::array<std::array<double, 4>, 4>;
using Vec4 = std::array<double, 4>;

/// det(A - lambda I) by Gaussian elimination with partial pivoting.
inline double char_poly_at(const Mat4& a, double lambda) {
  Mat4 m = a;
  for (int i = 0; i < 4; ++i) m[i][i] -= lambda;
  double det = 1.0;
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
    if (m[pivot][col] == 0.0) return 0.0;
    if (pivot != col) {
      std::swap(m[pivot], m[col]);
      det = -det;
    }
    det *= m[col][col];
    for (int r = col + 1; r < 4; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  return det;
}

/// All four real eigenvalues of a symmetric 4x4, nonincreasing, found by sign
/// scanning the characteristic polynomial over the Gershgorin interval and
/// bisecting each bracket.
inline Vec4 eigenvalues_by_char_poly(const Mat4& a) {
  double lo = a[0][0], hi = a[0][0];
  for (int i = 0; i < 4; ++i) {
    double radius = 0.0;
    for (int j = 0; j < 4; ++j)
      if (j != i) radius += std::fabs(a[i][j]);
    lo = std::min(lo, a[i][i] - radius);
    hi = std::max(hi, a[i][i] + radius);
  }
  lo -= 1e-6;
  hi += 1e-6;

  const int kGrid = 20000;
  std::vector<double> roots;
  double prev_x = lo, prev_f = char_poly_at(a, lo);
  for (int i = 1; i <= kGrid && roots.size() < 4; ++i) {
    const double x = lo + (hi - lo) * i / kGrid;
    const double f = char_poly_at(a, x);
    if (prev_f == 0.0) roots.push_back(prev_x);
    if (prev_f * f < 0.0) {
      double xl = prev_x, xr = x, fl = prev_f;
      for (int it = 0; it < 200; ++it) {
        const double xm = 0.5 * (xl + xr);
        const double fm = char_poly_at(a, xm);
        if (fl * fm <= 0.0)
          xr = xm;
        else {
          xl = xm;
          fl = fm;
        }
      }
      roots.push_back(0.5 * (xl + xr));
    }
    prev_x = x;
    prev_f = f;
  }
  if (roots.size() != 4)
    throw std::runtime_error("eigenvalue oracle: expected 4 simple roots, found " +
                             std::to_string(roots.size()));
  Vec4 out{};
  for (int i = 0; i < 4; ++i) out[i] = roots[3 - i];
  return out;
}

/// Eigenvector for an isolated eigenvalue via inverse iteration on a slightly
/// shifted system, solved with plain Gaussian elimination.
inline Vec4 eigenvector_by_inverse_iteration(const Mat4& a, double lambda) {
  Vec4 v{0.5, -0.25, 0.75, 0.35};
  for (int iter = 0; iter < 50; ++iter) {
    Mat4 m = a;
    for (int i = 0; i < 4; ++i) m[i][i] -= lambda + 1e-9;
    Vec4 b = v;
    for (int col = 0; col < 4; ++col) {
      int pivot = col;
      for (int r = col + 1; r < 4; ++r)
        if (std::fabs(m[r][col]) > std::fabs(m[pivot][col])) pivot = r;
      std::swap(m[pivot], m[col]);
      std::swap(b[pivot], b[col]);
      for (int r = col + 1; r < 4; ++r) {
        const double f = m[r][col] / m[col][col];
        for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
        b[r] -= f * b[col];
      }
    }
    for (int i = 3; i >= 0; --i) {
      double s = b[i];
      for (int c = i + 1; c < 4; ++c) s -= m[i][c] * b[c];
      b[i] = s / m[i][i];
    }
    double norm = 0.0;
    for (double x : b) norm += x * x;
    norm = std::sqrt(norm);
    for (int i = 0; i < 4; ++i) v[i] = b[i] / norm;
  }
  return v;
}

}  // namespace oracles
