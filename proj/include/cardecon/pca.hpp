#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardecon/linalg.hpp"

namespace cardecon {

/// Pearson correlation matrix R(i,j) = C(i,j) / sqrt(C(i,i) C(j,j)).
/// Throws (naming the column) when a column has zero variance.
inline Matrix correlation_matrix(const Matrix& x) {
  if (x.rows < 2) throw std::invalid_argument("correlation_matrix: need at least 2 rows");
  const std::size_t n = x.cols;
  const std::vector<double> mean = column_means(x);

  Matrix cov(n, n, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double di = row[i] - mean[i];
      for (std::size_t j = i; j < n; ++j) cov.at(i, j) += di * (row[j] - mean[j]);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (cov.at(i, i) <= 0.0)
      throw std::invalid_argument("correlation_matrix: zero-variance column " +
                                  std::to_string(i));

  Matrix r(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    r.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = cov.at(i, j) / std::sqrt(cov.at(i, i) * cov.at(j, j));
      const double clamped = std::clamp(v, -1.0, 1.0);
      r.at(i, j) = clamped;
      r.at(j, i) = clamped;
    }
  }
  return r;
}

/// Pearson correlation of two equal-length series.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("pearson: need two equal series of length >= 2");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) throw std::invalid_argument("pearson: constant series");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Principal components of column-centered data. Components are orthonormal
/// rows ordered by nonincreasing eigenvalue; each component's
/// largest-magnitude loading is made positive so results are reproducible
/// across eigen-solver sign ambiguity.
struct PCAModel {
  std::vector<double> mean;
  Matrix components;                      // k_max x n, rows orthonormal
  std::vector<double> eigenvalues;        // nonincreasing, >= 0
  std::vector<double> explained_fraction; // sums to 1

  std::size_t k_max() const { return components.rows; }
};

inline PCAModel fit_pca(const Matrix& x) {
  if (x.rows < 2) throw std::invalid_argument("fit_pca: need at least 2 rows");
  const std::size_t n = x.cols;
  const std::size_t m = x.rows;

  PCAModel model;
  model.mean = column_means(x);

  Matrix cov(n, n, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = x.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double di = row[i] - model.mean[i];
      for (std::size_t j = i; j < n; ++j) cov.at(i, j) += di * (row[j] - model.mean[j]);
    }
  }
  const double denom = static_cast<double>(m - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      cov.at(i, j) /= denom;
      cov.at(j, i) = cov.at(i, j);
    }

  EigenSystem es = jacobi_eigensystem(cov);

  double total = 0.0;
  for (double& ev : es.eigenvalues) {
    if (ev < 0.0) ev = 0.0;  // roundoff on rank-deficient data
    total += ev;
  }
  if (!(total > 0.0)) throw std::invalid_argument("fit_pca: data has zero total variance");

  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double mag = std::fabs(es.eigenvectors.at(i, j));
      if (mag > best) {
        best = mag;
        arg = j;
      }
    }
    if (es.eigenvectors.at(i, arg) < 0.0)
      for (std::size_t j = 0; j < n; ++j) es.eigenvectors.at(i, j) = -es.eigenvectors.at(i, j);
  }

  model.components = std::move(es.eigenvectors);
  model.eigenvalues = std::move(es.eigenvalues);
  model.explained_fraction.resize(n);
  for (std::size_t i = 0; i < n; ++i) model.explained_fraction[i] = model.eigenvalues[i] / total;
  return model;
}

struct KMode {
  enum class Kind { kFixed, kVarianceThreshold } kind = Kind::kFixed;
  std::size_t k = 6;
  double tau = 0.95;

  static KMode fixed(std::size_t k) { return {Kind::kFixed, k, 0.0}; }
  static KMode variance_threshold(double tau) { return {Kind::kVarianceThreshold, 0, tau}; }
};

/// Fixed mode returns k unchanged; variance mode returns the minimal k whose
/// cumulative explained fraction reaches tau.
inline std::size_t select_components(const PCAModel& model, const KMode& mode) {
  if (mode.kind == KMode::Kind::kFixed) {
    if (mode.k < 1 || mode.k > model.k_max())
      throw std::invalid_argument("select_components: k out of range");
    return mode.k;
  }
  if (!(mode.tau > 0.0 && mode.tau <= 1.0))
    throw std::invalid_argument("select_components: tau must be in (0,1]");
  double cum = 0.0;
  for (std::size_t i = 0; i < model.k_max(); ++i) {
    cum += model.explained_fraction[i];
    if (cum >= mode.tau - 1e-12) return i + 1;  // slack absorbs summation roundoff
  }
  return model.k_max();
}

/// Scores = (X - mean) * components[0..k)^T.
inline Matrix project(const PCAModel& model, const Matrix& x, std::size_t k) {
  if (k > model.k_max()) throw std::invalid_argument("project: k exceeds component count");
  if (x.cols != model.mean.size())
    throw std::invalid_argument("project: column count mismatch");
  Matrix scores(x.rows, k, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* row = x.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      const double* comp = model.components.row(c);
      double s = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) s += (row[j] - model.mean[j]) * comp[j];
      scores.at(r, c) = s;
    }
  }
  return scores;
}

/// Inverse of project with all components: mean + scores * components.
inline Matrix reconstruct(const PCAModel& model, const Matrix& scores) {
  const std::size_t n = model.mean.size();
  Matrix x(scores.rows, n, 0.0);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) x.at(r, j) = model.mean[j];
    for (std::size_t c = 0; c < scores.cols; ++c) {
      const double s = scores.at(r, c);
      const double* comp = model.components.row(c);
      for (std::size_t j = 0; j < n; ++j) x.at(r, j) += s * comp[j];
    }
  }
  return x;
}

}  // namespace cardecon
