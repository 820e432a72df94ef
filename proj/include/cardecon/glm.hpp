#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cardecon/linalg.hpp"

namespace cardecon {

/// Numerically stable logistic function, strict (0,1) for all finite z.
/// Saturated values are nudged to the nearest representable interior double.
inline double sigmoid(double z) {
  double p;
  if (z >= 0.0) {
    const double e = std::exp(-z);
    p = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(z);
    p = e / (1.0 + e);
  }
  if (p >= 1.0) return std::nextafter(1.0, 0.0);
  if (p <= 0.0) return std::numeric_limits<double>::min();
  return p;
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("logit: p must be in (0,1)");
  return std::log(p / (1.0 - p));
}

struct GlmOptions {
  int max_iterations = 100;
  double beta_tol = 1e-8;      // converged when max|delta beta| falls below
  double deviance_tol = 1e-10; // or the deviance change does
};

/// Logit-link GLM fitted to a fractional response by iteratively reweighted
/// least squares with binomial variance function. beta[0] is the intercept.
struct GLMModel {
  std::vector<double> beta;
  bool converged = false;
  int iterations = 0;
  double final_deviance = 0.0;
  std::vector<double> deviance_trace;  // one entry per accepted IRLS step
  std::vector<std::string> warnings;
};

namespace detail {

inline double quasi_binomial_deviance(std::span<const double> y,
                                      std::span<const double> mu) {
  double dev = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    dev += y[i] * (std::log(y[i]) - std::log(mu[i])) +
           (1.0 - y[i]) * (std::log1p(-y[i]) - std::log1p(-mu[i]));
  }
  return 2.0 * dev;
}

inline void linear_predictor(const Matrix& scores, std::span<const double> beta,
                             std::vector<double>& eta) {
  const std::size_t m = scores.rows;
  const std::size_t k = scores.cols;
  eta.assign(m, beta[0]);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = scores.row(i);
    double s = beta[0];
    for (std::size_t j = 0; j < k; ++j) s += beta[j + 1] * row[j];
    eta[i] = s;
  }
}

}  // namespace detail

/// Quasi-binomial log-likelihood of a fractional response (kernel only;
/// terms depending on y alone are omitted, they cancel in gradients).
inline double quasi_log_likelihood(const Matrix& scores, std::span<const double> y,
                                   std::span<const double> beta) {
  if (beta.size() != scores.cols + 1)
    throw std::invalid_argument("quasi_log_likelihood: beta length");
  std::vector<double> eta;
  detail::linear_predictor(scores, beta, eta);
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    // y*log(mu) + (1-y)*log(1-mu) written via log1p(exp) for stability
    const double z = eta[i];
    const double log_mu = z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
    const double log_1mu = z >= 0.0 ? -z - std::log1p(std::exp(-z)) : -std::log1p(std::exp(z));
    ll += y[i] * log_mu + (1.0 - y[i]) * log_1mu;
  }
  return ll;
}

/// Gradient of quasi_log_likelihood: X^T (y - mu) with the intercept first.
inline std::vector<double> quasi_log_likelihood_gradient(const Matrix& scores,
                                                         std::span<const double> y,
                                                         std::span<const double> beta) {
  if (beta.size() != scores.cols + 1)
    throw std::invalid_argument("quasi_log_likelihood_gradient: beta length");
  std::vector<double> eta;
  detail::linear_predictor(scores, beta, eta);
  std::vector<double> g(beta.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double resid = y[i] - sigmoid(eta[i]);
    g[0] += resid;
    const double* row = scores.row(i);
    for (std::size_t j = 0; j < scores.cols; ++j) g[j + 1] += resid * row[j];
  }
  return g;
}

inline GLMModel fit_glm(const Matrix& scores, std::span<const double> y,
                        const GlmOptions& opts = {}) {
  const std::size_t m = scores.rows;
  const std::size_t k = scores.cols;
  if (y.size() != m) throw std::invalid_argument("fit_glm: response length mismatch");
  if (m <= k + 1)
    throw std::invalid_argument("fit_glm: need more rows than coefficients");
  for (double yi : y)
    if (!(yi > 0.0 && yi < 1.0))
      throw std::invalid_argument("fit_glm: responses must lie strictly in (0,1)");

  const std::size_t p = k + 1;
  if (p > 64) throw std::invalid_argument("fit_glm: more than 63 features unsupported");
  GLMModel model;
  model.beta.assign(p, 0.0);

  std::vector<double> eta(m, 0.0), mu(m, 0.5);
  double deviance = detail::quasi_binomial_deviance(y, mu);
  model.deviance_trace.push_back(deviance);

  constexpr double kWeightFloor = 1e-10;
  constexpr double kRidge = 1e-10;

  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    // weighted normal equations  (X^T W X) b = X^T W z
    Matrix xtwx(p, p, 0.0);
    std::vector<double> xtwz(p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double w = std::max(mu[i] * (1.0 - mu[i]), kWeightFloor);
      const double z = eta[i] + (y[i] - mu[i]) / w;
      const double* row = scores.row(i);
      double xi[64];
      xi[0] = 1.0;
      for (std::size_t j = 0; j < k; ++j) xi[j + 1] = row[j];
      for (std::size_t a = 0; a < p; ++a) {
        xtwz[a] += w * xi[a] * z;
        for (std::size_t b = a; b < p; ++b) xtwx.at(a, b) += w * xi[a] * xi[b];
      }
    }
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < a; ++b) xtwx.at(a, b) = xtwx.at(b, a);

    auto solved = cholesky_solve(xtwx, xtwz);
    if (!solved) {
      for (std::size_t a = 0; a < p; ++a) xtwx.at(a, a) += kRidge;
      solved = cholesky_solve(xtwx, xtwz);
      model.warnings.push_back("singular weighted normal equations; ridge 1e-10 applied");
      if (!solved) {
        model.warnings.push_back("normal equations unsolvable even with ridge; stopping");
        break;
      }
    }

    // step-halving keeps the deviance nonincreasing on small oscillatory fits
    std::vector<double> proposal = *solved;
    std::vector<double> eta_new(m), mu_new(m);
    double dev_new = 0.0;
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      detail::linear_predictor(scores, proposal, eta_new);
      for (std::size_t i = 0; i < m; ++i) mu_new[i] = sigmoid(eta_new[i]);
      dev_new = detail::quasi_binomial_deviance(y, mu_new);
      if (dev_new <= deviance + 1e-12) {
        accepted = true;
        break;
      }
      for (std::size_t a = 0; a < p; ++a)
        proposal[a] = 0.5 * (proposal[a] + model.beta[a]);
    }
    if (!accepted) {
      model.warnings.push_back("step-halving exhausted; keeping previous iterate");
      model.iterations = iter;
      break;
    }

    double max_delta = 0.0;
    for (std::size_t a = 0; a < p; ++a)
      max_delta = std::max(max_delta, std::fabs(proposal[a] - model.beta[a]));

    model.beta = std::move(proposal);
    eta.swap(eta_new);
    mu.swap(mu_new);
    const double dev_change = std::fabs(deviance - dev_new);
    deviance = dev_new;
    model.deviance_trace.push_back(deviance);
    model.iterations = iter;

    if (max_delta < opts.beta_tol || dev_change < opts.deviance_tol) {
      model.converged = true;
      break;
    }
  }

  if (!model.converged)
    model.warnings.push_back("IRLS did not converge in " +
                             std::to_string(opts.max_iterations) + " iterations");
  model.final_deviance = deviance;
  return model;
}

inline double predict_norm(const GLMModel& model, std::span<const double> score_row) {
  if (score_row.size() + 1 != model.beta.size())
    throw std::invalid_argument("predict_norm: score row length mismatch");
  double z = model.beta[0];
  for (std::size_t j = 0; j < score_row.size(); ++j) z += model.beta[j + 1] * score_row[j];
  return sigmoid(z);
}

/// Unweighted residual-sum-of-squares R^2 against the intercept-only
/// benchmark; may be negative out of sample.
inline double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("r_squared: length mismatch");
  if (y.size() < 2) throw std::invalid_argument("r_squared: need at least 2 points");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) throw std::invalid_argument("r_squared: constant response");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace cardecon
