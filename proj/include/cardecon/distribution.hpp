#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cardecon {

/// Quantile clamp: the logit link diverges at 0 and 1, so CDF values are
/// kept inside [kQuantileEps, 1 - kQuantileEps].
inline constexpr double kQuantileEps = 1e-6;

enum class DistFamily { kNormal, kLognormal };

inline const char* family_name(DistFamily f) {
  return f == DistFamily::kNormal ? "normal" : "lognormal";
}

/// Maximum-likelihood normal or lognormal fit of one sample.
struct FittedDistribution {
  DistFamily family = DistFamily::kNormal;
  double mu = 0.0;
  double sigma = 1.0;          // > 0
  double log_likelihood = 0.0; // of the chosen family at its MLE
  std::size_t n = 0;
};

inline double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double standard_normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Inverse standard normal CDF: Acklam's rational approximation polished by
/// one Halley step against erfc, giving ~1e-15 absolute error in p.
inline double standard_normal_inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("standard_normal_inv_cdf: p must be in (0,1)");

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;

  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // one Halley refinement
  const double e = standard_normal_cdf(x) - p;
  const double u = e / standard_normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

namespace detail {

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;  // population (1/N) variance: the MLE form
};

inline MeanVar population_moments(std::span<const double> xs) {
  MeanVar mv;
  for (double x : xs) mv.mean += x;
  mv.mean /= static_cast<double>(xs.size());
  for (double x : xs) mv.var += (x - mv.mean) * (x - mv.mean);
  mv.var /= static_cast<double>(xs.size());
  return mv;
}

// Maximized normal log-likelihood in closed form: -n/2 (ln(2*pi*var) + 1).
inline double normal_max_loglik(std::size_t n, double var) {
  return -0.5 * static_cast<double>(n) * (std::log(2.0 * std::numbers::pi * var) + 1.0);
}

}  // namespace detail

/// Fits normal and (when all samples are positive) lognormal by maximum
/// likelihood and returns the family with the larger total log-likelihood.
/// Ties within 1e-12 go to normal.
inline FittedDistribution fit_distribution(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 3) throw std::invalid_argument("fit_distribution: need at least 3 samples");

  bool all_identical = true;
  bool all_positive = true;
  for (double x : samples) {
    if (x != samples[0]) all_identical = false;
    if (!(x > 0.0)) all_positive = false;
  }
  if (all_identical)
    throw std::invalid_argument("fit_distribution: all samples identical (degenerate)");

  const detail::MeanVar norm = detail::population_moments(samples);
  const double loglik_normal = detail::normal_max_loglik(n, norm.var);

  FittedDistribution fit;
  fit.n = n;
  fit.family = DistFamily::kNormal;
  fit.mu = norm.mean;
  fit.sigma = std::sqrt(norm.var);
  fit.log_likelihood = loglik_normal;

  if (all_positive) {
    std::vector<double> logs(n);
    double sum_log = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      logs[i] = std::log(samples[i]);
      sum_log += logs[i];
    }
    const detail::MeanVar lg = detail::population_moments(logs);
    if (lg.var > 0.0) {
      // lognormal density adds a -ln(x) Jacobian term per sample
      const double loglik_lognormal = detail::normal_max_loglik(n, lg.var) - sum_log;
      if (loglik_lognormal > loglik_normal + 1e-12) {
        fit.family = DistFamily::kLognormal;
        fit.mu = lg.mean;
        fit.sigma = std::sqrt(lg.var);
        fit.log_likelihood = loglik_lognormal;
      }
    }
  }
  return fit;
}

/// CDF value clamped into [kQuantileEps, 1-kQuantileEps].
inline double to_quantile(double x, const FittedDistribution& d) {
  double z;
  if (d.family == DistFamily::kLognormal) {
    if (!(x > 0.0))
      throw std::domain_error("to_quantile: nonpositive input under lognormal");
    z = (std::log(x) - d.mu) / d.sigma;
  } else {
    z = (x - d.mu) / d.sigma;
  }
  const double p = standard_normal_cdf(z);
  if (p < kQuantileEps) return kQuantileEps;
  if (p > 1.0 - kQuantileEps) return 1.0 - kQuantileEps;
  return p;
}

/// Total version used by the prediction chain: values outside a lognormal's
/// support map to the lower clamp instead of raising.
inline double to_quantile_total(double x, const FittedDistribution& d) {
  if (d.family == DistFamily::kLognormal && !(x > 0.0)) return kQuantileEps;
  return to_quantile(x, d);
}

inline double from_quantile(double p, const FittedDistribution& d) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("from_quantile: p must be in (0,1)");
  const double z = standard_normal_inv_cdf(p);
  if (d.family == DistFamily::kLognormal) return std::exp(d.mu + d.sigma * z);
  return d.mu + d.sigma * z;
}

/// Density of the fitted distribution at x (zero outside lognormal support).
inline double density(double x, const FittedDistribution& d) {
  if (d.family == DistFamily::kLognormal) {
    if (!(x > 0.0)) return 0.0;
    const double z = (std::log(x) - d.mu) / d.sigma;
    return standard_normal_pdf(z) / (d.sigma * x);
  }
  const double z = (x - d.mu) / d.sigma;
  return standard_normal_pdf(z) / d.sigma;
}

}  // namespace cardecon
