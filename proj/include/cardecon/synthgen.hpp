#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cardecon/csv.hpp"
#include "cardecon/glm.hpp"
#include "cardecon/indicators.hpp"
#include "cardecon/ingest.hpp"
#include "cardecon/pipeline.hpp"
#include "cardecon/rng.hpp"
#include "cardecon/temporal.hpp"
#include "cardecon/version.hpp"

namespace cardecon {

struct IntRange {
  int min = 1;
  int max = 1;
};

/// Synthetic-corpus configuration. Regions carry latent factor vectors that
/// drive category mixes, temporal habits, mobility, amounts and market
/// penetration; the official indices are planted through the model's own
/// sigmoid + inverse-CDF chain so that a failure to recover them downstream
/// points at a pipeline bug rather than model mismatch.
struct SynthConfig {
  std::size_t region_count = 52;
  IntRange customers_per_region{300, 900};
  IntRange merchants_per_region{150, 400};
  std::uint64_t transactions_total = 1'000'000;
  int latent_factor_count = 3;

  double category_mix_loading = 0.9;  // factor -> category logit scale
  double category_mix_jitter = 0.05;  // per-region idiosyncratic category noise

  // factor -> index loadings, kIndexCount rows x latent_factor_count columns;
  // empty selects the built-in default (a shared dominant direction with
  // index-specific variation). The planted linear predictor is rescaled so
  // the chain is self-consistent (see generate), so only directions matter.
  std::vector<std::vector<double>> factor_index_loadings;

  // Either a common target R^2 (noise derived from the planted signal
  // variance) or absolute per-index noise standard deviations. Noise is
  // drawn uniform with the given sd: bounded tails keep small validation
  // splits from being dominated by a single extreme draw.
  std::optional<double> target_r2;
  std::array<double, kIndexCount> noise_sd{};

  double night_base_logit = -1.8, night_factor_scale = 0.6;
  double weekend_base_logit = -1.0, weekend_factor_scale = 0.8;
  double outside_base_logit = -1.6, outside_factor_scale = 0.8;
  double foreign_base_logit = -2.2, foreign_factor_scale = 0.7;

  double customer_share_min = 0.15, customer_share_max = 0.45;
  double business_share_min = 0.25, business_share_max = 0.65;

  double log_amount_base = 7.824;    // ~2500 cents
  double amount_category_sd = 0.5;
  double amount_factor_scale = 0.3;
  double amount_noise_sd = 0.45;
  double merchant_price_sd = 0.35;
  double expensive_tilt_scale = 1.0;

  double log_area_mean = 8.854;      // ~7000 km^2
  double log_area_sd = 0.22;
  double activity_factor_scale = 0.55;
  double activity_jitter = 0.07;

  std::uint64_t seed = 1;

  void validate() const {
    if (region_count < 2) throw std::invalid_argument("synth: need at least 2 regions");
    if (latent_factor_count < 1)
      throw std::invalid_argument("synth: need at least 1 latent factor");
    if (customers_per_region.min < 1 || customers_per_region.max < customers_per_region.min)
      throw std::invalid_argument("synth: bad customers_per_region range");
    if (transactions_total > 0 &&
        (merchants_per_region.min < 1 || merchants_per_region.max < merchants_per_region.min))
      throw std::invalid_argument("synth: transactions without merchants are infeasible");
    if (target_r2 && !(*target_r2 > 0.0 && *target_r2 <= 1.0))
      throw std::invalid_argument("synth: target_r2 must lie in (0,1]");
    for (double sd : noise_sd)
      if (sd < 0.0) throw std::invalid_argument("synth: noise_sd must be >= 0");
    if (!(customer_share_min > 0.0 && customer_share_max <= 1.0 &&
          customer_share_min <= customer_share_max))
      throw std::invalid_argument("synth: bad customer share range");
    if (!(business_share_min > 0.0 && business_share_max <= 1.0 &&
          business_share_min <= business_share_max))
      throw std::invalid_argument("synth: bad business share range");
  }
};

/// Everything the oracle tests need to verify recovery: raw latent factors,
/// the planted (standardized score) feature values, per-index linear
/// predictors, signal values, output distributions and noise levels.
struct GroundTruth {
  std::uint64_t seed = 0;
  int latent_factor_count = 0;
  bool planted_on_scores = false;  // false = fallback planting on raw factors
  std::vector<std::string> region_ids;
  std::vector<std::vector<double>> factors;         // region x L
  std::vector<double> activity_density;             // in-area txn count / km^2
  std::vector<std::vector<double>> planted_features; // region x L, standardized
  Matrix eta;                                        // region x index linear predictor
  Matrix signal;                                     // region x index, noise-free value
  // outputs are lognormal: signal = exp(log_mu + log_sigma * probit(sigmoid(eta)))
  std::array<double, kIndexCount> output_log_mu{};
  std::array<double, kIndexCount> output_log_sigma{};
  std::array<double, kIndexCount> noise_sd{};
  std::array<double, kIndexCount> signal_variance{};  // population variance over regions
};

struct SynthOutput {
  std::string regions_path;
  std::string transactions_path;
  std::string indices_path;
  std::string ground_truth_path;
  GroundTruth ground_truth;
};

namespace synth_detail {

// Lognormal output parameters (log-space mean and sd). The log spread is
// kept wide enough that the maximum-likelihood family contest picks the
// lognormal decisively, which keeps the noiseless planting a fixed point of
// the training refit. Values stay positive, as the rate indices require.
inline constexpr std::array<double, kIndexCount> kIndexLogMu = {
    10.086, 7.378, 2.890, 3.401, 3.807, 4.407};  // ~24000, 1600, 18, 30, 45, 82
inline constexpr std::array<double, kIndexCount> kIndexLogSigma = {0.2, 0.2, 0.2,
                                                                   0.2, 0.2, 0.2};
inline constexpr std::array<const char*, 12> kCountries = {"DE", "FR", "GB", "US",
                                                           "IT", "NL", "PT", "SE",
                                                           "CH", "BE", "NO", "IE"};

// Index loadings share a dominant common direction with index-specific
// variation around it: official socioeconomic indices are strongly mutually
// correlated, and the shared component also keeps the six recovery
// estimates from failing independently on unlucky validation draws.
inline std::vector<std::vector<double>> default_index_loadings(int L) {
  static constexpr double base[kIndexCount][3] = {
      {1.0, 0.45, 0.35},    {0.95, 0.7, 0.3},   {-1.0, -0.5, -0.45},
      {1.0, 0.6, 0.3},      {0.85, 0.65, 0.55}, {0.9, 0.4, 0.55},
  };
  std::vector<std::vector<double>> w(kIndexCount, std::vector<double>(L, 0.0));
  for (int j = 0; j < kIndexCount; ++j)
    for (int l = 0; l < L; ++l) w[j][l] = base[j][l % 3] * (l < 3 ? 1.0 : 0.5);
  return w;
}

inline int group_of_category(int category_id) {
  return (category_id - 1) * kGroupCount / kCategoryCount + 1;
}

/// Finds (b, c) such that probit(sigmoid(b + c*u)) has mean 0 and population
/// standard deviation 1 over the given predictor values. Planting indices
/// with a calibrated predictor makes the train() refit reproduce the
/// planting distribution, so noiseless recovery is exact by construction.
inline std::pair<double, double> calibrate_probit_linear(const std::vector<double>& u) {
  double spread = 0.0;
  for (double x : u) spread = std::max(spread, std::fabs(x));
  if (!(spread > 0.0))
    throw std::invalid_argument("synth: planted linear predictor has no variation");
  double b = 0.0, c = 1.6;
  std::vector<double> v(u.size());
  for (int iter = 0; iter < 300; ++iter) {
    for (std::size_t i = 0; i < u.size(); ++i)
      v[i] = standard_normal_inv_cdf(sigmoid(b + c * u[i]));
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    s = std::sqrt(s / static_cast<double>(v.size()));
    if (std::fabs(m) < 1e-14 && std::fabs(s - 1.0) < 1e-14) break;
    b -= 1.2 * m;
    c /= s;
  }
  return {b, c};
}

inline std::string region_id_for(std::size_t i, std::size_t count) {
  int width = 2;
  for (std::size_t v = count; v >= 100; v /= 10) ++width;
  std::string digits = std::to_string(i + 1);
  return "R" + std::string(width - digits.size(), '0') + digits;
}

struct DateTables {
  // month/day pairs for 2011, split into weekend and weekday
  std::vector<std::pair<int, int>> weekend;
  std::vector<std::pair<int, int>> weekday;

  DateTables() {
    for (int m = 1; m <= 12; ++m)
      for (int d = 1; d <= days_in_month(2011, m); ++d) {
        const int wd = weekday_of({2011, static_cast<std::uint8_t>(m),
                                   static_cast<std::uint8_t>(d), 0, 0});
        (wd == 0 || wd == 6 ? weekend : weekday).push_back({m, d});
      }
  }
};

inline constexpr std::array<int, 8> kNightHours = {22, 23, 0, 1, 2, 3, 4, 5};

struct RegionPlan {
  std::string id;
  std::vector<double> factors;
  double area_km2 = 0.0;
  double customer_share = 0.0;
  double target_business_share = 0.0;
  double activity_weight = 0.0;
  std::vector<double> category_cumulative;  // 76 entries
  double p_night = 0.0, p_weekend = 0.0, p_outside = 0.0, p_foreign = 0.0;
  double amount_shift = 0.0;
  double expensive_tilt = 0.0;
  int customers = 0;
  std::uint64_t txn_quota = 0;
  std::uint64_t domestic_quota = 0;
  std::uint64_t foreign_quota = 0;
};

struct MerchantPlan {
  int category = 1;          // 1..76
  double log_price = 0.0;    // within-category price offset
  double exp_price = 1.0;
};

struct CivilStamp {
  CivilDateTime t;
};

inline CivilDateTime draw_timestamp(CounterRng& rng, const DateTables& dates,
                                    double p_night, double p_weekend) {
  const bool weekend = rng.next_unit() < p_weekend;
  const auto& pool = weekend ? dates.weekend : dates.weekday;
  const auto [month, day] = pool[rng.next_below(pool.size())];
  const bool night = rng.next_unit() < p_night;
  CivilDateTime t;
  t.year = 2011;
  t.month = static_cast<std::uint8_t>(month);
  t.day = static_cast<std::uint8_t>(day);
  if (night) {
    const std::uint64_t m = rng.next_below(static_cast<std::uint64_t>(kNightHours.size()) * 60);
    t.hour = static_cast<std::uint8_t>(kNightHours[m / 60]);
    t.minute = static_cast<std::uint8_t>(m % 60);
  } else {
    const std::uint64_t m = rng.next_below(16 * 60);  // 06:00..21:59
    t.hour = static_cast<std::uint8_t>(6 + m / 60);
    t.minute = static_cast<std::uint8_t>(m % 60);
  }
  return t;
}

}  // namespace synth_detail

/// Expected R^2 of the best possible model on the planted data, estimated by
/// Monte-Carlo over (region, noise) draws: the share of total variance that
/// is signal. `draws` defaults to 10^6.
inline std::array<double, kIndexCount> theoretical_r2(const GroundTruth& gt,
                                                      const std::array<double, kIndexCount>& noise_sd,
                                                      std::size_t draws = 1'000'000) {
  std::array<double, kIndexCount> out{};
  const std::size_t m = gt.region_ids.size();
  if (m == 0) return out;
  for (int j = 0; j < kIndexCount; ++j) {
    CounterRng rng(gt.seed, "theoretical-r2", static_cast<std::uint64_t>(j));
    double sum_s = 0.0, sum_s2 = 0.0, sum_n = 0.0, sum_n2 = 0.0;
    const double half_width = noise_sd[j] * std::sqrt(3.0);
    for (std::size_t i = 0; i < draws; ++i) {
      const double sig_draw = gt.signal.at(rng.next_below(m), j);
      const double e = half_width * (2.0 * rng.next_unit() - 1.0);
      sum_s += sig_draw;
      sum_s2 += sig_draw * sig_draw;
      sum_n += e;
      sum_n2 += e * e;
    }
    const double n = static_cast<double>(draws);
    const double var_s = sum_s2 / n - (sum_s / n) * (sum_s / n);
    const double var_n = sum_n2 / n - (sum_n / n) * (sum_n / n);
    if (noise_sd[j] == 0.0) {
      out[j] = var_s > 0.0 ? 1.0 : 0.0;
    } else {
      out[j] = var_s + var_n > 0.0 ? var_s / (var_s + var_n) : 0.0;
    }
  }
  return out;
}

inline std::array<double, kIndexCount> theoretical_r2(const GroundTruth& gt,
                                                      double noise_sd_all,
                                                      std::size_t draws = 1'000'000) {
  std::array<double, kIndexCount> sds{};
  sds.fill(noise_sd_all);
  return theoretical_r2(gt, sds, draws);
}

namespace synth_detail {

inline nlohmann::json ground_truth_to_json(const GroundTruth& gt) {
  nlohmann::json j;
  j["version"] = kVersion;
  j["seed"] = gt.seed;
  j["latent_factor_count"] = gt.latent_factor_count;
  j["planted_on_scores"] = gt.planted_on_scores;
  j["region_ids"] = gt.region_ids;
  j["factors"] = gt.factors;
  j["activity_density"] = gt.activity_density;
  j["planted_features"] = gt.planted_features;
  auto matrix_to_json = [](const Matrix& m) {
    std::vector<std::vector<double>> rows(m.rows, std::vector<double>(m.cols));
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) rows[r][c] = m.at(r, c);
    return rows;
  };
  j["eta"] = matrix_to_json(gt.eta);
  j["signal"] = matrix_to_json(gt.signal);
  j["output_log_mu"] = gt.output_log_mu;
  j["output_log_sigma"] = gt.output_log_sigma;
  j["noise_sd"] = gt.noise_sd;
  j["signal_variance"] = gt.signal_variance;
  return j;
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  GroundTruth gt;
  gt.seed = j.at("seed").get<std::uint64_t>();
  gt.latent_factor_count = j.at("latent_factor_count").get<int>();
  gt.planted_on_scores = j.at("planted_on_scores").get<bool>();
  gt.region_ids = j.at("region_ids").get<std::vector<std::string>>();
  gt.factors = j.at("factors").get<std::vector<std::vector<double>>>();
  gt.activity_density = j.at("activity_density").get<std::vector<double>>();
  gt.planted_features = j.at("planted_features").get<std::vector<std::vector<double>>>();
  auto matrix_from_json = [](const nlohmann::json& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = rows[r][c].get<double>();
    return m;
  };
  gt.eta = matrix_from_json(j.at("eta"));
  gt.signal = matrix_from_json(j.at("signal"));
  for (int i = 0; i < kIndexCount; ++i) {
    gt.output_log_mu[i] = j.at("output_log_mu")[i].get<double>();
    gt.output_log_sigma[i] = j.at("output_log_sigma")[i].get<double>();
    gt.noise_sd[i] = j.at("noise_sd")[i].get<double>();
    gt.signal_variance[i] = j.at("signal_variance")[i].get<double>();
  }
  return gt;
}

}  // namespace synth_detail

inline void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out = open_output(path);
  out << synth_detail::ground_truth_to_json(gt).dump(1) << '\n';
  if (!out) throw std::runtime_error("error writing " + path);
}

inline GroundTruth load_ground_truth(const std::string& path) {
  return synth_detail::ground_truth_from_json(nlohmann::json::parse(read_file(path)));
}

/// Generates regions.csv, transactions.csv, indices.csv and
/// ground_truth.json under `out_dir`. Fully deterministic for a given seed;
/// every region draws from its own counter substream.
inline SynthOutput generate(const SynthConfig& cfg, const std::string& out_dir) {
  using namespace synth_detail;
  cfg.validate();
  const int L = cfg.latent_factor_count;
  const std::size_t R = cfg.region_count;

  SynthOutput out;
  out.regions_path = out_dir + "/regions.csv";
  out.transactions_path = out_dir + "/transactions.csv";
  out.indices_path = out_dir + "/indices.csv";
  out.ground_truth_path = out_dir + "/ground_truth.json";

  // ---- region plans -------------------------------------------------------
  // Factors are drawn by randomized quantile stratification: each factor's
  // 52 values cover the normal quantiles evenly, so no single region
  // dominates the planted signal variance and small validation splits stay
  // representative.
  std::vector<std::vector<std::size_t>> strata(L, std::vector<std::size_t>(R));
  for (int l = 0; l < L; ++l) {
    for (std::size_t r = 0; r < R; ++r) strata[l][r] = r;
    CounterRng srng(cfg.seed, "factor-strata", static_cast<std::uint64_t>(l + 1));
    srng.shuffle(strata[l]);
  }

  std::vector<RegionPlan> plans(R);
  auto factor_at = [&](const RegionPlan& p, int idx) {
    return p.factors[static_cast<std::size_t>(idx) % p.factors.size()];
  };
  for (std::size_t r = 0; r < R; ++r) {
    RegionPlan& p = plans[r];
    p.id = region_id_for(r, R);
    CounterRng rng(cfg.seed, "region", r + 1);
    p.factors.resize(L);
    for (int l = 0; l < L; ++l) {
      const double cell = (static_cast<double>(strata[l][r]) + 0.05 + 0.9 * rng.next_unit()) /
                          static_cast<double>(R);
      // uniform on +-sqrt(3) (unit variance): bounded, evenly spread factors
      p.factors[l] = 2.0 * std::sqrt(3.0) * (cell - 0.5);
    }
    p.area_km2 = std::exp(cfg.log_area_mean + cfg.log_area_sd * rng.next_normal());
    p.customer_share = rng.next_uniform(cfg.customer_share_min, cfg.customer_share_max);
    p.target_business_share =
        rng.next_uniform(cfg.business_share_min, cfg.business_share_max);
    p.activity_weight = std::exp(cfg.activity_factor_scale * factor_at(p, 0) +
                                 cfg.activity_jitter * rng.next_normal());
    p.p_night = sigmoid(cfg.night_base_logit + cfg.night_factor_scale * factor_at(p, 1));
    p.p_weekend =
        sigmoid(cfg.weekend_base_logit + cfg.weekend_factor_scale * factor_at(p, 2));
    p.p_outside =
        sigmoid(cfg.outside_base_logit + cfg.outside_factor_scale * factor_at(p, 2));
    p.p_foreign =
        sigmoid(cfg.foreign_base_logit + cfg.foreign_factor_scale * factor_at(p, 1));
    p.amount_shift = cfg.amount_factor_scale * factor_at(p, 0);
    p.expensive_tilt = cfg.expensive_tilt_scale * factor_at(p, 2);
    p.customers = cfg.customers_per_region.min +
                  static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                      cfg.customers_per_region.max - cfg.customers_per_region.min + 1)));
  }

  // category base logits, factor loadings and per-category amount effects
  std::vector<double> cat_base(kCategoryCount);
  {
    CounterRng rng(cfg.seed, "category-base");
    for (auto& v : cat_base) v = 0.7 * rng.next_normal();
  }
  std::vector<std::vector<double>> cat_load(kCategoryCount, std::vector<double>(L));
  {
    CounterRng rng(cfg.seed, "category-loadings");
    for (auto& row : cat_load)
      for (auto& v : row)
        v = rng.next_uniform(-cfg.category_mix_loading, cfg.category_mix_loading);
  }
  std::vector<double> cat_amount(kCategoryCount);
  {
    CounterRng rng(cfg.seed, "category-amount");
    for (auto& v : cat_amount) v = cfg.amount_category_sd * rng.next_normal();
  }

  for (std::size_t r = 0; r < R; ++r) {
    RegionPlan& p = plans[r];
    CounterRng rng(cfg.seed, "category-jitter", r + 1);
    p.category_cumulative.resize(kCategoryCount);
    double cum = 0.0;
    for (int c = 0; c < kCategoryCount; ++c) {
      double logit_c = cat_base[c] + cfg.category_mix_jitter * rng.next_normal();
      for (int l = 0; l < L; ++l) logit_c += cat_load[c][l] * p.factors[l];
      cum += std::exp(logit_c);
      p.category_cumulative[c] = cum;
    }
  }

  // ---- merchants -----------------------------------------------------------
  // per region: merchant plans plus per-category member lists
  std::vector<std::vector<MerchantPlan>> merchants(R);
  std::vector<std::array<std::vector<std::uint32_t>, kCategoryCount>> by_category(R);
  for (std::size_t r = 0; r < R; ++r) {
    RegionPlan& p = plans[r];
    CounterRng rng(cfg.seed, "merchants", r + 1);
    const int n = cfg.merchants_per_region.min +
                  static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                      cfg.merchants_per_region.max - cfg.merchants_per_region.min + 1)));
    merchants[r].resize(n);
    for (int m = 0; m < n; ++m) {
      MerchantPlan& mp = merchants[r][m];
      mp.category = static_cast<int>(rng.next_weighted(p.category_cumulative)) + 1;
      mp.log_price = cfg.merchant_price_sd * rng.next_normal();
      mp.exp_price = std::exp(mp.log_price);
      by_category[r][mp.category - 1].push_back(static_cast<std::uint32_t>(m));
    }
  }

  // ---- transaction quotas (largest remainder, exact total) -----------------
  {
    double total_weight = 0.0;
    for (const auto& p : plans) total_weight += p.activity_weight;
    std::uint64_t assigned = 0;
    std::vector<std::pair<double, std::size_t>> remainders;
    for (std::size_t r = 0; r < R; ++r) {
      const double exact = static_cast<double>(cfg.transactions_total) *
                           plans[r].activity_weight / total_weight;
      plans[r].txn_quota = static_cast<std::uint64_t>(exact);
      assigned += plans[r].txn_quota;
      remainders.push_back({exact - std::floor(exact), r});
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::uint64_t i = 0; assigned < cfg.transactions_total; ++i, ++assigned)
      plans[remainders[i % R].second].txn_quota += 1;
    for (auto& p : plans) {
      p.foreign_quota = static_cast<std::uint64_t>(
          std::llround(static_cast<double>(p.txn_quota) * p.p_foreign));
      p.domestic_quota = p.txn_quota - p.foreign_quota;
    }
  }

  // destination cumulative weights for out-of-region spending, excluding home
  std::vector<std::vector<double>> dest_cumulative(R, std::vector<double>(R, 0.0));
  for (std::size_t r = 0; r < R; ++r) {
    double cum = 0.0;
    for (std::size_t d = 0; d < R; ++d) {
      if (d != r) cum += plans[d].activity_weight;
      dest_cumulative[r][d] = cum;
    }
  }

  const DateTables dates;

  // ---- emit transactions ----------------------------------------------------
  const std::string provenance = std::string("# cardecon ") + kVersion + " synth\n# seed " +
                                 std::to_string(cfg.seed) + "\n";
  std::vector<std::int64_t> domestic_at_region(R, 0);
  std::vector<std::int64_t> in_area_count(R, 0);
  {
    std::ofstream txn_out = open_output(out.transactions_path);
    std::string buffer;
    buffer.reserve(1 << 20);
    buffer += provenance;
    buffer += "txn_id,timestamp,amount_cents,customer_id,customer_kind,"
              "home_region_or_country,merchant_id,merchant_region,category_id,group_id\n";

    std::uint64_t txn_counter = 0;
    char idbuf[32];

    auto flush_if_full = [&]() {
      if (buffer.size() > (1 << 20) - 512) {
        txn_out << buffer;
        buffer.clear();
      }
    };

    auto append_txn = [&](const CivilDateTime& ts, std::int64_t amount,
                          const std::string& customer, char kind,
                          const std::string& home_or_country, std::size_t merchant_region,
                          std::uint32_t merchant_idx, int category) {
      ++txn_counter;
      std::snprintf(idbuf, sizeof(idbuf), "T%09llu",
                    static_cast<unsigned long long>(txn_counter));
      buffer += idbuf;
      buffer += ',';
      buffer += format_civil(ts);
      buffer += ',';
      buffer += std::to_string(amount);
      buffer += ',';
      buffer += customer;
      buffer += ',';
      buffer += kind;
      buffer += ',';
      buffer += home_or_country;
      buffer += ',';
      buffer += 'M';
      buffer += plans[merchant_region].id;
      buffer += '-';
      buffer += std::to_string(merchant_idx);
      buffer += ',';
      buffer += plans[merchant_region].id;
      buffer += ',';
      buffer += std::to_string(category);
      buffer += ',';
      buffer += std::to_string(group_of_category(category));
      buffer += '\n';
      in_area_count[merchant_region] += 1;
      flush_if_full();
    };

    auto pick_merchant = [&](std::size_t region, int category, double tilt,
                             CounterRng& rng) -> std::pair<std::uint32_t, int> {
      // walk outward from the requested category until one has merchants
      int cat = category;
      for (int step = 0; by_category[region][cat - 1].empty(); ++step) {
        cat = 1 + (category - 1 + (step % 2 == 0 ? step / 2 + 1 : -(step / 2 + 1)) +
                   kCategoryCount * 4) %
                      kCategoryCount;
      }
      const auto& pool = by_category[region][cat - 1];
      if (pool.size() == 1) return {pool[0], cat};
      double cum = 0.0;
      std::vector<double> weights(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        cum += std::pow(merchants[region][pool[i]].exp_price, tilt);
        weights[i] = cum;
      }
      return {pool[rng.next_weighted(weights)], cat};
    };

    std::string customer;
    for (std::size_t r = 0; r < R; ++r) {
      const RegionPlan& home = plans[r];
      CounterRng rng(cfg.seed, "txn-domestic", r + 1);
      for (std::uint64_t i = 0; i < home.domestic_quota; ++i) {
        const bool outside = rng.next_unit() < home.p_outside;
        std::size_t dest = r;
        if (outside && R > 1) dest = rng.next_weighted(dest_cumulative[r]);
        const int category = static_cast<int>(rng.next_weighted(home.category_cumulative)) + 1;
        const auto [midx, actual_cat] =
            pick_merchant(dest, category, home.expensive_tilt, rng);
        const CivilDateTime ts = draw_timestamp(rng, dates, home.p_night, home.p_weekend);
        const MerchantPlan& mp = merchants[dest][midx];
        const double ln_amt = cfg.log_amount_base + cat_amount[actual_cat - 1] +
                              mp.log_price + home.amount_shift +
                              cfg.amount_noise_sd * rng.next_normal();
        const std::int64_t amount = std::max<std::int64_t>(1, std::llround(std::exp(ln_amt)));
        customer = "C";
        customer += home.id;
        customer += '-';
        customer += std::to_string(rng.next_below(static_cast<std::uint64_t>(home.customers)));
        append_txn(ts, amount, customer, 'D', home.id, dest, midx, actual_cat);
        domestic_at_region[dest] += 1;
      }

      CounterRng frng(cfg.seed, "txn-foreign", r + 1);
      for (std::uint64_t i = 0; i < home.foreign_quota; ++i) {
        const int category =
            static_cast<int>(frng.next_weighted(home.category_cumulative)) + 1;
        const auto [midx, actual_cat] = pick_merchant(r, category, 0.2, frng);
        const CivilDateTime ts = draw_timestamp(frng, dates, home.p_night, home.p_weekend);
        const MerchantPlan& mp = merchants[r][midx];
        const double ln_amt = cfg.log_amount_base + cat_amount[actual_cat - 1] +
                              mp.log_price + home.amount_shift + 0.15 +
                              cfg.amount_noise_sd * frng.next_normal();
        const std::int64_t amount = std::max<std::int64_t>(1, std::llround(std::exp(ln_amt)));
        const char* country = kCountries[frng.next_below(kCountries.size())];
        customer = "F";
        customer += country;
        customer += '-';
        customer += std::to_string(frng.next_below(400));
        append_txn(ts, amount, customer, 'F', country, r, midx, actual_cat);
      }
    }
    txn_out << buffer;
    if (!txn_out) throw std::runtime_error("error writing " + out.transactions_path);
  }

  // ---- region table ---------------------------------------------------------
  {
    std::ofstream reg_out = open_output(out.regions_path);
    reg_out << provenance
            << "region_id,name,area_km2,customer_market_share,external_domestic_txn_count\n";
    for (std::size_t r = 0; r < R; ++r) {
      const RegionPlan& p = plans[r];
      // external count chosen so the derived business share hits the target
      std::int64_t external = 0;
      if (domestic_at_region[r] > 0) {
        external = std::llround(static_cast<double>(domestic_at_region[r]) *
                                (1.0 - p.target_business_share) / p.target_business_share);
      }
      reg_out << p.id << ",Region-" << p.id << ',' << format_f64(p.area_km2) << ','
              << format_f64(p.customer_share) << ',' << external << '\n';
    }
    if (!reg_out) throw std::runtime_error("error writing " + out.regions_path);
  }

  // ---- plant official indices ----------------------------------------------
  GroundTruth& gt = out.ground_truth;
  gt.seed = cfg.seed;
  gt.latent_factor_count = L;
  gt.region_ids.resize(R);
  gt.factors.resize(R);
  gt.activity_density.resize(R);
  for (std::size_t r = 0; r < R; ++r) {
    gt.region_ids[r] = plans[r].id;
    gt.factors[r] = plans[r].factors;
    gt.activity_density[r] = static_cast<double>(in_area_count[r]) / plans[r].area_km2;
  }
  for (int j = 0; j < kIndexCount; ++j) {
    gt.output_log_mu[j] = synth_detail::kIndexLogMu[j];
    gt.output_log_sigma[j] = synth_detail::kIndexLogSigma[j];
  }

  // Planted features: the top-L standardized principal scores of the corpus'
  // own normalized indicator matrix, so the downstream model class contains
  // the planted relationship. Falls back to the raw factors when the corpus
  // is too degenerate to fit (e.g. an empty one).
  std::vector<std::vector<double>> features(R, std::vector<double>(L, 0.0));
  bool planted_on_scores = false;
  if (cfg.transactions_total > 0) {
    try {
      const RegionTable table = load_region_table(out.regions_path);
      const IngestResult ingested = ingest_file(out.transactions_path, table, 2);
      const IndicatorResult ind = compute_indicators(ingested.aggregates.regions,
                                                     ingested.regions);
      const std::size_t m = ind.matrix.region_ids.size();
      Matrix normalized(m, kIndicatorCount);
      for (int c = 0; c < kIndicatorCount; ++c) {
        std::vector<double> col = ind.matrix.values.column(c);
        const FittedDistribution d = fit_distribution(col);
        for (std::size_t i = 0; i < m; ++i)
          normalized.at(i, c) = to_quantile_total(col[i], d);
      }
      const PCAModel pca = fit_pca(normalized);
      const std::size_t k_used = std::min<std::size_t>(L, pca.k_max());
      const Matrix scores = project(pca, normalized, k_used);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t l = 0; l < k_used; ++l) {
          const double ev = pca.eigenvalues[l];
          features[r][l] = ev > 0.0 ? scores.at(r, l) / std::sqrt(ev) : 0.0;
        }
      planted_on_scores = true;
    } catch (const std::exception&) {
      planted_on_scores = false;  // fall back to raw factors below
    }
  }
  if (!planted_on_scores)
    for (std::size_t r = 0; r < R; ++r)
      for (int l = 0; l < L; ++l) features[r][l] = plans[r].factors[l];
  gt.planted_features = features;
  gt.planted_on_scores = planted_on_scores;

  const auto loadings = cfg.factor_index_loadings.empty()
                            ? synth_detail::default_index_loadings(L)
                            : cfg.factor_index_loadings;
  if (loadings.size() != kIndexCount)
    throw std::invalid_argument("synth: factor_index_loadings must have 6 rows");

  gt.eta = Matrix(R, kIndexCount);
  gt.signal = Matrix(R, kIndexCount);
  OfficialIndices indices;
  indices.region_ids = gt.region_ids;
  indices.values = Matrix(R, kIndexCount);

  for (int j = 0; j < kIndexCount; ++j) {
    if (loadings[j].size() != static_cast<std::size_t>(L))
      throw std::invalid_argument("synth: factor_index_loadings row length mismatch");
    std::vector<double> u(R, 0.0);
    for (std::size_t r = 0; r < R; ++r)
      for (int l = 0; l < L; ++l) u[r] += loadings[j][l] * features[r][l];
    const auto [b, c] = synth_detail::calibrate_probit_linear(u);

    for (std::size_t r = 0; r < R; ++r) {
      const double eta = b + c * u[r];
      gt.eta.at(r, j) = eta;
      gt.signal.at(r, j) = std::exp(synth_detail::kIndexLogMu[j] +
                                    synth_detail::kIndexLogSigma[j] *
                                        standard_normal_inv_cdf(sigmoid(eta)));
    }

    double sig_mean = 0.0, sig_var = 0.0;
    for (std::size_t r = 0; r < R; ++r) sig_mean += gt.signal.at(r, j);
    sig_mean /= static_cast<double>(R);
    for (std::size_t r = 0; r < R; ++r)
      sig_var += (gt.signal.at(r, j) - sig_mean) * (gt.signal.at(r, j) - sig_mean);
    sig_var /= static_cast<double>(R);
    gt.signal_variance[j] = sig_var;

    double noise = cfg.noise_sd[j];
    if (cfg.target_r2) {
      const double t = *cfg.target_r2;
      noise = t >= 1.0 ? 0.0 : std::sqrt(sig_var * (1.0 - t) / t);
    }
    gt.noise_sd[j] = noise;

    // Noise is a stratified uniform sample standardized to exactly the
    // requested sd, so the realized disturbance variance matches noise_sd
    // and every validation subset sees a representative noise spread.
    CounterRng nrng(cfg.seed, "index-noise", static_cast<std::uint64_t>(j + 1));
    std::vector<std::size_t> cells(R);
    for (std::size_t r = 0; r < R; ++r) cells[r] = r;
    nrng.shuffle(cells);
    std::vector<double> draws(R);
    double nm = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      draws[r] = (static_cast<double>(cells[r]) + 0.05 + 0.9 * nrng.next_unit()) /
                 static_cast<double>(R);
      nm += draws[r];
    }
    nm /= static_cast<double>(R);
    double nv = 0.0;
    for (double d : draws) nv += (d - nm) * (d - nm);
    nv /= static_cast<double>(R);
    const double nscale = nv > 0.0 ? noise / std::sqrt(nv) : 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      double y = gt.signal.at(r, j) + nscale * (draws[r] - nm);
      if (j == 2 || j == 3 || j == 4) y = std::max(y, 0.0);  // rates stay nonnegative
      indices.values.at(r, j) = y;
    }
  }

  write_official_indices(indices, out.indices_path,
                         {std::string("cardecon ") + kVersion + " synth",
                          "seed " + std::to_string(cfg.seed)});
  save_ground_truth(gt, out.ground_truth_path);
  return out;
}

}  // namespace cardecon
