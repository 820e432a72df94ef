#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "cardecon/csv.hpp"
#include "cardecon/distribution.hpp"
#include "cardecon/glm.hpp"
#include "cardecon/indicators.hpp"
#include "cardecon/pca.hpp"
#include "cardecon/rng.hpp"
#include "cardecon/version.hpp"

namespace cardecon {

inline constexpr int kIndexCount = 6;
inline constexpr std::array<const char*, kIndexCount> kIndexNames = {
    "gdp",        "housing_price", "unemployment_rate",
    "higher_education_pct", "crime_rate",    "life_expectancy",
};

/// The six official per-region indices the models predict.
struct OfficialIndices {
  std::vector<std::string> region_ids;
  Matrix values;  // rows align with region_ids, kIndexNames column order

  std::optional<std::size_t> find(std::string_view region_id) const {
    for (std::size_t i = 0; i < region_ids.size(); ++i)
      if (region_ids[i] == region_id) return i;
    return std::nullopt;
  }
};

inline OfficialIndices read_official_indices(const std::string& path) {
  std::ifstream in = open_input(path);
  OfficialIndices out;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::vector<std::string_view> f;
  bool saw_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim_cr(line);
    if (is_comment_or_blank(sv)) continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    split_fields(sv, f);
    if (f.size() != kIndexCount + 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected region_id plus 6 index columns");
    out.region_ids.emplace_back(f[0]);
    std::vector<double> row(kIndexCount);
    for (int c = 0; c < kIndexCount; ++c) {
      const auto v = parse_f64(f[c + 1]);
      if (!v || !std::isfinite(*v))
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": malformed index value");
      row[c] = *v;
    }
    // rates and percentages cannot be negative
    for (int c : {2, 3, 4})
      if (row[c] < 0.0)
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": negative " +
                                 std::string(kIndexNames[c]));
    rows.push_back(std::move(row));
  }
  out.values = Matrix(rows.size(), kIndexCount);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < kIndexCount; ++c) out.values.at(r, c) = rows[r][c];
  return out;
}

inline void write_official_indices(const OfficialIndices& idx, const std::string& path,
                                   const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "region_id";
  for (const char* name : kIndexNames) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < idx.region_ids.size(); ++r) {
    out << idx.region_ids[r];
    for (int c = 0; c < kIndexCount; ++c) out << ',' << format_f64(idx.values.at(r, c));
    out << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

// ---------------------------------------------------------------------------
// trained pipeline

struct IndexModel {
  FittedDistribution output_dist;
  GLMModel glm;
};

/// Everything needed to reproduce predictions: the 35 input distributions,
/// the PCA basis, the component count and one GLM + output distribution per
/// index. Serialization uses hexadecimal floats and round-trips bit-exactly.
struct TrainedPipeline {
  std::array<FittedDistribution, kIndicatorCount> indicator_dists;
  PCAModel pca;
  std::size_t k = 0;
  std::array<IndexModel, kIndexCount> index_models;
  std::vector<std::string> training_regions;
  std::uint64_t seed = 0;
};

struct KModeConfig {
  KMode mode = KMode::fixed(6);
};

namespace detail {

inline std::vector<std::size_t> resolve_subset(const IndicatorMatrix& matrix,
                                               const OfficialIndices& indices,
                                               const std::vector<std::string>& subset) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < matrix.region_ids.size(); ++i)
    row_of.emplace(matrix.region_ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(subset.size());
  for (const auto& id : subset) {
    auto it = row_of.find(id);
    if (it == row_of.end())
      throw std::invalid_argument("train: region " + id + " missing from indicator matrix");
    if (!indices.find(id))
      throw std::invalid_argument("train: region " + id + " missing from official indices");
    rows.push_back(it->second);
  }
  return rows;
}

}  // namespace detail

/// Fits the full chain on `region_subset` only: the 35 input distributions,
/// PCA of the normalized subset, one GLM per index on its normalized values,
/// and the 6 output distributions. Nothing outside the subset is read.
inline TrainedPipeline train(const IndicatorMatrix& matrix, const OfficialIndices& indices,
                             const std::vector<std::string>& region_subset,
                             const KMode& k_mode, std::uint64_t seed) {
  const auto rows = detail::resolve_subset(matrix, indices, region_subset);
  const std::size_t m = rows.size();
  if (m < 3) throw std::invalid_argument("train: need at least 3 training regions");

  TrainedPipeline p;
  p.seed = seed;
  p.training_regions = region_subset;

  Matrix normalized(m, kIndicatorCount);
  for (int c = 0; c < kIndicatorCount; ++c) {
    std::vector<double> col(m);
    for (std::size_t i = 0; i < m; ++i) col[i] = matrix.values.at(rows[i], c);
    try {
      p.indicator_dists[c] = fit_distribution(col);
    } catch (const std::exception& e) {
      throw std::runtime_error("train: indicator " + std::string(kIndicatorNames[c]) +
                               " (column " + std::to_string(c + 1) + "): " + e.what());
    }
    for (std::size_t i = 0; i < m; ++i)
      normalized.at(i, c) = to_quantile_total(col[i], p.indicator_dists[c]);
  }

  p.pca = fit_pca(normalized);
  p.k = select_components(p.pca, k_mode);
  if (m <= p.k + 1)
    throw std::invalid_argument("train: subset of " + std::to_string(m) +
                                " regions too small for k=" + std::to_string(p.k));

  const Matrix scores = project(p.pca, normalized, p.k);

  for (int j = 0; j < kIndexCount; ++j) {
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t idx_row = *indices.find(region_subset[i]);
      y[i] = indices.values.at(idx_row, j);
    }
    try {
      p.index_models[j].output_dist = fit_distribution(y);
    } catch (const std::exception& e) {
      throw std::runtime_error("train: index " + std::string(kIndexNames[j]) + ": " +
                               e.what());
    }
    std::vector<double> y_norm(m);
    for (std::size_t i = 0; i < m; ++i)
      y_norm[i] = to_quantile_total(y[i], p.index_models[j].output_dist);
    try {
      p.index_models[j].glm = fit_glm(scores, y_norm);
    } catch (const std::exception& e) {
      throw std::runtime_error("train: index " + std::string(kIndexNames[j]) +
                               " GLM: " + e.what());
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// prediction

struct PredictResult {
  std::vector<std::string> region_ids;  // as requested
  Matrix normalized;                    // m x 6, sigmoid scale
  Matrix original;                      // m x 6, index units
  std::vector<std::string> errors;      // per region; empty string = ok

  bool ok(std::size_t i) const { return errors[i].empty(); }
};

/// Normalizes each region's indicators with the stored distributions,
/// projects, applies each GLM, then maps back through each output inverse
/// CDF. Unknown regions get an error entry; the rest are still predicted.
inline PredictResult predict(const TrainedPipeline& p, const IndicatorMatrix& matrix,
                             const std::vector<std::string>& region_subset) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < matrix.region_ids.size(); ++i)
    row_of.emplace(matrix.region_ids[i], i);

  PredictResult out;
  out.region_ids = region_subset;
  out.normalized = Matrix(region_subset.size(), kIndexCount, 0.0);
  out.original = Matrix(region_subset.size(), kIndexCount, 0.0);
  out.errors.assign(region_subset.size(), "");

  std::vector<double> q(kIndicatorCount), row(p.k);
  for (std::size_t i = 0; i < region_subset.size(); ++i) {
    auto it = row_of.find(region_subset[i]);
    if (it == row_of.end()) {
      out.errors[i] = "region " + region_subset[i] + " not present in indicator matrix";
      continue;
    }
    for (int c = 0; c < kIndicatorCount; ++c)
      q[c] = to_quantile_total(matrix.values.at(it->second, c), p.indicator_dists[c]);
    for (std::size_t comp = 0; comp < p.k; ++comp) {
      const double* basis = p.pca.components.row(comp);
      double s = 0.0;
      for (int c = 0; c < kIndicatorCount; ++c) s += (q[c] - p.pca.mean[c]) * basis[c];
      row[comp] = s;
    }
    for (int j = 0; j < kIndexCount; ++j) {
      const double norm = predict_norm(p.index_models[j].glm, row);
      out.normalized.at(i, j) = norm;
      out.original.at(i, j) = from_quantile(norm, p.index_models[j].output_dist);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross-validation

struct SessionMetrics {
  // [index] -> R^2; validation entries are absent when the split leaves no
  // validation regions or a metric is undefined (constant response)
  std::array<std::optional<double>, kIndexCount> r2_train_norm;
  std::array<std::optional<double>, kIndexCount> r2_val_norm;
  std::array<std::optional<double>, kIndexCount> r2_train_orig;
  std::array<std::optional<double>, kIndexCount> r2_val_orig;
};

struct CrossValSession {
  std::vector<std::string> train_regions;
  std::vector<std::string> val_regions;
  bool failed = false;
  std::string failure;
  SessionMetrics metrics;
};

struct CrossValReport {
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::vector<CrossValSession> sessions;
  SessionMetrics averages;  // arithmetic mean over successful sessions

  std::size_t successful_sessions() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.failed ? 0 : 1;
    return n;
  }
};

namespace detail {

inline void evaluate_split(const TrainedPipeline& p, const IndicatorMatrix& matrix,
                           const OfficialIndices& indices,
                           const std::vector<std::string>& subset,
                           std::array<std::optional<double>, kIndexCount>& r2_norm,
                           std::array<std::optional<double>, kIndexCount>& r2_orig) {
  if (subset.empty()) return;
  const PredictResult pred = predict(p, matrix, subset);
  for (int j = 0; j < kIndexCount; ++j) {
    std::vector<double> y, y_norm, yhat_norm, yhat_orig;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      if (!pred.ok(i)) continue;
      const auto row = indices.find(subset[i]);
      if (!row) continue;
      y.push_back(indices.values.at(*row, j));
      y_norm.push_back(to_quantile_total(y.back(), p.index_models[j].output_dist));
      yhat_norm.push_back(pred.normalized.at(i, j));
      yhat_orig.push_back(pred.original.at(i, j));
    }
    if (y.size() < 2) continue;
    try {
      r2_norm[j] = r_squared(y_norm, yhat_norm);
    } catch (const std::exception&) {
    }
    try {
      r2_orig[j] = r_squared(y, yhat_orig);
    } catch (const std::exception&) {
    }
  }
}

inline void average_metrics(CrossValReport& report) {
  auto avg = [&](auto member) {
    for (int j = 0; j < kIndexCount; ++j) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& s : report.sessions) {
        if (s.failed) continue;
        const auto& v = (s.metrics.*member)[j];
        if (v) {
          sum += *v;
          ++n;
        }
      }
      if (n > 0) (report.averages.*member)[j] = sum / static_cast<double>(n);
    }
  };
  avg(&SessionMetrics::r2_train_norm);
  avg(&SessionMetrics::r2_val_norm);
  avg(&SessionMetrics::r2_train_orig);
  avg(&SessionMetrics::r2_val_orig);
}

}  // namespace detail

/// Repeated shuffle-and-split evaluation. Each session draws a uniform
/// train subset of `train_size` without replacement (counter RNG keyed by
/// seed and session), refits the whole chain on it and scores both sets on
/// both scales. Failed sessions are recorded and excluded from averages.
inline CrossValReport cross_validate(const IndicatorMatrix& matrix,
                                     const OfficialIndices& indices,
                                     std::size_t sessions, std::size_t train_size,
                                     const KMode& k_mode, std::uint64_t seed) {
  const std::size_t n = matrix.region_ids.size();
  if (sessions < 1) throw std::invalid_argument("cross_validate: sessions must be >= 1");
  if (train_size > n)
    throw std::invalid_argument("cross_validate: train_size exceeds region count");

  CrossValReport report;
  report.seed = seed;
  report.train_size = train_size;

  for (std::size_t s = 0; s < sessions; ++s) {
    CrossValSession session;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    CounterRng rng(seed, "cv-split", s + 1);
    rng.shuffle(order);
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_size));
    std::sort(order.begin() + static_cast<std::ptrdiff_t>(train_size), order.end());
    for (std::size_t i = 0; i < n; ++i) {
      auto& dst = i < train_size ? session.train_regions : session.val_regions;
      dst.push_back(matrix.region_ids[order[i]]);
    }

    try {
      const TrainedPipeline p = train(matrix, indices, session.train_regions, k_mode, seed);
      detail::evaluate_split(p, matrix, indices, session.train_regions,
                             session.metrics.r2_train_norm, session.metrics.r2_train_orig);
      detail::evaluate_split(p, matrix, indices, session.val_regions,
                             session.metrics.r2_val_norm, session.metrics.r2_val_orig);
    } catch (const std::exception& e) {
      session.failed = true;
      session.failure = e.what();
    }
    report.sessions.push_back(std::move(session));
  }

  if (report.successful_sessions() == 0)
    throw std::runtime_error("cross_validate: every session failed; first failure: " +
                             report.sessions.front().failure);
  detail::average_metrics(report);
  return report;
}

// ---------------------------------------------------------------------------
// component sweep

struct SweepPoint {
  std::size_t k = 0;
  // averaged over indices and successful sessions
  std::optional<double> r2_train_norm, r2_val_norm, r2_train_orig, r2_val_orig;
};

/// Cross-validates once per k in [k_min, k_max] with identical splits
/// (same seed) so the curve isolates the effect of the component count.
inline std::vector<SweepPoint> component_sweep(const IndicatorMatrix& matrix,
                                               const OfficialIndices& indices,
                                               std::size_t k_min, std::size_t k_max,
                                               std::size_t sessions, std::size_t train_size,
                                               std::uint64_t seed) {
  if (k_min < 1 || k_min > k_max)
    throw std::invalid_argument("component_sweep: invalid k range");
  std::vector<SweepPoint> out;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    const CrossValReport rep =
        cross_validate(matrix, indices, sessions, train_size, KMode::fixed(k), seed);
    SweepPoint pt;
    pt.k = k;
    auto mean_of = [&](auto member) -> std::optional<double> {
      double sum = 0.0;
      int n = 0;
      for (int j = 0; j < kIndexCount; ++j)
        if ((rep.averages.*member)[j]) {
          sum += *(rep.averages.*member)[j];
          ++n;
        }
      if (n == 0) return std::nullopt;
      return sum / n;
    };
    pt.r2_train_norm = mean_of(&SessionMetrics::r2_train_norm);
    pt.r2_val_norm = mean_of(&SessionMetrics::r2_val_norm);
    pt.r2_train_orig = mean_of(&SessionMetrics::r2_train_orig);
    pt.r2_val_orig = mean_of(&SessionMetrics::r2_val_orig);
    out.push_back(pt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// principal-component / index correlations

struct CorrelationTable {
  std::size_t k = 0;
  Matrix values;                 // k x 6 Pearson correlations
  std::vector<std::vector<bool>> flagged;  // |r| > threshold
  double threshold = 0.40;
};

/// Pearson correlations between the pipeline's projected scores and the
/// normalized official indices; entries with |r| above the threshold are
/// flagged the way the strongest correlations are highlighted in reports.
inline CorrelationTable pc_index_correlations(const TrainedPipeline& p,
                                              const IndicatorMatrix& matrix,
                                              const OfficialIndices& indices,
                                              double flag_threshold = 0.40) {
  std::vector<std::string> common;
  for (const auto& id : matrix.region_ids)
    if (indices.find(id)) common.push_back(id);
  if (common.size() < 2)
    throw std::invalid_argument("pc_index_correlations: need at least 2 shared regions");

  Matrix normalized(common.size(), kIndicatorCount);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < matrix.region_ids.size(); ++i)
    row_of.emplace(matrix.region_ids[i], i);
  for (std::size_t i = 0; i < common.size(); ++i) {
    const std::size_t r = row_of.at(common[i]);
    for (int c = 0; c < kIndicatorCount; ++c)
      normalized.at(i, c) =
          to_quantile_total(matrix.values.at(r, c), p.indicator_dists[c]);
  }
  const Matrix scores = project(p.pca, normalized, p.k);

  CorrelationTable table;
  table.k = p.k;
  table.threshold = flag_threshold;
  table.values = Matrix(p.k, kIndexCount, 0.0);
  table.flagged.assign(p.k, std::vector<bool>(kIndexCount, false));

  for (int j = 0; j < kIndexCount; ++j) {
    std::vector<double> y_norm(common.size());
    for (std::size_t i = 0; i < common.size(); ++i) {
      const std::size_t r = *indices.find(common[i]);
      y_norm[i] = to_quantile_total(indices.values.at(r, j), p.index_models[j].output_dist);
    }
    for (std::size_t c = 0; c < p.k; ++c) {
      const std::vector<double> score_col = scores.column(c);
      const double r = pearson(score_col, y_norm);
      table.values.at(c, j) = r;
      table.flagged[c][j] = std::fabs(r) > flag_threshold;
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// serialization (versioned, field-tagged, hex floats for bit-exact round trips)

namespace detail {

inline void write_dist(std::ostream& out, const FittedDistribution& d) {
  out << family_name(d.family) << ' ' << format_f64_hex(d.mu) << ' '
      << format_f64_hex(d.sigma) << ' ' << format_f64_hex(d.log_likelihood) << ' ' << d.n;
}

inline FittedDistribution parse_dist(std::istringstream& ss, const std::string& context) {
  std::string family, mu, sigma, loglik;
  std::size_t n = 0;
  if (!(ss >> family >> mu >> sigma >> loglik >> n))
    throw std::runtime_error("pipeline parse: bad distribution in " + context);
  FittedDistribution d;
  if (family == "normal")
    d.family = DistFamily::kNormal;
  else if (family == "lognormal")
    d.family = DistFamily::kLognormal;
  else
    throw std::runtime_error("pipeline parse: unknown family '" + family + "'");
  const auto pm = parse_f64_hex(mu), ps = parse_f64_hex(sigma), pl = parse_f64_hex(loglik);
  if (!pm || !ps || !pl)
    throw std::runtime_error("pipeline parse: bad hex float in " + context);
  d.mu = *pm;
  d.sigma = *ps;
  d.log_likelihood = *pl;
  d.n = n;
  return d;
}

}  // namespace detail

inline std::string serialize_pipeline(const TrainedPipeline& p) {
  std::ostringstream out;
  out << "cardecon-pipeline v1\n";
  out << "seed " << p.seed << '\n';
  out << "k " << p.k << '\n';
  out << "regions " << p.training_regions.size();
  for (const auto& id : p.training_regions) out << ' ' << id;
  out << '\n';
  for (int c = 0; c < kIndicatorCount; ++c) {
    out << "indicator_dist " << (c + 1) << ' ';
    detail::write_dist(out, p.indicator_dists[c]);
    out << '\n';
  }
  const std::size_t dim = p.pca.mean.size();
  out << "pca_dim " << dim << '\n';
  out << "pca_mean";
  for (double v : p.pca.mean) out << ' ' << format_f64_hex(v);
  out << '\n';
  out << "pca_eigenvalues";
  for (double v : p.pca.eigenvalues) out << ' ' << format_f64_hex(v);
  out << '\n';
  out << "pca_explained";
  for (double v : p.pca.explained_fraction) out << ' ' << format_f64_hex(v);
  out << '\n';
  for (std::size_t r = 0; r < p.pca.components.rows; ++r) {
    out << "pca_component " << (r + 1);
    for (std::size_t c = 0; c < dim; ++c)
      out << ' ' << format_f64_hex(p.pca.components.at(r, c));
    out << '\n';
  }
  for (int j = 0; j < kIndexCount; ++j) {
    const IndexModel& im = p.index_models[j];
    out << "index " << kIndexNames[j] << '\n';
    out << "output_dist ";
    detail::write_dist(out, im.output_dist);
    out << '\n';
    out << "glm_beta";
    for (double b : im.glm.beta) out << ' ' << format_f64_hex(b);
    out << '\n';
    out << "glm_converged " << (im.glm.converged ? 1 : 0) << '\n';
    out << "glm_iterations " << im.glm.iterations << '\n';
    out << "glm_deviance " << format_f64_hex(im.glm.final_deviance) << '\n';
  }
  out << "end\n";
  return out.str();
}

inline TrainedPipeline deserialize_pipeline(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto next_line = [&](const char* what) -> std::istringstream {
    // '#' provenance comments and blank lines may appear anywhere
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!is_comment_or_blank(line)) return std::istringstream(line);
    }
    throw std::runtime_error(std::string("pipeline parse: unexpected end before ") + what);
  };
  auto expect_tag = [&](std::istringstream& ss, const std::string& tag) {
    std::string got;
    ss >> got;
    if (got != tag)
      throw std::runtime_error("pipeline parse: expected '" + tag + "', got '" + got + "'");
  };
  auto read_hex_vector = [&](std::istringstream& ss, std::size_t n, const char* what) {
    std::vector<double> out(n);
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(ss >> tok))
        throw std::runtime_error(std::string("pipeline parse: short vector in ") + what);
      const auto v = parse_f64_hex(tok);
      if (!v) throw std::runtime_error(std::string("pipeline parse: bad hex in ") + what);
      out[i] = *v;
    }
    return out;
  };

  {
    auto ss = next_line("header");
    std::string word, version;
    ss >> word >> version;
    if (word != "cardecon-pipeline" || version != "v1")
      throw std::runtime_error("pipeline parse: unsupported header '" + line + "'");
  }

  TrainedPipeline p;
  {
    auto ss = next_line("seed");
    expect_tag(ss, "seed");
    ss >> p.seed;
  }
  {
    auto ss = next_line("k");
    expect_tag(ss, "k");
    ss >> p.k;
  }
  {
    auto ss = next_line("regions");
    expect_tag(ss, "regions");
    std::size_t n = 0;
    ss >> n;
    std::string id;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(ss >> id)) throw std::runtime_error("pipeline parse: short region list");
      p.training_regions.push_back(id);
    }
  }
  for (int c = 0; c < kIndicatorCount; ++c) {
    auto ss = next_line("indicator_dist");
    expect_tag(ss, "indicator_dist");
    int got = 0;
    ss >> got;
    if (got != c + 1) throw std::runtime_error("pipeline parse: indicator_dist out of order");
    p.indicator_dists[c] = detail::parse_dist(ss, "indicator_dist");
  }
  std::size_t dim = 0;
  {
    auto ss = next_line("pca_dim");
    expect_tag(ss, "pca_dim");
    ss >> dim;
    if (dim == 0) throw std::runtime_error("pipeline parse: bad pca_dim");
  }
  {
    auto ss = next_line("pca_mean");
    expect_tag(ss, "pca_mean");
    p.pca.mean = read_hex_vector(ss, dim, "pca_mean");
  }
  {
    auto ss = next_line("pca_eigenvalues");
    expect_tag(ss, "pca_eigenvalues");
    p.pca.eigenvalues = read_hex_vector(ss, dim, "pca_eigenvalues");
  }
  {
    auto ss = next_line("pca_explained");
    expect_tag(ss, "pca_explained");
    p.pca.explained_fraction = read_hex_vector(ss, dim, "pca_explained");
  }
  p.pca.components = Matrix(dim, dim);
  for (std::size_t r = 0; r < dim; ++r) {
    auto ss = next_line("pca_component");
    expect_tag(ss, "pca_component");
    std::size_t got = 0;
    ss >> got;
    if (got != r + 1) throw std::runtime_error("pipeline parse: pca_component out of order");
    const auto row = read_hex_vector(ss, dim, "pca_component");
    for (std::size_t c = 0; c < dim; ++c) p.pca.components.at(r, c) = row[c];
  }
  for (int j = 0; j < kIndexCount; ++j) {
    {
      auto ss = next_line("index");
      expect_tag(ss, "index");
      std::string name;
      ss >> name;
      if (name != kIndexNames[j])
        throw std::runtime_error("pipeline parse: expected index " +
                                 std::string(kIndexNames[j]) + ", got " + name);
    }
    {
      auto ss = next_line("output_dist");
      expect_tag(ss, "output_dist");
      p.index_models[j].output_dist = detail::parse_dist(ss, "output_dist");
    }
    {
      auto ss = next_line("glm_beta");
      expect_tag(ss, "glm_beta");
      std::string tok;
      std::vector<double> beta;
      while (ss >> tok) {
        const auto v = parse_f64_hex(tok);
        if (!v) throw std::runtime_error("pipeline parse: bad hex in glm_beta");
        beta.push_back(*v);
      }
      if (beta.size() != p.k + 1)
        throw std::runtime_error("pipeline parse: glm_beta length mismatch");
      p.index_models[j].glm.beta = std::move(beta);
    }
    {
      auto ss = next_line("glm_converged");
      expect_tag(ss, "glm_converged");
      int v = 0;
      ss >> v;
      p.index_models[j].glm.converged = v != 0;
    }
    {
      auto ss = next_line("glm_iterations");
      expect_tag(ss, "glm_iterations");
      ss >> p.index_models[j].glm.iterations;
    }
    {
      auto ss = next_line("glm_deviance");
      expect_tag(ss, "glm_deviance");
      std::string tok;
      ss >> tok;
      const auto v = parse_f64_hex(tok);
      if (!v) throw std::runtime_error("pipeline parse: bad hex in glm_deviance");
      p.index_models[j].glm.final_deviance = *v;
    }
  }
  {
    auto ss = next_line("end");
    expect_tag(ss, "end");
  }
  return p;
}

inline void save_pipeline(const TrainedPipeline& p, const std::string& path,
                          const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << serialize_pipeline(p);
  if (!out) throw std::runtime_error("error writing " + path);
}

inline TrainedPipeline load_pipeline(const std::string& path) {
  return deserialize_pipeline(read_file(path));
}

// ---------------------------------------------------------------------------
// report writers (plot-ready delimited text)

inline void write_crossval_report(const CrossValReport& rep, const std::string& path,
                                  const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "session,index,r2_train_norm,r2_val_norm,r2_train_orig,r2_val_orig\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? format_f64(*v) : std::string();
  };
  for (std::size_t s = 0; s < rep.sessions.size(); ++s) {
    const auto& session = rep.sessions[s];
    if (session.failed) {
      out << (s + 1) << ",failed,,,,\n";
      continue;
    }
    for (int j = 0; j < kIndexCount; ++j) {
      out << (s + 1) << ',' << kIndexNames[j] << ','
          << cell(session.metrics.r2_train_norm[j]) << ','
          << cell(session.metrics.r2_val_norm[j]) << ','
          << cell(session.metrics.r2_train_orig[j]) << ','
          << cell(session.metrics.r2_val_orig[j]) << '\n';
    }
  }
  for (int j = 0; j < kIndexCount; ++j) {
    out << "avg," << kIndexNames[j] << ',' << cell(rep.averages.r2_train_norm[j]) << ','
        << cell(rep.averages.r2_val_norm[j]) << ',' << cell(rep.averages.r2_train_orig[j])
        << ',' << cell(rep.averages.r2_val_orig[j]) << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_crossval_splits(const CrossValReport& rep, const std::string& path,
                                  const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "session,region_id,role\n";
  for (std::size_t s = 0; s < rep.sessions.size(); ++s) {
    for (const auto& id : rep.sessions[s].train_regions)
      out << (s + 1) << ',' << id << ",train\n";
    for (const auto& id : rep.sessions[s].val_regions)
      out << (s + 1) << ',' << id << ",validation\n";
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_sweep(const std::vector<SweepPoint>& sweep, const std::string& path,
                        const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "k,r2_train_norm,r2_val_norm,r2_train_orig,r2_val_orig\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? format_f64(*v) : std::string();
  };
  for (const auto& pt : sweep)
    out << pt.k << ',' << cell(pt.r2_train_norm) << ',' << cell(pt.r2_val_norm) << ','
        << cell(pt.r2_train_orig) << ',' << cell(pt.r2_val_orig) << '\n';
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_correlation_table(const CorrelationTable& table, const std::string& path,
                                    const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "pc";
  for (const char* name : kIndexNames) out << ',' << name;
  out << ",flagged\n";
  for (std::size_t r = 0; r < table.k; ++r) {
    out << (r + 1);
    std::string flags;
    for (int j = 0; j < kIndexCount; ++j) {
      out << ',' << format_f64(table.values.at(r, j));
      if (table.flagged[r][j]) {
        if (!flags.empty()) flags += ';';
        flags += kIndexNames[j];
      }
    }
    out << ',' << flags << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_explained_variance(const PCAModel& pca, const std::string& path,
                                     const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "component,eigenvalue,explained_fraction,cumulative_fraction\n";
  double cum = 0.0;
  for (std::size_t i = 0; i < pca.k_max(); ++i) {
    cum += pca.explained_fraction[i];
    out << (i + 1) << ',' << format_f64(pca.eigenvalues[i]) << ','
        << format_f64(pca.explained_fraction[i]) << ',' << format_f64(cum) << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_loadings(const PCAModel& pca, const std::string& path,
                           const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "component";
  for (const char* name : kIndicatorNames) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < pca.k_max(); ++r) {
    out << (r + 1);
    for (std::size_t c = 0; c < pca.mean.size(); ++c)
      out << ',' << format_f64(pca.components.at(r, c));
    out << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline void write_predictions(const PredictResult& pred, const std::string& path,
                              const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "region_id,index,predicted_norm,predicted_orig,error\n";
  for (std::size_t i = 0; i < pred.region_ids.size(); ++i) {
    if (!pred.ok(i)) {
      out << pred.region_ids[i] << ",,,," << pred.errors[i] << '\n';
      continue;
    }
    for (int j = 0; j < kIndexCount; ++j)
      out << pred.region_ids[i] << ',' << kIndexNames[j] << ','
          << format_f64(pred.normalized.at(i, j)) << ','
          << format_f64(pred.original.at(i, j)) << ",\n";
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

}  // namespace cardecon
