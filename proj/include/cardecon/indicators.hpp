#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cardecon/csv.hpp"
#include "cardecon/linalg.hpp"
#include "cardecon/types.hpp"

namespace cardecon {

inline constexpr int kIndicatorCount = 35;

/// Column order is fixed; readers and writers rely on it.
inline constexpr std::array<const char*, kIndicatorCount> kIndicatorNames = {
    "txn_density",            // 1  weighted in-area txn count / km^2
    "amount_density",         // 2  weighted in-area amount / km^2
    "in_area_avg_amount",     // 3  in-area amount / in-area count
    "txn_per_customer",       // 4  resident txn count / distinct active residents
    "resident_avg_amount",    // 5  resident amount / resident count
    "visitors_domestic_pct",  // 6  domestic out-of-region share of in-area count
    "visitors_foreign_pct",   // 7  foreign share of in-area count
    "diversity_resident",     // 8  categories covering 80% of resident spending
    "diversity_in_area",      // 9  categories covering 80% of in-area earnings
    "business_density",       // 10 active businesses / km^2
    "avg_business_size",      // 11 in-area amount / active businesses
    "sh_gas_parking_toll",    // 12..22: resident spending share per bundle
    "sh_taxi",
    "sh_public_transport",
    "sh_cafes_restaurants",
    "sh_fast_food",
    "sh_food",
    "sh_recreation",
    "sh_fashion_beauty",
    "sh_medical",
    "sh_cultural",
    "sh_travel",
    "res_night_txn_pct",      // 23
    "res_weekend_txn_pct",    // 24
    "res_night_amount_pct",   // 25
    "res_weekend_amount_pct", // 26
    "area_night_amount_pct",  // 27
    "area_weekend_amount_pct",// 28
    "area_night_txn_pct",     // 29
    "area_weekend_txn_pct",   // 30
    "res_outside_txn_pct",    // 31
    "nonres_in_area_txn_pct", // 32
    "res_outside_amount_pct", // 33
    "nonres_in_area_amt_pct", // 34
    "res_expensive_txn_pct",  // 35
};

inline constexpr int kBundleCount = 11;
inline constexpr std::array<const char*, kBundleCount> kBundleNames = {
    "gas_parking_toll", "taxi",      "public_transport", "cafes_restaurants",
    "fast_food",        "food",      "recreation",       "fashion_beauty_jewelry",
    "medical",          "cultural",  "travel",
};

/// category_id -> bundle for indicators 12..22. The classification itself is
/// configuration: the default below ships with the repo (data/category_bundles.csv)
/// and can be overridden per run. Index 0 means "no bundle".
class BundleMap {
 public:
  BundleMap() { bundle_of_.fill(0); }

  static BundleMap default_map() {
    BundleMap m;
    // contiguous category ranges; categories 71..76 stay unbundled
    const std::array<std::pair<int, int>, kBundleCount> ranges = {{
        {1, 7},    // gas_parking_toll
        {8, 10},   // taxi
        {11, 14},  // public_transport
        {15, 22},  // cafes_restaurants
        {23, 26},  // fast_food
        {27, 34},  // food
        {35, 42},  // recreation
        {43, 50},  // fashion_beauty_jewelry
        {51, 57},  // medical
        {58, 64},  // cultural
        {65, 70},  // travel
    }};
    for (int b = 0; b < kBundleCount; ++b)
      for (int c = ranges[b].first; c <= ranges[b].second; ++c) m.set(c, b + 1);
    return m;
  }

  void set(int category_id, int bundle_index_1based) {
    if (category_id < 1 || category_id > kCategoryCount)
      throw std::invalid_argument("bundle map: category out of range");
    bundle_of_[category_id] = static_cast<std::uint8_t>(bundle_index_1based);
  }

  /// 0 when the category belongs to no bundle, else 1..kBundleCount.
  int bundle_of(int category_id) const { return bundle_of_[category_id]; }

  /// Two-column file: category_id,bundle_name. Unlisted categories are unbundled.
  static BundleMap load(const std::string& path) {
    std::ifstream in = open_input(path);
    BundleMap m;
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
      if (f.size() != 2)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected category_id,bundle_name");
      const auto cat = parse_i64(f[0]);
      if (!cat || *cat < 1 || *cat > kCategoryCount)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": bad category id");
      int bundle = 0;
      for (int b = 0; b < kBundleCount; ++b)
        if (f[1] == kBundleNames[b]) bundle = b + 1;
      if (bundle == 0)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": unknown bundle name '" + std::string(f[1]) + "'");
      m.set(static_cast<int>(*cat), bundle);
    }
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out = open_output(path);
    out << "category_id,bundle_name\n";
    for (int c = 1; c <= kCategoryCount; ++c)
      if (bundle_of_[c] != 0)
        out << c << ',' << kBundleNames[bundle_of_[c] - 1] << '\n';
  }

 private:
  std::array<std::uint8_t, kCategoryCount + 1> bundle_of_;
};

/// Minimal number of top categories whose share of the grand total reaches
/// `threshold`; equal totals are broken by ascending category id.
inline int diversity_count(std::span<const double> category_totals, double threshold = 0.8) {
  double total = 0.0;
  for (double t : category_totals) {
    if (t < 0.0) throw std::invalid_argument("diversity_count: negative total");
    total += t;
  }
  if (!(total > 0.0))
    throw std::invalid_argument("diversity_count: all category totals are zero");

  std::vector<std::size_t> order(category_totals.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (category_totals[a] != category_totals[b])
      return category_totals[a] > category_totals[b];
    return a < b;
  });

  double cum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    cum += category_totals[order[k]];
    if (cum / total >= threshold) return static_cast<int>(k + 1);
  }
  return static_cast<int>(order.size());
}

using MerchantMap = std::unordered_map<std::string, MerchantAggregate>;

/// Merchants whose raw average transaction amount strictly exceeds their
/// category's overall average. Exact integer cross-multiplication, so ties
/// never enter the set.
inline std::unordered_set<std::string> expensive_business_set(const MerchantMap& merchants) {
  std::array<std::int64_t, kCategoryCount + 1> cat_count{};
  std::array<std::int64_t, kCategoryCount + 1> cat_amount{};
  for (const auto& [id, m] : merchants) {
    cat_count[m.category_id] += m.txn_count;
    cat_amount[m.category_id] += m.amount_sum;
  }
  std::unordered_set<std::string> out;
  for (const auto& [id, m] : merchants) {
    if (m.txn_count <= 0) continue;
    // m.amount/m.count > cat_amount/cat_count  without division
    const __int128 lhs = static_cast<__int128>(m.amount_sum) * cat_count[m.category_id];
    const __int128 rhs = static_cast<__int128>(cat_amount[m.category_id]) * m.txn_count;
    if (lhs > rhs) out.insert(id);
  }
  return out;
}

struct IndicatorMatrix {
  std::vector<std::string> region_ids;
  Matrix values;  // region_ids.size() x kIndicatorCount, Table-1 column order
};

struct IndicatorResult {
  IndicatorMatrix matrix;
  std::vector<std::string> warnings;  // one per zero-denominator event
};

namespace detail {

inline double safe_ratio(double num, double den, const std::string& region,
                         const char* what, std::vector<std::string>& warnings) {
  if (den == 0.0) {
    warnings.push_back("region " + region + ": zero denominator for " + what +
                       "; indicator set to 0");
    return 0.0;
  }
  return num / den;
}

}  // namespace detail

/// All 35 per-region indicators. Aggregates must be finalized (foreign
/// contributions folded, expensive totals filled). Zero denominators produce
/// a 0 entry plus a warning so the matrix stays rectangular.
inline IndicatorResult compute_indicators(const std::vector<RegionAggregate>& aggregates,
                                          const RegionTable& regions,
                                          const BundleMap& bundles = BundleMap::default_map()) {
  if (aggregates.size() != regions.size())
    throw std::invalid_argument("compute_indicators: aggregate/region count mismatch");

  IndicatorResult res;
  res.matrix.region_ids.resize(regions.size());
  res.matrix.values = Matrix(regions.size(), kIndicatorCount, 0.0);
  auto& warnings = res.warnings;

  for (std::size_t r = 0; r < regions.size(); ++r) {
    const RegionAggregate& agg = aggregates[r];
    const RegionMeta& meta = regions.at(r);
    const std::string& id = meta.region_id;
    res.matrix.region_ids[r] = id;
    double* row = res.matrix.values.row(r);

    const WeightedPair in_area = agg.in_area_total();
    const double area_cnt = in_area.count();
    const double area_amt = in_area.amount_cents();
    const double res_cnt = agg.resident_total.count();
    const double res_amt = agg.resident_total.amount_cents();
    const double n_customers = static_cast<double>(agg.distinct_residents());
    const double n_businesses = static_cast<double>(agg.distinct_businesses);

    auto ratio = [&](double num, double den, const char* what) {
      return detail::safe_ratio(num, den, id, what, warnings);
    };

    row[0] = area_cnt / meta.area_km2;
    row[1] = area_amt / meta.area_km2;
    row[2] = ratio(area_amt, area_cnt, "in_area_avg_amount");
    row[3] = ratio(res_cnt, n_customers, "txn_per_customer");
    row[4] = ratio(res_amt, res_cnt, "resident_avg_amount");
    row[5] = 100.0 * ratio(agg.in_area_domestic_out.count(), area_cnt, "visitors_domestic_pct");
    row[6] = 100.0 * ratio(agg.in_area_foreign.count(), area_cnt, "visitors_foreign_pct");

    std::array<double, kCategoryCount> cat_amt;
    bool any = false;
    for (int c = 0; c < kCategoryCount; ++c) {
      cat_amt[c] = agg.resident_category[c].amount_cents();
      any = any || cat_amt[c] > 0.0;
    }
    if (any) {
      row[7] = diversity_count(cat_amt);
    } else {
      warnings.push_back("region " + id + ": no resident activity; diversity_resident set to 0");
      row[7] = 0.0;
    }
    any = false;
    for (int c = 0; c < kCategoryCount; ++c) {
      cat_amt[c] = agg.in_area_category[c].amount_cents();
      any = any || cat_amt[c] > 0.0;
    }
    if (any) {
      row[8] = diversity_count(cat_amt);
    } else {
      warnings.push_back("region " + id + ": no in-area activity; diversity_in_area set to 0");
      row[8] = 0.0;
    }

    row[9] = n_businesses / meta.area_km2;
    row[10] = ratio(area_amt, n_businesses, "avg_business_size");

    std::array<double, kBundleCount> bundle_amt{};
    for (int c = 0; c < kCategoryCount; ++c) {
      const int b = bundles.bundle_of(c + 1);
      if (b != 0) bundle_amt[b - 1] += agg.resident_category[c].amount_cents();
    }
    for (int b = 0; b < kBundleCount; ++b)
      row[11 + b] = 100.0 * ratio(bundle_amt[b], res_amt, kIndicatorNames[11 + b]);

    row[22] = 100.0 * ratio(agg.resident_night.count(), res_cnt, "res_night_txn_pct");
    row[23] = 100.0 * ratio(agg.resident_weekend.count(), res_cnt, "res_weekend_txn_pct");
    row[24] = 100.0 * ratio(agg.resident_night.amount_cents(), res_amt, "res_night_amount_pct");
    row[25] = 100.0 * ratio(agg.resident_weekend.amount_cents(), res_amt, "res_weekend_amount_pct");
    row[26] = 100.0 * ratio(agg.in_area_night.amount_cents(), area_amt, "area_night_amount_pct");
    row[27] = 100.0 * ratio(agg.in_area_weekend.amount_cents(), area_amt, "area_weekend_amount_pct");
    row[28] = 100.0 * ratio(agg.in_area_night.count(), area_cnt, "area_night_txn_pct");
    row[29] = 100.0 * ratio(agg.in_area_weekend.count(), area_cnt, "area_weekend_txn_pct");

    row[30] = 100.0 * ratio(agg.resident_outside.count(), res_cnt, "res_outside_txn_pct");
    const double nonres_cnt = agg.in_area_domestic_out.count() + agg.in_area_foreign.count();
    const double nonres_amt =
        agg.in_area_domestic_out.amount_cents() + agg.in_area_foreign.amount_cents();
    row[31] = 100.0 * ratio(nonres_cnt, area_cnt, "nonres_in_area_txn_pct");
    row[32] = 100.0 * ratio(agg.resident_outside.amount_cents(), res_amt, "res_outside_amount_pct");
    row[33] = 100.0 * ratio(nonres_amt, area_amt, "nonres_in_area_amt_pct");
    row[34] = 100.0 * ratio(agg.resident_expensive.count(), res_cnt, "res_expensive_txn_pct");
  }
  return res;
}

/// Writes region_id + 35 named columns; `header_comments` lines are emitted
/// first, each prefixed with '#'.
inline void write_indicator_matrix(const IndicatorMatrix& m, const std::string& path,
                                   const std::vector<std::string>& header_comments = {}) {
  std::ofstream out = open_output(path);
  for (const auto& c : header_comments) out << "# " << c << '\n';
  out << "region_id";
  for (const char* name : kIndicatorNames) out << ',' << name;
  out << '\n';
  for (std::size_t r = 0; r < m.region_ids.size(); ++r) {
    out << m.region_ids[r];
    for (int c = 0; c < kIndicatorCount; ++c) out << ',' << format_f64(m.values.at(r, c));
    out << '\n';
  }
  if (!out) throw std::runtime_error("error writing " + path);
}

inline IndicatorMatrix read_indicator_matrix(const std::string& path) {
  std::ifstream in = open_input(path);
  IndicatorMatrix m;
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
    if (f.size() != kIndicatorCount + 1)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected region_id plus 35 indicator columns");
    m.region_ids.emplace_back(f[0]);
    std::vector<double> row(kIndicatorCount);
    for (int c = 0; c < kIndicatorCount; ++c) {
      const auto v = parse_f64(f[c + 1]);
      if (!v || !std::isfinite(*v))
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": malformed indicator value");
      row[c] = *v;
    }
    rows.push_back(std::move(row));
  }
  m.values = Matrix(rows.size(), kIndicatorCount);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < kIndicatorCount; ++c) m.values.at(r, c) = rows[r][c];
  return m;
}

}  // namespace cardecon
