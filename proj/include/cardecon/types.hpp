#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cardecon/csv.hpp"
#include "cardecon/temporal.hpp"

namespace cardecon {

inline constexpr int kCategoryCount = 76;
inline constexpr int kGroupCount = 12;

// De-biasing weights are quantized once per region to a fixed 2^-24 grid and
// every accumulator is an exact integer multiple of that grid. Integer sums
// commute and associate, which is what makes aggregation bit-identical under
// input permutation, shard merges, and any thread count.
inline constexpr int kWeightScaleBits = 24;
inline constexpr double kWeightScale = 16777216.0;  // 2^24

using WeightFp = std::int64_t;

inline WeightFp weight_fp_from_share(double share) {
  if (!(share > 0.0 && share <= 1.0))
    throw std::invalid_argument("market share must lie in (0,1]");
  return static_cast<WeightFp>(std::llround(kWeightScale / share));
}

inline double weight_from_fp(WeightFp w) {
  return static_cast<double>(w) / kWeightScale;
}

/// One (count, amount) accumulator holding exact integer-scaled sums of
/// de-biased contributions. Amounts are EUR cents.
struct WeightedPair {
  __int128 count_fp = 0;
  __int128 amount_fp = 0;

  void add(WeightFp weight, std::int64_t amount_cents) {
    count_fp += weight;
    amount_fp += static_cast<__int128>(weight) * amount_cents;
  }
  void add_raw_scaled(std::int64_t raw_count, std::int64_t raw_amount, WeightFp weight) {
    count_fp += static_cast<__int128>(weight) * raw_count;
    amount_fp += static_cast<__int128>(weight) * raw_amount;
  }
  WeightedPair& operator+=(const WeightedPair& o) {
    count_fp += o.count_fp;
    amount_fp += o.amount_fp;
    return *this;
  }
  friend WeightedPair operator+(WeightedPair a, const WeightedPair& b) { return a += b; }
  friend bool operator==(const WeightedPair&, const WeightedPair&) = default;

  double count() const { return static_cast<double>(count_fp) / kWeightScale; }
  double amount_cents() const { return static_cast<double>(amount_fp) / kWeightScale; }
  bool is_zero() const { return count_fp == 0 && amount_fp == 0; }
};

/// Unweighted integer tallies, used where the de-bias factor is applied later
/// (foreign visitors, whose weight is a property of the merchant region).
struct RawPair {
  std::int64_t count = 0;
  std::int64_t amount = 0;

  void add(std::int64_t amount_cents) {
    ++count;
    amount += amount_cents;
  }
  RawPair& operator+=(const RawPair& o) {
    count += o.count;
    amount += o.amount;
    return *this;
  }
  friend bool operator==(const RawPair&, const RawPair&) = default;
};

enum class CustomerKind : std::uint8_t { kDomestic, kForeign };

struct TransactionRecord {
  std::string txn_id;
  CivilDateTime timestamp;
  std::int64_t amount_cents = 0;  // > 0
  std::string customer_id;
  CustomerKind kind = CustomerKind::kDomestic;
  std::string home_region_or_country;  // region id (domestic) or country code
  std::string merchant_id;
  std::string merchant_region;
  std::uint16_t category_id = 1;  // 1..76
  std::uint16_t group_id = 1;     // 1..12
};

struct RegionMeta {
  std::string region_id;
  std::string name;
  double area_km2 = 0.0;
  double customer_market_share = 1.0;             // in (0,1]
  std::optional<double> business_market_share;    // set by compute_business_share
  std::int64_t external_domestic_txn_count = 0;   // residents' activity at non-covered terminals
};

/// Region metadata with a stable index; aggregates address regions by index.
class RegionTable {
 public:
  void add(RegionMeta meta) {
    if (index_.count(meta.region_id))
      throw std::invalid_argument("duplicate region id " + meta.region_id);
    if (!(meta.area_km2 > 0.0))
      throw std::invalid_argument("region " + meta.region_id + ": area_km2 must be > 0");
    if (!(meta.customer_market_share > 0.0 && meta.customer_market_share <= 1.0))
      throw std::invalid_argument("region " + meta.region_id +
                                  ": customer_market_share must lie in (0,1]");
    index_.emplace(meta.region_id, rows_.size());
    rows_.push_back(std::move(meta));
  }

  std::size_t size() const { return rows_.size(); }
  const RegionMeta& at(std::size_t i) const { return rows_[i]; }
  RegionMeta& at(std::size_t i) { return rows_[i]; }

  std::optional<std::size_t> find(std::string_view region_id) const {
    auto it = index_.find(std::string(region_id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t require(std::string_view region_id) const {
    auto idx = find(region_id);
    if (!idx) throw std::invalid_argument("unknown region " + std::string(region_id));
    return *idx;
  }

  WeightFp customer_weight_fp(std::size_t i) const {
    return weight_fp_from_share(rows_[i].customer_market_share);
  }
  WeightFp business_weight_fp(std::size_t i) const {
    const auto& share = rows_[i].business_market_share;
    if (!share)
      throw std::runtime_error("region " + rows_[i].region_id +
                               ": business market share unset; run compute_business_share first");
    return weight_fp_from_share(*share);
  }

 private:
  std::vector<RegionMeta> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// region_id,name,area_km2,customer_market_share,external_domestic_txn_count
inline RegionTable load_region_table(const std::string& path) {
  std::ifstream in = open_input(path);
  RegionTable table;
  std::string line;
  std::vector<std::string_view> f;
  bool saw_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = trim_cr(line);
    if (is_comment_or_blank(sv)) continue;
    if (!saw_header) {
      saw_header = true;  // header row required by the format
      continue;
    }
    split_fields(sv, f);
    if (f.size() != 5)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 5 fields in region table");
    RegionMeta meta;
    meta.region_id = std::string(f[0]);
    meta.name = std::string(f[1]);
    const auto area = parse_f64(f[2]);
    const auto share = parse_f64(f[3]);
    const auto ext = parse_i64(f[4]);
    if (!area || !share || !ext)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": malformed numeric field in region table");
    meta.area_km2 = *area;
    meta.customer_market_share = *share;
    meta.external_domestic_txn_count = *ext;
    table.add(std::move(meta));
  }
  if (!saw_header) throw std::runtime_error(path + ": empty region table");
  return table;
}

struct MerchantAggregate {
  std::string merchant_id;
  std::uint32_t region_index = 0;
  std::uint16_t category_id = 1;
  std::int64_t txn_count = 0;        // raw, unweighted
  std::int64_t amount_sum = 0;       // raw EUR cents
  // Resident patronage by home-region index; folded into the per-region
  // expensive-business accumulators once the expensive set is known.
  std::unordered_map<std::uint32_t, RawPair> resident_origins;

  void merge(const MerchantAggregate& o) {
    txn_count += o.txn_count;
    amount_sum += o.amount_sum;
    for (const auto& [home, pair] : o.resident_origins) resident_origins[home] += pair;
  }
};

/// Streaming accumulators for one region. All weighted pairs are exact
/// integer-scaled sums; foreign contributions are staged raw and folded in
/// by AggregateSet::finalize once the region's business share is known.
struct RegionAggregate {
  // in-area, partitioned by visitor origin (their sum IS the in-area total)
  WeightedPair in_area_same_region;
  WeightedPair in_area_domestic_out;
  WeightedPair in_area_foreign;
  std::array<WeightedPair, kCategoryCount> in_area_category{};
  WeightedPair in_area_night;
  WeightedPair in_area_weekend;

  // resident side (spending of this region's residents anywhere)
  WeightedPair resident_total;
  std::array<WeightedPair, kCategoryCount> resident_category{};
  WeightedPair resident_outside;
  WeightedPair resident_night;
  WeightedPair resident_weekend;
  WeightedPair resident_expensive;

  std::unordered_set<std::string> resident_customers;
  std::int64_t distinct_businesses = 0;        // filled by finalize
  std::int64_t raw_domestic_in_area_count = 0; // feeds the business-share ratio

  // staged foreign tallies, zeroed by finalize
  RawPair foreign_raw_total;
  std::array<RawPair, kCategoryCount> foreign_raw_category{};
  RawPair foreign_raw_night;
  RawPair foreign_raw_weekend;

  WeightedPair in_area_total() const {
    return in_area_same_region + in_area_domestic_out + in_area_foreign;
  }
  std::int64_t distinct_residents() const {
    return static_cast<std::int64_t>(resident_customers.size());
  }

  void merge(const RegionAggregate& o) {
    in_area_same_region += o.in_area_same_region;
    in_area_domestic_out += o.in_area_domestic_out;
    in_area_foreign += o.in_area_foreign;
    for (int c = 0; c < kCategoryCount; ++c) in_area_category[c] += o.in_area_category[c];
    in_area_night += o.in_area_night;
    in_area_weekend += o.in_area_weekend;
    resident_total += o.resident_total;
    for (int c = 0; c < kCategoryCount; ++c) resident_category[c] += o.resident_category[c];
    resident_outside += o.resident_outside;
    resident_night += o.resident_night;
    resident_weekend += o.resident_weekend;
    resident_expensive += o.resident_expensive;
    resident_customers.insert(o.resident_customers.begin(), o.resident_customers.end());
    raw_domestic_in_area_count += o.raw_domestic_in_area_count;
    foreign_raw_total += o.foreign_raw_total;
    for (int c = 0; c < kCategoryCount; ++c) foreign_raw_category[c] += o.foreign_raw_category[c];
    foreign_raw_night += o.foreign_raw_night;
    foreign_raw_weekend += o.foreign_raw_weekend;
  }
};

/// Per-row rejection reasons; rejected rows are counted, never silently dropped.
enum class RejectReason : std::size_t {
  kBadFieldCount = 0,
  kBadTimestamp,
  kBadAmount,
  kNonpositiveAmount,
  kBadCustomerKind,
  kOutOfRangeCategory,
  kOutOfRangeGroup,
  kUnknownMerchantRegion,
  kUnknownHomeRegion,
  kEmptyIdField,
  kCount_
};

inline constexpr std::array<const char*, static_cast<std::size_t>(RejectReason::kCount_)>
    kRejectReasonNames = {
        "bad_field_count",    "bad_timestamp",       "bad_amount",
        "nonpositive_amount", "bad_customer_kind",   "out_of_range_category",
        "out_of_range_group", "unknown_merchant_region", "unknown_home_region",
        "empty_id_field",
};

struct RejectReport {
  std::array<std::uint64_t, static_cast<std::size_t>(RejectReason::kCount_)> counts{};
  std::uint64_t total_rows = 0;
  std::uint64_t emitted = 0;

  void reject(RejectReason r) { ++counts[static_cast<std::size_t>(r)]; }
  std::uint64_t count(RejectReason r) const { return counts[static_cast<std::size_t>(r)]; }
  std::uint64_t rejected_total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  bool empty() const { return rejected_total() == 0; }
  void merge(const RejectReport& o) {
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    total_rows += o.total_rows;
    emitted += o.emitted;
  }
};

}  // namespace cardecon
