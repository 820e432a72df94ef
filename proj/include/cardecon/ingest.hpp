#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cardecon/csv.hpp"
#include "cardecon/indicators.hpp"
#include "cardecon/temporal.hpp"
#include "cardecon/types.hpp"

namespace cardecon {

// ---------------------------------------------------------------------------
// parsing

namespace detail {

/// Parses one data row. Returns true and fills `rec` on success, otherwise
/// counts the reason in `report`.
inline bool parse_row(std::string_view line, const RegionTable& regions,
                      TransactionRecord& rec, RejectReport& report,
                      std::vector<std::string_view>& fields) {
  split_fields(line, fields);
  if (fields.size() != 10) {
    report.reject(RejectReason::kBadFieldCount);
    return false;
  }
  if (fields[0].empty() || fields[3].empty() || fields[6].empty()) {
    report.reject(RejectReason::kEmptyIdField);
    return false;
  }
  const auto ts = parse_civil(fields[1]);
  if (!ts) {
    report.reject(RejectReason::kBadTimestamp);
    return false;
  }
  const auto amount = parse_i64(fields[2]);
  if (!amount) {
    report.reject(RejectReason::kBadAmount);
    return false;
  }
  if (*amount <= 0) {
    report.reject(RejectReason::kNonpositiveAmount);
    return false;
  }
  CustomerKind kind;
  if (fields[4] == "D")
    kind = CustomerKind::kDomestic;
  else if (fields[4] == "F")
    kind = CustomerKind::kForeign;
  else {
    report.reject(RejectReason::kBadCustomerKind);
    return false;
  }
  const auto category = parse_i64(fields[8]);
  if (!category || *category < 1 || *category > kCategoryCount) {
    report.reject(RejectReason::kOutOfRangeCategory);
    return false;
  }
  const auto group = parse_i64(fields[9]);
  if (!group || *group < 1 || *group > kGroupCount) {
    report.reject(RejectReason::kOutOfRangeGroup);
    return false;
  }
  if (!regions.find(fields[7])) {
    report.reject(RejectReason::kUnknownMerchantRegion);
    return false;
  }
  if (kind == CustomerKind::kDomestic && !regions.find(fields[5])) {
    report.reject(RejectReason::kUnknownHomeRegion);
    return false;
  }

  rec.txn_id = std::string(fields[0]);
  rec.timestamp = *ts;
  rec.amount_cents = *amount;
  rec.customer_id = std::string(fields[3]);
  rec.kind = kind;
  rec.home_region_or_country = std::string(fields[5]);
  rec.merchant_id = std::string(fields[6]);
  rec.merchant_region = std::string(fields[7]);
  rec.category_id = static_cast<std::uint16_t>(*category);
  rec.group_id = static_cast<std::uint16_t>(*group);
  report.emitted += 1;
  return true;
}

}  // namespace detail

using RecordSink = std::function<void(const TransactionRecord&)>;

/// Streaming parser: header row required, '#' comment lines skipped, each
/// valid record handed to `sink`, per-row violations counted in the returned
/// report. An unreadable stream is fatal.
inline RejectReport parse_transactions_stream(std::istream& in, const RegionTable& regions,
                                              const RecordSink& sink) {
  if (!in) throw std::runtime_error("parse_transactions: unreadable input stream");
  RejectReport report;
  std::string line;
  std::vector<std::string_view> fields;
  TransactionRecord rec;
  bool saw_header = false;
  while (std::getline(in, line)) {
    std::string_view sv = trim_cr(line);
    if (is_comment_or_blank(sv)) continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    report.total_rows += 1;
    if (detail::parse_row(sv, regions, rec, report, fields)) sink(rec);
  }
  if (in.bad()) throw std::runtime_error("parse_transactions: stream error while reading");
  return report;
}

struct ParseResult {
  std::vector<TransactionRecord> records;
  RejectReport report;
};

inline ParseResult parse_transactions(std::istream& in, const RegionTable& regions) {
  ParseResult out;
  out.report = parse_transactions_stream(
      in, regions, [&](const TransactionRecord& r) { out.records.push_back(r); });
  return out;
}

// ---------------------------------------------------------------------------
// de-biasing

/// Multiplicity a record carries toward the estimated total activity:
/// 1/customer market share of the home region for domestic customers,
/// 1/business market share of the merchant region for foreign ones.
/// The returned value is the 2^-24-quantized weight the accumulators use.
inline double debias_weight(const TransactionRecord& rec, const RegionTable& regions) {
  if (rec.kind == CustomerKind::kDomestic) {
    const std::size_t home = regions.require(rec.home_region_or_country);
    return weight_from_fp(regions.customer_weight_fp(home));
  }
  const std::size_t merchant_region = regions.require(rec.merchant_region);
  return weight_from_fp(regions.business_weight_fp(merchant_region));
}

/// Business market share per region: in-dataset domestic transaction count at
/// the region's terminals over that count plus the residents' externally
/// reported count. A region with no in-dataset domestic activity has an
/// undefined ratio and is reported as an error.
inline RegionTable compute_business_share(std::span<const TransactionRecord> records,
                                          RegionTable regions) {
  std::vector<std::int64_t> domestic_count(regions.size(), 0);
  for (const auto& rec : records)
    if (rec.kind == CustomerKind::kDomestic)
      domestic_count[regions.require(rec.merchant_region)] += 1;

  std::string bad;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const std::int64_t inside = domestic_count[r];
    const std::int64_t outside = regions.at(r).external_domestic_txn_count;
    if (inside <= 0) {
      bad += bad.empty() ? "" : ", ";
      bad += regions.at(r).region_id;
      continue;
    }
    double share = static_cast<double>(inside) / static_cast<double>(inside + outside);
    share = std::min(share, 1.0);
    regions.at(r).business_market_share = share;
  }
  if (!bad.empty())
    throw std::runtime_error(
        "compute_business_share: no in-dataset domestic transactions for region(s) " + bad);
  return regions;
}

// ---------------------------------------------------------------------------
// aggregation

/// Mergeable aggregation state: one RegionAggregate per region-table row plus
/// the merchant map. finalize() computes business shares if any are missing,
/// folds the staged foreign tallies, fills distinct-business counts, and
/// distributes expensive-business patronage back to home regions.
struct AggregateSet {
  std::vector<RegionAggregate> regions;
  MerchantMap merchants;
  bool finalized = false;

  explicit AggregateSet(std::size_t region_count = 0) : regions(region_count) {}

  void accumulate(const TransactionRecord& rec, const RegionTable& table) {
    const std::size_t mr = table.require(rec.merchant_region);
    RegionAggregate& area = regions[mr];
    const TemporalClass tc = classify_temporal(rec.timestamp);
    const int cat = rec.category_id - 1;

    MerchantAggregate& merch = merchants
                                   .try_emplace(rec.merchant_id, MerchantAggregate{
                                                                     rec.merchant_id,
                                                                     static_cast<std::uint32_t>(mr),
                                                                     rec.category_id,
                                                                     0,
                                                                     0,
                                                                     {}})
                                   .first->second;
    merch.txn_count += 1;
    merch.amount_sum += rec.amount_cents;

    if (rec.kind == CustomerKind::kForeign) {
      // weight unknown until the region's business share is; stage raw
      area.foreign_raw_total.add(rec.amount_cents);
      area.foreign_raw_category[cat].add(rec.amount_cents);
      if (tc.nighttime) area.foreign_raw_night.add(rec.amount_cents);
      if (tc.weekend) area.foreign_raw_weekend.add(rec.amount_cents);
      return;
    }

    const std::size_t home = table.require(rec.home_region_or_country);
    const WeightFp w = table.customer_weight_fp(home);
    area.raw_domestic_in_area_count += 1;

    if (home == mr)
      area.in_area_same_region.add(w, rec.amount_cents);
    else
      area.in_area_domestic_out.add(w, rec.amount_cents);
    area.in_area_category[cat].add(w, rec.amount_cents);
    if (tc.nighttime) area.in_area_night.add(w, rec.amount_cents);
    if (tc.weekend) area.in_area_weekend.add(w, rec.amount_cents);

    RegionAggregate& res = regions[home];
    res.resident_total.add(w, rec.amount_cents);
    res.resident_category[cat].add(w, rec.amount_cents);
    if (home != mr) res.resident_outside.add(w, rec.amount_cents);
    if (tc.nighttime) res.resident_night.add(w, rec.amount_cents);
    if (tc.weekend) res.resident_weekend.add(w, rec.amount_cents);
    res.resident_customers.insert(rec.customer_id);

    merch.resident_origins[static_cast<std::uint32_t>(home)].add(rec.amount_cents);
  }

  void merge(const AggregateSet& o) {
    if (finalized || o.finalized)
      throw std::logic_error("AggregateSet::merge: cannot merge finalized sets");
    if (regions.size() != o.regions.size())
      throw std::invalid_argument("AggregateSet::merge: region count mismatch");
    for (std::size_t r = 0; r < regions.size(); ++r) regions[r].merge(o.regions[r]);
    for (const auto& [id, m] : o.merchants) {
      auto [it, inserted] = merchants.try_emplace(id, m);
      if (!inserted) it->second.merge(m);
    }
  }

  /// `table` must carry business shares for every region with staged foreign
  /// activity (compute_business_share provides them).
  void finalize(const RegionTable& table) {
    if (finalized) throw std::logic_error("AggregateSet::finalize called twice");
    for (std::size_t r = 0; r < regions.size(); ++r) {
      RegionAggregate& agg = regions[r];
      if (agg.foreign_raw_total.count == 0) continue;
      const WeightFp w = table.business_weight_fp(r);
      agg.in_area_foreign.add_raw_scaled(agg.foreign_raw_total.count,
                                         agg.foreign_raw_total.amount, w);
      for (int c = 0; c < kCategoryCount; ++c)
        agg.in_area_category[c].add_raw_scaled(agg.foreign_raw_category[c].count,
                                               agg.foreign_raw_category[c].amount, w);
      agg.in_area_night.add_raw_scaled(agg.foreign_raw_night.count,
                                       agg.foreign_raw_night.amount, w);
      agg.in_area_weekend.add_raw_scaled(agg.foreign_raw_weekend.count,
                                         agg.foreign_raw_weekend.amount, w);
      agg.foreign_raw_total = {};
      agg.foreign_raw_category.fill({});
      agg.foreign_raw_night = {};
      agg.foreign_raw_weekend = {};
    }

    for (const auto& [id, m] : merchants) regions[m.region_index].distinct_businesses += 1;

    const auto expensive = expensive_business_set(merchants);
    // fold in canonical merchant order; integer sums commute anyway
    std::vector<const MerchantAggregate*> ordered;
    ordered.reserve(merchants.size());
    for (const auto& [id, m] : merchants)
      if (expensive.count(id)) ordered.push_back(&m);
    std::sort(ordered.begin(), ordered.end(),
              [](const MerchantAggregate* a, const MerchantAggregate* b) {
                return a->merchant_id < b->merchant_id;
              });
    for (const MerchantAggregate* m : ordered) {
      std::vector<std::pair<std::uint32_t, RawPair>> origins(m->resident_origins.begin(),
                                                             m->resident_origins.end());
      std::sort(origins.begin(), origins.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const auto& [home, pair] : origins) {
        const WeightFp w = table.customer_weight_fp(home);
        regions[home].resident_expensive.add_raw_scaled(pair.count, pair.amount, w);
      }
    }
    finalized = true;
  }
};

/// Aggregates valid records in one pass. Business shares must already be set
/// when foreign records are present (the precondition is checked lazily in
/// finalize, which names the offending region).
inline AggregateSet aggregate(std::span<const TransactionRecord> records,
                              const RegionTable& regions) {
  AggregateSet set(regions.size());
  for (const auto& rec : records) set.accumulate(rec, regions);
  set.finalize(regions);
  return set;
}

// ---------------------------------------------------------------------------
// parallel file driver

struct IngestResult {
  AggregateSet aggregates{0};
  RejectReport report;
  RegionTable regions;  // with business shares filled in
};

namespace detail {

struct ByteRange {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

inline std::vector<ByteRange> split_file_ranges(const std::string& path, unsigned parts) {
  std::ifstream in = open_input(path);
  in.seekg(0, std::ios::end);
  const std::uint64_t size = static_cast<std::uint64_t>(in.tellg());
  std::vector<ByteRange> ranges;
  if (size == 0) return ranges;
  parts = std::max(1u, parts);
  std::uint64_t prev = 0;
  for (unsigned i = 1; i < parts; ++i) {
    std::uint64_t cut = size * i / parts;
    if (cut <= prev) continue;
    in.seekg(static_cast<std::streamoff>(cut));
    std::string dummy;
    std::getline(in, dummy);  // advance to the next line start
    cut = static_cast<std::uint64_t>(in.tellg());
    if (in.eof() || cut >= size) break;
    ranges.push_back({prev, cut});
    prev = cut;
  }
  ranges.push_back({prev, size});
  return ranges;
}

}  // namespace detail

/// Parses and aggregates a transactions file in `threads` shards. Each shard
/// owns a private AggregateSet; shards merge exactly, then business shares
/// are derived from the merged counts and foreign activity is folded in, so
/// the result is byte-identical for any thread count.
inline IngestResult ingest_file(const std::string& path, const RegionTable& regions,
                                unsigned threads = std::thread::hardware_concurrency()) {
  threads = std::max(1u, threads);
  const auto ranges = detail::split_file_ranges(path, threads);

  std::vector<AggregateSet> sets;
  std::vector<RejectReport> reports(ranges.size());
  sets.reserve(ranges.size());
  for (std::size_t i = 0; i < ranges.size(); ++i) sets.emplace_back(regions.size());

  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto run_shard = [&](std::size_t idx) {
    try {
      std::ifstream in = open_input(path);
      in.seekg(static_cast<std::streamoff>(ranges[idx].begin));
      std::string line;
      std::vector<std::string_view> fields;
      TransactionRecord rec;
      bool saw_header = idx != 0;  // only the first shard can contain the header
      std::uint64_t pos = ranges[idx].begin;
      while (pos < ranges[idx].end && std::getline(in, line)) {
        pos += line.size() + 1;
        std::string_view sv = trim_cr(line);
        if (is_comment_or_blank(sv)) continue;
        if (!saw_header) {
          saw_header = true;
          continue;
        }
        reports[idx].total_rows += 1;
        if (detail::parse_row(sv, regions, rec, reports[idx], fields))
          sets[idx].accumulate(rec, regions);
      }
      if (in.bad()) throw std::runtime_error("ingest_file: stream error in " + path);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  if (ranges.size() <= 1) {
    if (!ranges.empty()) run_shard(0);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(ranges.size());
    for (std::size_t i = 0; i < ranges.size(); ++i) workers.emplace_back(run_shard, i);
    for (auto& w : workers) w.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  IngestResult out;
  out.regions = regions;
  out.aggregates = AggregateSet(regions.size());
  for (auto& s : sets) out.aggregates.merge(s);
  for (auto& r : reports) out.report.merge(r);

  // derive business shares from the merged domestic counts unless the caller
  // supplied them; regions without staged foreign activity may legitimately
  // lack a defined share
  for (std::size_t r = 0; r < regions.size(); ++r) {
    if (out.regions.at(r).business_market_share) continue;
    const std::int64_t inside = out.aggregates.regions[r].raw_domestic_in_area_count;
    const std::int64_t outside = regions.at(r).external_domestic_txn_count;
    if (inside > 0) {
      out.regions.at(r).business_market_share =
          std::min(static_cast<double>(inside) / static_cast<double>(inside + outside), 1.0);
    } else if (out.aggregates.regions[r].foreign_raw_total.count > 0) {
      throw std::runtime_error(
          "ingest_file: foreign activity in region " + regions.at(r).region_id +
          " but no domestic transactions to estimate its business market share");
    }
  }
  out.aggregates.finalize(out.regions);
  return out;
}

}  // namespace cardecon
