#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <vector>

#include "cardecon/indicators.hpp"
#include "cardecon/ingest.hpp"
#include "cardecon/rng.hpp"
#include "test_util.hpp"

using namespace cardecon;

namespace {

RegionTable fixture_table() {
  return load_region_table((testutil::data_dir() / "hand_fixture_regions.csv").string());
}

struct FixtureData {
  RegionTable table;
  AggregateSet set{0};
  std::vector<TransactionRecord> records;
};

FixtureData load_fixture() {
  FixtureData out;
  const RegionTable raw = fixture_table();
  std::ifstream in(testutil::data_dir() / "hand_fixture_transactions.csv");
  auto parsed = parse_transactions(in, raw);
  REQUIRE(parsed.report.empty());
  out.table = compute_business_share(parsed.records, raw);
  out.set = aggregate(parsed.records, out.table);
  out.records = std::move(parsed.records);
  return out;
}

// minimal kit for hand-built aggregates
WeightedPair wp(double count, double amount_cents) {
  WeightedPair p;
  p.count_fp = static_cast<__int128>(std::llround(count * kWeightScale));
  p.amount_fp = static_cast<__int128>(std::llround(amount_cents * kWeightScale));
  return p;
}

}  // namespace

TEST_SUITE("diversity") {
  TEST_CASE("exact cumulative threshold") {
    std::vector<double> totals(76, 0.0);
    totals[0] = 50.0;
    totals[1] = 30.0;
    totals[2] = 15.0;
    totals[3] = 5.0;
    CHECK(diversity_count(totals) == 2);  // 50 + 30 is 80% exactly
  }

  TEST_CASE("single nonzero category") {
    std::vector<double> totals(76, 0.0);
    totals[40] = 3.25;
    CHECK(diversity_count(totals) == 1);
  }

  TEST_CASE("all-zero totals are undefined") {
    std::vector<double> totals(76, 0.0);
    CHECK_THROWS(diversity_count(totals));
  }

  TEST_CASE("ties break by ascending category id") {
    std::vector<double> totals = {10.0, 10.0, 10.0, 10.0, 10.0};
    // any 4 of the 5 reach 80%; the scan must take ids 0..3
    CHECK(diversity_count(totals) == 4);
  }

  TEST_CASE("matches subset-enumeration brute force on random totals") {
    for (int trial = 0; trial < 30; ++trial) {
      CounterRng rng(500 + trial, "diversity");
      std::vector<double> totals(12);
      for (auto& t : totals) t = rng.next_unit() * 10.0;
      const int got = diversity_count(totals);
      // brute force: smallest subset (any subset) reaching 80% of the total
      double grand = 0.0;
      for (double t : totals) grand += t;
      int best = 12;
      for (std::uint32_t mask = 1; mask < (1u << 12); ++mask) {
        double s = 0.0;
        int bits = 0;
        for (int i = 0; i < 12; ++i)
          if (mask & (1u << i)) {
            s += totals[i];
            ++bits;
          }
        if (s / grand >= 0.8) best = std::min(best, bits);
      }
      CHECK(got == best);
    }
  }
}

TEST_SUITE("expensive") {
  TEST_CASE("no strict exceedance on symmetric merchants") {
    MerchantMap m;
    m["a"] = {"a", 0, 5, 1, 10, {}};
    m["b"] = {"b", 0, 5, 1, 10, {}};
    CHECK(expensive_business_set(m).empty());
  }

  TEST_CASE("merchant above the category mean is expensive") {
    MerchantMap m;
    m["cheap"] = {"cheap", 0, 5, 1, 5, {}};
    m["pricey"] = {"pricey", 0, 5, 1, 15, {}};
    const auto set = expensive_business_set(m);
    CHECK(set.size() == 1);
    CHECK(set.count("pricey") == 1);
  }

  TEST_CASE("matches brute-force per-category comparison on random merchants") {
    CounterRng rng(600, "expensive");
    MerchantMap m;
    for (int i = 0; i < 30; ++i) {
      MerchantAggregate agg;
      agg.merchant_id = "m" + std::to_string(i);
      agg.category_id = static_cast<std::uint16_t>(1 + rng.next_below(5));
      agg.txn_count = 1 + static_cast<std::int64_t>(rng.next_below(50));
      agg.amount_sum = agg.txn_count * (50 + static_cast<std::int64_t>(rng.next_below(5000)));
      m[agg.merchant_id] = agg;
    }
    const auto got = expensive_business_set(m);
    // double-arithmetic oracle
    std::array<double, 6> cat_amt{}, cat_cnt{};
    for (const auto& [id, agg] : m) {
      cat_amt[agg.category_id] += static_cast<double>(agg.amount_sum);
      cat_cnt[agg.category_id] += static_cast<double>(agg.txn_count);
    }
    for (const auto& [id, agg] : m) {
      const double mine = static_cast<double>(agg.amount_sum) / agg.txn_count;
      const double cat = cat_amt[agg.category_id] / cat_cnt[agg.category_id];
      CHECK(got.count(id) == (mine > cat ? 1u : 0u));
    }
  }
}

TEST_SUITE("bundles") {
  TEST_CASE("default map covers categories 1..70") {
    const BundleMap m = BundleMap::default_map();
    for (int c = 1; c <= 70; ++c) CHECK(m.bundle_of(c) != 0);
    for (int c = 71; c <= 76; ++c) CHECK(m.bundle_of(c) == 0);
  }

  TEST_CASE("shipped file equals the built-in default") {
    const auto path =
        std::filesystem::path(__FILE__).parent_path().parent_path() / "data" /
        "category_bundles.csv";
    const BundleMap from_file = BundleMap::load(path.string());
    const BundleMap def = BundleMap::default_map();
    for (int c = 1; c <= kCategoryCount; ++c)
      CHECK(from_file.bundle_of(c) == def.bundle_of(c));
  }

  TEST_CASE("save/load round trip") {
    testutil::TempDir tmp;
    const BundleMap def = BundleMap::default_map();
    def.save(tmp.file("bundles.csv"));
    const BundleMap back = BundleMap::load(tmp.file("bundles.csv"));
    for (int c = 1; c <= kCategoryCount; ++c) CHECK(back.bundle_of(c) == def.bundle_of(c));
  }

  TEST_CASE("unknown bundle names are rejected") {
    testutil::TempDir tmp;
    {
      std::ofstream out(tmp.file("bad.csv"));
      out << "category_id,bundle_name\n3,yachts\n";
    }
    CHECK_THROWS(BundleMap::load(tmp.file("bad.csv")));
  }
}

TEST_SUITE("indicators") {
  TEST_CASE("direct quotient for transaction density") {
    RegionTable table;
    table.add({"R", "R", 10.0, 1.0, 1.0, 0});
    std::vector<RegionAggregate> aggs(1);
    aggs[0].in_area_same_region = wp(1000.0, 50000.0);
    aggs[0].resident_total = wp(1000.0, 50000.0);
    aggs[0].resident_category[4] = wp(1000.0, 50000.0);
    aggs[0].in_area_category[4] = wp(1000.0, 50000.0);
    aggs[0].resident_customers.insert("c1");
    aggs[0].distinct_businesses = 5;
    const IndicatorResult res = compute_indicators(aggs, table);
    CHECK(res.matrix.values.at(0, 0) == 100.0);  // 1000 / 10 km^2
    CHECK(res.matrix.values.at(0, 9) == 0.5);    // 5 businesses / 10 km^2
  }

  TEST_CASE("residents staying home zero the outside indicators") {
    const FixtureData fx = load_fixture();
    // build a copy where every record is same-region: reuse region A only
    RegionTable table;
    table.add({"A", "A", 10.0, 0.25, 0.8, 1});
    std::vector<TransactionRecord> recs;
    for (auto rec : fx.records) {
      if (rec.kind != CustomerKind::kDomestic) continue;
      rec.home_region_or_country = "A";
      rec.merchant_region = "A";
      recs.push_back(rec);
    }
    const AggregateSet set = aggregate(recs, table);
    const IndicatorResult res = compute_indicators(set.regions, table);
    CHECK(res.matrix.values.at(0, 30) == 0.0);  // outside txn share
    CHECK(res.matrix.values.at(0, 32) == 0.0);  // outside amount share
    CHECK(res.matrix.values.at(0, 31) == 0.0);  // non-resident in-area share
  }

  TEST_CASE("hand fixture reproduces the committed oracle sheet") {
    const FixtureData fx = load_fixture();
    const IndicatorResult res = compute_indicators(fx.set.regions, fx.table);
    CHECK(res.warnings.empty());

    // committed oracle: region_id,i01..i35 computed independently
    std::ifstream oracle(testutil::data_dir() / "hand_fixture_expected.csv");
    REQUIRE(oracle.good());
    std::string line;
    std::getline(oracle, line);  // header
    std::vector<std::string_view> fields;
    int rows_checked = 0;
    while (std::getline(oracle, line)) {
      if (line.empty()) continue;
      split_fields(line, fields);
      REQUIRE(fields.size() == 36);
      const std::string region(fields[0]);
      std::size_t row = 0;
      for (; row < res.matrix.region_ids.size(); ++row)
        if (res.matrix.region_ids[row] == region) break;
      REQUIRE(row < res.matrix.region_ids.size());
      for (int c = 0; c < kIndicatorCount; ++c) {
        const double expected = *parse_f64(fields[c + 1]);
        const double got = res.matrix.values.at(row, c);
        INFO("region ", region, " indicator ", c + 1);
        // integer-cent arithmetic paths are exact; everything else 1e-9
        CHECK(std::fabs(got - expected) <= 1e-9 * std::max(1.0, std::fabs(expected)));
      }
      ++rows_checked;
    }
    CHECK(rows_checked == 3);
  }

  TEST_CASE("hand fixture integer-valued indicators are exact") {
    const FixtureData fx = load_fixture();
    const IndicatorResult res = compute_indicators(fx.set.regions, fx.table);
    const std::size_t a = 0;  // region A is first in the table
    CHECK(res.matrix.values.at(a, 3) == 6.0);   // 12 weighted txns / 2 residents
    CHECK(res.matrix.values.at(a, 7) == 3.0);   // resident diversity
    CHECK(res.matrix.values.at(a, 8) == 2.0);   // in-area diversity
    CHECK(res.matrix.values.at(a, 4) == 1500.0);
  }

  TEST_CASE("visitor shares partition to 100 percent") {
    const FixtureData fx = load_fixture();
    const IndicatorResult res = compute_indicators(fx.set.regions, fx.table);
    for (std::size_t r = 0; r < res.matrix.region_ids.size(); ++r) {
      const RegionAggregate& agg = fx.set.regions[r];
      if (agg.in_area_total().is_zero()) continue;
      const double same_share = 100.0 * agg.in_area_same_region.count() /
                                agg.in_area_total().count();
      const double total =
          res.matrix.values.at(r, 5) + res.matrix.values.at(r, 6) + same_share;
      CHECK(std::fabs(total - 100.0) < 1e-9);
    }
  }

  TEST_CASE("scaling amounts by c scales amount indicators by exactly c") {
    const FixtureData fx = load_fixture();
    const IndicatorResult base = compute_indicators(fx.set.regions, fx.table);

    auto scaled_records = fx.records;
    for (auto& rec : scaled_records) rec.amount_cents *= 3;
    const AggregateSet scaled_set = aggregate(scaled_records, fx.table);
    const IndicatorResult scaled = compute_indicators(scaled_set.regions, fx.table);

    const std::vector<int> unchanged = {0, 3, 5, 6, 7, 8, 9, 11, 12, 13, 14, 15, 16, 17,
                                        18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29,
                                        30, 31, 32, 33, 34};
    const std::vector<int> scaled_by_c = {1, 2, 4, 10};
    for (std::size_t r = 0; r < base.matrix.region_ids.size(); ++r) {
      for (int c : unchanged) {
        INFO("indicator ", c + 1);
        CHECK(std::fabs(scaled.matrix.values.at(r, c) - base.matrix.values.at(r, c)) <=
              1e-12 * std::max(1.0, std::fabs(base.matrix.values.at(r, c))));
      }
      for (int c : scaled_by_c) {
        INFO("indicator ", c + 1);
        CHECK(std::fabs(scaled.matrix.values.at(r, c) - 3.0 * base.matrix.values.at(r, c)) <=
              1e-12 * std::max(1.0, std::fabs(base.matrix.values.at(r, c))));
      }
    }
  }

  TEST_CASE("records outside a region do not move its indicators") {
    const FixtureData fx = load_fixture();
    const IndicatorResult base = compute_indicators(fx.set.regions, fx.table);

    auto records = fx.records;
    TransactionRecord extra = records.front();  // domestic A at A originally
    extra.txn_id = "TX";
    extra.customer_id = "CB9";
    extra.home_region_or_country = "B";
    extra.merchant_id = "MB7";
    extra.merchant_region = "B";
    extra.amount_cents = 7777;
    records.push_back(extra);
    const AggregateSet set = aggregate(records, fx.table);
    const IndicatorResult res = compute_indicators(set.regions, fx.table);

    const std::size_t a = 0;  // region A untouched by the extra record
    for (int c = 0; c < kIndicatorCount; ++c)
      CHECK(res.matrix.values.at(a, c) == base.matrix.values.at(a, c));
  }

  TEST_CASE("zero denominators produce warnings, zeros and a rectangular matrix") {
    RegionTable table;
    table.add({"L", "Live", 10.0, 0.5, 0.5, 0});
    table.add({"D", "Dead", 10.0, 0.5, 0.5, 0});
    std::vector<TransactionRecord> recs(1);
    recs[0].txn_id = "T1";
    recs[0].timestamp = {2011, 1, 10, 12, 0};
    recs[0].amount_cents = 100;
    recs[0].customer_id = "c";
    recs[0].kind = CustomerKind::kDomestic;
    recs[0].home_region_or_country = "L";
    recs[0].merchant_id = "m";
    recs[0].merchant_region = "L";
    recs[0].category_id = 1;
    recs[0].group_id = 1;
    const AggregateSet set = aggregate(recs, table);
    const IndicatorResult res = compute_indicators(set.regions, table);
    CHECK(res.matrix.region_ids.size() == 2);
    CHECK_FALSE(res.warnings.empty());
    for (int c = 0; c < kIndicatorCount; ++c) {
      CHECK(std::isfinite(res.matrix.values.at(1, c)));
      CHECK(res.matrix.values.at(1, c) == 0.0);
    }
  }

  TEST_CASE("random corpus matches a record-level double-arithmetic oracle") {
    // independent recomputation of the share indicators straight from the
    // record list, ignoring the accumulator machinery entirely
    RegionTable table;
    const int R = 6;
    for (int r = 0; r < R; ++r)
      table.add({"G" + std::to_string(r), "G", 5.0 + r, 0.2 + 0.1 * (r % 3),
                 0.5, 10 * r});
    CounterRng rng(1714, "oracle-corpus");
    std::vector<TransactionRecord> records;
    for (int i = 0; i < 2000; ++i) {
      TransactionRecord rec;
      rec.txn_id = "T" + std::to_string(i);
      rec.timestamp = {2011, static_cast<std::uint8_t>(1 + rng.next_below(12)),
                       static_cast<std::uint8_t>(1 + rng.next_below(28)),
                       static_cast<std::uint8_t>(rng.next_below(24)),
                       static_cast<std::uint8_t>(rng.next_below(60))};
      rec.amount_cents = 1 + static_cast<std::int64_t>(rng.next_below(50000));
      rec.kind = rng.next_unit() < 0.15 ? CustomerKind::kForeign : CustomerKind::kDomestic;
      const int home = static_cast<int>(rng.next_below(R));
      const int dest = static_cast<int>(rng.next_below(R));
      rec.customer_id = (rec.kind == CustomerKind::kForeign ? "F" : "C") +
                        std::to_string(home) + "-" + std::to_string(rng.next_below(40));
      rec.home_region_or_country =
          rec.kind == CustomerKind::kForeign ? "XX" : "G" + std::to_string(home);
      rec.merchant_region = "G" + std::to_string(dest);
      rec.merchant_id = "M" + std::to_string(dest) + "-" + std::to_string(rng.next_below(25));
      rec.category_id = static_cast<std::uint16_t>(1 + rng.next_below(kCategoryCount));
      rec.group_id = static_cast<std::uint16_t>(1 + rng.next_below(kGroupCount));
      records.push_back(rec);
    }
    const RegionTable shares = compute_business_share(records, table);
    const AggregateSet set = aggregate(records, shares);
    const IndicatorResult res = compute_indicators(set.regions, shares);

    for (int r = 0; r < R; ++r, void()) {
      const std::string id = "G" + std::to_string(r);
      double in_cnt = 0, dom_out_cnt = 0, for_cnt = 0, in_night_cnt = 0, in_wk_cnt = 0;
      double res_cnt = 0, res_night_cnt = 0, res_wk_cnt = 0, res_out_cnt = 0;
      for (const auto& rec : records) {
        const double w = debias_weight(rec, shares);
        const TemporalClass tc = classify_temporal(rec.timestamp);
        if (rec.merchant_region == id) {
          in_cnt += w;
          if (rec.kind == CustomerKind::kForeign)
            for_cnt += w;
          else if (rec.home_region_or_country != id)
            dom_out_cnt += w;
          if (tc.nighttime) in_night_cnt += w;
          if (tc.weekend) in_wk_cnt += w;
        }
        if (rec.kind == CustomerKind::kDomestic && rec.home_region_or_country == id) {
          res_cnt += w;
          if (tc.nighttime) res_night_cnt += w;
          if (tc.weekend) res_wk_cnt += w;
          if (rec.merchant_region != id) res_out_cnt += w;
        }
      }
      auto close = [](double a, double b) {
        return std::fabs(a - b) <= 1e-9 * std::max(1.0, std::fabs(b));
      };
      const std::size_t row = r;
      CHECK(close(res.matrix.values.at(row, 5), 100.0 * dom_out_cnt / in_cnt));
      CHECK(close(res.matrix.values.at(row, 6), 100.0 * for_cnt / in_cnt));
      CHECK(close(res.matrix.values.at(row, 22), 100.0 * res_night_cnt / res_cnt));
      CHECK(close(res.matrix.values.at(row, 23), 100.0 * res_wk_cnt / res_cnt));
      CHECK(close(res.matrix.values.at(row, 28), 100.0 * in_night_cnt / in_cnt));
      CHECK(close(res.matrix.values.at(row, 29), 100.0 * in_wk_cnt / in_cnt));
      CHECK(close(res.matrix.values.at(row, 30), 100.0 * res_out_cnt / res_cnt));
    }
  }

  TEST_CASE("matrix file round trip") {
    const FixtureData fx = load_fixture();
    const IndicatorResult res = compute_indicators(fx.set.regions, fx.table);
    testutil::TempDir tmp;
    write_indicator_matrix(res.matrix, tmp.file("m.csv"), {"test header"});
    const IndicatorMatrix back = read_indicator_matrix(tmp.file("m.csv"));
    REQUIRE(back.region_ids == res.matrix.region_ids);
    for (std::size_t i = 0; i < back.values.data.size(); ++i)
      CHECK(back.values.data[i] == res.matrix.values.data[i]);
  }
}
