#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "analysis_oracle.hpp"
#include "sparsesync/analysis.hpp"
#include "sparsesync/harness/synthetic.hpp"

using namespace sparsesync;
using namespace sparsesync::analysis;

namespace {

ChangedIndexSet one(IndexList idx) { return {{"t", std::move(idx)}}; }

ChangedIndexSet to_sorted(const oracle::Sets& s) {
    ChangedIndexSet out;
    for (const auto& [name, set] : s) {
        if (set.empty()) continue;
        IndexList v(set.begin(), set.end());
        std::sort(v.begin(), v.end());
        out.emplace(name, std::move(v));
    }
    return out;
}

} // namespace

TEST(Analysis, IdenticalSnapshotsAreFullySparse) {
    auto spec = harness::ModelSpec::uniform(3, 4, 4);
    const auto m = harness::init_master(spec);
    const auto es = element_sparsity(m, m);
    EXPECT_EQ(es.changed, 0u);
    EXPECT_EQ(es.sparsity, 1.0);
    EXPECT_EQ(inactive_tensor_ratio(m, m), 1.0);
}

TEST(Analysis, SchemaMismatchIsRejected) {
    const auto a = harness::init_master(harness::ModelSpec::uniform(2, 4, 4));
    const auto b = harness::init_master(harness::ModelSpec::uniform(2, 4, 5));
    EXPECT_THROW(element_sparsity(a, b), SyncError);
    EXPECT_THROW(inactive_tensor_ratio(a, b), SyncError);
}

TEST(Analysis, LocalityExamples) {
    auto r = temporal_locality({one({1, 2}), one({2, 3})});
    ASSERT_EQ(r.steps.size(), 1u);
    EXPECT_EQ(r.steps[0].step, 2u);
    EXPECT_EQ(*r.steps[0].p50, 0.5);
    r = temporal_locality({one({1, 2, 3}), one({2, 3})});
    EXPECT_EQ(*r.steps[0].p25, 1.0);
    EXPECT_EQ(*r.steps[0].p90, 1.0);
    // Disjoint histories give 0 at every step; identical ones give 1.
    r = temporal_locality({one({1}), one({2}), one({3}), one({4})});
    for (auto& s : r.steps) EXPECT_EQ(*s.p90, 0.0);
    r = temporal_locality({one({5, 6}), one({5, 6}), one({5, 6})});
    for (auto& s : r.steps) EXPECT_EQ(*s.p25, 1.0);
    // Union over all earlier steps, not just the previous one.
    r = temporal_locality({one({1}), one({2}), one({1, 2})});
    EXPECT_EQ(*r.steps[1].p50, 1.0);
    EXPECT_THROW(temporal_locality({one({1})}), SyncError);
}

TEST(Analysis, LocalitySkipsEmptyTensors) {
    auto r = temporal_locality({one({1}), ChangedIndexSet{{"t", {}}}});
    EXPECT_EQ(r.steps[0].population, 0u);
    EXPECT_FALSE(r.steps[0].p50.has_value());
}

TEST(Analysis, NearestRank) {
    const std::vector<double> v{0.1, 0.2, 0.3, 0.4};
    EXPECT_EQ(nearest_rank(v, 0.25), 0.1);
    EXPECT_EQ(nearest_rank(v, 0.5), 0.2);
    EXPECT_EQ(nearest_rank(v, 0.9), 0.4);
    EXPECT_EQ(nearest_rank({7.0}, 0.25), 7.0);
}

TEST(Analysis, MatchesBruteForceOracle) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const auto h = oracle::random_history(rng);
        std::vector<oracle::Sets> sets;
        std::vector<ChangedIndexSet> lib_sets;
        for (std::size_t k = 1; k < h.snapshots.size(); ++k) {
            const auto& a = h.snapshots[k - 1];
            const auto& b = h.snapshots[k];
            const auto es = element_sparsity(a, b);
            const auto os = oracle::element_sparsity(a, b);
            ASSERT_EQ(es.changed, os.changed);
            ASSERT_EQ(es.changed_fraction, os.fraction);
            ASSERT_EQ(inactive_tensor_ratio(a, b), oracle::inactive_ratio(a, b));
            // Aggregate is the element-weighted mean of the per-tensor fractions.
            double weighted = 0;
            for (const auto& t : es.per_tensor) weighted += static_cast<double>(t.changed);
            ASSERT_EQ(weighted / static_cast<double>(es.numel), es.changed_fraction);
            sets.push_back(oracle::diff_sets(a, b));
            lib_sets.push_back(to_sorted(sets.back()));
        }
        const auto lib = temporal_locality(lib_sets);
        const auto ref = oracle::locality(sets);
        ASSERT_EQ(lib.steps.size(), ref.size());
        for (std::size_t k = 0; k < ref.size(); ++k) {
            ASSERT_EQ(lib.steps[k].population, ref[k].population);
            ASSERT_EQ(lib.steps[k].p25, ref[k].p25);
            ASSERT_EQ(lib.steps[k].p50, ref[k].p50);
            ASSERT_EQ(lib.steps[k].p90, ref[k].p90);
        }
        // The series driver agrees with the pairwise functions.
        const auto series = analyze_series(h.snapshots, DType::BF16, {});
        ASSERT_EQ(series.locality.has_value(), h.snapshots.size() >= 3);
        if (series.locality) {
            ASSERT_EQ(*series.locality, lib);
        }
    }
}

TEST(Analysis, PrecisionVisibilityOrdering) {
    harness::UpdateDriverConfig drv;
    auto h = harness::run_synthetic_training(harness::ModelSpec::uniform(4, 64, 64), drv, 2);
    const auto v = precision_visibility(h.states[0].master, h.states[2].master, kAllDTypes);
    ASSERT_EQ(v.size(), 4u);
    for (std::size_t k = 1; k < v.size(); ++k) EXPECT_LE(v[k - 1].changed_fraction, v[k].changed_fraction);
    EXPECT_GT(v.back().changed_fraction, 0.95);
    EXPECT_LT(v[1].changed_fraction, 0.05);
    EXPECT_THROW(precision_visibility(h.states[0].working, h.states[1].working, kAllDTypes), SyncError);
}

TEST(Analysis, SeriesOfMastersReportsFp32AndVisibility) {
    harness::UpdateDriverConfig drv;
    auto h = harness::run_synthetic_training(harness::ModelSpec::uniform(3, 32, 32), drv, 3);
    std::vector<NamedTensors> masters;
    for (auto& s : h.states) masters.push_back(s.master);
    const auto res = analyze_series(masters, DType::BF16, kAllDTypes);
    ASSERT_EQ(res.sparsity.steps.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& st = res.sparsity.steps[k];
        EXPECT_EQ(st.dtype, DType::BF16);
        ASSERT_TRUE(st.fp32_changed_fraction.has_value());
        EXPECT_GT(*st.fp32_changed_fraction, 0.95);
        EXPECT_EQ(st.changed_fraction, element_sparsity(h.states[k].working, h.states[k + 1].working).changed_fraction);
        EXPECT_EQ(st.visibility.size(), 4u);
    }
    ASSERT_TRUE(res.locality.has_value());
}

TEST(Analysis, JsonRoundTripAndCsv) {
    harness::UpdateDriverConfig drv;
    drv.eta = 1e-3;
    auto h = harness::run_synthetic_training(harness::ModelSpec::uniform(3, 16, 16), drv, 4);
    std::vector<NamedTensors> masters;
    for (auto& s : h.states) masters.push_back(s.master);
    const auto res = analyze_series(masters, DType::BF16, kAllDTypes);
    const auto sp = sparsity_from_json(nlohmann::json::parse(to_json(res.sparsity).dump()));
    EXPECT_EQ(sp, res.sparsity);
    const auto loc = locality_from_json(nlohmann::json::parse(to_json(*res.locality).dump()));
    EXPECT_EQ(loc, *res.locality);
    EXPECT_THROW(locality_from_json(to_json(res.sparsity)), SyncError);
    std::ostringstream csv;
    write_csv(csv, res.sparsity, res.locality);
    const std::string text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
}
