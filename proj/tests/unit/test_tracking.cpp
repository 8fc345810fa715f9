#include <random>
#include <set>

#include <gtest/gtest.h>

#include "sparsesync/tracking.hpp"

using namespace sparsesync;

namespace {

ModelState make_state(std::size_t n, DType working, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, 0.02f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    NamedTensors m;
    m.insert(TensorBuf::from_floats("a", DType::FP32, {n}, v));
    for (auto& x : v) x = d(rng);
    m.insert(TensorBuf::from_floats("b", DType::FP32, {n / 4, 4}, v));
    return ModelState::from_master(std::move(m), working);
}

MasterUpdate random_update(const ModelState& s, double eta, std::mt19937_64& rng) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    MasterUpdate u;
    for (const auto& m : s.master) {
        std::vector<float> d(m.numel());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(eta) * std::fabs(m.value_at(i)) * n(rng);
        u.emplace(m.name(), std::move(d));
    }
    return u;
}

} // namespace

TEST(Tracking, DiffExamples) {
    const float a[] = {1.0f, 2.0f, 3.0f, 4.0f};
    const float b[] = {1.0f, 2.5f, 3.0f, 5.0f};
    auto ta = TensorBuf::from_floats("t", DType::BF16, {4}, a);
    auto tb = TensorBuf::from_floats("t", DType::BF16, {4}, b);
    EXPECT_EQ(diff_changed(ta, tb), (IndexList{1, 3}));
    EXPECT_TRUE(diff_changed(ta, ta).empty());
    auto tc = TensorBuf::from_floats("t", DType::BF16, {2, 2}, b);
    EXPECT_THROW(diff_changed(ta, tc), SyncError);
}

TEST(Tracking, NegativeZeroCountsAsChange) {
    const float a[] = {0.0f};
    const float b[] = {-0.0f};
    EXPECT_EQ(diff_changed(TensorBuf::from_floats("z", DType::BF16, {1}, a), TensorBuf::from_floats("z", DType::BF16, {1}, b)),
              (IndexList{0}));
}

TEST(Tracking, SubUlpUpdatesAreAbsorbed) {
    NamedTensors m;
    const float one[] = {1.0f};
    m.insert(TensorBuf::from_floats("w", DType::FP32, {1}, one));
    auto s = ModelState::from_master(std::move(m), DType::BF16);
    auto set = apply_master_update_and_track(s, {{"w", {1e-4f}}});
    EXPECT_TRUE(set.empty());
    EXPECT_NE(s.master.at("w").bits_at(0), 0x3F800000u); // master moved
    EXPECT_EQ(s.working.at("w").bits_at(0), 0x3F80u);   // working did not
    EXPECT_EQ(s.step, 1u);
}

TEST(Tracking, UpdateValidatesBeforeMutating) {
    auto s = make_state(64, DType::BF16, 1);
    const auto before = s.master;
    MasterUpdate u{{"a", std::vector<float>(64, 1.0f)}, {"b", std::vector<float>(3, 1.0f)}};
    EXPECT_THROW(apply_master_update_and_track(s, u), SyncError);
    EXPECT_EQ(s.master, before);
    EXPECT_THROW(apply_master_update_and_track(s, {{"zzz", {}}}), SyncError);
}

TEST(Tracking, StepSetMatchesBruteForceDiffAndCumulativeIsUnion) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        Tracker tr(make_state(256, seed % 2 ? DType::FP16 : DType::BF16, seed));
        std::map<std::string, std::set<std::uint32_t>> oracle;
        const int steps = 1 + static_cast<int>(seed % 5);
        for (int t = 0; t < steps; ++t) {
            const NamedTensors prev = tr.state().working;
            const double eta = std::array{1e-4, 3e-3, 3e-2}[rng() % 3];
            const auto& set = tr.step(random_update(tr.state(), eta, rng));
            for (const auto& w : tr.state().working) {
                const auto& p = prev.at(w.name());
                IndexList brute;
                for (std::uint32_t i = 0; i < w.numel(); ++i) {
                    if (p.bits_at(i) != w.bits_at(i)) {
                        brute.push_back(i);
                        oracle[w.name()].insert(i);
                    }
                }
                auto it = set.find(w.name());
                EXPECT_EQ(it == set.end() ? IndexList{} : it->second, brute);
            }
        }
        for (const auto& [name, idx] : tr.cumulative()) {
            EXPECT_EQ(idx, IndexList(oracle[name].begin(), oracle[name].end()));
            check_index_list(idx, tr.state().working.at(name).numel(), name);
        }
        EXPECT_EQ(total_indices(tr.cumulative()), [&] {
            std::uint64_t n = 0;
            for (auto& [_, s] : oracle) n += s.size();
            return n;
        }());
        auto taken = tr.take_cumulative();
        EXPECT_TRUE(tr.cumulative().empty());
    }
}

TEST(Tracking, WorkingAlwaysEqualsCastOfMaster) {
    std::mt19937_64 rng(3);
    Tracker tr(make_state(512, DType::FP8E4M3, 3));
    for (int t = 0; t < 5; ++t) tr.step(random_update(tr.state(), 0.05, rng));
    for (const auto& m : tr.state().master) {
        const auto& w = tr.state().working.at(m.name());
        for (std::size_t i = 0; i < m.numel(); ++i) {
            ASSERT_EQ(w.bits_at(i), cast_scalar(m.value_at(i), DType::FP8E4M3).bits);
        }
    }
}

TEST(Tracking, CheckIndexList) {
    EXPECT_NO_THROW(check_index_list({0, 3, 9}, 10, "t"));
    EXPECT_THROW(check_index_list({0, 10}, 10, "t"), SyncError);
    EXPECT_THROW(check_index_list({3, 3}, 10, "t"), SyncError);
    EXPECT_EQ(union_sorted({1, 4, 7}, {2, 4, 9}), (IndexList{1, 2, 4, 7, 9}));
}
