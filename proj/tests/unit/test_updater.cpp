#include <random>

#include <gtest/gtest.h>

#include "sparsesync/harness/synthetic.hpp"
#include "sparsesync/updater.hpp"

using namespace sparsesync;

namespace {

TensorBuf abc() {
    const float v[] = {1.0f, 2.0f, 3.0f};
    return TensorBuf::from_floats("t", DType::BF16, {3}, v);
}

Errc code_of(NamedTensors& w, const SyncMessage& m) {
    try {
        apply_update(w, m);
    } catch (const SyncError& e) {
        return e.code();
    }
    return Errc::InvalidArgument;
}

} // namespace

TEST(Updater, GlobMatch) {
    EXPECT_TRUE(glob_match("lora_*", "lora_A.weight"));
    EXPECT_TRUE(glob_match("*.bias", "layer.3.bias"));
    EXPECT_TRUE(glob_match("layer.?.w", "layer.7.w"));
    EXPECT_FALSE(glob_match("layer.?.w", "layer.17.w"));
    EXPECT_FALSE(glob_match("lora_*", "base.lora_A"));
    EXPECT_TRUE(glob_match("*", ""));
}

TEST(Updater, RoutingExamples) {
    RoutingPolicy p;
    EXPECT_EQ(route("w", 6, 1000, p), RecordPath::SPARSE);
    EXPECT_EQ(route("w", 1000, 1000, p), RecordPath::FULL);
    EXPECT_EQ(route("w", 333, 999, p), RecordPath::FULL); // exactly at break-even
    EXPECT_EQ(route("w", 332, 999, p), RecordPath::SPARSE);
    p.force_full = {"lora_*"};
    EXPECT_EQ(route("lora_B", 0, 1000, p), RecordPath::FULL);
}

TEST(Updater, MaskedTensorExamples) {
    const auto t = abc();
    auto m = materialize_masked(t, {1});
    EXPECT_EQ(m.data.bits_at(0), 0x7FC0u);
    EXPECT_EQ(m.data.bits_at(1), t.bits_at(1));
    EXPECT_EQ(m.data.bits_at(2), 0x7FC0u);
    EXPECT_EQ(materialize_masked(t, {0, 1, 2}).data, t);
    const auto none = materialize_masked(t, {});
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(none.data.bits_at(i), 0x7FC0u);
    EXPECT_THROW(materialize_masked(t, {3}), SyncError);
}

TEST(Updater, GatherScatterReproducesMasked) {
    std::mt19937_64 rng(4);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (DType dt : {DType::FP8E4M3, DType::BF16, DType::FP16, DType::FP32}) {
        std::vector<float> v(97);
        for (auto& x : v) x = d(rng);
        const auto t = TensorBuf::from_floats("t", dt, {97}, v);
        IndexList idx;
        for (std::uint32_t i = 0; i < 97; ++i) {
            if (rng() % 3 == 0) idx.push_back(i);
        }
        const Bytes vals = gather_values(t, idx);
        TensorBuf out("t", dt, {97});
        for (std::size_t i = 0; i < 97; ++i) out.set_bits(i, traits(dt).canonical_nan);
        scatter_values(out, idx, vals);
        EXPECT_EQ(out, materialize_masked(t, idx).data);
    }
    const auto t = abc();
    const Bytes g = gather_values(t, {0, 2});
    EXPECT_EQ(load_le<std::uint16_t>(g.data()), t.bits_at(0));
    EXPECT_EQ(load_le<std::uint16_t>(g.data() + 2), t.bits_at(2));
}

TEST(Updater, PackExamples) {
    NamedTensors w;
    w.insert(abc());
    EXPECT_TRUE(pack_updates(w, {}, {}).records.empty());
    // 1 of 3 sits exactly on the default break-even and goes FULL.
    EXPECT_EQ(pack_updates(w, {{"t", {0}}}, {}).records.at(0).path, RecordPath::FULL);
    auto m = pack_updates(w, {{"t", {0}}}, RoutingPolicy{0.5, {}});
    ASSERT_EQ(m.records.size(), 1u);
    EXPECT_EQ(m.records[0].path, RecordPath::SPARSE);
    EXPECT_EQ(m.records[0].nnz, 1u);
    EXPECT_EQ(load_le<std::uint16_t>(m.records[0].values.payload.data()), w.at("t").bits_at(0));
    EXPECT_THROW(pack_updates(w, {{"zz", {0}}}, {}), SyncError);
    EXPECT_THROW(pack_updates(w, {{"t", {3}}}, {}), SyncError);
    RoutingPolicy p;
    p.force_full = {"t"};
    m = pack_updates(w, {}, p);
    ASSERT_EQ(m.records.size(), 1u);
    EXPECT_EQ(m.records[0].path, RecordPath::FULL);
}

TEST(Updater, ApplyExamples) {
    NamedTensors w;
    w.insert(abc());
    const auto before = w;
    apply_update(w, {});
    EXPECT_EQ(w, before);

    SyncMessage m;
    TensorUpdateRecord r;
    r.name = "t";
    r.dtype = DType::BF16;
    r.dims = {3};
    r.nnz = 1;
    r.indices = encode_indices({1});
    const Bytes v{0x34, 0x12};
    r.values = raw_values(v, DType::BF16);
    m.records.push_back(r);
    apply_update(w, m);
    EXPECT_EQ(w.at("t").bits_at(0), before.at("t").bits_at(0));
    EXPECT_EQ(w.at("t").bits_at(1), 0x1234u);
    EXPECT_EQ(w.at("t").bits_at(2), before.at("t").bits_at(2));
}

TEST(Updater, ApplyIsAllOrNothing) {
    NamedTensors w;
    w.insert(abc());
    const float z[] = {0.0f, 0.0f};
    w.insert(TensorBuf::from_floats("u", DType::BF16, {2}, z));
    const auto before = w;

    SyncMessage m;
    m.records.push_back(make_full_record(TensorBuf::from_floats("t", DType::BF16, {3}, std::vector<float>{9, 9, 9})));
    auto bad = make_full_record(TensorBuf::from_floats("u", DType::BF16, {1, 2}, z));
    m.records.push_back(bad);
    EXPECT_EQ(code_of(w, m), Errc::ShapeMismatch);
    EXPECT_EQ(w, before);

    m.records[1] = make_full_record(TensorBuf::from_floats("u", DType::FP16, {2}, z));
    EXPECT_EQ(code_of(w, m), Errc::DTypeMismatch);
    m.records[1] = make_full_record(TensorBuf::from_floats("v", DType::BF16, {2}, z));
    EXPECT_EQ(code_of(w, m), Errc::UnknownTensor);
    EXPECT_EQ(w, before);
}

TEST(Updater, LosslessIdempotentAndFullRoutingInvariant) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto spec = harness::ModelSpec::uniform(5, 16, 64, seed % 2 ? DType::BF16 : DType::FP16, seed);
        harness::UpdateDriverConfig drv;
        drv.eta = 1e-3;
        drv.seed = seed;
        harness::SyntheticTrainer tr(spec, drv);
        NamedTensors rollout = tr.state().working;
        for (int sync = 0; sync < 3; ++sync) {
            for (int k = 0; k < 2; ++k) tr.step();
            auto cum = tr.tracker().take_cumulative();
            // Add never-changed positions: the superset must be harmless.
            for (auto& [name, idx] : cum) idx = union_sorted(idx, {0, 5, 17});
            PackOptions opt{seed % 3 == 0, seed % 4 != 0};
            const auto msg = pack_updates(tr.state(), cum, {}, opt);
            const auto wire = deserialize_message(serialize_message(msg));
            apply_update(rollout, wire);
            ASSERT_EQ(rollout, tr.state().working);
            apply_update(rollout, wire);
            ASSERT_EQ(rollout, tr.state().working);

            // Same change set, every tensor forced to FULL: same weights.
            NamedTensors alt = rollout;
            RoutingPolicy all_full;
            all_full.force_full = {"*"};
            apply_update(alt, pack_updates(tr.state(), cum, all_full, opt));
            ASSERT_EQ(alt, tr.state().working);
        }
    }
}

TEST(Updater, SparseRecordSizeIsLinearInNnz) {
    NamedTensors w;
    std::vector<float> v(10000, 0.5f);
    w.insert(TensorBuf::from_floats("layer.0", DType::BF16, {100, 100}, v));
    for (std::uint32_t nnz : {1u, 10u, 100u, 1000u}) {
        IndexList idx;
        for (std::uint32_t i = 0; i < nnz; ++i) idx.push_back(i * 3);
        const auto m = pack_updates(w, {{"layer.0", idx}}, {});
        EXPECT_LE(record_wire_bytes(m.records[0]), nnz * (2 + 4) + record_overhead_bytes(7, 2, RecordPath::SPARSE, true));
    }
}
