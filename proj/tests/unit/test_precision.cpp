#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sparsesync/precision.hpp"

using namespace sparsesync;

namespace {

// Reference model of a narrow format: every non-negative finite code with its
// exact value, computed with ldexp from the field layout.
struct RefFormat {
    int ebits, mbits;
    bool has_inf;
    std::vector<std::pair<double, std::uint32_t>> values; // ascending

    RefFormat(int e, int m, bool inf) : ebits(e), mbits(m), has_inf(inf) {
        const int bias = (1 << (e - 1)) - 1;
        const std::uint32_t top = 1u << (e + m);
        for (std::uint32_t c = 0; c < top; ++c) {
            const std::uint32_t ef = c >> m, mf = c & ((1u << m) - 1);
            if (inf && ef == (1u << e) - 1) continue;                          // inf / NaN
            if (!inf && ef == (1u << e) - 1 && mf == (1u << m) - 1) continue;  // E4M3 NaN
            const double v = ef == 0 ? std::ldexp(double(mf), 1 - bias - m)
                                     : std::ldexp(double(mf + (1u << m)), int(ef) - bias - m);
            values.emplace_back(v, c);
        }
        std::sort(values.begin(), values.end());
    }

    std::uint32_t sign_bit() const { return 1u << (ebits + mbits); }
    std::uint32_t inf_code() const { return ((1u << ebits) - 1) << mbits; }

    // Nearest value, ties to even code; out-of-range per format rules.
    std::uint32_t cast(float x) const {
        const double a = std::fabs(double(x));
        const std::uint32_t s = std::signbit(x) ? sign_bit() : 0;
        const double maxv = values.back().first;
        if (a > maxv) {
            if (!has_inf) return s | values.back().second;
            // Halfway between max and the next binade step rounds to inf (max is odd).
            const double ulp = values.back().first - values[values.size() - 2].first;
            if (a >= maxv + ulp / 2) return s | inf_code();
            return s | values.back().second;
        }
        auto hi = std::lower_bound(values.begin(), values.end(), std::make_pair(a, 0u),
                                   [](auto& l, auto& r) { return l.first < r.first; });
        if (hi->first == a) return s | hi->second;
        auto lo = hi - 1;
        const double twice = 2 * a, mid = lo->first + hi->first; // both exact
        if (twice < mid) return s | lo->second;
        if (twice > mid) return s | hi->second;
        return s | ((lo->second & 1) == 0 ? lo->second : hi->second);
    }
};

const RefFormat& ref(DType d) {
    static const RefFormat bf16(8, 7, true), fp16(5, 10, true), e4m3(4, 3, false);
    switch (d) {
    case DType::BF16: return bf16;
    case DType::FP16: return fp16;
    default: return e4m3;
    }
}

float from_bits(std::uint32_t b) { return std::bit_cast<float>(b); }

} // namespace

TEST(Precision, Bf16Examples) {
    EXPECT_EQ(cast_scalar(1.0f, DType::BF16).bits, 0x3F80u);
    // 1 + 2^-8 is exactly half a bf16 ulp above 1.0; ties to even keeps 0x3F80.
    EXPECT_EQ(cast_scalar(1.00390625f, DType::BF16).bits, 0x3F80u);
    // 1 + 3*2^-8 ties between 0x3F81 and 0x3F82; even wins.
    EXPECT_EQ(cast_scalar(1.01171875f, DType::BF16).bits, 0x3F82u);
    EXPECT_EQ(cast_scalar(1.00390631f, DType::BF16).bits, 0x3F81u);
    const float v[] = {1.0f, 2.0f, 3.0f};
    const Bytes b = cast_buffer(v, DType::BF16);
    ASSERT_EQ(b.size(), 6u);
    EXPECT_EQ(load_le<std::uint16_t>(b.data()), 0x3F80);
    EXPECT_EQ(load_le<std::uint16_t>(b.data() + 2), 0x4000);
    EXPECT_EQ(load_le<std::uint16_t>(b.data() + 4), 0x4040);
}

TEST(Precision, SpecialValues) {
    const float inf = std::numeric_limits<float>::infinity();
    const float nan = std::numeric_limits<float>::quiet_NaN();
    EXPECT_EQ(cast_scalar(inf, DType::BF16).bits, 0x7F80u);
    EXPECT_EQ(cast_scalar(-inf, DType::FP16).bits, 0xFC00u);
    EXPECT_EQ(cast_scalar(inf, DType::FP8E4M3).bits, 0x7Eu);
    EXPECT_EQ(cast_scalar(-inf, DType::FP8E4M3).bits, 0xFEu);
    EXPECT_EQ(cast_scalar(nan, DType::BF16).bits, 0x7FC0u);
    EXPECT_EQ(cast_scalar(-nan, DType::FP16).bits, 0x7E00u);
    EXPECT_EQ(cast_scalar(nan, DType::FP8E4M3).bits, 0x7Fu);
    EXPECT_EQ(cast_scalar(-0.0f, DType::BF16).bits, 0x8000u);
    EXPECT_EQ(cast_scalar(-0.0f, DType::FP8E4M3).bits, 0x80u);
    EXPECT_EQ(cast_scalar(65504.0f, DType::FP16).bits, 0x7BFFu);
    EXPECT_EQ(cast_scalar(65520.0f, DType::FP16).bits, 0x7C00u); // tie with odd max goes to inf
    EXPECT_EQ(cast_scalar(65519.996f, DType::FP16).bits, 0x7BFFu);
    EXPECT_EQ(cast_scalar(448.0f, DType::FP8E4M3).bits, 0x7Eu);
    EXPECT_EQ(cast_scalar(1e6f, DType::FP8E4M3).bits, 0x7Eu);
    // Smallest subnormals survive; no flush-to-zero.
    EXPECT_EQ(cast_scalar(std::ldexp(1.0f, -24), DType::FP16).bits, 0x0001u);
    EXPECT_EQ(cast_scalar(std::ldexp(1.0f, -25), DType::FP16).bits, 0x0000u); // tie to even zero
    EXPECT_EQ(cast_scalar(std::ldexp(1.5f, -25), DType::FP16).bits, 0x0001u);
    EXPECT_EQ(cast_scalar(std::ldexp(1.0f, -9), DType::FP8E4M3).bits, 0x01u);
    EXPECT_EQ(cast_scalar(std::ldexp(1.0f, -133), DType::BF16).bits, 0x0001u);
}

TEST(Precision, Fp32IsIdentityIncludingNanPayloads) {
    for (std::uint32_t b : {0x7FC00001u, 0xFF800123u, 0x00000001u, 0x80000000u, 0x3F800000u}) {
        EXPECT_EQ(cast_scalar(from_bits(b), DType::FP32).bits, b);
    }
}

TEST(Precision, Bf16ExhaustiveHighHalvesMatchOracle) {
    // Every bf16 pattern and its neighbouring float values around each tie.
    const auto& r = ref(DType::BF16);
    for (std::uint32_t hi = 0; hi < 0x10000; ++hi) {
        for (std::uint32_t lo : {0x0000u, 0x7FFFu, 0x8000u, 0x8001u, 0xFFFFu}) {
            const std::uint32_t bits = (hi << 16) | lo;
            const float x = from_bits(bits);
            if (std::isnan(x)) continue;
            ASSERT_EQ(cast_scalar(x, DType::BF16).bits, r.cast(x)) << std::hex << bits;
        }
    }
}

TEST(Precision, RandomFloatsMatchOracle) {
    std::mt19937_64 rng(12345);
    std::uniform_int_distribution<std::uint32_t> any;
    std::uniform_int_distribution<int> exps(-30, 20);
    std::uniform_real_distribution<float> mant(-2.0f, 2.0f);
    for (DType d : {DType::BF16, DType::FP16, DType::FP8E4M3}) {
        const auto& r = ref(d);
        for (int i = 0; i < 200000; ++i) {
            const float x = (i & 1) ? from_bits(any(rng)) : std::ldexp(mant(rng), exps(rng));
            if (std::isnan(x)) continue;
            ASSERT_EQ(cast_scalar(x, d).bits, r.cast(x)) << dtype_name(d) << " x=" << x;
        }
    }
}

TEST(Precision, RoundTripOfRepresentableValues) {
    for (DType d : {DType::BF16, DType::FP16, DType::FP8E4M3}) {
        for (const auto& [v, code] : ref(d).values) {
            const float f = static_cast<float>(v);
            ASSERT_EQ(cast_scalar(f, d).bits, code);
            ASSERT_EQ(decode_scalar({d, code}), f);
            ASSERT_EQ(cast_scalar(-f, d).bits, code | ref(d).sign_bit());
        }
    }
}

TEST(Precision, DecodeSpecials) {
    EXPECT_TRUE(std::isinf(decode_scalar({DType::FP16, 0x7C00})));
    EXPECT_TRUE(std::isnan(decode_scalar({DType::FP16, 0x7E00})));
    EXPECT_TRUE(std::isnan(decode_scalar({DType::FP8E4M3, 0x7F})));
    EXPECT_TRUE(std::isnan(decode_scalar({DType::FP8E4M3, 0xFF})));
    EXPECT_EQ(decode_scalar({DType::FP8E4M3, 0x7E}), 448.0f);
}

TEST(Precision, VisibilityIsMonotoneInMantissaWidth) {
    // A relative step that is visible in a narrower format is visible in every
    // wider one.
    std::mt19937_64 rng(7);
    std::normal_distribution<float> w(0.0f, 0.02f), n(0.0f, 1.0f);
    const DType order[] = {DType::FP8E4M3, DType::BF16, DType::FP16, DType::FP32};
    for (double eta : {1e-6, 3e-5, 1e-3, 3e-2}) {
        std::array<int, 4> changed{};
        for (int i = 0; i < 100000; ++i) {
            const float a = w(rng);
            const float b = a + static_cast<float>(eta) * std::fabs(a) * n(rng);
            for (int k = 0; k < 4; ++k) changed[k] += cast_scalar(a, order[k]) != cast_scalar(b, order[k]);
        }
        EXPECT_LE(changed[0], changed[1]) << eta;
        EXPECT_LE(changed[1], changed[2]) << eta;
        EXPECT_LE(changed[2], changed[3]) << eta;
    }
}

TEST(Precision, ParseAndCodes) {
    EXPECT_EQ(parse_dtype("BF16"), DType::BF16);
    EXPECT_EQ(parse_dtype("e4m3"), DType::FP8E4M3);
    EXPECT_THROW(parse_dtype("int8"), SyncError);
    EXPECT_EQ(dtype_from_code(2), DType::FP16);
    EXPECT_FALSE(dtype_from_code(4).has_value());
    EXPECT_EQ(width_bytes(DType::FP8E4M3), 1u);
}

TEST(Precision, DecodeBufferRejectsRaggedLength) {
    Bytes b(3);
    EXPECT_THROW(decode_buffer(b, DType::BF16), SyncError);
}
