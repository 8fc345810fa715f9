#pragma once

// Bit-exact conversion between FP32 and the synchronization precisions.
//
// All narrowing casts are round-to-nearest-even with gradual underflow (no
// flush-to-zero). BF16 and FP16 overflow to infinity as IEEE-754 requires;
// FP8 E4M3 has no infinity and saturates to +/-448 instead. NaN inputs map to
// one canonical quiet NaN per format so that raw-bit comparison is stable.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"

namespace sparsesync {

enum class DType : std::uint8_t {
    FP32 = 0,
    BF16 = 1,
    FP16 = 2,
    FP8E4M3 = 3,
};

struct FormatTraits {
    int exponent_bits;
    int mantissa_bits;
    bool has_inf;
    std::uint32_t max_finite;    // magnitude bits of the largest finite value
    std::uint32_t inf_bits;      // meaningful only when has_inf
    std::uint32_t canonical_nan;
};

constexpr FormatTraits traits(DType d) noexcept {
    switch (d) {
    case DType::FP32: return {8, 23, true, 0x7F7FFFFFu, 0x7F800000u, 0x7FC00000u};
    case DType::BF16: return {8, 7, true, 0x7F7Fu, 0x7F80u, 0x7FC0u};
    case DType::FP16: return {5, 10, true, 0x7BFFu, 0x7C00u, 0x7E00u};
    case DType::FP8E4M3: return {4, 3, false, 0x7Eu, 0u, 0x7Fu};
    }
    return {8, 23, true, 0x7F7FFFFFu, 0x7F800000u, 0x7FC00000u};
}

constexpr std::size_t width_bytes(DType d) noexcept {
    switch (d) {
    case DType::FP32: return 4;
    case DType::BF16: return 2;
    case DType::FP16: return 2;
    case DType::FP8E4M3: return 1;
    }
    return 4;
}

constexpr std::string_view dtype_name(DType d) noexcept {
    switch (d) {
    case DType::FP32: return "fp32";
    case DType::BF16: return "bf16";
    case DType::FP16: return "fp16";
    case DType::FP8E4M3: return "fp8e4m3";
    }
    return "?";
}

inline std::optional<DType> dtype_from_code(std::uint8_t code) noexcept {
    if (code > static_cast<std::uint8_t>(DType::FP8E4M3)) return std::nullopt;
    return static_cast<DType>(code);
}

inline DType parse_dtype(std::string_view s) {
    std::string l(s);
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    if (l == "fp32" || l == "f32" || l == "float32") return DType::FP32;
    if (l == "bf16" || l == "bfloat16") return DType::BF16;
    if (l == "fp16" || l == "f16" || l == "float16" || l == "half") return DType::FP16;
    if (l == "fp8" || l == "fp8e4m3" || l == "e4m3") return DType::FP8E4M3;
    fail(Errc::InvalidArgument, "unknown dtype '" + std::string(s) + "'");
}

inline constexpr DType kAllDTypes[] = {DType::FP8E4M3, DType::BF16, DType::FP16, DType::FP32};

/// A scalar in some format, held as its raw bit pattern. Equality is on bits.
struct ScalarBits {
    DType dtype = DType::FP32;
    std::uint32_t bits = 0;

    friend bool operator==(const ScalarBits&, const ScalarBits&) = default;
};

namespace detail {

inline std::uint32_t narrow_bits(std::uint32_t in, const FormatTraits& f) noexcept {
    const int man = f.mantissa_bits;
    const std::uint32_t sign_out = (in >> 31) << (f.exponent_bits + man);
    const std::uint32_t mag = in & 0x7FFFFFFFu;

    if (mag > 0x7F800000u) return f.canonical_nan;
    if (mag == 0x7F800000u) return sign_out | (f.has_inf ? f.inf_bits : f.max_finite);
    if (mag == 0) return sign_out;

    // |x| = sig * 2^exp exactly.
    const int e32 = static_cast<int>(mag >> 23);
    std::uint64_t sig = mag & 0x7FFFFFu;
    int exp;
    if (e32 == 0) {
        exp = -149;
    } else {
        sig |= 1u << 23;
        exp = e32 - 150;
    }

    const int bias = (1 << (f.exponent_bits - 1)) - 1;
    const int emin = 1 - bias;
    const int top = static_cast<int>(std::bit_width(sig)) - 1 + exp; // floor(log2 |x|)
    const int scale = std::max(top, emin);
    const int quantum = scale - man;                                  // log2 of target ULP
    const int shift = quantum - exp;

    std::uint64_t n;
    if (shift <= 0) {
        n = sig << -shift;
    } else if (shift > 40) {
        n = 0; // far below half a quantum
    } else {
        const std::uint64_t half = std::uint64_t{1} << (shift - 1);
        const std::uint64_t rem = sig & ((std::uint64_t{1} << shift) - 1);
        n = sig >> shift;
        if (rem > half || (rem == half && (n & 1u))) ++n;
    }

    // Subnormals land at scale == emin with n < 2^man; a carry out of the
    // mantissa bumps the exponent field naturally.
    std::uint64_t enc = (static_cast<std::uint64_t>(scale - emin) << man) + n;
    if (enc > f.max_finite) enc = f.has_inf ? f.inf_bits : f.max_finite;
    return sign_out | static_cast<std::uint32_t>(enc);
}

inline float widen_bits(std::uint32_t bits, const FormatTraits& f) noexcept {
    const int man = f.mantissa_bits;
    const std::uint32_t emask = (1u << f.exponent_bits) - 1;
    const std::uint32_t mmask = (1u << man) - 1;
    const bool neg = (bits >> (f.exponent_bits + man)) & 1u;
    const std::uint32_t e = (bits >> man) & emask;
    const std::uint32_t m = bits & mmask;
    const int bias = (1 << (f.exponent_bits - 1)) - 1;

    if (f.has_inf && e == emask) {
        if (m != 0) return neg ? -std::numeric_limits<float>::quiet_NaN()
                               : std::numeric_limits<float>::quiet_NaN();
        return neg ? -std::numeric_limits<float>::infinity() : std::numeric_limits<float>::infinity();
    }
    if (!f.has_inf && e == emask && m == mmask) {
        return neg ? -std::numeric_limits<float>::quiet_NaN() : std::numeric_limits<float>::quiet_NaN();
    }
    float v;
    if (e == 0) {
        v = std::ldexp(static_cast<float>(m), 1 - bias - man);
    } else {
        v = std::ldexp(static_cast<float>(m | (1u << man)), static_cast<int>(e) - bias - man);
    }
    return neg ? -v : v;
}

} // namespace detail

inline ScalarBits cast_scalar(float x, DType target) noexcept {
    const auto in = std::bit_cast<std::uint32_t>(x);
    if (target == DType::FP32) return {target, in};
    return {target, detail::narrow_bits(in, traits(target))};
}

inline float decode_scalar(ScalarBits s) noexcept {
    switch (s.dtype) {
    case DType::FP32: return std::bit_cast<float>(s.bits);
    case DType::BF16: return std::bit_cast<float>(s.bits << 16);
    default: return detail::widen_bits(s.bits, traits(s.dtype));
    }
}

/// Reads element `i` of a packed little-endian buffer as raw bits.
inline std::uint32_t load_element(const std::uint8_t* data, DType d, std::size_t i) noexcept {
    switch (width_bytes(d)) {
    case 1: return data[i];
    case 2: return load_le<std::uint16_t>(data + 2 * i);
    default: return load_le<std::uint32_t>(data + 4 * i);
    }
}

inline void store_element(std::uint8_t* data, DType d, std::size_t i, std::uint32_t bits) noexcept {
    switch (width_bytes(d)) {
    case 1: data[i] = static_cast<std::uint8_t>(bits); break;
    case 2: store_le<std::uint16_t>(data + 2 * i, static_cast<std::uint16_t>(bits)); break;
    default: store_le<std::uint32_t>(data + 4 * i, bits); break;
    }
}

inline void cast_buffer_into(std::span<const float> src, DType target, std::uint8_t* out) noexcept {
    if (target == DType::FP32) {
        for (std::size_t i = 0; i < src.size(); ++i) {
            store_le<std::uint32_t>(out + 4 * i, std::bit_cast<std::uint32_t>(src[i]));
        }
        return;
    }
    const FormatTraits f = traits(target);
    for (std::size_t i = 0; i < src.size(); ++i) {
        store_element(out, target, i, detail::narrow_bits(std::bit_cast<std::uint32_t>(src[i]), f));
    }
}

inline Bytes cast_buffer(std::span<const float> src, DType target) {
    Bytes out(src.size() * width_bytes(target));
    cast_buffer_into(src, target, out.data());
    return out;
}

inline std::vector<float> decode_buffer(ByteView data, DType d) {
    const std::size_t w = width_bytes(d);
    if (data.size() % w != 0) fail(Errc::Corrupt, "buffer length not a multiple of element width");
    std::vector<float> out(data.size() / w);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = decode_scalar({d, load_element(data.data(), d, i)});
    }
    return out;
}

} // namespace sparsesync
