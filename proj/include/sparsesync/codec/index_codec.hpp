#pragma once

// Sorted flat-index streams.
//
// DELTA16 stores first differences as u16 with an implicit leading zero, so
// the first element is its own delta. It is chosen only when every delta,
// including the first, is below 2^15; otherwise the stream falls back to
// ABS32 absolutes. Both layouts are little-endian.

#include <cstdint>
#include <string>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/tracking.hpp"

namespace sparsesync {

enum class IndexMode : std::uint8_t {
    ABS32 = 0,
    DELTA16 = 1,
};

inline constexpr std::uint32_t kDelta16Limit = 1u << 15;
inline constexpr std::uint64_t kIndexLimit = std::uint64_t{1} << 31;

struct IndexEncoding {
    IndexMode mode = IndexMode::DELTA16;
    Bytes payload;
    std::uint64_t count = 0;

    friend bool operator==(const IndexEncoding&, const IndexEncoding&) = default;
};

constexpr std::size_t index_width(IndexMode m) noexcept { return m == IndexMode::DELTA16 ? 2 : 4; }

/// True when `indices` (already validated) can use DELTA16.
inline bool fits_delta16(const IndexList& indices) noexcept {
    std::uint32_t prev = 0;
    for (auto i : indices) {
        if (i - prev >= kDelta16Limit) return false;
        prev = i;
    }
    return true;
}

/// `allow_delta16 = false` forces the fixed-width int32 layout.
inline IndexEncoding encode_indices(const IndexList& indices, bool allow_delta16 = true) {
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= kIndexLimit) fail(Errc::IndexOverflow, "index " + std::to_string(indices[k]) + " >= 2^31");
        if (k && indices[k] <= indices[k - 1]) fail(Errc::NotSorted, "indices must be strictly increasing");
    }

    IndexEncoding enc;
    enc.count = indices.size();
    enc.mode = allow_delta16 && fits_delta16(indices) ? IndexMode::DELTA16 : IndexMode::ABS32;
    enc.payload.resize(indices.size() * index_width(enc.mode));

    std::uint8_t* out = enc.payload.data();
    if (enc.mode == IndexMode::DELTA16) {
        std::uint32_t prev = 0;
        for (std::size_t k = 0; k < indices.size(); ++k) {
            store_le<std::uint16_t>(out + 2 * k, static_cast<std::uint16_t>(indices[k] - prev));
            prev = indices[k];
        }
    } else {
        for (std::size_t k = 0; k < indices.size(); ++k) store_le<std::uint32_t>(out + 4 * k, indices[k]);
    }
    return enc;
}

inline IndexList decode_indices(const IndexEncoding& enc) {
    if (enc.mode != IndexMode::DELTA16 && enc.mode != IndexMode::ABS32) {
        fail(Errc::Corrupt, "unknown index mode " + std::to_string(static_cast<int>(enc.mode)));
    }
    const std::size_t w = index_width(enc.mode);
    if (enc.count > enc.payload.size() / w || enc.payload.size() != enc.count * w) {
        fail(Errc::Corrupt, "index payload is " + std::to_string(enc.payload.size()) + " bytes for " +
                                std::to_string(enc.count) + " entries");
    }

    IndexList out(enc.count);
    const std::uint8_t* in = enc.payload.data();
    if (enc.mode == IndexMode::DELTA16) {
        std::uint64_t pos = 0;
        for (std::size_t k = 0; k < out.size(); ++k) {
            const std::uint16_t d = load_le<std::uint16_t>(in + 2 * k);
            if (d >= kDelta16Limit) fail(Errc::Corrupt, "delta " + std::to_string(d) + " >= 2^15");
            if (k && d == 0) fail(Errc::Corrupt, "zero delta after the first index");
            pos += d;
            if (pos >= kIndexLimit) fail(Errc::Corrupt, "reconstructed index >= 2^31");
            out[k] = static_cast<std::uint32_t>(pos);
        }
    } else {
        for (std::size_t k = 0; k < out.size(); ++k) {
            out[k] = load_le<std::uint32_t>(in + 4 * k);
            if (out[k] >= kIndexLimit) fail(Errc::Corrupt, "index >= 2^31");
            if (k && out[k] <= out[k - 1]) fail(Errc::Corrupt, "absolute indices not strictly increasing");
        }
    }
    return out;
}

} // namespace sparsesync
