#pragma once

// Value streams. SPLIT_RANGE splits the packed values into byte planes
// (plane k holds byte k of every element, so for BF16 the sign/exponent byte
// and the low mantissa byte are modelled separately) and range-codes each
// plane with its own order-0 model, all planes in one coder stream. The
// encoder keeps RAW whenever compression would not shrink the stream.

#include <cstdint>
#include <string>

#include "sparsesync/bytes.hpp"
#include "sparsesync/codec/range_coder.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"

namespace sparsesync {

enum class ValueScheme : std::uint8_t {
    RAW = 0,
    SPLIT_RANGE = 1,
};

struct ValueEncoding {
    ValueScheme scheme = ValueScheme::RAW;
    Bytes payload;
    std::uint64_t count = 0;
    DType dtype = DType::BF16;

    friend bool operator==(const ValueEncoding&, const ValueEncoding&) = default;
};

inline ValueEncoding raw_values(ByteView values, DType dtype) {
    const std::size_t w = width_bytes(dtype);
    if (values.size() % w != 0) fail(Errc::InvalidArgument, "value bytes not a multiple of the element width");
    return {ValueScheme::RAW, Bytes(values.begin(), values.end()), values.size() / w, dtype};
}

inline Bytes split_range_encode(ByteView values, std::size_t width) {
    Bytes out;
    rc::Encoder enc(out);
    const std::size_t n = values.size() / width;
    for (std::size_t plane = 0; plane < width; ++plane) {
        rc::ByteModel model;
        for (std::size_t i = 0; i < n; ++i) model.encode(enc, values[i * width + plane]);
    }
    enc.finish();
    return out;
}

inline Bytes split_range_decode(ByteView payload, std::uint64_t count, std::size_t width) {
    Bytes out(count * width);
    rc::Decoder dec(payload);
    for (std::size_t plane = 0; plane < width; ++plane) {
        rc::ByteModel model;
        for (std::size_t i = 0; i < count; ++i) out[i * width + plane] = model.decode(dec);
    }
    // The encoder's final flush always covers every byte the decoder reads;
    // anything more means the payload was cut short.
    if (dec.overrun() > 0) fail(Errc::Corrupt, "range-coded payload truncated");
    return out;
}

inline ValueEncoding compress_values(ByteView values, DType dtype) {
    auto raw = raw_values(values, dtype);
    if (values.empty()) return raw;
    Bytes packed = split_range_encode(values, width_bytes(dtype));
    if (packed.size() >= values.size()) return raw;
    return {ValueScheme::SPLIT_RANGE, std::move(packed), raw.count, dtype};
}

inline Bytes decompress_values(const ValueEncoding& enc) {
    const std::size_t w = width_bytes(enc.dtype);
    switch (enc.scheme) {
    case ValueScheme::RAW:
        if (enc.count > enc.payload.size() / w || enc.payload.size() != enc.count * w) {
            fail(Errc::Corrupt, "raw value payload is " + std::to_string(enc.payload.size()) + " bytes for " +
                                    std::to_string(enc.count) + " values");
        }
        return enc.payload;
    case ValueScheme::SPLIT_RANGE:
        if (enc.count > (std::uint64_t{1} << 31)) fail(Errc::Corrupt, "value count out of range");
        return split_range_decode(enc.payload, enc.count, w);
    }
    fail(Errc::Corrupt, "unknown value scheme " + std::to_string(static_cast<int>(enc.scheme)));
}

} // namespace sparsesync
