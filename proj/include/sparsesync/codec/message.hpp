#pragma once

// SRLS sync message wire format (little-endian throughout).
//
// Header, 16 bytes:
//   "SRLS" | version u16 | flags u16 | record count u32 | crc32 u32
//
// The CRC-32 (IEEE, as in zlib) covers the first 12 header bytes and every
// record byte, i.e. everything except the CRC field itself. It is verified
// before any other field is interpreted.
//
// Record:
//   name len u16 | name | dtype u8 | path u8 | ndim u8 | dims u64[ndim]
//   SPARSE: nnz u64 | index mode u8 | value scheme u8
//           | [value payload len u64, SPLIT_RANGE only]
//           | index payload (nnz * 2 or nnz * 4) | value payload
//   FULL:   raw tensor data (numel * dtype width)

#include <cstdint>
#include <string>
#include <vector>

#include <zlib.h>

#include "sparsesync/bytes.hpp"
#include "sparsesync/codec/index_codec.hpp"
#include "sparsesync/codec/value_codec.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"
#include "sparsesync/tensor.hpp"

namespace sparsesync {

inline constexpr char kMessageMagic[4] = {'S', 'R', 'L', 'S'};
inline constexpr std::uint16_t kMessageVersion = 1;
inline constexpr std::size_t kMessageHeaderBytes = 16;

/// Set when at least one record carries an entropy-coded value stream.
inline constexpr std::uint16_t kFlagCompressedValues = 0x0001;

enum class RecordPath : std::uint8_t {
    SPARSE = 0,
    FULL = 1,
};

struct TensorUpdateRecord {
    std::string name;
    DType dtype = DType::BF16;
    RecordPath path = RecordPath::SPARSE;
    Shape dims;

    // SPARSE
    std::uint64_t nnz = 0;
    IndexEncoding indices;
    ValueEncoding values;

    // FULL
    Bytes full_data;

    friend bool operator==(const TensorUpdateRecord&, const TensorUpdateRecord&) = default;
};

struct SyncMessage {
    std::uint16_t flags = 0;
    std::vector<TensorUpdateRecord> records;

    friend bool operator==(const SyncMessage&, const SyncMessage&) = default;
};

/// Bytes a record spends on everything except index and value payloads.
constexpr std::size_t record_overhead_bytes(std::size_t name_len, std::size_t ndim, RecordPath path,
                                            bool compressed = false) noexcept {
    std::size_t n = 2 + name_len + 1 + 1 + 1 + 8 * ndim;
    if (path == RecordPath::SPARSE) n += 8 + 1 + 1 + (compressed ? 8 : 0);
    return n;
}

inline std::uint32_t crc32_of(std::uint32_t crc, ByteView b) {
    // zlib takes uInt lengths; feed in chunks to stay within range.
    std::size_t off = 0;
    while (off < b.size()) {
        const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
        crc = static_cast<std::uint32_t>(::crc32(crc, b.data() + off, static_cast<uInt>(n)));
        off += n;
    }
    return crc;
}

inline void write_record(ByteWriter& w, const TensorUpdateRecord& r) {
    w.put_string16(r.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.path));
    if (r.dims.size() > 255) fail(Errc::InvalidArgument, "more than 255 dimensions");
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) w.put<std::uint64_t>(d);

    if (r.path == RecordPath::FULL) {
        w.put_bytes(r.full_data);
        return;
    }
    if (r.nnz != r.indices.count || r.nnz != r.values.count) {
        fail(Errc::InvalidArgument, "record '" + r.name + "': nnz, index count and value count disagree");
    }
    w.put<std::uint64_t>(r.nnz);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.indices.mode));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.values.scheme));
    if (r.values.scheme != ValueScheme::RAW) w.put<std::uint64_t>(r.values.payload.size());
    w.put_bytes(r.indices.payload);
    w.put_bytes(r.values.payload);
}

inline std::size_t record_wire_bytes(const TensorUpdateRecord& r) {
    if (r.path == RecordPath::FULL) return record_overhead_bytes(r.name.size(), r.dims.size(), r.path) + r.full_data.size();
    return record_overhead_bytes(r.name.size(), r.dims.size(), r.path, r.values.scheme != ValueScheme::RAW) +
           r.indices.payload.size() + r.values.payload.size();
}

inline Bytes serialize_message(const SyncMessage& msg) {
    Bytes out;
    std::size_t total = kMessageHeaderBytes;
    for (auto& r : msg.records) total += record_wire_bytes(r);
    out.reserve(total);

    ByteWriter w(out);
    for (int i = 0; i < 4; ++i) w.put<std::uint8_t>(static_cast<std::uint8_t>(kMessageMagic[i]));
    w.put<std::uint16_t>(kMessageVersion);
    w.put<std::uint16_t>(msg.flags);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(msg.records.size()));
    w.put<std::uint32_t>(0); // CRC placeholder
    for (auto& r : msg.records) write_record(w, r);

    std::uint32_t crc = crc32_of(0, ByteView(out).first(12));
    crc = crc32_of(crc, ByteView(out).subspan(kMessageHeaderBytes));
    store_le<std::uint32_t>(out.data() + 12, crc);
    return out;
}

inline TensorUpdateRecord read_record(ByteReader& r) {
    TensorUpdateRecord rec;
    rec.name = r.get_string16();
    auto dt = dtype_from_code(r.get<std::uint8_t>());
    if (!dt) fail(Errc::Corrupt, "record '" + rec.name + "': unknown dtype code");
    rec.dtype = *dt;
    auto path = r.get<std::uint8_t>();
    if (path > static_cast<std::uint8_t>(RecordPath::FULL)) fail(Errc::Corrupt, "record '" + rec.name + "': bad path");
    rec.path = static_cast<RecordPath>(path);
    rec.dims.resize(r.get<std::uint8_t>());
    for (auto& d : rec.dims) d = r.get<std::uint64_t>();

    std::uint64_t numel;
    try {
        numel = shape_numel(rec.dims);
    } catch (const SyncError& e) {
        fail(Errc::Corrupt, "record '" + rec.name + "': " + e.what());
    }
    const std::size_t w = width_bytes(rec.dtype);

    if (rec.path == RecordPath::FULL) {
        auto data = r.get_bytes(static_cast<std::size_t>(numel * w));
        rec.full_data.assign(data.begin(), data.end());
        return rec;
    }

    rec.nnz = r.get<std::uint64_t>();
    if (rec.nnz > numel) fail(Errc::Corrupt, "record '" + rec.name + "': nnz exceeds element count");
    auto mode = r.get<std::uint8_t>();
    if (mode > static_cast<std::uint8_t>(IndexMode::DELTA16)) fail(Errc::Corrupt, "record '" + rec.name + "': bad index mode");
    auto scheme = r.get<std::uint8_t>();
    if (scheme > static_cast<std::uint8_t>(ValueScheme::SPLIT_RANGE)) {
        fail(Errc::Corrupt, "record '" + rec.name + "': bad value scheme");
    }
    rec.indices.mode = static_cast<IndexMode>(mode);
    rec.indices.count = rec.nnz;
    rec.values.scheme = static_cast<ValueScheme>(scheme);
    rec.values.count = rec.nnz;
    rec.values.dtype = rec.dtype;

    std::uint64_t value_len = rec.nnz * w;
    if (rec.values.scheme != ValueScheme::RAW) value_len = r.get<std::uint64_t>();
    const std::uint64_t index_len = rec.nnz * index_width(rec.indices.mode);
    if (index_len > r.remaining()) fail(Errc::Truncated, "record '" + rec.name + "' index payload");
    auto ib = r.get_bytes(static_cast<std::size_t>(index_len));
    rec.indices.payload.assign(ib.begin(), ib.end());
    if (value_len > r.remaining()) fail(Errc::Truncated, "record '" + rec.name + "' value payload");
    auto vb = r.get_bytes(static_cast<std::size_t>(value_len));
    rec.values.payload.assign(vb.begin(), vb.end());

    auto idx = decode_indices(rec.indices);
    if (!idx.empty() && idx.back() >= numel) fail(Errc::Corrupt, "record '" + rec.name + "': index out of range");
    return rec;
}

inline SyncMessage deserialize_message(ByteView in) {
    if (in.size() < kMessageHeaderBytes) fail(Errc::Truncated, "message shorter than its 16-byte header");
    const std::uint32_t stored = load_le<std::uint32_t>(in.data() + 12);
    std::uint32_t crc = crc32_of(0, in.first(12));
    crc = crc32_of(crc, in.subspan(kMessageHeaderBytes));
    if (crc != stored) fail(Errc::CrcMismatch, "checksum mismatch (corrupted or not an SRLS message)");

    ByteReader r(in);
    auto magic = r.get_bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kMessageMagic)) fail(Errc::BadMagic, "not an SRLS message");
    auto version = r.get<std::uint16_t>();
    if (version != kMessageVersion) fail(Errc::VersionUnsupported, "SRLS version " + std::to_string(version));

    SyncMessage msg;
    msg.flags = r.get<std::uint16_t>();
    auto count = r.get<std::uint32_t>();
    r.get<std::uint32_t>();
    msg.records.reserve(std::min<std::size_t>(count, r.remaining()));
    for (std::uint32_t k = 0; k < count; ++k) msg.records.push_back(read_record(r));
    if (!r.done()) fail(Errc::Corrupt, "trailing bytes after last record");
    return msg;
}

} // namespace sparsesync
