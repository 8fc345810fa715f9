#pragma once

// SRLT checkpoint container.
//
//   "SRLT" | version u16 | tensor count u32
//   per tensor: name len u16 | name bytes | dtype u8 | ndim u8 | dims u64[ndim]
//               | data byte length u64 | raw little-endian data
//
// All integers are little-endian.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/tensor.hpp"

namespace sparsesync {

inline constexpr char kCheckpointMagic[4] = {'S', 'R', 'L', 'T'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline Bytes serialize_checkpoint(const NamedTensors& tensors) {
    Bytes out;
    ByteWriter w(out);
    w.put_bytes(ByteView(reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4));
    w.put<std::uint16_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.put_string16(t.name());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype()));
        if (t.shape().size() > 255) fail(Errc::InvalidArgument, "more than 255 dimensions");
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape().size()));
        for (auto d : t.shape()) w.put<std::uint64_t>(d);
        w.put<std::uint64_t>(t.byte_size());
        w.put_bytes(t.bytes());
    }
    return out;
}

inline NamedTensors deserialize_checkpoint(ByteView in) {
    ByteReader r(in);
    auto magic = r.get_bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic)) fail(Errc::BadMagic, "not an SRLT checkpoint");
    auto version = r.get<std::uint16_t>();
    if (version != kCheckpointVersion) {
        fail(Errc::VersionUnsupported, "SRLT version " + std::to_string(version));
    }
    auto count = r.get<std::uint32_t>();
    NamedTensors out;
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = r.get_string16();
        auto dt = dtype_from_code(r.get<std::uint8_t>());
        if (!dt) fail(Errc::Corrupt, "tensor '" + name + "': unknown dtype code");
        auto ndim = r.get<std::uint8_t>();
        Shape shape(ndim);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        auto nbytes = r.get<std::uint64_t>();
        if (nbytes > r.remaining()) fail(Errc::Truncated, "tensor '" + name + "' data");
        auto data = r.get_bytes(static_cast<std::size_t>(nbytes));
        out.insert(TensorBuf(std::move(name), *dt, std::move(shape), Bytes(data.begin(), data.end())));
    }
    if (!r.done()) fail(Errc::Corrupt, "trailing bytes after last tensor");
    return out;
}

inline Bytes read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) fail(Errc::Io, "cannot open '" + p.string() + "'");
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return b;
}

/// Writes to a sibling temp file and renames over the target, so a failure
/// never leaves a partial output behind.
inline void write_file_atomic(const std::filesystem::path& p, ByteView data) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(Errc::Io, "cannot create '" + tmp.string() + "'");
        f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!f) {
            f.close();
            std::filesystem::remove(tmp);
            fail(Errc::Io, "write failed for '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, p, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        fail(Errc::Io, "rename to '" + p.string() + "' failed: " + ec.message());
    }
}

inline NamedTensors load_checkpoint(const std::filesystem::path& p) { return deserialize_checkpoint(read_file(p)); }

inline void save_checkpoint(const std::filesystem::path& p, const NamedTensors& t) {
    write_file_atomic(p, serialize_checkpoint(t));
}

} // namespace sparsesync
