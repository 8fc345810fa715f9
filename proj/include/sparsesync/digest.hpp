#pragma once

#include <array>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/tensor.hpp"

namespace sparsesync {

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(ByteView data) {
    Digest d{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 || len != d.size()) {
        fail(Errc::Io, "SHA-256 computation failed");
    }
    return d;
}

struct TensorDigest {
    std::string name;
    Digest digest{};

    friend bool operator==(const TensorDigest&, const TensorDigest&) = default;
};

/// SHA-256 of each tensor's raw bytes, in model order.
inline std::vector<TensorDigest> tensor_digests(const NamedTensors& weights) {
    std::vector<TensorDigest> out;
    out.reserve(weights.size());
    for (const auto& t : weights) out.push_back({t.name(), sha256(t.bytes())});
    return out;
}

/// One digest over the per-tensor digests (names included).
inline Digest combined_digest(const std::vector<TensorDigest>& ds) {
    Bytes buf;
    ByteWriter w(buf);
    for (const auto& d : ds) {
        w.put_string16(d.name);
        w.put_bytes(d.digest);
    }
    return sha256(buf);
}

} // namespace sparsesync
