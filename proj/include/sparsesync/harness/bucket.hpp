#pragma once

// Splits a sync message into size-bounded buckets. Each bucket payload is a
// complete SRLS message holding a run of whole records, so every bucket is
// independently checksummed. Records are never split; one that exceeds the
// limit on its own gets a bucket to itself.

#include <cstdint>
#include <string>
#include <vector>

#include "sparsesync/bytes.hpp"
#include "sparsesync/codec/message.hpp"
#include "sparsesync/error.hpp"

namespace sparsesync::harness {

inline constexpr std::size_t kDefaultBucketLimit = 128u << 20;
inline constexpr std::size_t kDeskBucketLimit = 1u << 20;

struct Bucket {
    std::uint32_t seq = 0;
    Bytes payload;
};

inline std::vector<Bucket> bucketize(const SyncMessage& msg, std::size_t limit_bytes) {
    if (limit_bytes == 0) fail(Errc::InvalidArgument, "bucket limit must be positive");
    std::vector<Bucket> out;
    SyncMessage part;
    part.flags = msg.flags;
    std::size_t part_bytes = kMessageHeaderBytes;

    auto flush = [&] {
        if (part.records.empty()) return;
        out.push_back({static_cast<std::uint32_t>(out.size()), serialize_message(part)});
        part.records.clear();
        part_bytes = kMessageHeaderBytes;
    };

    for (const auto& r : msg.records) {
        const std::size_t rb = record_wire_bytes(r);
        if (!part.records.empty() && part_bytes + rb > limit_bytes) flush();
        part.records.push_back(r);
        part_bytes += rb;
    }
    flush();
    return out;
}

/// Inverse of bucketize; buckets must arrive with contiguous sequence numbers.
inline SyncMessage reassemble(const std::vector<Bucket>& buckets) {
    SyncMessage msg;
    for (std::size_t k = 0; k < buckets.size(); ++k) {
        if (buckets[k].seq != k) fail(Errc::Corrupt, "bucket sequence gap at " + std::to_string(k));
        SyncMessage part = deserialize_message(buckets[k].payload);
        msg.flags |= part.flags;
        for (auto& r : part.records) msg.records.push_back(std::move(r));
    }
    return msg;
}

} // namespace sparsesync::harness
