#pragma once

// Trainer-side packing and receiver-side application of sync messages.

#include <string>
#include <string_view>
#include <vector>

#include "sparsesync/codec/index_codec.hpp"
#include "sparsesync/codec/message.hpp"
#include "sparsesync/codec/value_codec.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/tensor.hpp"
#include "sparsesync/tracking.hpp"

namespace sparsesync {

/// Shell-style match supporting `*` and `?`.
inline bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

struct RoutingPolicy {
    /// Break-even density of raw BF16 values with int32 indices: 2 / (2 + 4).
    double density_threshold = 1.0 / 3.0;
    std::vector<std::string> force_full;

    bool forces_full(std::string_view name) const {
        for (const auto& p : force_full) {
            if (glob_match(p, name)) return true;
        }
        return false;
    }
};

struct PackOptions {
    bool compress = false;
    bool allow_delta16 = true;
};

inline RecordPath route(std::string_view name, std::uint64_t nnz, std::uint64_t numel, const RoutingPolicy& policy) {
    if (policy.forces_full(name)) return RecordPath::FULL;
    if (numel == 0) return RecordPath::SPARSE;
    const double density = static_cast<double>(nnz) / static_cast<double>(numel);
    return density < policy.density_threshold ? RecordPath::SPARSE : RecordPath::FULL;
}

/// Parameter-shaped tensor holding real bits at `idx` and the canonical NaN
/// of the dtype everywhere else.
struct MaskedTensor {
    TensorBuf data;
};

inline void check_indices_for(const TensorBuf& param, const IndexList& idx) {
    for (auto i : idx) {
        if (i >= param.numel()) {
            fail(Errc::IndexOutOfRange, "tensor '" + param.name() + "': index " + std::to_string(i) + " >= numel " +
                                            std::to_string(param.numel()));
        }
    }
}

inline MaskedTensor materialize_masked(const TensorBuf& param, const IndexList& idx) {
    check_indices_for(param, idx);
    TensorBuf out(param.name(), param.dtype(), param.shape());
    const std::uint32_t nan = traits(param.dtype()).canonical_nan;
    for (std::size_t i = 0; i < out.numel(); ++i) out.set_bits(i, nan);
    for (auto i : idx) out.set_bits(i, param.bits_at(i));
    return {std::move(out)};
}

inline Bytes gather_values(const TensorBuf& param, const IndexList& idx) {
    check_indices_for(param, idx);
    const std::size_t w = width_bytes(param.dtype());
    Bytes out(idx.size() * w);
    const auto src = param.bytes();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::memcpy(out.data() + k * w, src.data() + static_cast<std::size_t>(idx[k]) * w, w);
    }
    return out;
}

inline void scatter_values(TensorBuf& param, const IndexList& idx, ByteView values) {
    const std::size_t w = width_bytes(param.dtype());
    auto dst = param.mutable_bytes();
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::memcpy(dst.data() + static_cast<std::size_t>(idx[k]) * w, values.data() + k * w, w);
    }
}

/// Hook where a sharded backend would gather and re-layout the full tensor.
/// Tensors here are already whole and row-major, so it is the identity.
inline const TensorBuf& convert_for_broadcast(const TensorBuf& t) { return t; }

inline TensorUpdateRecord make_sparse_record(const TensorBuf& param, const IndexList& idx, const PackOptions& opt) {
    const TensorBuf& full = convert_for_broadcast(param);
    TensorUpdateRecord rec;
    rec.name = full.name();
    rec.dtype = full.dtype();
    rec.path = RecordPath::SPARSE;
    rec.dims = full.shape();
    rec.nnz = idx.size();
    rec.indices = encode_indices(idx, opt.allow_delta16);
    Bytes values = gather_values(full, idx);
    rec.values = opt.compress ? compress_values(values, full.dtype()) : raw_values(values, full.dtype());
    return rec;
}

inline TensorUpdateRecord make_full_record(const TensorBuf& param) {
    const TensorBuf& full = convert_for_broadcast(param);
    TensorUpdateRecord rec;
    rec.name = full.name();
    rec.dtype = full.dtype();
    rec.path = RecordPath::FULL;
    rec.dims = full.shape();
    rec.full_data.assign(full.bytes().begin(), full.bytes().end());
    return rec;
}

/// Packs the tracked changes of `weights` into one message, in model order.
/// Tensors with no changes are omitted unless a force_full pattern names them.
inline SyncMessage pack_updates(const NamedTensors& weights, const ChangedIndexSet& cum, const RoutingPolicy& policy,
                                const PackOptions& opt = {}) {
    for (const auto& [name, idx] : cum) {
        const auto* t = weights.find(name);
        if (!t) fail(Errc::UnknownTensor, "changed-index set names unknown tensor '" + name + "'");
        check_index_list(idx, t->numel(), name);
    }

    SyncMessage msg;
    static const IndexList kNone;
    for (const auto& t : weights) {
        auto it = cum.find(t.name());
        const IndexList& idx = it == cum.end() ? kNone : it->second;
        const RecordPath path = route(t.name(), idx.size(), t.numel(), policy);
        if (path == RecordPath::FULL) {
            msg.records.push_back(make_full_record(t));
        } else if (!idx.empty()) {
            msg.records.push_back(make_sparse_record(t, idx, opt));
            if (msg.records.back().values.scheme != ValueScheme::RAW) msg.flags |= kFlagCompressedValues;
        }
    }
    return msg;
}

inline SyncMessage pack_updates(const ModelState& state, const ChangedIndexSet& cum, const RoutingPolicy& policy,
                                const PackOptions& opt = {}) {
    return pack_updates(state.working, cum, policy, opt);
}

/// Every tensor on the FULL path; the baseline message.
inline SyncMessage pack_full(const NamedTensors& weights) {
    SyncMessage msg;
    for (const auto& t : weights) msg.records.push_back(make_full_record(t));
    return msg;
}

/// Applies `msg` to `weights`. Every record is decoded and validated before
/// any tensor is touched, so a failing message leaves `weights` unchanged.
inline void apply_update(NamedTensors& weights, const SyncMessage& msg) {
    struct Staged {
        TensorBuf* target;
        IndexList idx;
        Bytes values;
        bool full;
    };
    std::vector<Staged> staged;
    staged.reserve(msg.records.size());

    for (const auto& r : msg.records) {
        TensorBuf* t = weights.find(r.name);
        if (!t) fail(Errc::UnknownTensor, "update for unknown tensor '" + r.name + "'");
        if (r.dtype != t->dtype()) {
            fail(Errc::DTypeMismatch, "tensor '" + r.name + "': update is " + std::string(dtype_name(r.dtype)) +
                                          ", local is " + std::string(dtype_name(t->dtype())));
        }
        if (r.dims != t->shape()) {
            fail(Errc::ShapeMismatch, "tensor '" + r.name + "': update " + shape_string(r.dims) + ", local " +
                                          shape_string(t->shape()));
        }
        if (r.path == RecordPath::FULL) {
            if (r.full_data.size() != t->byte_size()) fail(Errc::Corrupt, "tensor '" + r.name + "': full data size");
            staged.push_back({t, {}, r.full_data, true});
            continue;
        }
        if (r.nnz != r.indices.count || r.nnz != r.values.count) {
            fail(Errc::Corrupt, "tensor '" + r.name + "': record counts disagree");
        }
        IndexList idx = decode_indices(r.indices);
        check_indices_for(*t, idx);
        Bytes values = decompress_values(r.values);
        if (values.size() != idx.size() * width_bytes(t->dtype())) {
            fail(Errc::Corrupt, "tensor '" + r.name + "': value count does not match index count");
        }
        staged.push_back({t, std::move(idx), std::move(values), false});
    }

    for (auto& s : staged) {
        if (s.full) {
            std::memcpy(s.target->mutable_bytes().data(), s.values.data(), s.values.size());
        } else {
            scatter_values(*s.target, s.idx, s.values);
        }
    }
}

} // namespace sparsesync
