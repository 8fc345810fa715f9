#pragma once

// Change tracking at the FP32 -> working-precision cast boundary.
//
// Each optimizer step updates the FP32 master weights, re-casts them into the
// working weights, and records the flat indices whose working bits changed.
// The per-step sets are unioned into a cumulative set that is handed to the
// packer at the next synchronization and then cleared.

#include <algorithm>
#include <bit>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"
#include "sparsesync/tensor.hpp"

namespace sparsesync {

using IndexList = std::vector<std::uint32_t>;

/// Per-tensor strictly increasing flat indices. Tensors with no entry (or an
/// empty list) have no changed elements.
using ChangedIndexSet = std::map<std::string, IndexList>;

inline std::uint64_t total_indices(const ChangedIndexSet& s) {
    std::uint64_t n = 0;
    for (auto& [_, v] : s) n += v.size();
    return n;
}

inline void check_index_list(const IndexList& idx, std::uint64_t numel, const std::string& name) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= numel) {
            fail(Errc::IndexOutOfRange, "tensor '" + name + "': index " + std::to_string(idx[i]) +
                                            " >= numel " + std::to_string(numel));
        }
        if (i && idx[i] <= idx[i - 1]) fail(Errc::NotSorted, "tensor '" + name + "': indices not strictly increasing");
    }
}

struct ModelState {
    NamedTensors master;  // FP32
    NamedTensors working; // one working dtype throughout
    DType working_dtype = DType::BF16;
    std::uint64_t step = 0;

    /// Builds the working copy by casting every master tensor.
    static ModelState from_master(NamedTensors master, DType working_dtype) {
        ModelState s;
        s.working_dtype = working_dtype;
        for (const auto& m : master) {
            if (m.dtype() != DType::FP32) fail(Errc::DTypeMismatch, "master tensor '" + m.name() + "' is not fp32");
            TensorBuf w(m.name(), working_dtype, m.shape());
            auto values = decode_buffer(m.bytes(), DType::FP32);
            cast_buffer_into(values, working_dtype, w.mutable_bytes().data());
            s.working.insert(std::move(w));
        }
        s.master = std::move(master);
        return s;
    }
};

/// Deep copy of the working weights.
inline NamedTensors snapshot_working(const ModelState& state) { return state.working; }

inline IndexList diff_changed(const TensorBuf& prev, const TensorBuf& curr) {
    if (!prev.same_layout(curr) || prev.name() != curr.name()) {
        fail(Errc::ShapeMismatch, "cannot diff '" + prev.name() + "' " + shape_string(prev.shape()) + " against '" +
                                      curr.name() + "' " + shape_string(curr.shape()));
    }
    IndexList out;
    const std::size_t w = width_bytes(curr.dtype());
    const auto a = prev.bytes();
    const auto b = curr.bytes();
    for (std::size_t i = 0, n = curr.numel(); i < n; ++i) {
        if (std::memcmp(a.data() + i * w, b.data() + i * w, w) != 0) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
}

inline IndexList union_sorted(const IndexList& a, const IndexList& b) {
    IndexList out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline ChangedIndexSet accumulate(const ChangedIndexSet& cum, const ChangedIndexSet& step_set) {
    ChangedIndexSet out = cum;
    for (const auto& [name, idx] : step_set) {
        if (idx.empty()) continue;
        auto& dst = out[name];
        dst = dst.empty() ? idx : union_sorted(dst, idx);
    }
    return out;
}

using MasterUpdate = std::map<std::string, std::vector<float>>;

/// One optimizer step: master += delta in FP32, re-cast, and return the
/// indices whose working bits changed. At most one extra working copy of a
/// single tensor is alive at a time.
inline ChangedIndexSet apply_master_update_and_track(ModelState& state, const MasterUpdate& update) {
    for (const auto& [name, delta] : update) {
        const auto* m = state.master.find(name);
        if (!m) fail(Errc::UnknownTensor, "update for unknown tensor '" + name + "'");
        if (delta.size() != m->numel()) {
            fail(Errc::ShapeMismatch, "update for '" + name + "' has " + std::to_string(delta.size()) +
                                          " elements, tensor has " + std::to_string(m->numel()));
        }
    }

    ChangedIndexSet step_set;
    for (const auto& [name, delta] : update) {
        TensorBuf& master = state.master.at(name);
        TensorBuf& working = state.working.at(name);
        auto mb = master.mutable_bytes();
        const std::size_t n = master.numel();

        std::vector<float> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            float v = std::bit_cast<float>(load_le<std::uint32_t>(mb.data() + 4 * i)) + delta[i];
            values[i] = v;
            store_le<std::uint32_t>(mb.data() + 4 * i, std::bit_cast<std::uint32_t>(v));
        }

        TensorBuf next(working.name(), working.dtype(), working.shape());
        cast_buffer_into(values, working.dtype(), next.mutable_bytes().data());
        auto changed = diff_changed(working, next);
        working = std::move(next);
        if (!changed.empty()) step_set.emplace(name, std::move(changed));
    }
    ++state.step;
    return step_set;
}

/// Owns a ModelState and the cumulative changed set of the current epoch.
class Tracker {
public:
    explicit Tracker(ModelState state) : state_(std::move(state)) {}

    const ChangedIndexSet& step(const MasterUpdate& update) {
        last_ = apply_master_update_and_track(state_, update);
        cumulative_ = accumulate(cumulative_, last_);
        return last_;
    }

    const ModelState& state() const noexcept { return state_; }
    const ChangedIndexSet& cumulative() const noexcept { return cumulative_; }
    const ChangedIndexSet& last_step() const noexcept { return last_; }

    /// Ends the synchronization epoch: returns the cumulative set and clears it.
    ChangedIndexSet take_cumulative() {
        ChangedIndexSet out;
        out.swap(cumulative_);
        return out;
    }

private:
    ModelState state_;
    ChangedIndexSet cumulative_;
    ChangedIndexSet last_;
};

} // namespace sparsesync
