#pragma once

// Sparsity measurements over weight snapshots: element-level changed
// fraction, tensor-level inactive ratio, per-format visibility of FP32
// updates, and temporal locality of changed-index sets.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"
#include "sparsesync/tensor.hpp"
#include "sparsesync/tracking.hpp"

namespace sparsesync::analysis {

using nlohmann::json;

struct TensorChange {
    std::string name;
    std::uint64_t changed = 0;
    std::uint64_t numel = 0;
    double fraction = 0;

    friend bool operator==(const TensorChange&, const TensorChange&) = default;
};

struct ElementSparsity {
    std::vector<TensorChange> per_tensor;
    std::uint64_t changed = 0;
    std::uint64_t numel = 0;
    double changed_fraction = 0;
    double sparsity = 1;
};

inline void require_same_schema(const NamedTensors& a, const NamedTensors& b) {
    if (!same_schema(a, b)) fail(Errc::SchemaMismatch, "snapshots differ in tensor names, order, shapes or dtypes");
}

inline std::uint64_t count_changed(const TensorBuf& a, const TensorBuf& b) {
    const std::size_t w = width_bytes(a.dtype());
    const auto x = a.bytes();
    const auto y = b.bytes();
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) n += std::memcmp(x.data() + i * w, y.data() + i * w, w) != 0;
    return n;
}

inline ElementSparsity element_sparsity(const NamedTensors& prev, const NamedTensors& curr) {
    require_same_schema(prev, curr);
    ElementSparsity out;
    auto it = prev.begin();
    for (const auto& c : curr) {
        const std::uint64_t n = count_changed(*it++, c);
        out.per_tensor.push_back({c.name(), n, c.numel(), static_cast<double>(n) / static_cast<double>(c.numel())});
        out.changed += n;
        out.numel += c.numel();
    }
    out.changed_fraction = out.numel ? static_cast<double>(out.changed) / static_cast<double>(out.numel) : 0.0;
    out.sparsity = 1.0 - out.changed_fraction;
    return out;
}

inline double inactive_tensor_ratio(const NamedTensors& prev, const NamedTensors& curr) {
    require_same_schema(prev, curr);
    if (curr.empty()) return 0.0;
    std::size_t inactive = 0;
    auto it = prev.begin();
    for (const auto& c : curr) {
        const TensorBuf& p = *it++;
        if (std::ranges::equal(p.bytes(), c.bytes())) ++inactive;
    }
    return static_cast<double>(inactive) / static_cast<double>(curr.size());
}

struct FormatVisibility {
    DType format = DType::BF16;
    std::uint64_t changed = 0;
    std::uint64_t numel = 0;
    double changed_fraction = 0;
};

/// For each format, the fraction of elements whose cast differs between two
/// FP32 master snapshots.
inline std::vector<FormatVisibility> precision_visibility(const NamedTensors& master_prev, const NamedTensors& master_curr,
                                                          std::span<const DType> formats) {
    require_same_schema(master_prev, master_curr);
    for (const auto& t : master_curr) {
        if (t.dtype() != DType::FP32) fail(Errc::DTypeMismatch, "precision_visibility needs fp32 masters");
    }
    std::vector<FormatVisibility> out;
    for (DType f : formats) {
        FormatVisibility v{f, 0, 0, 0};
        auto it = master_prev.begin();
        for (const auto& c : master_curr) {
            const TensorBuf& p = *it++;
            for (std::size_t i = 0; i < c.numel(); ++i) {
                const float a = std::bit_cast<float>(p.bits_at(i));
                const float b = std::bit_cast<float>(c.bits_at(i));
                v.changed += cast_scalar(a, f).bits != cast_scalar(b, f).bits;
            }
            v.numel += c.numel();
        }
        v.changed_fraction = v.numel ? static_cast<double>(v.changed) / static_cast<double>(v.numel) : 0.0;
        out.push_back(v);
    }
    return out;
}

/// Nearest-rank quantile of a sorted, non-empty population.
inline double nearest_rank(const std::vector<double>& sorted, double q) {
    const auto n = sorted.size();
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    return sorted[rank - 1];
}

struct LocalityStep {
    std::size_t step = 0;      // 1-based position in the history
    std::size_t population = 0; // tensors with a non-empty changed set
    std::optional<double> p25, p50, p90;

    friend bool operator==(const LocalityStep&, const LocalityStep&) = default;
};

struct LocalityReport {
    std::vector<LocalityStep> steps;

    friend bool operator==(const LocalityReport&, const LocalityReport&) = default;
};

/// Per-tensor ratio |I_t & (I_1 | ... | I_{t-1})| / |I_t| for t >= 2,
/// summarized by nearest-rank quantiles over tensors with |I_t| > 0.
inline LocalityReport temporal_locality(const std::vector<ChangedIndexSet>& history) {
    if (history.size() < 2) fail(Errc::TooFewSteps, "temporal locality needs at least two steps");
    LocalityReport rep;
    ChangedIndexSet seen = history.front();
    for (std::size_t t = 1; t < history.size(); ++t) {
        std::vector<double> ratios;
        for (const auto& [name, cur] : history[t]) {
            if (cur.empty()) continue;
            std::size_t hits = 0;
            if (auto it = seen.find(name); it != seen.end()) {
                const auto& prior = it->second;
                std::size_t a = 0, b = 0;
                while (a < cur.size() && b < prior.size()) {
                    if (cur[a] < prior[b]) ++a;
                    else if (prior[b] < cur[a]) ++b;
                    else { ++hits; ++a; ++b; }
                }
            }
            ratios.push_back(static_cast<double>(hits) / static_cast<double>(cur.size()));
        }
        LocalityStep s;
        s.step = t + 1;
        s.population = ratios.size();
        if (!ratios.empty()) {
            std::sort(ratios.begin(), ratios.end());
            s.p25 = nearest_rank(ratios, 0.25);
            s.p50 = nearest_rank(ratios, 0.50);
            s.p90 = nearest_rank(ratios, 0.90);
        }
        rep.steps.push_back(s);
        seen = accumulate(seen, history[t]);
    }
    return rep;
}

struct SparsityStep {
    std::size_t step = 0; // 1-based: transition from snapshot step-1 to step
    DType dtype = DType::BF16;
    double changed_fraction = 0;
    double sparsity = 1;
    std::optional<double> fp32_changed_fraction;
    double inactive_tensor_fraction = 0;
    std::vector<TensorChange> per_tensor;
    std::vector<std::pair<DType, double>> visibility;

    friend bool operator==(const SparsityStep&, const SparsityStep&) = default;
};

struct SparsityReport {
    std::vector<SparsityStep> steps;

    double mean_changed_fraction() const {
        double s = 0;
        for (auto& st : steps) s += st.changed_fraction;
        return steps.empty() ? 0.0 : s / static_cast<double>(steps.size());
    }
    double mean_inactive_fraction() const {
        double s = 0;
        for (auto& st : steps) s += st.inactive_tensor_fraction;
        return steps.empty() ? 0.0 : s / static_cast<double>(steps.size());
    }

    friend bool operator==(const SparsityReport&, const SparsityReport&) = default;
};

inline NamedTensors cast_snapshot(const NamedTensors& fp32, DType target) {
    NamedTensors out;
    for (const auto& t : fp32) {
        auto values = decode_buffer(t.bytes(), DType::FP32);
        out.insert(TensorBuf::from_floats(t.name(), target, t.shape(), values));
    }
    return out;
}

struct SeriesAnalysis {
    SparsityReport sparsity;
    std::optional<LocalityReport> locality;
};

/// Analyzes consecutive snapshot pairs. FP32 snapshots are treated as master
/// weights: changes are measured after casting to `working`, the raw FP32
/// change ratio is reported alongside, and `formats` get visibility ratios.
/// Locality needs at least two transitions (three snapshots).
inline SeriesAnalysis analyze_series(const std::vector<NamedTensors>& snapshots, DType working,
                                     std::span<const DType> formats) {
    if (snapshots.size() < 2) fail(Errc::TooFewSteps, "need at least two snapshots");
    const bool masters = std::all_of(snapshots.begin(), snapshots.end(), [](const NamedTensors& s) {
        return std::all_of(s.begin(), s.end(), [](const TensorBuf& t) { return t.dtype() == DType::FP32; });
    });

    SeriesAnalysis out;
    std::vector<ChangedIndexSet> history;
    std::optional<NamedTensors> prev_work;
    for (std::size_t k = 0; k < snapshots.size(); ++k) {
        NamedTensors work = masters && working != DType::FP32 ? cast_snapshot(snapshots[k], working) : snapshots[k];
        if (k > 0) {
            SparsityStep st;
            st.step = k;
            st.dtype = work.empty() ? working : work.begin()->dtype();
            auto es = element_sparsity(*prev_work, work);
            st.changed_fraction = es.changed_fraction;
            st.sparsity = es.sparsity;
            st.per_tensor = std::move(es.per_tensor);
            st.inactive_tensor_fraction = inactive_tensor_ratio(*prev_work, work);
            if (masters) {
                st.fp32_changed_fraction = element_sparsity(snapshots[k - 1], snapshots[k]).changed_fraction;
                for (auto& v : precision_visibility(snapshots[k - 1], snapshots[k], formats)) {
                    st.visibility.emplace_back(v.format, v.changed_fraction);
                }
            }
            out.sparsity.steps.push_back(std::move(st));

            ChangedIndexSet set;
            auto it = prev_work->begin();
            for (const auto& t : work) {
                auto idx = diff_changed(*it++, t);
                if (!idx.empty()) set.emplace(t.name(), std::move(idx));
            }
            history.push_back(std::move(set));
        }
        prev_work = std::move(work);
    }
    if (history.size() >= 2) out.locality = temporal_locality(history);
    return out;
}

// JSON ------------------------------------------------------------------

inline constexpr const char* kSparsitySchemaId = "sparsesync/sparsity-report/v1";
inline constexpr const char* kLocalitySchemaId = "sparsesync/locality-report/v1";

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline std::optional<double> opt_double(const json& j) {
    return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

inline json to_json(const SparsityReport& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        json per = json::array();
        for (const auto& t : s.per_tensor) {
            per.push_back({{"name", t.name}, {"changed", t.changed}, {"numel", t.numel}, {"fraction", t.fraction}});
        }
        json vis = json::object();
        for (const auto& [f, v] : s.visibility) vis[std::string(dtype_name(f))] = v;
        steps.push_back({{"step", s.step},
                         {"dtype", std::string(dtype_name(s.dtype))},
                         {"changed_fraction", s.changed_fraction},
                         {"sparsity", s.sparsity},
                         {"fp32_changed_fraction", opt_json(s.fp32_changed_fraction)},
                         {"inactive_tensor_fraction", s.inactive_tensor_fraction},
                         {"visibility", vis},
                         {"per_tensor", per}});
    }
    return {{"schema", kSparsitySchemaId},
            {"steps", steps},
            {"aggregate",
             {{"mean_changed_fraction", r.mean_changed_fraction()},
              {"mean_sparsity", 1.0 - r.mean_changed_fraction()},
              {"mean_inactive_tensor_fraction", r.mean_inactive_fraction()}}}};
}

inline SparsityReport sparsity_from_json(const json& j) {
    if (j.at("schema") != kSparsitySchemaId) fail(Errc::SchemaMismatch, "not a sparsity report");
    SparsityReport r;
    for (const auto& s : j.at("steps")) {
        SparsityStep st;
        st.step = s.at("step");
        st.dtype = parse_dtype(s.at("dtype").get<std::string>());
        st.changed_fraction = s.at("changed_fraction");
        st.sparsity = s.at("sparsity");
        st.fp32_changed_fraction = opt_double(s.at("fp32_changed_fraction"));
        st.inactive_tensor_fraction = s.at("inactive_tensor_fraction");
        for (const auto& t : s.at("per_tensor")) {
            st.per_tensor.push_back({t.at("name"), t.at("changed"), t.at("numel"), t.at("fraction")});
        }
        // Visibility is keyed by format name; restore in the canonical order.
        const auto& vis = s.at("visibility");
        for (DType f : kAllDTypes) {
            if (auto it = vis.find(std::string(dtype_name(f))); it != vis.end()) st.visibility.emplace_back(f, it->get<double>());
        }
        r.steps.push_back(std::move(st));
    }
    return r;
}

inline json to_json(const LocalityReport& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        steps.push_back({{"step", s.step},
                         {"population", s.population},
                         {"p25", opt_json(s.p25)},
                         {"p50", opt_json(s.p50)},
                         {"p90", opt_json(s.p90)}});
    }
    return {{"schema", kLocalitySchemaId}, {"steps", steps}};
}

inline LocalityReport locality_from_json(const json& j) {
    if (j.at("schema") != kLocalitySchemaId) fail(Errc::SchemaMismatch, "not a locality report");
    LocalityReport r;
    for (const auto& s : j.at("steps")) {
        r.steps.push_back({s.at("step"), s.at("population"), opt_double(s.at("p25")), opt_double(s.at("p50")),
                           opt_double(s.at("p90"))});
    }
    return r;
}

/// Per-step time series for plotting tools.
inline void write_csv(std::ostream& os, const SparsityReport& sp, const std::optional<LocalityReport>& loc) {
    os << "step,dtype,changed_fraction,sparsity,fp32_changed_fraction,inactive_tensor_fraction,"
          "locality_p25,locality_p50,locality_p90\n";
    auto cell = [&](const std::optional<double>& v) {
        if (v) os << *v;
    };
    os.precision(17);
    for (const auto& s : sp.steps) {
        os << s.step << ',' << dtype_name(s.dtype) << ',' << s.changed_fraction << ',' << s.sparsity << ',';
        cell(s.fp32_changed_fraction);
        os << ',' << s.inactive_tensor_fraction << ',';
        const LocalityStep* ls = nullptr;
        if (loc) {
            for (const auto& l : loc->steps) {
                if (l.step == s.step) ls = &l;
            }
        }
        if (ls) {
            cell(ls->p25);
            os << ',';
            cell(ls->p50);
            os << ',';
            cell(ls->p90);
        } else {
            os << ",,";
        }
        os << '\n';
    }
}

} // namespace sparsesync::analysis
