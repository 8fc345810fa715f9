#pragma once

// Brute-force reference for the analytics: element-by-element value
// comparison and hash-set arithmetic, sharing no code with the library
// beyond the tensor containers.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "sparsesync/tensor.hpp"

namespace oracle {

using sparsesync::NamedTensors;

struct Sparsity {
    std::uint64_t changed = 0, numel = 0;
    double fraction = 0;
};

inline Sparsity element_sparsity(const NamedTensors& a, const NamedTensors& b) {
    Sparsity s;
    for (const auto& t : b) {
        const auto& p = a.at(t.name());
        for (std::size_t i = 0; i < t.numel(); ++i) s.changed += p.bits_at(i) != t.bits_at(i);
        s.numel += t.numel();
    }
    s.fraction = s.numel ? double(s.changed) / double(s.numel) : 0.0;
    return s;
}

inline double inactive_ratio(const NamedTensors& a, const NamedTensors& b) {
    if (b.size() == 0) return 0.0;
    std::size_t inactive = 0;
    for (const auto& t : b) {
        const auto& p = a.at(t.name());
        bool same = true;
        for (std::size_t i = 0; i < t.numel() && same; ++i) same = p.bits_at(i) == t.bits_at(i);
        inactive += same;
    }
    return double(inactive) / double(b.size());
}

using Sets = std::map<std::string, std::unordered_set<std::uint32_t>>;

struct Quantiles {
    std::size_t population = 0;
    std::optional<double> p25, p50, p90;
};

inline std::optional<double> nearest_rank(std::vector<double> v, double q) {
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    long r = static_cast<long>(std::ceil(q * double(v.size())));
    r = std::max(1L, std::min(r, static_cast<long>(v.size())));
    return v[static_cast<std::size_t>(r - 1)];
}

/// Entry k describes step k + 2.
inline std::vector<Quantiles> locality(const std::vector<Sets>& history) {
    std::vector<Quantiles> out;
    Sets seen;
    for (std::size_t t = 0; t < history.size(); ++t) {
        if (t > 0) {
            std::vector<double> ratios;
            for (const auto& [name, cur] : history[t]) {
                if (cur.empty()) continue;
                std::size_t hits = 0;
                for (auto i : cur) hits += seen[name].count(i);
                ratios.push_back(double(hits) / double(cur.size()));
            }
            out.push_back({ratios.size(), nearest_rank(ratios, 0.25), nearest_rank(ratios, 0.50),
                           nearest_rank(ratios, 0.90)});
        }
        for (const auto& [name, cur] : history[t]) seen[name].insert(cur.begin(), cur.end());
    }
    return out;
}

/// Random small snapshot history: at most 8 tensors, 1000 elements, 10 steps.
struct History {
    std::vector<NamedTensors> snapshots;
};

inline History random_history(std::mt19937_64& rng) {
    const std::size_t tensors = 1 + rng() % 8;
    const std::size_t steps = 2 + rng() % 9; // snapshots = steps + 1 <= 11
    std::vector<std::size_t> sizes(tensors);
    for (auto& s : sizes) s = 1 + rng() % 125; // <= 1000 elements total
    History h;
    NamedTensors cur;
    for (std::size_t k = 0; k < tensors; ++k) {
        sparsesync::TensorBuf t("t" + std::to_string(k), sparsesync::DType::BF16, {sizes[k]});
        for (std::size_t i = 0; i < sizes[k]; ++i) t.set_bits(i, static_cast<std::uint32_t>(rng() & 0x3FFF));
        cur.insert(std::move(t));
    }
    h.snapshots.push_back(cur);
    for (std::size_t s = 0; s < steps; ++s) {
        const double p = std::array{0.0, 0.01, 0.1, 0.5}[rng() % 4];
        std::bernoulli_distribution flip(p);
        const bool reuse = rng() % 2;
        for (auto& t : cur) {
            if (rng() % 5 == 0) continue; // inactive tensor this step
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const bool hot = reuse && i % 3 == 0;
                if (flip(rng) || (hot && rng() % 2)) t.set_bits(i, t.bits_at(i) ^ (1u + (rng() & 0xF)));
            }
        }
        h.snapshots.push_back(cur);
    }
    return h;
}

inline Sets diff_sets(const NamedTensors& a, const NamedTensors& b) {
    Sets s;
    for (const auto& t : b) {
        const auto& p = a.at(t.name());
        auto& set = s[t.name()];
        for (std::uint32_t i = 0; i < t.numel(); ++i) {
            if (p.bits_at(i) != t.bits_at(i)) set.insert(i);
        }
    }
    return s;
}

} // namespace oracle
