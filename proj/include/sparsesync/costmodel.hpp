#pragma once

// Analytic payload and wall-clock estimators for full vs sparse sync.
//
//   full                S = N * b_v
//   sparse              rho * N * (b_v + b_i) + S_meta
//   raw ratio           b_v / (rho * (b_v + b_i))
//   compressed          rho * N * (b_i + alpha * b_v)
//   compressed ratio    b_v / (rho * (b_i + alpha * b_v))

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sparsesync/codec/message.hpp"
#include "sparsesync/error.hpp"

namespace sparsesync::cost {

struct CostParams {
    double n = 0;        // element count
    double rho = 0;      // update density in [0, 1]
    double b_v = 2;      // bytes per value
    double b_i = 4;      // bytes per index (2 or 4)
    double alpha = 1;    // value-compression factor in (0, 1]
    double s_meta = 0;   // metadata bytes

    void validate() const {
        if (!(n >= 0)) fail(Errc::InvalidArgument, "N must be >= 0");
        if (!(rho >= 0 && rho <= 1)) fail(Errc::InvalidArgument, "rho must lie in [0, 1]");
        if (!(b_v > 0)) fail(Errc::InvalidArgument, "b_v must be positive");
        if (!(b_i > 0)) fail(Errc::InvalidArgument, "b_i must be positive");
        if (!(alpha > 0 && alpha <= 1)) fail(Errc::InvalidArgument, "alpha must lie in (0, 1]");
        if (!(s_meta >= 0)) fail(Errc::InvalidArgument, "S_meta must be >= 0");
    }
};

inline double full_payload_bytes(double n, double b_v) { return n * b_v; }

inline double sparse_payload_bytes(const CostParams& p) {
    p.validate();
    return p.rho * p.n * (p.b_v + p.b_i) + p.s_meta;
}

/// Infinite at rho = 0.
inline double raw_ratio(double rho, double b_v, double b_i) {
    if (rho <= 0) return std::numeric_limits<double>::infinity();
    return b_v / (rho * (b_v + b_i));
}

inline double compressed_payload_bytes(const CostParams& p) {
    p.validate();
    return p.rho * p.n * (p.b_i + p.alpha * p.b_v);
}

inline double compressed_ratio(const CostParams& p) {
    p.validate();
    if (p.rho <= 0) return std::numeric_limits<double>::infinity();
    return p.b_v / (p.rho * (p.b_i + p.alpha * p.b_v));
}

/// Density at which the raw sparse payload equals the full payload.
inline double break_even_density(double b_v, double b_i) { return b_v / (b_v + b_i); }

inline double estimate_sync_seconds(double payload_bytes, double bandwidth_bytes_per_s) {
    if (!(bandwidth_bytes_per_s > 0)) fail(Errc::InvalidArgument, "bandwidth must be positive");
    return payload_bytes / bandwidth_bytes_per_s;
}

/// Metadata of an SRLS message: fixed header plus a per-record constant.
inline double message_meta_bytes(std::size_t records, std::size_t avg_name_len, std::size_t ndim,
                                 bool compressed = false) {
    return static_cast<double>(kMessageHeaderBytes) +
           static_cast<double>(records) * static_cast<double>(record_overhead_bytes(avg_name_len, ndim, RecordPath::SPARSE, compressed));
}

struct ModelPreset {
    std::string name;
    double params = 0;
};

/// Preset file: one `name = count` (or `name count`) per line, `#` comments.
/// Counts accept plain numbers, scientific notation, or K/M/B/T suffixes.
inline std::vector<ModelPreset> parse_presets(std::istream& in) {
    std::vector<ModelPreset> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        for (auto& c : line) {
            if (c == '=' || c == '\t') c = ' ';
        }
        std::istringstream ls(line);
        std::string name, count;
        if (!(ls >> name)) continue;
        if (!(ls >> count)) fail(Errc::InvalidArgument, "preset line " + std::to_string(lineno) + ": missing count");
        double mult = 1;
        switch (count.back()) {
        case 'K': case 'k': mult = 1e3; count.pop_back(); break;
        case 'M': case 'm': mult = 1e6; count.pop_back(); break;
        case 'B': case 'b': case 'G': case 'g': mult = 1e9; count.pop_back(); break;
        case 'T': case 't': mult = 1e12; count.pop_back(); break;
        default: break;
        }
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(count, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != count.size() || !(v > 0)) {
            fail(Errc::InvalidArgument, "preset line " + std::to_string(lineno) + ": bad count '" + count + "'");
        }
        out.push_back({name, v * mult});
    }
    return out;
}

inline std::vector<ModelPreset> load_presets(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) fail(Errc::Io, "cannot open preset file '" + p.string() + "'");
    return parse_presets(f);
}

} // namespace sparsesync::cost
