#pragma once

// Pieces of the command-line tool that are worth testing on their own:
// size literals, the estimate table, and the pack summary.

#include <cctype>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsesync/costmodel.hpp"
#include "sparsesync/error.hpp"
#include "sparsesync/precision.hpp"

namespace sparsesync::cli {

/// Byte count from a literal such as "1342GB", "64KiB", "280 GB/s" or "1e6".
/// KB/MB/GB/TB are decimal (1e3 steps); KiB/MiB/GiB/TiB are binary (1024
/// steps); a bare "B" or no unit means bytes. A trailing "/s" is ignored so the
/// same parser handles bandwidths.
inline double parse_size(std::string_view text) {
    std::string s;
    for (char c : text) {
        if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
    }
    if (s.size() >= 2 && s.ends_with("/s")) s.resize(s.size() - 2);
    if (s.empty()) fail(Errc::InvalidArgument, "empty size literal");

    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(Errc::InvalidArgument, "bad size literal '" + std::string(text) + "'");
    }
    std::string unit = s.substr(used);
    for (auto& c : unit) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));

    struct Unit {
        const char* name;
        double mult;
    };
    static constexpr Unit units[] = {
        {"", 1},          {"B", 1},
        {"K", 1e3},       {"KB", 1e3},         {"M", 1e6},           {"MB", 1e6},
        {"G", 1e9},       {"GB", 1e9},         {"T", 1e12},          {"TB", 1e12},
        {"KIB", 1024.0},  {"MIB", 1048576.0},  {"GIB", 1073741824.0}, {"TIB", 1099511627776.0},
    };
    for (const auto& u : units) {
        if (unit == u.name) {
            if (!(v >= 0) || !std::isfinite(v)) fail(Errc::InvalidArgument, "size must be finite and >= 0");
            return v * u.mult;
        }
    }
    fail(Errc::InvalidArgument, "unknown size unit in '" + std::string(text) + "'");
}

/// Decimal gigabytes, the unit used in the estimate table.
inline constexpr double kGB = 1e9;

struct EstimateRequest {
    std::string model = "custom";
    double params = 0;
    DType dtype = DType::BF16;
    std::vector<double> rhos;
    double alpha = 1.0;
    double b_i = 4;
    double meta_bytes = 0;
    std::vector<double> bandwidths; // bytes/s
};

struct EstimateRow {
    std::string model;
    double params = 0;
    double b_v = 0;
    double b_i = 0;
    double rho = 0;
    double alpha = 1;
    double full_bytes = 0;
    double sparse_bytes = 0;      // raw encoding, plus metadata
    double compressed_bytes = 0;  // entropy-coded values, plus metadata
    double raw_ratio = 0;
    double compressed_ratio = 0;
    double bandwidth = 0;
    double full_seconds = 0;
    double sparse_seconds = 0;
    double compressed_seconds = 0;
};

/// One row per (rho, bandwidth). With no bandwidths, one row per rho and zero
/// seconds.
inline std::vector<EstimateRow> build_estimate(const EstimateRequest& req) {
    if (!(req.params > 0)) fail(Errc::InvalidArgument, "parameter count must be positive");
    const double b_v = static_cast<double>(width_bytes(req.dtype));
    std::vector<double> bws = req.bandwidths;
    if (bws.empty()) bws.push_back(0);
    std::vector<double> rhos = req.rhos;
    if (rhos.empty()) rhos.push_back(0);

    std::vector<EstimateRow> rows;
    for (double rho : rhos) {
        cost::CostParams p{req.params, rho, b_v, req.b_i, req.alpha, req.meta_bytes};
        p.validate();
        for (double bw : bws) {
            EstimateRow r;
            r.model = req.model;
            r.params = req.params;
            r.b_v = b_v;
            r.b_i = req.b_i;
            r.rho = rho;
            r.alpha = req.alpha;
            r.full_bytes = cost::full_payload_bytes(req.params, b_v);
            r.sparse_bytes = cost::sparse_payload_bytes(p);
            r.compressed_bytes = cost::compressed_payload_bytes(p) + req.meta_bytes;
            r.raw_ratio = cost::raw_ratio(rho, b_v, req.b_i);
            r.compressed_ratio = cost::compressed_ratio(p);
            r.bandwidth = bw;
            if (bw > 0) {
                r.full_seconds = cost::estimate_sync_seconds(r.full_bytes, bw);
                r.sparse_seconds = cost::estimate_sync_seconds(r.sparse_bytes, bw);
                r.compressed_seconds = cost::estimate_sync_seconds(r.compressed_bytes, bw);
            }
            rows.push_back(r);
        }
    }
    return rows;
}

inline constexpr const char* kEstimateSchemaId = "sparsesync/estimate/v1";

namespace detail {
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
} // namespace detail

inline nlohmann::json to_json(const std::vector<EstimateRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"model", r.model},
                       {"params", r.params},
                       {"b_v", r.b_v},
                       {"b_i", r.b_i},
                       {"rho", r.rho},
                       {"alpha", r.alpha},
                       {"full_bytes", r.full_bytes},
                       {"sparse_bytes", r.sparse_bytes},
                       {"compressed_bytes", r.compressed_bytes},
                       {"raw_ratio", detail::finite_or_null(r.raw_ratio)},
                       {"compressed_ratio", detail::finite_or_null(r.compressed_ratio)},
                       {"bandwidth_bytes_per_s", r.bandwidth > 0 ? nlohmann::json(r.bandwidth) : nlohmann::json(nullptr)},
                       {"full_seconds", r.full_seconds},
                       {"sparse_seconds", r.sparse_seconds},
                       {"compressed_seconds", r.compressed_seconds}});
    }
    return {{"schema", kEstimateSchemaId}, {"rows", out}};
}

inline void write_estimate_csv(std::ostream& os, const std::vector<EstimateRow>& rows) {
    os << "model,params,b_v,b_i,rho,alpha,full_bytes,sparse_bytes,compressed_bytes,raw_ratio,compressed_ratio,"
          "bandwidth_bytes_per_s,full_seconds,sparse_seconds,compressed_seconds\n";
    os.precision(10);
    for (const auto& r : rows) {
        os << r.model << ',' << r.params << ',' << r.b_v << ',' << r.b_i << ',' << r.rho << ',' << r.alpha << ','
           << r.full_bytes << ',' << r.sparse_bytes << ',' << r.compressed_bytes << ',' << r.raw_ratio << ','
           << r.compressed_ratio << ',' << r.bandwidth << ',' << r.full_seconds << ',' << r.sparse_seconds << ','
           << r.compressed_seconds << '\n';
    }
}

inline void write_estimate_table(std::ostream& os, const std::vector<EstimateRow>& rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %8s %10s %10s %10s %9s %9s %10s %9s %9s\n", "model", "rho", "full GB",
                  "sparse GB", "coded GB", "raw x", "coded x", "bw GB/s", "full s", "sparse s");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-10s %8.4f %10.1f %10.2f %10.2f %9.1f %9.1f %10.2f %9.2f %9.3f\n",
                      r.model.c_str(), r.rho, r.full_bytes / kGB, r.sparse_bytes / kGB, r.compressed_bytes / kGB,
                      r.raw_ratio, r.compressed_ratio, r.bandwidth / kGB, r.full_seconds, r.sparse_seconds);
        os << line;
    }
}

} // namespace sparsesync::cli
