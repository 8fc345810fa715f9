#pragma once

// End-to-end runs: synthetic training, periodic sync to N loopback rollout
// endpoints, and per-sync bit-exact verification against the trainer.

#include <algorithm>
#include <chrono>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsesync/checkpoint.hpp"
#include "sparsesync/digest.hpp"
#include "sparsesync/harness/broadcast.hpp"
#include "sparsesync/harness/bucket.hpp"
#include "sparsesync/harness/endpoint.hpp"
#include "sparsesync/harness/synthetic.hpp"
#include "sparsesync/updater.hpp"

namespace sparsesync::harness {

enum class SyncMode { SPARSE, FULL };

inline std::string_view mode_name(SyncMode m) { return m == SyncMode::SPARSE ? "sparse" : "full"; }

inline SyncMode parse_mode(std::string_view s) {
    if (s == "sparse") return SyncMode::SPARSE;
    if (s == "full") return SyncMode::FULL;
    fail(Errc::InvalidArgument, "unknown sync mode '" + std::string(s) + "'");
}

struct ExperimentConfig {
    ModelSpec spec;
    UpdateDriverConfig driver;
    std::size_t steps = 10;
    std::size_t sync_every = 2;
    SyncMode mode = SyncMode::SPARSE;
    std::size_t ranks = 4;
    RegimePreset regime;
    std::size_t bucket_limit = kDeskBucketLimit;
    RoutingPolicy policy;
    PackOptions pack;
    /// Extra never-changed indices injected per tensor, as a fraction of its
    /// tracked count, to exercise the superset property.
    double redundant_fraction = 0.0;
    std::uint64_t redundant_seed = 7;

    void validate() const {
        spec.validate();
        driver.validate();
        if (ranks == 0) fail(Errc::InvalidArgument, "ranks must be >= 1");
        if (sync_every == 0) fail(Errc::InvalidArgument, "sync_every must be >= 1");
        if (bucket_limit == 0) fail(Errc::InvalidArgument, "bucket limit must be positive");
        if (!(redundant_fraction >= 0)) fail(Errc::InvalidArgument, "redundant fraction must be >= 0");
    }
};

struct SyncRecord {
    std::size_t step = 0;
    std::size_t records = 0;
    std::uint64_t nnz = 0;            // tracked indices sent (SPARSE records)
    std::uint64_t redundant = 0;      // of which injected
    double density = 0;               // tracked indices / total elements
    std::size_t message_bytes = 0;    // serialized SRLS size
    std::size_t buckets = 0;
    std::size_t wire_bytes = 0;       // frame bytes per rank (max over ranks)
    double wall_seconds = 0;          // slowest rank's delivery time
    bool verified = false;
    std::vector<std::size_t> rank_bytes;
    std::vector<double> rank_seconds;
};

struct ExperimentReport {
    SyncMode mode = SyncMode::SPARSE;
    std::string regime;
    std::optional<double> bandwidth;
    std::size_t ranks = 0;
    std::uint64_t total_elements = 0;
    std::vector<SyncRecord> syncs;
    std::vector<TensorDigest> final_digests; // trainer
    bool all_verified = false;
    bool ranks_match_final = false;

    std::size_t total_wire_bytes() const {
        std::size_t n = 0;
        for (auto& s : syncs) n += s.wire_bytes;
        return n;
    }
    std::size_t total_message_bytes() const {
        std::size_t n = 0;
        for (auto& s : syncs) n += s.message_bytes;
        return n;
    }
    double total_wall_seconds() const {
        double n = 0;
        for (auto& s : syncs) n += s.wall_seconds;
        return n;
    }
};

/// Adds round(fraction * |idx|) random indices of `numel` not already in idx.
inline std::uint64_t inject_redundant(IndexList& idx, std::uint64_t numel, double fraction, std::mt19937_64& rng) {
    const auto want = static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(idx.size())));
    const std::uint64_t room = numel - idx.size();
    const std::uint64_t add = std::min(want, room);
    if (add == 0) return 0;
    std::vector<std::uint32_t> extra;
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(numel - 1));
    IndexList merged = idx;
    while (extra.size() < add) {
        const auto c = pick(rng);
        if (std::binary_search(merged.begin(), merged.end(), c)) continue;
        merged.insert(std::upper_bound(merged.begin(), merged.end(), c), c);
        extra.push_back(c);
    }
    idx = std::move(merged);
    return add;
}

/// Rollout ranks serving on loopback plus the trainer-side broadcaster.
class LoopbackCluster {
public:
    LoopbackCluster(const NamedTensors& initial, std::size_t ranks, RegimePreset regime) {
        const Bytes ckpt = serialize_checkpoint(initial);
        std::vector<std::uint16_t> ports;
        for (std::size_t k = 0; k < ranks; ++k) {
            endpoints_.push_back(std::make_unique<RolloutEndpoint>(ckpt));
            endpoints_.back()->start();
            ports.push_back(endpoints_.back()->port());
        }
        broadcaster_ = std::make_unique<Broadcaster>(ports, std::move(regime));
    }

    ~LoopbackCluster() { shutdown(); }

    Broadcaster& broadcaster() { return *broadcaster_; }
    RolloutEndpoint& endpoint(std::size_t k) { return *endpoints_.at(k); }

    void shutdown() {
        if (broadcaster_) broadcaster_->close();
        for (auto& e : endpoints_) e->stop();
    }

private:
    std::vector<std::unique_ptr<RolloutEndpoint>> endpoints_;
    std::unique_ptr<Broadcaster> broadcaster_;
};

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    SyntheticTrainer trainer(cfg.spec, cfg.driver);
    std::mt19937_64 redundant_rng(cfg.redundant_seed);

    ExperimentReport rep;
    rep.mode = cfg.mode;
    rep.regime = cfg.regime.name;
    rep.bandwidth = cfg.regime.bandwidth;
    rep.ranks = cfg.ranks;
    rep.total_elements = trainer.state().working.total_numel();

    LoopbackCluster cluster(trainer.state().working, cfg.ranks, cfg.regime);
    bool all_ok = true;

    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        trainer.step();
        if (t % cfg.sync_every != 0) continue;

        ChangedIndexSet cum = trainer.tracker().take_cumulative();
        const NamedTensors& working = trainer.state().working;
        SyncRecord sr;
        sr.step = t;

        SyncMessage msg;
        if (cfg.mode == SyncMode::FULL) {
            msg = pack_full(working);
        } else {
            if (cfg.redundant_fraction > 0) {
                for (auto& [name, idx] : cum) {
                    sr.redundant += inject_redundant(idx, working.at(name).numel(), cfg.redundant_fraction, redundant_rng);
                }
            }
            msg = pack_updates(working, cum, cfg.policy, cfg.pack);
        }
        for (const auto& r : msg.records) {
            if (r.path == RecordPath::SPARSE) sr.nnz += r.nnz;
        }
        sr.records = msg.records.size();
        sr.density = rep.total_elements ? static_cast<double>(total_indices(cum)) / static_cast<double>(rep.total_elements) : 0.0;
        sr.message_bytes = serialize_message(msg).size();

        auto buckets = bucketize(msg, cfg.bucket_limit);
        sr.buckets = buckets.size();
        auto stats = cluster.broadcaster().broadcast(buckets);
        for (const auto& s : stats) {
            sr.rank_bytes.push_back(s.bytes);
            sr.rank_seconds.push_back(s.seconds);
            sr.wire_bytes = std::max(sr.wire_bytes, s.bytes);
            sr.wall_seconds = std::max(sr.wall_seconds, s.seconds);
        }

        const auto expected = tensor_digests(working);
        sr.verified = true;
        for (const auto& rank : cluster.broadcaster().verify()) sr.verified = sr.verified && rank == expected;
        all_ok = all_ok && sr.verified;
        rep.syncs.push_back(std::move(sr));
    }

    rep.final_digests = tensor_digests(trainer.state().working);
    rep.all_verified = all_ok;
    rep.ranks_match_final = true;
    for (const auto& rank : cluster.broadcaster().verify()) {
        rep.ranks_match_final = rep.ranks_match_final && rank == rep.final_digests;
    }
    cluster.shutdown();
    return rep;
}

struct PairedReport {
    ExperimentReport sparse;
    ExperimentReport full;

    double byte_ratio() const {
        const auto s = sparse.total_message_bytes();
        return s ? static_cast<double>(full.total_message_bytes()) / static_cast<double>(s) : 0.0;
    }
    double speedup() const {
        const double s = sparse.total_wall_seconds();
        return s > 0 ? full.total_wall_seconds() / s : 0.0;
    }
    bool digests_identical() const { return sparse.final_digests == full.final_digests; }
};

/// Same seeds, both modes.
inline PairedReport run_paired(ExperimentConfig cfg) {
    PairedReport p;
    cfg.mode = SyncMode::SPARSE;
    p.sparse = run_experiment(cfg);
    cfg.mode = SyncMode::FULL;
    p.full = run_experiment(cfg);
    return p;
}

// JSON ----------------------------------------------------------------------

inline constexpr const char* kExperimentSchemaId = "sparsesync/experiment-report/v1";

inline nlohmann::json to_json(const ExperimentReport& r) {
    using nlohmann::json;
    json syncs = json::array();
    for (const auto& s : r.syncs) {
        syncs.push_back({{"step", s.step},
                         {"records", s.records},
                         {"nnz", s.nnz},
                         {"redundant", s.redundant},
                         {"density", s.density},
                         {"message_bytes", s.message_bytes},
                         {"buckets", s.buckets},
                         {"wire_bytes", s.wire_bytes},
                         {"wall_seconds", s.wall_seconds},
                         {"verified", s.verified},
                         {"rank_bytes", s.rank_bytes},
                         {"rank_seconds", s.rank_seconds}});
    }
    json digests = json::array();
    for (const auto& d : r.final_digests) digests.push_back({{"name", d.name}, {"sha256", to_hex(d.digest)}});
    return {{"schema", kExperimentSchemaId},
            {"mode", std::string(mode_name(r.mode))},
            {"regime", r.regime},
            {"bandwidth_bytes_per_s", r.bandwidth ? json(*r.bandwidth) : json(nullptr)},
            {"ranks", r.ranks},
            {"total_elements", r.total_elements},
            {"syncs", syncs},
            {"totals",
             {{"message_bytes", r.total_message_bytes()},
              {"wire_bytes", r.total_wire_bytes()},
              {"wall_seconds", r.total_wall_seconds()}}},
            {"all_verified", r.all_verified},
            {"ranks_match_final", r.ranks_match_final},
            {"final_digest", to_hex(combined_digest(r.final_digests))},
            {"final_tensor_digests", digests}};
}

inline nlohmann::json to_json(const PairedReport& p) {
    return {{"schema", "sparsesync/paired-report/v1"},
            {"sparse", to_json(p.sparse)},
            {"full", to_json(p.full)},
            {"byte_ratio", p.byte_ratio()},
            {"speedup", p.speedup()},
            {"digests_identical", p.digests_identical()}};
}

} // namespace sparsesync::harness
