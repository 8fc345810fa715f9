#pragma once

// Trainer-side fan-out: one connection and one independent throttle per rank,
// all ranks driven concurrently for each sync event.

#include <chrono>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sparsesync/digest.hpp"
#include "sparsesync/harness/bucket.hpp"
#include "sparsesync/harness/endpoint.hpp"
#include "sparsesync/harness/transport.hpp"

namespace sparsesync::harness {

struct RegimePreset {
    std::string name = "unlimited";
    std::optional<double> bandwidth; // bytes/s per endpoint; nullopt = unthrottled

    static RegimePreset unlimited() { return {}; }
    /// RDMA-class and TCP-fallback regimes scaled down for loopback runs.
    static RegimePreset ib_on_desk() { return {"ib-on-desk", 80e6}; }
    static RegimePreset ib_off_desk() { return {"ib-off-desk", 8e6}; }
    static RegimePreset custom(double bytes_per_s) {
        if (!(bytes_per_s > 0)) fail(Errc::InvalidArgument, "bandwidth must be positive");
        return {"custom", bytes_per_s};
    }

    static RegimePreset by_name(const std::string& n) {
        if (n == "unlimited") return unlimited();
        if (n == "ib-on-desk" || n == "ib-on") return ib_on_desk();
        if (n == "ib-off-desk" || n == "ib-off") return ib_off_desk();
        fail(Errc::InvalidArgument, "unknown regime '" + n + "'");
    }
};

struct DeliveryStats {
    std::size_t bytes = 0; // frame bytes sent to this endpoint, all attempts
    double seconds = 0;    // first byte sent to ACK received
    int attempts = 0;
};

class Broadcaster {
public:
    Broadcaster(const std::vector<std::uint16_t>& ports, RegimePreset regime, int max_attempts = 2)
        : regime_(std::move(regime)), max_attempts_(max_attempts) {
        for (auto p : ports) {
            Rank r;
            r.sock = connect_loopback(p);
            links_.push_back(std::move(r));
        }
    }

    std::size_t ranks() const noexcept { return links_.size(); }
    const RegimePreset& regime() const noexcept { return regime_; }

    /// Delivers every bucket to every rank and waits for each rank's ACK. A
    /// NACKed epoch is resent whole (applying a message twice is harmless).
    std::vector<DeliveryStats> broadcast(const std::vector<Bucket>& buckets) {
        const std::uint64_t epoch = next_epoch_++;
        std::vector<DeliveryStats> stats(links_.size());
        std::vector<std::exception_ptr> errors(links_.size());
        std::vector<std::thread> threads;
        for (std::size_t k = 0; k < links_.size(); ++k) {
            threads.emplace_back([&, k] {
                try {
                    stats[k] = deliver(links_[k], buckets, epoch, k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        return stats;
    }

    /// Per-rank tensor digests.
    std::vector<std::vector<TensorDigest>> verify() {
        std::vector<std::vector<TensorDigest>> out;
        for (std::size_t k = 0; k < links_.size(); ++k) {
            write_frame(links_[k].sock, FrameType::VERIFY, {});
            auto f = read_frame(links_[k].sock);
            if (!f || f->type != FrameType::DIGEST) {
                fail(Errc::ConnectionLost, "rank " + std::to_string(k) + ": no DIGEST reply");
            }
            out.push_back(decode_digests(f->body));
        }
        return out;
    }

    /// Closes every connection; endpoints see EOF and exit.
    void close() {
        for (auto& l : links_) l.sock.close();
    }

private:
    struct Rank {
        Socket sock;
    };

    DeliveryStats deliver(Rank& rank, const std::vector<Bucket>& buckets, std::uint64_t epoch, std::size_t k) {
        DeliveryStats st;
        std::optional<TokenBucket> throttle;
        if (regime_.bandwidth) throttle.emplace(*regime_.bandwidth, 64.0 * 1024);
        TokenBucket* tb = throttle ? &*throttle : nullptr;

        const auto t0 = std::chrono::steady_clock::now();
        for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
            st.attempts = attempt;
            std::uint32_t seq = kNoBucket;
            try {
                st.bytes += write_frame(rank.sock, FrameType::EPOCH,
                                        encode_epoch({EpochPhase::BEGIN, epoch, static_cast<std::uint32_t>(buckets.size())}), tb);
                for (const auto& b : buckets) {
                    seq = b.seq;
                    std::uint8_t prefix[4];
                    store_le<std::uint32_t>(prefix, b.seq);
                    st.bytes += write_frame(rank.sock, FrameType::DATA, prefix, b.payload, tb);
                }
                seq = kNoBucket;
                st.bytes += write_frame(rank.sock, FrameType::EPOCH,
                                        encode_epoch({EpochPhase::END, epoch, static_cast<std::uint32_t>(buckets.size())}), tb);
            } catch (const SyncError& e) {
                fail(Errc::ConnectionLost, "rank " + std::to_string(k) + " at bucket seq " +
                                               (seq == kNoBucket ? std::string("-") : std::to_string(seq)) + ": " + e.what());
            }

            auto reply = read_frame(rank.sock);
            if (!reply) fail(Errc::ConnectionLost, "rank " + std::to_string(k) + " closed before acknowledging");
            if (reply->type == FrameType::EPOCH) {
                auto e = decode_epoch(reply->body);
                if (e.phase == EpochPhase::ACK && e.epoch == epoch) {
                    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                    return st;
                }
                fail(Errc::Corrupt, "rank " + std::to_string(k) + ": unexpected epoch reply");
            }
            if (reply->type == FrameType::NACK) {
                auto n = decode_nack(reply->body);
                if (attempt == max_attempts_) {
                    fail(n.code, "rank " + std::to_string(k) + " rejected epoch " + std::to_string(epoch) + ": " + n.message);
                }
                continue;
            }
            fail(Errc::Corrupt, "rank " + std::to_string(k) + ": unexpected frame type");
        }
        return st;
    }

    RegimePreset regime_;
    int max_attempts_;
    std::vector<Rank> links_;
    std::uint64_t next_epoch_ = 0;
};

} // namespace sparsesync::harness
