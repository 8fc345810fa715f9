#pragma once

// Rollout receiver: listens on loopback, accepts one trainer connection, and
// applies each epoch's reassembled message to its weights.

#include <atomic>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "sparsesync/checkpoint.hpp"
#include "sparsesync/digest.hpp"
#include "sparsesync/harness/bucket.hpp"
#include "sparsesync/harness/transport.hpp"
#include "sparsesync/updater.hpp"

namespace sparsesync::harness {

inline Bytes encode_digests(const std::vector<TensorDigest>& ds) {
    Bytes b;
    ByteWriter w(b);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.size()));
    for (const auto& d : ds) {
        w.put_string16(d.name);
        w.put_bytes(d.digest);
    }
    return b;
}

inline std::vector<TensorDigest> decode_digests(ByteView b) {
    ByteReader r(b);
    std::vector<TensorDigest> out(r.get<std::uint32_t>());
    for (auto& d : out) {
        d.name = r.get_string16();
        auto h = r.get_bytes(d.digest.size());
        std::copy(h.begin(), h.end(), d.digest.begin());
    }
    return out;
}

class RolloutEndpoint {
public:
    /// `initial` is an SRLT checkpoint.
    explicit RolloutEndpoint(ByteView initial, std::uint16_t port = 0)
        : weights_(deserialize_checkpoint(initial)) {
        listener_ = listen_loopback(port, port_);
    }

    RolloutEndpoint(const RolloutEndpoint&) = delete;
    RolloutEndpoint& operator=(const RolloutEndpoint&) = delete;

    ~RolloutEndpoint() { stop(); }

    std::uint16_t port() const noexcept { return port_; }

    void start() {
        worker_ = std::thread([this] { serve(); });
    }

    /// Waits for the trainer to disconnect; forcibly closes if `force`.
    void stop(bool force = false) {
        if (force) {
            std::lock_guard lk(conn_mu_);
            conn_.shutdown_both();
            listener_.shutdown_both();
        }
        if (worker_.joinable()) worker_.join();
    }

    NamedTensors weights() const {
        std::lock_guard lk(weights_mu_);
        return weights_;
    }

    std::uint64_t epochs_applied() const noexcept { return applied_; }
    std::uint64_t nacks_sent() const noexcept { return nacks_; }
    std::string last_error() const {
        std::lock_guard lk(weights_mu_);
        return last_error_;
    }

private:
    void serve() {
        try {
            const int fd = ::accept(listener_.fd(), nullptr, nullptr);
            if (fd < 0) return;
            {
                std::lock_guard lk(conn_mu_);
                conn_ = Socket(fd);
            }
            listener_.close();

            std::vector<Bucket> pending;
            EpochBody current;
            while (auto frame = read_frame(conn_)) {
                switch (frame->type) {
                case FrameType::EPOCH: {
                    auto e = decode_epoch(frame->body);
                    if (e.phase == EpochPhase::BEGIN) {
                        current = e;
                        pending.clear();
                    } else if (e.phase == EpochPhase::END) {
                        finish_epoch(current, pending);
                        pending.clear();
                    }
                    break;
                }
                case FrameType::DATA: {
                    ByteReader r(frame->body);
                    Bucket b;
                    b.seq = r.get<std::uint32_t>();
                    auto p = r.get_bytes(r.remaining());
                    b.payload.assign(p.begin(), p.end());
                    pending.push_back(std::move(b));
                    break;
                }
                case FrameType::VERIFY: {
                    Bytes body;
                    {
                        std::lock_guard lk(weights_mu_);
                        body = encode_digests(tensor_digests(weights_));
                    }
                    write_frame(conn_, FrameType::DIGEST, body);
                    break;
                }
                default:
                    break;
                }
            }
        } catch (const std::exception& e) {
            std::lock_guard lk(weights_mu_);
            last_error_ = e.what();
        }
    }

    void finish_epoch(const EpochBody& epoch, std::vector<Bucket>& pending) {
        NackBody nack;
        nack.epoch = epoch.epoch;
        try {
            std::sort(pending.begin(), pending.end(), [](const Bucket& a, const Bucket& b) { return a.seq < b.seq; });
            if (pending.size() != epoch.buckets) {
                fail(Errc::Truncated, "epoch announced " + std::to_string(epoch.buckets) + " buckets, got " +
                                          std::to_string(pending.size()));
            }
            SyncMessage msg;
            for (std::size_t k = 0; k < pending.size(); ++k) {
                nack.bucket = pending[k].seq;
                if (pending[k].seq != k) fail(Errc::Corrupt, "bucket sequence gap");
                SyncMessage part = deserialize_message(pending[k].payload);
                for (auto& r : part.records) msg.records.push_back(std::move(r));
            }
            nack.bucket = kNoBucket;
            {
                std::lock_guard lk(weights_mu_);
                apply_update(weights_, msg);
            }
            ++applied_;
            write_frame(conn_, FrameType::EPOCH, encode_epoch({EpochPhase::ACK, epoch.epoch, epoch.buckets}));
        } catch (const SyncError& e) {
            nack.code = e.code();
            nack.message = e.what();
            ++nacks_;
            {
                std::lock_guard lk(weights_mu_);
                last_error_ = e.what();
            }
            write_frame(conn_, FrameType::NACK, encode_nack(nack));
        }
    }

    NamedTensors weights_;
    mutable std::mutex weights_mu_;
    std::mutex conn_mu_;
    Socket listener_;
    Socket conn_;
    std::uint16_t port_ = 0;
    std::thread worker_;
    std::atomic<std::uint64_t> applied_{0};
    std::atomic<std::uint64_t> nacks_{0};
    std::string last_error_;
};

} // namespace sparsesync::harness
