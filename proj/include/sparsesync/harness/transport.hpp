#pragma once

// Length-prefixed frames over loopback TCP.
//
//   frame := length u32 (body bytes) | type u8 | body
//
//   DATA    seq u32 | bucket payload
//   VERIFY  (empty)
//   DIGEST  count u32 | { name len u16 | name | sha256[32] } * count
//   NACK    epoch u64 | bucket seq u32 (0xFFFFFFFF if none) | errc u8 | msg len u16 | msg
//   EPOCH   phase u8 | epoch u64 | bucket count u32   (phase BEGIN, END, ACK)

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "sparsesync/bytes.hpp"
#include "sparsesync/error.hpp"

namespace sparsesync::harness {

enum class FrameType : std::uint8_t {
    DATA = 1,
    VERIFY = 2,
    DIGEST = 3,
    NACK = 4,
    EPOCH = 5,
};

enum class EpochPhase : std::uint8_t {
    BEGIN = 0,
    END = 1,
    ACK = 2,
};

inline constexpr std::size_t kFrameHeaderBytes = 5;
inline constexpr std::uint32_t kMaxFrameBody = 1u << 30;
inline constexpr std::uint32_t kNoBucket = 0xFFFFFFFFu;

/// Pacing at `rate` bytes/s. The bucket starts empty, so sending P bytes
/// always takes at least P / rate seconds.
class TokenBucket {
public:
    using clock = std::chrono::steady_clock;

    TokenBucket(double rate_bytes_per_s, double capacity_bytes)
        : rate_(rate_bytes_per_s), capacity_(capacity_bytes), last_(clock::now()) {
        if (!(rate_ > 0)) fail(Errc::InvalidArgument, "throttle rate must be positive");
        if (!(capacity_ > 0)) fail(Errc::InvalidArgument, "throttle capacity must be positive");
    }

    void acquire(std::size_t bytes) {
        double need = static_cast<double>(bytes);
        while (need > 0) {
            const double take = std::min(need, capacity_);
            refill();
            if (tokens_ < take) {
                std::this_thread::sleep_for(std::chrono::duration<double>((take - tokens_) / rate_));
                refill();
                if (tokens_ < take) continue;
            }
            tokens_ -= take;
            need -= take;
        }
    }

    double rate() const noexcept { return rate_; }

private:
    void refill() {
        const auto now = clock::now();
        tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
        last_ = now;
    }

    double rate_;
    double capacity_;
    double tokens_ = 0;
    clock::time_point last_;
};

class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
        }
        return *this;
    }
    ~Socket() { close(); }

    int fd() const noexcept { return fd_; }
    bool valid() const noexcept { return fd_ >= 0; }

    void close() noexcept {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

    void shutdown_both() noexcept {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

    void send_all(ByteView b, TokenBucket* throttle = nullptr) {
        constexpr std::size_t kChunk = 64 * 1024;
        std::size_t off = 0;
        while (off < b.size()) {
            const std::size_t n = std::min(kChunk, b.size() - off);
            if (throttle) throttle->acquire(n);
            std::size_t sent = 0;
            while (sent < n) {
                const ssize_t r = ::send(fd_, b.data() + off + sent, n - sent, MSG_NOSIGNAL);
                if (r < 0) {
                    if (errno == EINTR) continue;
                    fail(Errc::ConnectionLost, std::string("send: ") + std::strerror(errno));
                }
                sent += static_cast<std::size_t>(r);
            }
            off += n;
        }
    }

    /// Returns false on clean EOF before the first byte.
    bool recv_exact(std::uint8_t* dst, std::size_t n) {
        std::size_t got = 0;
        while (got < n) {
            const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
            if (r == 0) {
                if (got == 0) return false;
                fail(Errc::ConnectionLost, "peer closed mid-frame");
            }
            if (r < 0) {
                if (errno == EINTR) continue;
                fail(Errc::ConnectionLost, std::string("recv: ") + std::strerror(errno));
            }
            got += static_cast<std::size_t>(r);
        }
        return true;
    }

private:
    int fd_ = -1;
};

inline Socket listen_loopback(std::uint16_t port, std::uint16_t& bound_port) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) fail(Errc::Io, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        fail(Errc::Io, std::string("bind: ") + std::strerror(errno));
    }
    if (::listen(s.fd(), 4) != 0) fail(Errc::Io, std::string("listen: ") + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port = ntohs(addr.sin_port);
    return s;
}

inline Socket connect_loopback(std::uint16_t port) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) fail(Errc::Io, std::string("socket: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        fail(Errc::EndpointUnreachable, "127.0.0.1:" + std::to_string(port) + ": " + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

struct Frame {
    FrameType type = FrameType::DATA;
    Bytes body;
};

inline Bytes encode_frame_header(FrameType type, std::size_t body_len) {
    if (body_len > kMaxFrameBody) fail(Errc::InvalidArgument, "frame body too large");
    Bytes h;
    ByteWriter w(h);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(body_len));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(type));
    return h;
}

/// Returns bytes put on the wire.
inline std::size_t write_frame(Socket& s, FrameType type, ByteView body, TokenBucket* throttle = nullptr) {
    Bytes h = encode_frame_header(type, body.size());
    s.send_all(h, throttle);
    s.send_all(body, throttle);
    return h.size() + body.size();
}

/// Frame with a prefix glued in front of `body` (e.g. a DATA sequence number).
inline std::size_t write_frame(Socket& s, FrameType type, ByteView prefix, ByteView body, TokenBucket* throttle) {
    Bytes h = encode_frame_header(type, prefix.size() + body.size());
    h.insert(h.end(), prefix.begin(), prefix.end());
    s.send_all(h, throttle);
    s.send_all(body, throttle);
    return h.size() + body.size();
}

/// nullopt on clean EOF between frames.
inline std::optional<Frame> read_frame(Socket& s) {
    std::uint8_t h[kFrameHeaderBytes];
    if (!s.recv_exact(h, sizeof h)) return std::nullopt;
    const auto len = load_le<std::uint32_t>(h);
    if (len > kMaxFrameBody) fail(Errc::Corrupt, "frame length " + std::to_string(len) + " exceeds limit");
    const auto type = h[4];
    if (type < 1 || type > static_cast<std::uint8_t>(FrameType::EPOCH)) {
        fail(Errc::Corrupt, "unknown frame type " + std::to_string(type));
    }
    Frame f;
    f.type = static_cast<FrameType>(type);
    f.body.resize(len);
    if (len && !s.recv_exact(f.body.data(), len)) fail(Errc::ConnectionLost, "peer closed mid-frame");
    return f;
}

// Control bodies ------------------------------------------------------------

struct EpochBody {
    EpochPhase phase = EpochPhase::BEGIN;
    std::uint64_t epoch = 0;
    std::uint32_t buckets = 0;
};

inline Bytes encode_epoch(const EpochBody& e) {
    Bytes b;
    ByteWriter w(b);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.phase));
    w.put<std::uint64_t>(e.epoch);
    w.put<std::uint32_t>(e.buckets);
    return b;
}

inline EpochBody decode_epoch(ByteView b) {
    ByteReader r(b);
    EpochBody e;
    auto phase = r.get<std::uint8_t>();
    if (phase > static_cast<std::uint8_t>(EpochPhase::ACK)) fail(Errc::Corrupt, "bad epoch phase");
    e.phase = static_cast<EpochPhase>(phase);
    e.epoch = r.get<std::uint64_t>();
    e.buckets = r.get<std::uint32_t>();
    return e;
}

struct NackBody {
    std::uint64_t epoch = 0;
    std::uint32_t bucket = kNoBucket;
    Errc code = Errc::Corrupt;
    std::string message;
};

inline Bytes encode_nack(const NackBody& n) {
    Bytes b;
    ByteWriter w(b);
    w.put<std::uint64_t>(n.epoch);
    w.put<std::uint32_t>(n.bucket);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(n.code));
    w.put_string16(n.message.substr(0, 0xFFFF));
    return b;
}

inline NackBody decode_nack(ByteView b) {
    ByteReader r(b);
    NackBody n;
    n.epoch = r.get<std::uint64_t>();
    n.bucket = r.get<std::uint32_t>();
    n.code = static_cast<Errc>(r.get<std::uint8_t>());
    n.message = r.get_string16();
    return n;
}

} // namespace sparsesync::harness
