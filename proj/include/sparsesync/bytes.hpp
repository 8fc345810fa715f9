#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsesync/error.hpp"

namespace sparsesync {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

template <class T>
inline void store_le(std::uint8_t* dst, T value) noexcept {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        dst[i] = static_cast<std::uint8_t>(value >> (8 * i));
    }
}

template <class T>
inline T load_le(const std::uint8_t* src) noexcept {
    static_assert(std::is_unsigned_v<T>);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<T>(static_cast<T>(src[i]) << (8 * i));
    }
    return v;
}

// Appends little-endian fields to a growing buffer.
class ByteWriter {
public:
    explicit ByteWriter(Bytes& out) : out_(out) {}

    template <class T>
    void put(T value) {
        std::size_t at = out_.size();
        out_.resize(at + sizeof(T));
        store_le<T>(out_.data() + at, value);
    }

    void put_bytes(ByteView b) { out_.insert(out_.end(), b.begin(), b.end()); }

    void put_string16(std::string_view s) {
        if (s.size() > 0xFFFF) fail(Errc::InvalidArgument, "string longer than 65535 bytes");
        put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    std::size_t size() const noexcept { return out_.size(); }

private:
    Bytes& out_;
};

// Bounds-checked little-endian cursor; running off the end raises Truncated.
class ByteReader {
public:
    explicit ByteReader(ByteView in) : in_(in) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v = load_le<T>(in_.data() + pos_);
        pos_ += sizeof(T);
        return v;
    }

    ByteView get_bytes(std::size_t n) {
        need(n);
        ByteView v = in_.subspan(pos_, n);
        pos_ += n;
        return v;
    }

    std::string get_string16() {
        auto n = get<std::uint16_t>();
        auto b = get_bytes(n);
        return std::string(b.begin(), b.end());
    }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return in_.size() - pos_; }
    bool done() const noexcept { return pos_ == in_.size(); }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) {
            fail(Errc::Truncated, "need " + std::to_string(n) + " bytes at offset " +
                                      std::to_string(pos_) + ", have " +
                                      std::to_string(in_.size() - pos_));
        }
    }

    ByteView in_;
    std::size_t pos_ = 0;
};

inline std::string to_hex(ByteView b) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    s.reserve(b.size() * 2);
    for (auto c : b) {
        s.push_back(digits[c >> 4]);
        s.push_back(digits[c & 0xF]);
    }
    return s;
}

/// Parses a hex dump; whitespace and `#` comments to end of line are ignored.
inline Bytes from_hex(std::string_view text) {
    Bytes out;
    int pending = -1;
    bool comment = false;
    for (char c : text) {
        if (comment) {
            if (c == '\n') comment = false;
            continue;
        }
        if (c == '#') {
            comment = true;
            continue;
        }
        int v;
        if (c >= '0' && c <= '9') v = c - '0';
        else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
        else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
        else fail(Errc::InvalidArgument, std::string("bad hex character '") + c + "'");
        if (pending < 0) {
            pending = v;
        } else {
            out.push_back(static_cast<std::uint8_t>(pending << 4 | v));
            pending = -1;
        }
    }
    if (pending >= 0) fail(Errc::InvalidArgument, "odd number of hex digits");
    return out;
}

} // namespace sparsesync
