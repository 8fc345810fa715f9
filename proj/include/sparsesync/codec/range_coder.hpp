#pragma once

// Adaptive binary range coder (LZMA-style carry-propagating encoder) with an
// order-0 byte model: each byte is coded MSB-first through a 255-node binary
// tree of 11-bit probabilities.

#include <array>
#include <cstdint>

#include "sparsesync/bytes.hpp"

namespace sparsesync::rc {

inline constexpr int kProbBits = 11;
inline constexpr std::uint16_t kProbInit = 1u << (kProbBits - 1);
inline constexpr int kMoveBits = 5;
inline constexpr std::uint32_t kTop = 1u << 24;

class Encoder {
public:
    explicit Encoder(Bytes& out) : out_(out) {}

    void encode_bit(std::uint16_t& p, unsigned bit) {
        const std::uint32_t bound = (range_ >> kProbBits) * p;
        if (bit == 0) {
            range_ = bound;
            p = static_cast<std::uint16_t>(p + (((1u << kProbBits) - p) >> kMoveBits));
        } else {
            low_ += bound;
            range_ -= bound;
            p = static_cast<std::uint16_t>(p - (p >> kMoveBits));
        }
        while (range_ < kTop) {
            range_ <<= 8;
            shift_low();
        }
    }

    void finish() {
        for (int i = 0; i < 5; ++i) shift_low();
    }

private:
    void shift_low() {
        if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
            const auto carry = static_cast<std::uint8_t>(low_ >> 32);
            std::uint8_t temp = cache_;
            do {
                out_.push_back(static_cast<std::uint8_t>(temp + carry));
                temp = 0xFF;
            } while (--cache_size_ != 0);
            cache_ = static_cast<std::uint8_t>(low_ >> 24);
        }
        ++cache_size_;
        low_ = (low_ & 0x00FFFFFFu) << 8;
    }

    Bytes& out_;
    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t cache_size_ = 1;
};

class Decoder {
public:
    explicit Decoder(ByteView in) : in_(in) {
        for (int i = 0; i < 5; ++i) code_ = (code_ << 8) | next();
    }

    unsigned decode_bit(std::uint16_t& p) {
        const std::uint32_t bound = (range_ >> kProbBits) * p;
        unsigned bit;
        if (code_ < bound) {
            range_ = bound;
            p = static_cast<std::uint16_t>(p + (((1u << kProbBits) - p) >> kMoveBits));
            bit = 0;
        } else {
            code_ -= bound;
            range_ -= bound;
            p = static_cast<std::uint16_t>(p - (p >> kMoveBits));
            bit = 1;
        }
        while (range_ < kTop) {
            range_ <<= 8;
            code_ = (code_ << 8) | next();
        }
        return bit;
    }

    /// Bytes requested beyond the end of input (read as zero).
    std::size_t overrun() const noexcept { return pos_ > in_.size() ? pos_ - in_.size() : 0; }

private:
    std::uint32_t next() noexcept {
        const std::uint32_t b = pos_ < in_.size() ? in_[pos_] : 0u;
        ++pos_;
        return b;
    }

    ByteView in_;
    std::size_t pos_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint32_t code_ = 0;
};

/// Order-0 adaptive model for one byte stream.
struct ByteModel {
    std::array<std::uint16_t, 256> probs;

    ByteModel() { probs.fill(kProbInit); }

    void encode(Encoder& enc, std::uint8_t byte) {
        unsigned node = 1;
        for (int i = 7; i >= 0; --i) {
            const unsigned bit = (byte >> i) & 1u;
            enc.encode_bit(probs[node], bit);
            node = (node << 1) | bit;
        }
    }

    std::uint8_t decode(Decoder& dec) {
        unsigned node = 1;
        for (int i = 0; i < 8; ++i) node = (node << 1) | dec.decode_bit(probs[node]);
        return static_cast<std::uint8_t>(node & 0xFF);
    }
};

} // namespace sparsesync::rc
