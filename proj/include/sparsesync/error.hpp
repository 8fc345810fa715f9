#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sparsesync {

enum class Errc : unsigned char {
    ShapeMismatch = 1,
    DTypeMismatch,
    UnknownTensor,
    IndexOutOfRange,
    IndexOverflow,
    NotSorted,
    Corrupt,
    BadMagic,
    VersionUnsupported,
    CrcMismatch,
    Truncated,
    SchemaMismatch,
    TooFewSteps,
    SpecInvalid,
    EndpointUnreachable,
    ConnectionLost,
    InvalidArgument,
    Io,
};

constexpr std::string_view to_string(Errc e) noexcept {
    switch (e) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DTypeMismatch: return "DTypeMismatch";
    case Errc::UnknownTensor: return "UnknownTensor";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::IndexOverflow: return "IndexOverflow";
    case Errc::NotSorted: return "NotSorted";
    case Errc::Corrupt: return "Corrupt";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionUnsupported: return "VersionUnsupported";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::Truncated: return "Truncated";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::TooFewSteps: return "TooFewSteps";
    case Errc::SpecInvalid: return "SpecInvalid";
    case Errc::EndpointUnreachable: return "EndpointUnreachable";
    case Errc::ConnectionLost: return "ConnectionLost";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the Errc kinds so that
/// callers (and the wire NACK frame) can dispatch on it.
class SyncError : public std::runtime_error {
public:
    SyncError(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
    throw SyncError(code, what);
}

} // namespace sparsesync
