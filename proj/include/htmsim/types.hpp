#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace htmsim {

using Cycle  = uint64_t;
using Addr   = uint64_t;  // byte address; memory ops are word (8 byte) aligned
using Word   = uint64_t;
using CoreId = int32_t;

constexpr Addr kNullPtr = 0;
constexpr int  kWordBytes = 8;

enum class LineState : uint8_t { Invalid, Shared, Exclusive, Modified };

inline const char* to_string(LineState s) {
    switch (s) {
        case LineState::Invalid:   return "I";
        case LineState::Shared:    return "S";
        case LineState::Exclusive: return "E";
        case LineState::Modified:  return "M";
    }
    return "?";
}

// Answer to one Invalidate/Downgrade, carried back to the directory. `data`
// is the dirty line when a Modified owner answers. `nack` is the privileged
// refusal: the cache keeps its copy and the directory parks the request until
// the privileged transaction is over (only ever sent for Invalidates).
struct FanReply {
    std::optional<std::vector<Word>> data;
    bool nack = false;
};

enum class FpMechanism : uint8_t { None, Token, SortedSeq };

inline const char* to_string(FpMechanism f) {
    switch (f) {
        case FpMechanism::None:      return "none";
        case FpMechanism::Token:     return "token";
        case FpMechanism::SortedSeq: return "sorted";
    }
    return "?";
}

// Raised by System::run when the cycle limit is reached with cores still
// running; the usual sign of livelock under fp=none.
struct CycleLimitExceeded : std::runtime_error {
    Cycle limit;
    explicit CycleLimitExceeded(Cycle lim, const std::string& what_arg)
        : std::runtime_error(what_arg), limit(lim) {}
};

// A broken protocol or HTM invariant. Deliberately not assert(): these checks
// stay on in release builds and tests can catch them.
struct InvariantViolation : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace htmsim
