#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

// Programming errors: bad arguments, protocol misuse (accumulating past M,
// finalizing early, shape mismatches, stale caches).
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Malformed input data: wrong record length, out-of-range labels.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad experiment configuration: unknown key, unparsable value.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced non-finite losses for a full epoch in single precision.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ContractViolation(message);
}

}  // namespace tempo
