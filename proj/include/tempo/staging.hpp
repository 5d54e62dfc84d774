#pragma once

#include <cstdint>
#include <vector>

#include "tempo/common.hpp"

namespace tempo {

// Host->device transfer cost model: fixed latency plus a per-byte term that
// is cheaper for pinned buffers.
struct TransferModel {
    double fixed_latency = 50e-6;        // seconds
    double per_byte_pageable = 2.0e-9;   // seconds per byte
    double per_byte_pinned = 1.0e-9;

    void validate() const {
        require(fixed_latency >= 0.0, "transfer model: latency must be >= 0");
        require(per_byte_pinned > 0.0 && per_byte_pinned <= per_byte_pageable,
                "transfer model: need 0 < pinned <= pageable per-byte cost");
    }

    double transfer_seconds(std::int64_t bytes, bool pinned) const {
        return fixed_latency +
               double(bytes) * (pinned ? per_byte_pinned : per_byte_pageable);
    }
};

// One staging slot. `signature` is the running memory vector m_i scored by
// the pin policy; `pin_history` gains exactly one entry per pipeline tick.
struct StagingBuffer {
    int index = 0;
    std::int64_t capacity_bytes = 0;
    bool pinned = false;
    std::vector<double> signature;
    std::vector<std::uint8_t> pin_history;
};

}  // namespace tempo
