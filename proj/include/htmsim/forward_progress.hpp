#pragma once

#include <cstdint>
#include <vector>

#include "htmsim/types.hpp"

namespace htmsim {

// Repeated-attempt detection. Every transactional access compares its tag
// against the left-over (invalid, tag-retaining) TSHRs; enough matches flag
// the transaction as a repeat of a previously failed attempt.
struct RepeatDetector {
    uint32_t threshold = 2;
    uint32_t leftover_match_count = 0;

    void reset() { leftover_match_count = 0; }
    void note_match() { ++leftover_match_count; }
    bool flagged() const { return leftover_match_count >= threshold; }
};

// Token ownership state. The token itself is just a reserved cache line held
// Exclusive; a one-line slot beside the L1 array keeps it out of the
// replacement path.
struct TokenState {
    bool held = false;
    bool outstanding = false;      // GetExclusive for the token in flight
    uint64_t request_tx_serial = 0;  // which transaction asked for it
};

// n-bit saturating count of consecutive aborts; saturation triggers a
// proactive token request at the start of the next transaction.
struct AbortStreak {
    uint32_t max = 3;
    uint32_t counter = 0;

    void on_abort() { if (counter < max) ++counter; }
    void on_commit() { counter = 0; }
    bool saturated() const { return counter >= max; }
};

// Sorted sequential exclusivity acquisition: the write-set is upgraded one
// line at a time in ascending address order.
struct SeqAcqState {
    bool active = false;
    std::vector<Addr> order;
    size_t next_index = 0;

    void reset() {
        active = false;
        order.clear();
        next_index = 0;
    }
};

}  // namespace htmsim
