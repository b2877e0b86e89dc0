#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "htmsim/types.hpp"

namespace htmsim {

struct SimConfig {
    int num_cores = 4;

    // L1 geometry. 64 KB, 8-way, 64 B lines -> 128 sets.
    uint32_t line_size = 64;
    uint32_t l1_size   = 64 * 1024;
    uint32_t l1_assoc  = 8;

    uint32_t num_tshrs = 8;

    // Latencies, in cycles. Non-memory instructions retire one per cycle.
    uint32_t l1_hit_latency       = 1;
    uint32_t l2_latency           = 12;  // directory/L2 access
    uint32_t hop_latency          = 4;   // one interconnect hop
    uint32_t commit_write_latency = 1;   // per line drained from a TSHR

    // Extra 0..l2_jitter cycles drawn per directory service, seeded from
    // `seed`. Real memory systems never serve with perfectly equal latency;
    // with zero jitter, identical cores fall into timing lockstep and
    // contention experiments degenerate. Zero it for exact-latency tests.
    uint32_t l2_jitter = 5;

    // Extra 0..hop_jitter cycles per message transit. Channels between any
    // endpoint pair stay FIFO (an ordered network), but messages from
    // different sources race: near-simultaneous requesters can arrive in
    // different orders at different lines, as on a real interconnect.
    // Zero it for exact-latency tests.
    uint32_t hop_jitter = 3;

    // Cycles a no-fan directory service occupies its line before the next
    // request may start; the full l2_latency is charged to the response
    // only. Fanning services occupy the line until their last ack.
    uint32_t dir_occupancy = 2;

    // When a transaction dies mid-acquisition, withdraw its upgrades that
    // are still queued (not yet dispatched) at the directory instead of
    // letting them fan invalidations on behalf of a dead transaction.
    // Off by default: a real directory has no abort signal from remote
    // cores, so stale upgrades are serviced like any other request and
    // their invalidations land on live transactions. That friction is a
    // genuine part of requester-wins contention; cancelling it makes
    // high-contention runs unrealistically polite.
    bool cancel_stale_upgrades = false;

    FpMechanism fp_mechanism = FpMechanism::None;
    Addr     token_line               = 0x40;  // reserved line, never workload data
    uint32_t repeated_match_threshold = 2;
    uint32_t abort_streak_bits        = 2;
    uint32_t token_wait_window        = 32;
    uint32_t seq_stall_bound          = 64;

    uint64_t seed = 1;

    // Test-only: transactional stores acquire exclusivity at store time
    // instead of deferring to the SC. Used to contrast the two policies.
    bool eager_exclusivity = false;

    uint32_t words_per_line() const { return line_size / kWordBytes; }
    uint32_t num_sets() const { return l1_size / (line_size * l1_assoc); }

    Addr line_of(Addr a) const { return a & ~static_cast<Addr>(line_size - 1); }
    uint32_t word_index(Addr a) const { return static_cast<uint32_t>((a & (line_size - 1)) / kWordBytes); }

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("SimConfig: " + m); };
        if (num_cores < 1) fail("num_cores must be >= 1");
        if (line_size < kWordBytes || (line_size & (line_size - 1)) != 0)
            fail("line_size must be a power of two >= 8");
        if (l1_assoc < 1) fail("l1_assoc must be >= 1");
        if (l1_size == 0 || l1_size % (line_size * l1_assoc) != 0)
            fail("l1_size must be a multiple of line_size*l1_assoc");
        if (num_tshrs < 1) fail("num_tshrs must be >= 1");
        if (num_tshrs > l1_assoc) fail("num_tshrs must not exceed l1_assoc");
        if (l1_hit_latency < 1) fail("l1_hit_latency must be >= 1");
        if (commit_write_latency < 1) fail("commit_write_latency must be >= 1");
        if (dir_occupancy < 1) fail("dir_occupancy must be >= 1");
        if (abort_streak_bits < 1 || abort_streak_bits > 16) fail("abort_streak_bits out of range");
        if ((token_line & (line_size - 1)) != 0) fail("token_line must be line aligned");
    }

    uint32_t abort_streak_max() const { return (1u << abort_streak_bits) - 1; }
};

inline FpMechanism parse_fp(const std::string& s) {
    if (s == "none") return FpMechanism::None;
    if (s == "token") return FpMechanism::Token;
    if (s == "sorted") return FpMechanism::SortedSeq;
    throw std::invalid_argument("unknown fp mechanism: " + s);
}

}  // namespace htmsim
