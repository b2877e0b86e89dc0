#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "htmsim/types.hpp"

namespace htmsim {

enum class AbortKind : uint8_t { InvalidateHit, DowngradeHit, Capacity, TshrOverflow, Interrupt };

inline const char* to_string(AbortKind k) {
    switch (k) {
        case AbortKind::InvalidateHit: return "inval";
        case AbortKind::DowngradeHit:  return "dwng";
        case AbortKind::Capacity:      return "capacity";
        case AbortKind::TshrOverflow:  return "overflow";
        case AbortKind::Interrupt:     return "interrupt";
    }
    return "?";
}

struct AbortCause {
    AbortKind kind;
    bool pre_sc;  // triggering event arrived before the SC started executing
};

struct FpCounters {
    uint64_t token_requests = 0;
    uint64_t token_grants_in_time = 0;  // grants that engaged privileged mode
    uint64_t stalled_msgs = 0;
    uint64_t nacked_msgs = 0;  // privileged refusals that parked the requester
    uint64_t seq_rounds = 0;  // SCs that ran the sorted sequential acquisition
};

struct StatsRecord {
    uint64_t commits = 0;
    uint64_t aborts_total = 0;
    uint64_t aborts_inval = 0;
    uint64_t aborts_dwng = 0;
    uint64_t aborts_presc = 0;
    uint64_t aborts_capacity = 0;
    uint64_t aborts_overflow = 0;
    uint64_t aborts_interrupt = 0;
    uint64_t app_failures = 0;
    Cycle cycles = 0;
    double throughput_per_kcycle = 0.0;
    std::vector<uint64_t> per_thread_successes;
    FpCounters fp;
    uint32_t max_tshr_used = 0;
    bool oracle_ok = true;

    void note_abort(const AbortCause& c, bool eager_mode) {
        ++aborts_total;
        switch (c.kind) {
            case AbortKind::InvalidateHit: ++aborts_inval; break;
            case AbortKind::DowngradeHit:  ++aborts_dwng; break;
            case AbortKind::Capacity:      ++aborts_capacity; break;
            case AbortKind::TshrOverflow:  ++aborts_overflow; break;
            case AbortKind::Interrupt:     ++aborts_interrupt; break;
        }
        if (c.pre_sc) {
            // Write-set lines stay Shared until the SC, so a downgrade can
            // only conflict after acquisition starts (except in the eager
            // test mode, which exists to show exactly this difference).
            if (c.kind == AbortKind::DowngradeHit && !eager_mode)
                throw InvariantViolation("pre-SC downgrade conflict under deferred exclusivity");
            ++aborts_presc;
        }
        check();
    }

    void check() const {
        uint64_t sum = aborts_inval + aborts_dwng + aborts_capacity + aborts_overflow + aborts_interrupt;
        if (aborts_total != sum)
            throw InvariantViolation("abort cause buckets do not sum to aborts_total");
        if (aborts_presc > aborts_inval + aborts_capacity + aborts_overflow + aborts_interrupt)
            throw InvariantViolation("aborts_presc exceeds the causes that can precede the SC");
    }

    double abort_ratio() const { return commits ? static_cast<double>(aborts_total) / commits : 0.0; }
};

}  // namespace htmsim
