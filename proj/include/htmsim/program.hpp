#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "htmsim/types.hpp"

namespace htmsim {

// One dynamic instruction as seen by a core. Programs are state machines
// that hand these out one at a time; the core reports results back through
// Obs before asking for the next one.
struct MemOp {
    enum class Kind : uint8_t {
        Ld,         // plain load
        LdLinked,   // transactional load; the first one starts a transaction
        St,         // plain store
        StCond,     // store-conditional; ends the transaction
        Nop,        // one idle cycle per count
        Backoff,    // fixed random delay in [lo, hi] cycles
        ExpBackoff, // randomized exponential delay, window doubles per failure
        Done,       // thread finished
    };

    Kind kind = Kind::Done;
    Addr addr = 0;
    Word value = 0;
    uint64_t count = 0;  // Nop cycles, Backoff lo
    uint64_t count2 = 0; // Backoff hi

    static MemOp ld(Addr a) { return {Kind::Ld, a, 0, 0, 0}; }
    static MemOp ll(Addr a) { return {Kind::LdLinked, a, 0, 0, 0}; }
    static MemOp st(Addr a, Word v) { return {Kind::St, a, v, 0, 0}; }
    static MemOp sc(Addr a, Word v) { return {Kind::StCond, a, v, 0, 0}; }
    static MemOp nop(uint64_t cycles = 1) { return {Kind::Nop, 0, 0, cycles, 0}; }
    static MemOp backoff(uint64_t lo, uint64_t hi) { return {Kind::Backoff, 0, 0, lo, hi}; }
    static MemOp exp_backoff() { return {Kind::ExpBackoff, 0, 0, 0, 0}; }
    static MemOp done() { return {Kind::Done, 0, 0, 0, 0}; }
};

// What a program can observe about the core after the previous op completed.
struct Obs {
    Cycle now = 0;
    Word last_load = 0;      // result of the last Ld/LdLinked
    int last_sc = -1;        // 1 committed, 0 failed, -1 no StCond yet
    Cycle last_sc_cycle = 0; // cycle the last StCond outcome became known
    uint64_t commits = 0;    // transactions committed so far on this core
};

class ThreadProgram {
public:
    virtual ~ThreadProgram() = default;
    virtual MemOp next(const Obs& obs) = 0;
    // Application-level successes (operations completed) and failures
    // (e.g. dequeue from empty queue), for statistics.
    virtual uint64_t successes() const { return 0; }
    virtual uint64_t app_failures() const { return 0; }
};

// Fixed scripted sequence; entries can wait for an absolute cycle before
// issuing (used by tests to line up cross-core interleavings).
class FixedProgram : public ThreadProgram {
public:
    struct Entry {
        MemOp op;
        Cycle not_before = 0;
    };

    explicit FixedProgram(std::vector<Entry> seq) : seq_(std::move(seq)) {}

    static FixedProgram of(std::vector<MemOp> ops) {
        std::vector<Entry> seq;
        seq.reserve(ops.size());
        for (auto& op : ops) seq.push_back({op, 0});
        return FixedProgram(std::move(seq));
    }

    MemOp next(const Obs& obs) override {
        if (pos_ >= seq_.size()) return MemOp::done();
        const Entry& e = seq_[pos_];
        if (obs.now < e.not_before) return MemOp::nop(e.not_before - obs.now);
        ++pos_;
        return e.op;
    }

private:
    std::vector<Entry> seq_;
    size_t pos_ = 0;
};

// Wraps a lambda; handy for small test programs with internal state.
class LambdaProgram : public ThreadProgram {
public:
    explicit LambdaProgram(std::function<MemOp(const Obs&)> fn) : fn_(std::move(fn)) {}
    MemOp next(const Obs& obs) override { return fn_(obs); }

private:
    std::function<MemOp(const Obs&)> fn_;
};

}  // namespace htmsim
