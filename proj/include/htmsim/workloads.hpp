#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "htmsim/oracle.hpp"
#include "htmsim/program.hpp"
#include "htmsim/system.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

// Fixed address map shared by all workloads. Everything lives on its own
// cache line; arenas are big enough that node allocation never wraps.
namespace layout {

inline constexpr Addr kCounterBase = 0x10000;
inline constexpr Addr kLockAddr = 0x20000;
inline constexpr Addr kQueueHead = 0x30000;
inline constexpr Addr kQueueTail = 0x30040;
inline constexpr Addr kListHead = 0x30000;
inline constexpr Addr kScratchBase = 0x50000;  // per-thread private line
inline constexpr Addr kArenaBase = 0x100000;   // per-thread node arenas
inline constexpr Addr kArenaStride = 0x100000;

// Queue node: value and next link on separate lines.
inline constexpr uint32_t kQueueNodeStride = 128;
inline constexpr uint32_t kValueOff = 0;
inline constexpr uint32_t kNextOff = 64;

// List node: key, next, prev, flag each on their own line so the
// transactions track exactly the fields they touch.
inline constexpr uint32_t kListNodeStride = 256;
inline constexpr uint32_t kKeyOff = 0;
inline constexpr uint32_t kPrevOff = 128;
inline constexpr uint32_t kFlagOff = 192;

inline constexpr Addr counter(int i) { return kCounterBase + Addr(i) * 64; }
inline constexpr Addr scratch(int tid) { return kScratchBase + Addr(tid) * 64; }
inline constexpr Addr arena(int tid) { return kArenaBase + Addr(tid) * kArenaStride; }

}  // namespace layout

enum class Duration : uint8_t { Short, Long };
enum class SyncKind : uint8_t { Htm, HtmBackoff, Tts, TtsBackoff };

// Retry jitter window (cycles) after a failed transactional attempt under
// plain htm. A small spread is enough: memory-system jitter does the real
// desynchronizing, this just keeps retries from being literally back to
// back. htm-backoff escalates per failure streak instead and ignores this.
inline constexpr uint32_t kHtmRetryWindow = 6;

inline const char* to_string(Duration d) { return d == Duration::Short ? "short" : "long"; }

inline const char* to_string(SyncKind s) {
    switch (s) {
        case SyncKind::Htm: return "htm";
        case SyncKind::HtmBackoff: return "htm-backoff";
        case SyncKind::Tts: return "tts";
        case SyncKind::TtsBackoff: return "tts-backoff";
    }
    return "?";
}

inline Duration parse_duration(const std::string& s) {
    if (s == "short") return Duration::Short;
    if (s == "long") return Duration::Long;
    throw std::invalid_argument("unknown duration: " + s);
}

inline SyncKind parse_sync(const std::string& s) {
    if (s == "htm") return SyncKind::Htm;
    if (s == "htm-backoff") return SyncKind::HtmBackoff;
    if (s == "tts") return SyncKind::Tts;
    if (s == "tts-backoff") return SyncKind::TtsBackoff;
    throw std::invalid_argument("unknown sync mode: " + s);
}

// Queue operations recorded at commit time; sorted by commit cycle before
// the FIFO check. Ties can only come from operations on disjoint lines, so
// the stable record order is a valid linearization.
struct QueueEventSink {
    struct Stamped {
        Cycle cycle = 0;
        QueueEvent ev;
    };
    std::vector<Stamped> stamped;

    void record(Cycle c, QueueEvent ev) { stamped.push_back({c, ev}); }

    std::vector<QueueEvent> ordered() const {
        std::vector<Stamped> v = stamped;
        std::stable_sort(v.begin(), v.end(),
                         [](const Stamped& a, const Stamped& b) { return a.cycle < b.cycle; });
        std::vector<QueueEvent> out;
        out.reserve(v.size());
        for (const Stamped& s : v) out.push_back(s.ev);
        return out;
    }
};

// Increments k shared counters per operation. The transactional variants
// read every counter with LL (so the whole read set is tracked), then issue
// the k stores with the store-conditional last; the long variant parks for
// k*10 noops between establishing the read set and writing. The lock
// variants run the same body as plain loads and stores under a test-and-
// test-and-set lock built from a one-line LL/SC transaction.
class CountersProgram : public ThreadProgram {
public:
    CountersProgram(int tid, int k, Duration dur, SyncKind sync, uint64_t quota)
        : k_(k), dur_(dur), sync_(sync), quota_(quota), scratch_(layout::scratch(tid)) {
        vals_.resize(k_, 0);
    }

    MemOp next(const Obs& obs) override {
        for (;;) {
            switch (phase_) {
                case Phase::Start:
                    if (done_ == quota_) return MemOp::done();
                    if (sync_ == SyncKind::Tts || sync_ == SyncKind::TtsBackoff) {
                        phase_ = Phase::SpinLd;
                        continue;
                    }
                    idx_ = 0;
                    phase_ = Phase::Read;
                    return MemOp::ll(layout::counter(0));

                // Transactional body.
                case Phase::Read:
                    vals_[idx_] = obs.last_load;
                    ++idx_;
                    if (idx_ < k_) return MemOp::ll(layout::counter(idx_));
                    phase_ = Phase::WriteStart;
                    if (dur_ == Duration::Long) return MemOp::nop(uint64_t(k_) * 10);
                    continue;
                case Phase::WriteStart:
                    idx_ = 0;
                    phase_ = Phase::Write;
                    continue;
                case Phase::Write:
                    if (idx_ < k_ - 1) {
                        MemOp op = MemOp::st(layout::counter(idx_), vals_[idx_] + 1);
                        ++idx_;
                        return op;
                    }
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::counter(k_ - 1), vals_[k_ - 1] + 1);
                case Phase::ScChk:
                    if (obs.last_sc == 1) {
                        ++done_;
                        phase_ = Phase::Start;
                        continue;
                    }
                    phase_ = Phase::Start;
                    if (sync_ == SyncKind::HtmBackoff) return MemOp::exp_backoff();
                    return MemOp::backoff(2, kHtmRetryWindow);

                // Lock acquire: spin on plain loads, then LL/SC swap 0 -> 1.
                // An LL that finds the lock taken ends its transaction with a
                // dummy store-conditional to the thread's private line.
                case Phase::SpinLd:
                    phase_ = Phase::SpinChk;
                    return MemOp::ld(layout::kLockAddr);
                case Phase::SpinChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::SpinLd;
                        if (sync_ == SyncKind::TtsBackoff) return MemOp::backoff(1, bump_win());
                        continue;
                    }
                    phase_ = Phase::AcqChk;
                    return MemOp::ll(layout::kLockAddr);
                case Phase::AcqChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::AcqScChk;
                    return MemOp::sc(layout::kLockAddr, 1);
                case Phase::DummyChk:
                    phase_ = Phase::SpinLd;
                    if (sync_ == SyncKind::TtsBackoff) return MemOp::backoff(1, bump_win());
                    continue;
                case Phase::AcqScChk:
                    if (obs.last_sc != 1) {
                        phase_ = Phase::SpinLd;
                        if (sync_ == SyncKind::TtsBackoff) return MemOp::backoff(1, bump_win());
                        continue;
                    }
                    win_ = 2;
                    idx_ = 0;
                    phase_ = Phase::BodyLd;
                    continue;

                // Critical section: same k-counter body with plain accesses.
                case Phase::BodyLd:
                    phase_ = Phase::BodyLdChk;
                    return MemOp::ld(layout::counter(idx_));
                case Phase::BodyLdChk:
                    vals_[idx_] = obs.last_load;
                    ++idx_;
                    if (idx_ < k_) {
                        phase_ = Phase::BodyLd;
                        continue;
                    }
                    idx_ = 0;
                    phase_ = Phase::BodySt;
                    if (dur_ == Duration::Long) return MemOp::nop(uint64_t(k_) * 10);
                    continue;
                case Phase::BodySt:
                    if (idx_ < k_) {
                        MemOp op = MemOp::st(layout::counter(idx_), vals_[idx_] + 1);
                        ++idx_;
                        return op;
                    }
                    ++done_;
                    phase_ = Phase::Start;
                    return MemOp::st(layout::kLockAddr, 0);
            }
        }
    }

    uint64_t successes() const override { return done_; }

private:
    enum class Phase {
        Start,
        Read,
        WriteStart,
        Write,
        ScChk,
        SpinLd,
        SpinChk,
        AcqChk,
        DummyChk,
        AcqScChk,
        BodyLd,
        BodyLdChk,
        BodySt,
    };

    uint64_t bump_win() {
        uint64_t w = win_;
        win_ = std::min<uint64_t>(win_ * 2, 256);
        return w;
    }

    int k_;
    Duration dur_;
    SyncKind sync_;
    uint64_t quota_;
    Addr scratch_;
    Phase phase_ = Phase::Start;
    int idx_ = 0;
    std::vector<Word> vals_;
    uint64_t done_ = 0;
    uint64_t win_ = 2;  // lock backoff window, thread managed
};

// Enqueues quota nodes. Node value and next link are initialized with plain
// stores (the node is still thread private), then the transaction links it:
// LL tail; empty queue publishes through head, otherwise through the old
// tail node's next link; SC on tail.
class QueueProducer : public ThreadProgram {
public:
    QueueProducer(int tid, uint64_t quota, std::shared_ptr<QueueEventSink> sink)
        : tid_(tid), quota_(quota), sink_(std::move(sink)) {}

    MemOp next(const Obs& obs) override {
        for (;;) {
            switch (phase_) {
                case Phase::Start:
                    if (seq_ == quota_) return MemOp::done();
                    node_ = layout::arena(tid_) + seq_ * layout::kQueueNodeStride;
                    val_ = (Word(uint64_t(tid_)) << 32) | seq_;
                    phase_ = Phase::InitNext;
                    return MemOp::st(node_ + layout::kValueOff, val_);
                case Phase::InitNext:
                    phase_ = Phase::LlTail;
                    return MemOp::st(node_ + layout::kNextOff, kNullPtr);
                case Phase::LlTail:
                    phase_ = Phase::TailChk;
                    return MemOp::ll(layout::kQueueTail);
                case Phase::TailChk: {
                    Word t = obs.last_load;
                    phase_ = Phase::IssueSc;
                    if (t == kNullPtr) return MemOp::st(layout::kQueueHead, node_);
                    return MemOp::st(t + layout::kNextOff, node_);
                }
                case Phase::IssueSc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::kQueueTail, node_);
                case Phase::ScChk:
                    if (obs.last_sc == 1) {
                        sink_->record(obs.last_sc_cycle, {true, tid_, val_});
                        ++seq_;
                        phase_ = Phase::Start;
                        continue;
                    }
                    phase_ = Phase::LlTail;  // node image is already valid
                    return MemOp::backoff(2, kHtmRetryWindow);
            }
        }
    }

    uint64_t successes() const override { return seq_; }

private:
    enum class Phase { Start, InitNext, LlTail, TailChk, IssueSc, ScChk };

    int tid_;
    uint64_t quota_;
    std::shared_ptr<QueueEventSink> sink_;
    Phase phase_ = Phase::Start;
    uint64_t seq_ = 0;
    Addr node_ = 0;
    Word val_ = 0;
};

// Dequeues quota values. LL head; an empty queue ends the transaction with
// a dummy SC on the private line and counts an application-level failure if
// that commit goes through. Otherwise the value is read with a plain load
// (node data is immutable), the next link with LL; draining the last node
// also clears tail inside the same transaction.
class QueueConsumer : public ThreadProgram {
public:
    QueueConsumer(int tid, uint64_t quota, std::shared_ptr<QueueEventSink> sink)
        : tid_(tid), quota_(quota), sink_(std::move(sink)), scratch_(layout::scratch(tid)) {}

    MemOp next(const Obs& obs) override {
        for (;;) {
            switch (phase_) {
                case Phase::Start:
                    if (got_ == quota_) return MemOp::done();
                    phase_ = Phase::HeadChk;
                    return MemOp::ll(layout::kQueueHead);
                case Phase::HeadChk:
                    head_ = obs.last_load;
                    if (head_ == kNullPtr) {
                        phase_ = Phase::EmptyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::ValChk;
                    return MemOp::ld(head_ + layout::kValueOff);
                case Phase::EmptyChk:
                    if (obs.last_sc == 1) ++empty_;  // committed view of an empty queue
                    phase_ = Phase::Start;
                    return MemOp::backoff(2, kHtmRetryWindow);
                case Phase::ValChk:
                    val_ = obs.last_load;
                    phase_ = Phase::NextChk;
                    return MemOp::ll(head_ + layout::kNextOff);
                case Phase::NextChk:
                    next_ = obs.last_load;
                    if (next_ == kNullPtr) {
                        phase_ = Phase::ScHead;
                        return MemOp::st(layout::kQueueTail, kNullPtr);
                    }
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::kQueueHead, next_);
                case Phase::ScHead:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::kQueueHead, kNullPtr);
                case Phase::ScChk:
                    if (obs.last_sc == 1) {
                        sink_->record(obs.last_sc_cycle, {false, tid_, val_});
                        ++got_;
                        phase_ = Phase::Start;
                        continue;
                    }
                    phase_ = Phase::Start;
                    return MemOp::backoff(2, kHtmRetryWindow);
            }
        }
    }

    uint64_t successes() const override { return got_; }
    uint64_t app_failures() const override { return empty_; }

private:
    enum class Phase { Start, HeadChk, EmptyChk, ValChk, NextChk, ScHead, ScChk };

    int tid_;
    uint64_t quota_;
    std::shared_ptr<QueueEventSink> sink_;
    Addr scratch_;
    Phase phase_ = Phase::Start;
    uint64_t got_ = 0;
    uint64_t empty_ = 0;
    Addr head_ = 0;
    Word val_ = 0;
    Addr next_ = 0;
};

// Sorted doubly linked list: inserts `per` keyed nodes, then deletes the
// same keys. Keys are base + tid + i*nthreads so neighboring keys belong to
// different threads. Each operation traverses optimistically with plain
// loads, then runs one of the insert/delete case transactions, validating
// position and neighbor flags with LL; a validation mismatch ends the
// transaction with a dummy SC and retries the whole operation.
class DlistProgram : public ThreadProgram {
public:
    DlistProgram(int tid, int nthreads, uint64_t per, Word key_base = 1000)
        : tid_(tid), n_(nthreads), per_(per), key_base_(key_base),
          scratch_(layout::scratch(tid)) {}

    MemOp next(const Obs& obs) override {
        for (;;) {
            switch (phase_) {
                case Phase::Start:
                    if (insert_i_ < per_) {
                        inserting_ = true;
                        key_ = key_base_ + uint64_t(tid_) + insert_i_ * uint64_t(n_);
                        node_ = layout::arena(tid_) + insert_i_ * layout::kListNodeStride;
                        phase_ = Phase::InitNext;
                        return MemOp::st(node_ + layout::kKeyOff, key_);
                    }
                    if (delete_i_ < per_) {
                        inserting_ = false;
                        key_ = key_base_ + uint64_t(tid_) + delete_i_ * uint64_t(n_);
                        phase_ = Phase::TravHead;
                        continue;
                    }
                    return MemOp::done();
                case Phase::InitNext:
                    phase_ = Phase::InitPrev;
                    return MemOp::st(node_ + layout::kNextOff, kNullPtr);
                case Phase::InitPrev:
                    phase_ = Phase::InitFlag;
                    return MemOp::st(node_ + layout::kPrevOff, kNullPtr);
                case Phase::InitFlag:
                    phase_ = Phase::TravHead;
                    return MemOp::st(node_ + layout::kFlagOff, 0);

                // Optimistic traversal, plain loads only. Terminates because
                // keys strictly increase along any chain of next links ever
                // published.
                case Phase::TravHead:
                    prev_ = kNullPtr;
                    phase_ = Phase::TravHeadChk;
                    return MemOp::ld(layout::kListHead);
                case Phase::TravHeadChk:
                    cur_ = obs.last_load;
                    phase_ = Phase::TravStep;
                    continue;
                case Phase::TravStep:
                    if (cur_ == kNullPtr) {
                        ck_ = 0;
                        phase_ = Phase::Dispatch;
                        continue;
                    }
                    phase_ = Phase::TravKeyChk;
                    return MemOp::ld(cur_ + layout::kKeyOff);
                case Phase::TravKeyChk:
                    ck_ = obs.last_load;
                    if (ck_ < key_) {
                        phase_ = Phase::TravNextChk;
                        return MemOp::ld(cur_ + layout::kNextOff);
                    }
                    phase_ = Phase::Dispatch;
                    continue;
                case Phase::TravNextChk:
                    prev_ = cur_;
                    cur_ = obs.last_load;
                    phase_ = Phase::TravStep;
                    continue;

                case Phase::Dispatch:
                    if (inserting_) {
                        if (prev_ == kNullPtr && cur_ == kNullPtr) {
                            phase_ = Phase::I1HeadChk;
                            return MemOp::ll(layout::kListHead);
                        }
                        if (prev_ == kNullPtr) {
                            phase_ = Phase::I2HeadChk;
                            return MemOp::ll(layout::kListHead);
                        }
                        if (cur_ == kNullPtr) {
                            phase_ = Phase::I3PnChk;
                            return MemOp::ll(prev_ + layout::kNextOff);
                        }
                        phase_ = Phase::I4PnChk;
                        return MemOp::ll(prev_ + layout::kNextOff);
                    }
                    if (cur_ == kNullPtr || ck_ != key_) {
                        // Not found; with per-thread keys this only happens
                        // when a concurrent traversal raced a delete, so try
                        // again from the head.
                        ++not_found_;
                        phase_ = Phase::TravHead;
                        return MemOp::backoff(2, kHtmRetryWindow);
                    }
                    if (prev_ == kNullPtr) {
                        phase_ = Phase::D2HeadChk;
                        return MemOp::ll(layout::kListHead);
                    }
                    phase_ = Phase::D3KeyChk;
                    return MemOp::ld(cur_ + layout::kKeyOff);

                // Insert case 1: list was empty. Validate head is still NULL.
                case Phase::I1HeadChk:
                    if (obs.last_load != kNullPtr) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::kListHead, node_);

                // Insert case 2: new head. Validate the current head still
                // sorts after the new key and is not being deleted.
                case Phase::I2HeadChk:
                    h_ = obs.last_load;
                    phase_ = Phase::I2KeyChk;
                    return MemOp::ld(h_ + layout::kKeyOff);
                case Phase::I2KeyChk:
                    if (obs.last_load < key_) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I2FlagChk;
                    return MemOp::ll(h_ + layout::kFlagOff);
                case Phase::I2FlagChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I2NewNext;
                    return MemOp::st(h_ + layout::kPrevOff, node_);
                case Phase::I2NewNext:
                    phase_ = Phase::I2Sc;
                    return MemOp::st(node_ + layout::kNextOff, h_);
                case Phase::I2Sc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(layout::kListHead, node_);

                // Insert case 3: new tail. Validate prev is still the tail
                // and not being deleted.
                case Phase::I3PnChk:
                    if (obs.last_load != kNullPtr) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I3PfChk;
                    return MemOp::ll(prev_ + layout::kFlagOff);
                case Phase::I3PfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I3Sc;
                    return MemOp::st(node_ + layout::kPrevOff, prev_);
                case Phase::I3Sc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(prev_ + layout::kNextOff, node_);

                // Insert case 4: between prev and cur. Validate adjacency
                // and both neighbor flags.
                case Phase::I4PnChk:
                    if (obs.last_load != cur_) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I4PfChk;
                    return MemOp::ll(prev_ + layout::kFlagOff);
                case Phase::I4PfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I4CfChk;
                    return MemOp::ll(cur_ + layout::kFlagOff);
                case Phase::I4CfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::I4CurPrev;
                    return MemOp::st(node_ + layout::kNextOff, cur_);
                case Phase::I4CurPrev:
                    phase_ = Phase::I4NewPrev;
                    return MemOp::st(cur_ + layout::kPrevOff, node_);
                case Phase::I4NewPrev:
                    phase_ = Phase::I4Sc;
                    return MemOp::st(node_ + layout::kPrevOff, prev_);
                case Phase::I4Sc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(prev_ + layout::kNextOff, node_);

                // Delete case 2: unlink the head node. The key re-check
                // subsumes the null check (keys are never 0). The next
                // node's flag joins the read set; the SC marks the node.
                case Phase::D2HeadChk:
                    h_ = obs.last_load;
                    phase_ = Phase::D2KeyChk;
                    return MemOp::ld(h_ + layout::kKeyOff);
                case Phase::D2KeyChk:
                    if (obs.last_load != key_) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D2FlagChk;
                    return MemOp::ll(h_ + layout::kFlagOff);
                case Phase::D2FlagChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D2NextChk;
                    return MemOp::ll(h_ + layout::kNextOff);
                case Phase::D2NextChk:
                    nxt_ = obs.last_load;
                    if (nxt_ == kNullPtr) {
                        phase_ = Phase::D2Head;
                        continue;
                    }
                    phase_ = Phase::D2NfChk;
                    return MemOp::ll(nxt_ + layout::kFlagOff);
                case Phase::D2NfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D2Head;
                    return MemOp::st(nxt_ + layout::kPrevOff, kNullPtr);
                case Phase::D2Head:
                    phase_ = Phase::D2Sc;
                    return MemOp::st(layout::kListHead, nxt_);
                case Phase::D2Sc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(h_ + layout::kFlagOff, 1);

                // Delete case 3: middle or tail node. Uses the prev link
                // read inside the transaction, not the traversal's; both
                // neighbor flags join the read set.
                case Phase::D3KeyChk:
                    if (obs.last_load != key_) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D3FlagChk;
                    return MemOp::ll(cur_ + layout::kFlagOff);
                case Phase::D3FlagChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D3NextChk;
                    return MemOp::ll(cur_ + layout::kNextOff);
                case Phase::D3NextChk:
                    nxt_ = obs.last_load;
                    phase_ = Phase::D3PrevChk;
                    return MemOp::ll(cur_ + layout::kPrevOff);
                case Phase::D3PrevChk:
                    cp_ = obs.last_load;
                    if (cp_ == kNullPtr) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D3PfChk;
                    return MemOp::ll(cp_ + layout::kFlagOff);
                case Phase::D3PfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    if (nxt_ == kNullPtr) {
                        phase_ = Phase::D3PrevNext;
                        continue;
                    }
                    phase_ = Phase::D3NfChk;
                    return MemOp::ll(nxt_ + layout::kFlagOff);
                case Phase::D3NfChk:
                    if (obs.last_load != 0) {
                        phase_ = Phase::DummyChk;
                        return MemOp::sc(scratch_, 1);
                    }
                    phase_ = Phase::D3PrevNext;
                    return MemOp::st(nxt_ + layout::kPrevOff, cp_);
                case Phase::D3PrevNext:
                    phase_ = Phase::D3Sc;
                    return MemOp::st(cp_ + layout::kNextOff, nxt_);
                case Phase::D3Sc:
                    phase_ = Phase::ScChk;
                    return MemOp::sc(cur_ + layout::kFlagOff, 1);

                // Shared endings: a dummy SC after failed validation retries
                // the whole operation; a failed real SC does the same.
                case Phase::DummyChk:
                    phase_ = Phase::TravHead;
                    return MemOp::backoff(2, kHtmRetryWindow);
                case Phase::ScChk:
                    if (obs.last_sc == 1) {
                        if (inserting_)
                            ++insert_i_;
                        else
                            ++delete_i_;
                        phase_ = Phase::Start;
                        continue;
                    }
                    phase_ = Phase::TravHead;
                    return MemOp::backoff(2, kHtmRetryWindow);
            }
        }
    }

    uint64_t successes() const override { return insert_i_ + delete_i_; }
    uint64_t app_failures() const override { return not_found_; }

private:
    enum class Phase {
        Start,
        InitNext,
        InitPrev,
        InitFlag,
        TravHead,
        TravHeadChk,
        TravStep,
        TravKeyChk,
        TravNextChk,
        Dispatch,
        I1HeadChk,
        I2HeadChk,
        I2KeyChk,
        I2FlagChk,
        I2NewNext,
        I2Sc,
        I3PnChk,
        I3PfChk,
        I3Sc,
        I4PnChk,
        I4PfChk,
        I4CfChk,
        I4CurPrev,
        I4NewPrev,
        I4Sc,
        D2HeadChk,
        D2KeyChk,
        D2FlagChk,
        D2NextChk,
        D2NfChk,
        D2Head,
        D2Sc,
        D3KeyChk,
        D3FlagChk,
        D3NextChk,
        D3PrevChk,
        D3PfChk,
        D3NfChk,
        D3PrevNext,
        D3Sc,
        DummyChk,
        ScChk,
    };

    int tid_;
    int n_;
    uint64_t per_;
    Word key_base_;
    Addr scratch_;
    Phase phase_ = Phase::Start;
    bool inserting_ = true;
    uint64_t insert_i_ = 0;
    uint64_t delete_i_ = 0;
    Word key_ = 0;
    Addr node_ = 0;
    Addr prev_ = 0;
    Addr cur_ = 0;
    Word ck_ = 0;
    Addr h_ = 0;
    Addr nxt_ = 0;
    Addr cp_ = 0;
    uint64_t not_found_ = 0;
};

// A built workload: programs are installed on the system; check() runs the
// structure-specific oracle after the run.
struct BuiltWorkload {
    std::string name;
    uint64_t expected_total = 0;  // successful operations across all threads
    size_t tshr_bound = 0;        // expected max TSHR occupancy, 0 = unchecked
    std::shared_ptr<QueueEventSink> events;
    std::function<OracleResult(System&)> check;
};

namespace detail {

// total split over n threads, remainder to the lowest thread ids.
inline uint64_t quota_of(uint64_t total, int n, int tid) {
    return total / n + (uint64_t(tid) < total % n ? 1 : 0);
}

}  // namespace detail

inline BuiltWorkload build_counters(System& sys, int k, Duration dur, SyncKind sync,
                                    uint64_t total) {
    const SimConfig& cfg = sys.cfg();
    if (k < 2 || uint32_t(k) > cfg.num_tshrs)
        throw std::invalid_argument("counters: k must be in [2, num_tshrs]");
    if (cfg.num_cores < 2) throw std::invalid_argument("counters: need at least 2 threads");
    for (int t = 0; t < cfg.num_cores; ++t)
        sys.set_program(t, std::make_unique<CountersProgram>(
                               t, k, dur, sync, detail::quota_of(total, cfg.num_cores, t)));
    BuiltWorkload w;
    w.name = "counters";
    w.expected_total = total;
    w.tshr_bound = (sync == SyncKind::Htm || sync == SyncKind::HtmBackoff) ? size_t(k) : 2;
    w.check = [k, total](System& s) -> OracleResult {
        MemoryImage img = s.arch_memory();
        for (int i = 0; i < k; ++i) {
            Word v = img.read_word(layout::counter(i));
            if (v != total)
                return oracle_fail("counter %d ended at %llu, expected %llu", i,
                                   (unsigned long long)v, (unsigned long long)total);
        }
        return {};
    };
    return w;
}

inline BuiltWorkload build_queue(System& sys, uint64_t total_ops) {
    const SimConfig& cfg = sys.cfg();
    if (cfg.num_cores < 2 || cfg.num_cores % 2 != 0)
        throw std::invalid_argument("queue: need an even number of threads");
    int half = cfg.num_cores / 2;
    uint64_t side = total_ops / 2;
    uint64_t max_quota = side / half + 1;
    if (max_quota * layout::kQueueNodeStride > layout::kArenaStride)
        throw std::invalid_argument("queue: too many operations for the node arenas");
    auto sink = std::make_shared<QueueEventSink>();
    for (int t = 0; t < half; ++t)
        sys.set_program(t, std::make_unique<QueueProducer>(t, detail::quota_of(side, half, t),
                                                           sink));
    for (int t = 0; t < half; ++t)
        sys.set_program(half + t, std::make_unique<QueueConsumer>(
                                      half + t, detail::quota_of(side, half, t), sink));
    BuiltWorkload w;
    w.name = "queue";
    w.expected_total = side * 2;
    w.tshr_bound = 3;  // head, tail, one next link
    w.events = sink;
    w.check = [sink, side](System& s) -> OracleResult {
        MemoryImage img = s.arch_memory();
        std::vector<Addr> chain =
            walk_chain(img, layout::kQueueHead, layout::kNextOff, size_t(side) + 1);
        if (chain.size() > side) return oracle_fail("queue residue longer than total enqueues");
        std::vector<Word> residue;
        for (Addr n : chain) residue.push_back(img.read_word(n + layout::kValueOff));
        return check_queue_history(sink->ordered(), residue);
    };
    return w;
}

inline BuiltWorkload build_dlist(System& sys, uint64_t total_ops) {
    const SimConfig& cfg = sys.cfg();
    if (cfg.num_cores < 2) throw std::invalid_argument("dlist: need at least 2 threads");
    uint64_t per = total_ops / 2 / uint64_t(cfg.num_cores);
    if (per == 0) throw std::invalid_argument("dlist: too few operations for thread count");
    if (per * layout::kListNodeStride > layout::kArenaStride)
        throw std::invalid_argument("dlist: too many operations for the node arenas");
    for (int t = 0; t < cfg.num_cores; ++t)
        sys.set_program(t, std::make_unique<DlistProgram>(t, cfg.num_cores, per));
    size_t max_nodes = size_t(per) * size_t(cfg.num_cores);

    // Structure is checked at every commit against the serialized history:
    // the write log replayed onto the initial memory. A raw cache+memory
    // snapshot would be off by the odd in-flight writeback (a drained stall's
    // data travels a hop before the directory applies it); the log replay is
    // the committed truth at any instant. The first violation wins.
    auto first_bad = std::make_shared<OracleResult>();
    auto replayed = std::make_shared<MemoryImage>(sys.arch_memory());
    auto cursor = std::make_shared<size_t>(0);
    sys.set_commit_hook([&sys, first_bad, replayed, cursor, max_nodes](CoreId) {
        if (!first_bad->ok) return;
        const auto& log = sys.log();
        for (; *cursor < log.size(); ++*cursor)
            for (const auto& [a, v] : log[*cursor].writes) replayed->write_word(a, v);
        OracleResult r =
            check_list_state(*replayed, layout::kListHead, ListLayout{}, max_nodes);
        if (!r.ok) *first_bad = r;
    });

    BuiltWorkload w;
    w.name = "dlist";
    w.expected_total = per * uint64_t(cfg.num_cores) * 2;
    w.tshr_bound = 8;
    w.check = [first_bad, max_nodes](System& s) -> OracleResult {
        if (!first_bad->ok) return *first_bad;
        size_t len = 0;
        OracleResult r = check_list_state(s.arch_memory(), layout::kListHead, ListLayout{},
                                          max_nodes, &len);
        if (!r.ok) return r;
        if (len != 0) return oracle_fail("list should end empty, found %zu nodes", len);
        return {};
    };
    return w;
}

}  // namespace htmsim
