#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "htmsim/config.hpp"
#include "htmsim/tshr.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

struct CacheEntry {
    Addr line = 0;
    LineState state = LineState::Invalid;
    std::vector<Word> data;
    uint64_t lru = 0;
};

// A coherence request whose response is being deferred (commit phase, token
// privilege, or sorted-seq grace period). Drained FIFO when the transaction
// ends; sorted-seq entries can also be released by their deadline.
struct StalledReq {
    bool invalidate = false;
    Addr line = 0;
    std::function<void(FanReply)> reply;
    Cycle stalled_at = 0;
    bool pre_sc = false;      // arrived before the SC started
    uint64_t id = 0;
    bool bounded = false;     // sorted-seq: progress-checked at the deadline
};

// L1 data cache: set-associative array plus the victim policy. The HTM side
// (TSHRs) lives in TxEngine; replacement consults it so tracked lines are
// never silently displaced.
class L1Cache {
public:
    explicit L1Cache(const SimConfig& cfg)
        : cfg_(&cfg), sets_(cfg.num_sets(), std::vector<CacheEntry>(cfg.l1_assoc)) {}

    uint32_t set_index(Addr line) const {
        return static_cast<uint32_t>((line / cfg_->line_size) % cfg_->num_sets());
    }

    CacheEntry* find(Addr line) {
        auto& set = sets_[set_index(line)];
        for (auto& e : set)
            if (e.state != LineState::Invalid && e.line == line) return &e;
        return nullptr;
    }
    const CacheEntry* find(Addr line) const {
        auto& set = sets_[set_index(line)];
        for (auto& e : set)
            if (e.state != LineState::Invalid && e.line == line) return &e;
        return nullptr;
    }

    LineState state(Addr line) const {
        const CacheEntry* e = find(line);
        return e ? e->state : LineState::Invalid;
    }

    void touch(CacheEntry& e) { e.lru = ++use_counter_; }

    CacheEntry* free_way(Addr line) {
        auto& set = sets_[set_index(line)];
        for (auto& e : set)
            if (e.state == LineState::Invalid) return &e;
        return nullptr;
    }

    // LRU among ways not pinned by a valid TSHR. Null when every way in the
    // set belongs to the running transaction; the caller turns that into a
    // Capacity abort. Pass pinned=nullptr for unconstrained LRU.
    CacheEntry* choose_victim(Addr line, const TshrFile* pinned) {
        auto& set = sets_[set_index(line)];
        CacheEntry* victim = nullptr;
        for (auto& e : set) {
            if (e.state == LineState::Invalid) return &e;
            if (pinned && pinned->find_valid(e.line)) continue;
            if (!victim || e.lru < victim->lru) victim = &e;
        }
        return victim;
    }

    CacheEntry& install(Addr line, LineState st, std::vector<Word> data) {
        CacheEntry* e = free_way(line);
        if (!e) throw InvariantViolation("L1 install with no free way");
        e->line = line;
        e->state = st;
        e->data = std::move(data);
        touch(*e);
        return *e;
    }

    Word read_word(Addr a) const {
        const CacheEntry* e = find(cfg_->line_of(a));
        if (!e) throw InvariantViolation("L1 read of absent line");
        return e->data[cfg_->word_index(a)];
    }

    std::vector<std::vector<CacheEntry>>& sets() { return sets_; }
    const std::vector<std::vector<CacheEntry>>& sets() const { return sets_; }

    std::deque<StalledReq> stall_queue;
    uint64_t stall_generation = 0;  // bumped on every drain; cancels bounded releases
    uint64_t next_stall_id = 0;

private:
    const SimConfig* cfg_;
    std::vector<std::vector<CacheEntry>> sets_;
    uint64_t use_counter_ = 0;
};

}  // namespace htmsim
