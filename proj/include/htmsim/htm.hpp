#pragma once

#include <cstdint>
#include <optional>

#include "htmsim/config.hpp"
#include "htmsim/forward_progress.hpp"
#include "htmsim/stats.hpp"
#include "htmsim/tshr.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

// Transaction status. A conflict before the SC marks the transaction doomed
// (InsideAbort) but lets it run on; the abort itself happens at the SC.
// A conflict during ExclAcq aborts on the spot. CommitPhase spans the TSHR
// drain and defers every request on tracked lines until it finishes.
enum class TxState : uint8_t { Outside, InsideNonAbort, InsideAbort, ExclAcq, CommitPhase };

inline const char* to_string(TxState s) {
    switch (s) {
        case TxState::Outside:        return "Outside";
        case TxState::InsideNonAbort: return "InsideNonAbort";
        case TxState::InsideAbort:    return "InsideAbort";
        case TxState::ExclAcq:        return "ExclAcq";
        case TxState::CommitPhase:    return "CommitPhase";
    }
    return "?";
}

enum class ReqAction : uint8_t { Respond, RespondAndAbort, Stall, Nack };

// Per-core HTM state machine. Owns the TSHR file and the forward-progress
// state; the System does the plumbing (timing, coherence, commit drain) and
// consults decide() for every incoming Invalidate/Downgrade.
class TxEngine {
public:
    TxEngine(const SimConfig& cfg, CoreId core)
        : tshrs(cfg.num_tshrs, cfg.words_per_line()), cfg_(&cfg), core_(core) {
        repeat.threshold = cfg.repeated_match_threshold;
        streak.max = cfg.abort_streak_max();
    }

    TxState state() const { return state_; }
    void set_state(TxState s) { state_ = s; }
    bool active() const { return state_ != TxState::Outside; }
    bool doomed() const { return state_ == TxState::InsideAbort; }
    CoreId core() const { return core_; }

    // Conflict decision for one incoming coherence request, given the local
    // state of the target line. Pure function of engine state:
    //
    //   untracked line or no transaction          -> Respond
    //   doomed transaction                        -> Respond (no deferral)
    //   commit phase, tracked line                -> Stall
    //   Invalidate on any tracked line            -> conflict (abort)
    //   Downgrade on write-set line held E/M      -> conflict (abort)
    //   Downgrade otherwise                       -> Respond
    //
    // Token-privileged mode never aborts on a conflict. An Invalidate for a
    // line we hold Exclusive or Modified is stalled: the requester can wait,
    // we owe the directory nothing more for that line. An Invalidate for a
    // line we only share is nacked instead of stalled, because holding the
    // answer would wedge the directory's queue for that line with our own
    // upgrade possibly behind the requester; the nack keeps our copy and the
    // directory parks the requester until our transaction is over. Downgrades
    // are stalled only for a write-set line already held exclusively.
    //
    // Sorted sequential mode stalls requests only for already granted
    // write-set lines (bounded by the caller) and aborts immediately on an
    // Invalidate for anything not yet granted.
    ReqAction decide(Addr line, bool invalidate, LineState lstate) const {
        if (!active()) return ReqAction::Respond;
        if (line == cfg_->token_line) return privileged ? ReqAction::Stall : ReqAction::Respond;
        const Tshr* t = tshrs.find_valid(line);
        if (!t) return ReqAction::Respond;
        if (state_ == TxState::InsideAbort) return ReqAction::Respond;
        if (state_ == TxState::CommitPhase) return ReqAction::Stall;

        bool excl = lstate == LineState::Exclusive || lstate == LineState::Modified;
        bool ws_excl = t->write_set && excl;
        if (privileged) {
            if (invalidate) return excl ? ReqAction::Stall : ReqAction::Nack;
            return ws_excl ? ReqAction::Stall : ReqAction::Respond;
        }
        if (state_ == TxState::ExclAcq && seq.active) {
            if (invalidate)
                return ws_excl ? ReqAction::Stall : ReqAction::RespondAndAbort;
            return ws_excl ? ReqAction::Stall : ReqAction::Respond;
        }
        if (invalidate) return ReqAction::RespondAndAbort;
        return ws_excl ? ReqAction::RespondAndAbort : ReqAction::Respond;
    }

    const SimConfig& cfg() const { return *cfg_; }

    TshrFile tshrs;
    RepeatDetector repeat;
    TokenState token;
    AbortStreak streak;
    SeqAcqState seq;

    bool privileged = false;              // token held and stalling engaged
    std::optional<AbortCause> pending_cause;  // first doom event, kept until the SC
    bool sc_executed = false;             // SC has started (pre_sc attribution)
    uint64_t tx_serial = 0;               // bumped at every transaction start
    Cycle tx_start_cycle = 0;

private:
    const SimConfig* cfg_;
    CoreId core_;
    TxState state_ = TxState::Outside;
};

}  // namespace htmsim
