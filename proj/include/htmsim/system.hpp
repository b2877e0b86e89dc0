#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

#include "htmsim/cache.hpp"
#include "htmsim/coherence.hpp"
#include "htmsim/config.hpp"
#include "htmsim/event_queue.hpp"
#include "htmsim/htm.hpp"
#include "htmsim/memory.hpp"
#include "htmsim/program.hpp"
#include "htmsim/rng.hpp"
#include "htmsim/stats.hpp"
#include "htmsim/trace.hpp"
#include "htmsim/tshr.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

// One committed unit of work for the serializability replay: either a
// transaction (all words it stored, made visible atomically at commit) or a
// single plain store. order_seq is the global visibility order.
struct TxLogEntry {
    CoreId core = -1;
    Cycle visible_cycle = 0;
    uint64_t order_seq = 0;
    bool transactional = false;
    std::vector<Addr> read_lines;
    std::vector<std::pair<Addr, Word>> writes;  // word address, value
};

// Every transaction attempt, committed or not. Tests use these to reason
// about rounds, privileges and the commit drain.
struct TxAttempt {
    CoreId core = -1;
    Cycle start = 0;
    Cycle end = 0;
    bool committed = false;
    bool flagged = false;           // repeat detector state when it ended
    bool privileged_used = false;   // token privilege engaged at some point
    Cycle commit_start = 0;
    Cycle commit_end = 0;
    std::optional<AbortCause> cause;
};

class System {
public:
    explicit System(const SimConfig& cfg)
        : cfg_(cfg), mem_(cfg.line_size), dir_(cfg_, kernel_, mem_, trace_) {
        cfg_.validate();
        for (int i = 0; i < cfg_.num_cores; ++i)
            cores_.push_back(std::make_unique<CoreCtx>(cfg_, i));
        dir_.set_deliver([this](CoreId t, bool inval, Addr line,
                                std::function<void(FanReply)> reply) {
            deliver(t, inval, line, std::move(reply));
        });
        dir_.set_privilege_probe([this](CoreId c) {
            return cores_[static_cast<size_t>(c)]->tx.privileged;
        });
        dir_.set_post_grant_check([this](Addr line) { check_single_writer(line); });
    }

    // Pre-run image; also the directory's backing store during the run.
    MemoryImage& initial_memory() { return mem_; }

    void set_program(CoreId c, std::unique_ptr<ThreadProgram> p) { cores_[c]->prog = std::move(p); }
    void set_trace(std::ostream* out) { trace_ = TraceSink(out); }
    void set_commit_hook(std::function<void(CoreId)> f) { commit_hook_ = std::move(f); }

    // Dooms whatever transaction is running on the core at that cycle.
    void inject_interrupt(CoreId c, Cycle at) {
        kernel_.schedule(at - kernel_.now(), [this, c] {
            CoreCtx& ctx = *cores_[c];
            switch (ctx.tx.state()) {
                case TxState::InsideNonAbort:
                    doom(ctx, AbortKind::Interrupt, true);
                    break;
                case TxState::ExclAcq:
                    doom(ctx, AbortKind::Interrupt, false);
                    break;
                default:
                    break;  // outside, already doomed, or committing: no effect
            }
        });
    }

    void run(Cycle limit) {
        if (ran_) throw InvariantViolation("System::run called twice");
        ran_ = true;
        for (auto& c : cores_) {
            if (!c->prog) throw InvariantViolation("core has no program");
            CoreCtx* pc = c.get();
            kernel_.schedule(0, [this, pc] { step_core(*pc); });
        }
        while (!kernel_.empty()) {
            if (!all_done_ && kernel_.next_cycle() > limit)
                throw CycleLimitExceeded(limit, "cycle limit exceeded with cores still running");
            kernel_.step();
        }
        if (!all_done_)
            throw InvariantViolation("system quiesced with cores still running (deadlock)");
        if (!dir_.quiesced())
            throw InvariantViolation("directory busy after quiesce");
        for (auto& c : cores_) {
            if (!c->l1.stall_queue.empty())
                throw InvariantViolation("stalled requests left after quiesce");
            if (c->tx.privileged)
                throw InvariantViolation("token privilege left engaged after quiesce");
        }
        stats_.cycles = done_cycle_;
        stats_.per_thread_successes.clear();
        for (auto& c : cores_) {
            stats_.per_thread_successes.push_back(c->prog->successes());
            stats_.app_failures += c->prog->app_failures();
        }
        stats_.check();
    }

    // Architectural memory: backing store plus every valid L1 line. Valid
    // copies are never older than the backing store (grants wait for all
    // acks, and a demoted owner's writeback may still be in flight while
    // its now-Shared copy already holds the committed data), and all valid
    // copies of a line agree, so overlaying any of them is sound.
    MemoryImage arch_memory() const {
        MemoryImage img = mem_;
        for (auto& c : cores_)
            for (auto& set : c->l1.sets())
                for (auto& e : set)
                    if (e.state != LineState::Invalid) img.write_line(e.line, e.data);
        return img;
    }

    const std::vector<TxLogEntry>& log() const { return log_; }
    const std::vector<TxAttempt>& attempts() const { return attempts_; }
    const StatsRecord& stats() const { return stats_; }
    StatsRecord& stats_mut() { return stats_; }
    Cycle now() const { return kernel_.now(); }

    const L1Cache& l1(CoreId c) const { return cores_[c]->l1; }
    const TxEngine& tx(CoreId c) const { return cores_[c]->tx; }
    const Directory& directory() const { return dir_; }
    const SimConfig& cfg() const { return cfg_; }

private:
    struct CoreCtx {
        CoreCtx(const SimConfig& cfg, CoreId i)
            : id(i), l1(cfg), tx(cfg, i), rng(cfg.seed * 0x9E3779B97F4A7C15ull + 0x100000001B3ull * (i + 1)) {}

        CoreId id;
        L1Cache l1;
        TxEngine tx;
        Rng rng;
        std::unique_ptr<ThreadProgram> prog;
        Obs obs;
        bool done = false;
        uint64_t exp_window = 2;

        uint32_t excl_outstanding = 0;   // upgrade grants still in flight
        bool excl_aborted = false;       // abort decided mid-acquisition; absorb grants first
        std::vector<Addr> excl_pending;  // upgrade lines not yet granted (cancellation targets)
        bool engaged_this_tx = false;    // token engagement done for this attempt
        bool waiting_token = false;      // blocked in the proactive grab window
        std::function<void()> token_resume;
        size_t attempt_index = SIZE_MAX;
    };

    using ReplyFn = std::function<void(FanReply)>;

    // ---- core scheduling ----

    void schedule_step(CoreCtx& ctx, Cycle delay) {
        CoreCtx* pc = &ctx;
        kernel_.schedule(delay, [this, pc] { step_core(*pc); });
    }

    void complete(CoreCtx& ctx) { schedule_step(ctx, 0); }

    void step_core(CoreCtx& ctx) {
        if (ctx.done) return;
        ctx.obs.now = kernel_.now();
        MemOp op = ctx.prog->next(ctx.obs);
        switch (op.kind) {
            case MemOp::Kind::Done:
                if (ctx.tx.active())
                    throw InvariantViolation("program ended inside a transaction");
                ctx.done = true;
                if (++done_count_ == cfg_.num_cores) {
                    all_done_ = true;
                    done_cycle_ = kernel_.now();
                }
                return;
            case MemOp::Kind::Nop:
                schedule_step(ctx, std::max<uint64_t>(op.count, 1));
                return;
            case MemOp::Kind::Backoff:
                schedule_step(ctx, std::max<uint64_t>(ctx.rng.range(op.count, op.count2), 1));
                return;
            case MemOp::Kind::ExpBackoff: {
                Cycle d = ctx.rng.range(1, ctx.exp_window);
                ctx.exp_window = std::min<uint64_t>(ctx.exp_window * 2, 256);
                schedule_step(ctx, d);
                return;
            }
            case MemOp::Kind::Ld:
            case MemOp::Kind::LdLinked:
            case MemOp::Kind::St:
            case MemOp::Kind::StCond:
                break;
        }
        if (cfg_.line_of(op.addr) == cfg_.token_line)
            throw InvariantViolation("program touched the token line");
        CoreCtx* pc = &ctx;
        switch (op.kind) {
            case MemOp::Kind::Ld:
                kernel_.schedule(cfg_.l1_hit_latency, [this, pc, op] { exec_ld(*pc, op.addr); });
                return;
            case MemOp::Kind::LdLinked: {
                bool starts = !ctx.tx.active();
                Cycle d = cfg_.l1_hit_latency;
                if (starts && cfg_.fp_mechanism == FpMechanism::Token) d += 1;  // token start check
                kernel_.schedule(d, [this, pc, op, starts] { exec_ll(*pc, op.addr, starts); });
                return;
            }
            case MemOp::Kind::St:
                kernel_.schedule(cfg_.l1_hit_latency, [this, pc, op] { exec_st(*pc, op.addr, op.value); });
                return;
            case MemOp::Kind::StCond:
                kernel_.schedule(cfg_.l1_hit_latency, [this, pc, op] { exec_sc(*pc, op.addr, op.value); });
                return;
            default:
                return;
        }
    }

    // ---- instruction execution ----

    void exec_ld(CoreCtx& ctx, Addr addr) {
        Addr line = cfg_.line_of(addr);
        uint32_t wi = cfg_.word_index(addr);
        if (ctx.tx.active() && !ctx.tx.doomed()) {
            const Tshr* t = ctx.tx.tshrs.find_valid(line);
            if (t && t->write_set) {  // forward own buffered store
                ctx.obs.last_load = t->data[wi];
                complete(ctx);
                return;
            }
        }
        CacheEntry* e = ctx.l1.find(line);
        if (e) {
            ctx.l1.touch(*e);
            ctx.obs.last_load = e->data[wi];
            complete(ctx);
            return;
        }
        CoreCtx* pc = &ctx;
        with_line_any(ctx, line, true, [this, pc, addr] {
            pc->obs.last_load = pc->l1.read_word(addr);
            complete(*pc);
        });
    }

    void exec_ll(CoreCtx& ctx, Addr addr, bool starts) {
        if (starts) {
            start_tx(ctx);
            if (cfg_.fp_mechanism == FpMechanism::Token) {
                if (ctx.tx.token.held) {
                    set_privileged(ctx, true);
                } else if (ctx.tx.streak.saturated()) {
                    // Proactive grab: request the token and hold the pipeline
                    // for a bounded window hoping it arrives.
                    if (!ctx.tx.token.outstanding) request_token(ctx);
                    else ctx.tx.token.request_tx_serial = ctx.tx.tx_serial;
                    CoreCtx* pc = &ctx;
                    ctx.waiting_token = true;
                    ctx.token_resume = [this, pc, addr] { ll_access(*pc, addr); };
                    uint64_t serial = ctx.tx.tx_serial;
                    kernel_.schedule(cfg_.token_wait_window, [this, pc, serial] {
                        if (pc->waiting_token && pc->tx.tx_serial == serial) {
                            pc->waiting_token = false;
                            auto r = std::move(pc->token_resume);
                            pc->token_resume = nullptr;
                            r();
                        }
                    });
                    return;
                }
            }
        }
        ll_access(ctx, addr);
    }

    void ll_access(CoreCtx& ctx, Addr addr) {
        Addr line = cfg_.line_of(addr);
        uint32_t wi = cfg_.word_index(addr);
        CoreCtx* pc = &ctx;
        if (ctx.tx.doomed()) {  // runs on as a plain load
            with_line_any(ctx, line, true, [this, pc, addr] {
                pc->obs.last_load = pc->l1.read_word(addr);
                complete(*pc);
            });
            return;
        }
        Tshr* t = ctx.tx.tshrs.find_valid(line);
        if (t) {
            if (t->write_set) {
                ctx.obs.last_load = t->data[wi];
            } else {
                CacheEntry* e = ctx.l1.find(line);
                if (!e) throw InvariantViolation("tracked line missing from L1");
                ctx.l1.touch(*e);
                ctx.obs.last_load = e->data[wi];
            }
            complete(ctx);
            return;
        }
        if (!ctx.tx.tshrs.has_free()) {
            doom(ctx, AbortKind::TshrOverflow, !ctx.tx.sc_executed);
            with_line_any(ctx, line, true, [this, pc, addr] {
                pc->obs.last_load = pc->l1.read_word(addr);
                complete(*pc);
            });
            return;
        }
        with_line_shared(ctx, line, true, [this, pc, addr, line] {
            if (pc->tx.doomed()) {
                pc->obs.last_load = pc->l1.read_word(addr);
                complete(*pc);
                return;
            }
            if (pc->tx.tshrs.matches_leftover(line)) pc->tx.repeat.note_match();
            pc->tx.tshrs.allocate(line, false);
            note_tshr_highwater(*pc);
            maybe_engage_token(*pc);
            pc->obs.last_load = pc->l1.read_word(addr);
            complete(*pc);
        });
    }

    void exec_st(CoreCtx& ctx, Addr addr, Word val) {
        if (!ctx.tx.active()) {
            CoreCtx* pc = &ctx;
            with_line_exclusive(ctx, cfg_.line_of(addr), true, [this, pc, addr, val] {
                CacheEntry* e = pc->l1.find(cfg_.line_of(addr));
                if (!e) throw InvariantViolation("exclusive line missing after upgrade");
                e->data[cfg_.word_index(addr)] = val;
                e->state = LineState::Modified;
                pc->l1.touch(*e);
                log_.push_back({pc->id, kernel_.now(), order_seq_++, false, {}, {{addr, val}}});
                complete(*pc);
            });
            return;
        }
        if (ctx.tx.doomed()) {  // buffered store of a dead transaction: dropped
            complete(ctx);
            return;
        }
        CoreCtx* pc = &ctx;
        tx_store(ctx, addr, val, true, [this, pc] { complete(*pc); });
    }

    // Buffer a transactional store into the TSHRs, allocating or promoting
    // as needed. k runs once the store is buffered (or dropped by a doom).
    void tx_store(CoreCtx& ctx, Addr addr, Word val, bool pre_sc, std::function<void()> k) {
        Addr line = cfg_.line_of(addr);
        uint32_t wi = cfg_.word_index(addr);
        Tshr* t = ctx.tx.tshrs.find_valid(line);
        if (t && t->write_set) {
            t->data[wi] = val;
            t->written_mask |= 1ull << wi;
            k();
            return;
        }
        CoreCtx* pc = &ctx;
        if (t) {  // promote read -> write: snapshot the line now
            auto promote = [this, pc, line, wi, val, k] {
                if (pc->tx.doomed()) { k(); return; }
                Tshr* t2 = pc->tx.tshrs.find_valid(line);
                CacheEntry* e = pc->l1.find(line);
                if (!t2 || !e) throw InvariantViolation("promoted line missing");
                t2->data = e->data;
                t2->write_set = true;
                t2->data[wi] = val;
                t2->written_mask |= 1ull << wi;
                k();
            };
            if (cfg_.eager_exclusivity) with_line_exclusive(ctx, line, pre_sc, promote);
            else promote();
            return;
        }
        if (!ctx.tx.tshrs.has_free()) {
            doom(ctx, AbortKind::TshrOverflow, pre_sc);
            k();
            return;
        }
        auto alloc = [this, pc, line, wi, val, k] {
            if (pc->tx.doomed()) { k(); return; }
            if (pc->tx.tshrs.matches_leftover(line)) pc->tx.repeat.note_match();
            Tshr& nt = pc->tx.tshrs.allocate(line, true);
            note_tshr_highwater(*pc);
            maybe_engage_token(*pc);
            CacheEntry* e = pc->l1.find(line);
            if (!e) throw InvariantViolation("allocated line missing from L1");
            nt.data = e->data;
            nt.data[wi] = val;
            nt.written_mask = 1ull << wi;
            k();
        };
        if (cfg_.eager_exclusivity) with_line_exclusive(ctx, line, pre_sc, alloc);
        else with_line_shared(ctx, line, pre_sc, alloc);
    }

    void exec_sc(CoreCtx& ctx, Addr addr, Word val) {
        if (!ctx.tx.active()) {  // SC without a transaction always fails
            ctx.obs.last_sc = 0;
            ctx.obs.last_sc_cycle = kernel_.now();
            complete(ctx);
            return;
        }
        ctx.tx.sc_executed = true;
        if (ctx.tx.doomed()) {  // deferred abort lands here
            abort_and_fail(ctx);
            return;
        }
        CoreCtx* pc = &ctx;
        tx_store(ctx, addr, val, false, [this, pc] {
            if (pc->tx.doomed()) {
                abort_and_fail(*pc);
                return;
            }
            begin_excl_acq(*pc);
        });
    }

    // ---- transaction lifecycle ----

    void start_tx(CoreCtx& ctx) {
        ++ctx.tx.tx_serial;
        ctx.tx.tx_start_cycle = kernel_.now();
        ctx.tx.set_state(TxState::InsideNonAbort);
        ctx.tx.repeat.reset();
        ctx.tx.pending_cause.reset();
        ctx.tx.sc_executed = false;
        ctx.excl_outstanding = 0;
        ctx.excl_aborted = false;
        ctx.excl_pending.clear();
        ctx.engaged_this_tx = false;
        TxAttempt a;
        a.core = ctx.id;
        a.start = kernel_.now();
        attempts_.push_back(a);
        ctx.attempt_index = attempts_.size() - 1;
    }

    void doom(CoreCtx& ctx, AbortKind kind, bool pre_sc) {
        switch (ctx.tx.state()) {
            case TxState::InsideNonAbort:
                ctx.tx.pending_cause = AbortCause{kind, pre_sc};
                ctx.tx.set_state(TxState::InsideAbort);
                break;
            case TxState::ExclAcq: {
                if (!ctx.tx.pending_cause) ctx.tx.pending_cause = AbortCause{kind, pre_sc};
                ctx.excl_aborted = true;
                // Withdraw upgrades the directory has not dispatched yet:
                // their invalidation fans would kill live transactions on
                // behalf of a dead one, and under contention those stale
                // fans dominate the traffic. Requests already processing
                // (or still in flight to the directory) grant normally and
                // are absorbed below.
                if (cfg_.cancel_stale_upgrades) {
                    for (auto it = ctx.excl_pending.begin(); it != ctx.excl_pending.end();) {
                        if (dir_.cancel_exclusive(ctx.id, *it)) {
                            it = ctx.excl_pending.erase(it);
                            --ctx.excl_outstanding;
                        } else {
                            ++it;
                        }
                    }
                    if (ctx.excl_outstanding == 0) abort_and_fail(ctx);
                }
                break;
            }
            case TxState::InsideAbort:
                break;  // first event decides the cause
            default:
                throw InvariantViolation("doom outside a transaction");
        }
    }

    void begin_excl_acq(CoreCtx& ctx) {
        // Every stall we hold must be for a line we already have exclusively
        // (privileged or commit-phase deferral); a stall on a still-Shared
        // line would sit ahead of our own upgrade in the directory's queue
        // and deadlock it. decide() nacks those instead of stalling.
        for (const StalledReq& s : ctx.l1.stall_queue)
            if (s.line != cfg_.token_line && ctx.l1.state(s.line) == LineState::Shared)
                throw InvariantViolation("stalled request held for a Shared line at SC");
        std::vector<Addr> ws = ctx.tx.tshrs.write_lines();
        std::vector<Addr> targets;
        for (Addr l : ws) {
            LineState st = ctx.l1.state(l);
            if (!cfg_.eager_exclusivity && st != LineState::Shared)
                throw InvariantViolation("write-set line not Shared at acquisition");
            if (st == LineState::Shared) targets.push_back(l);
        }
        if (targets.empty()) {  // eager mode: everything already exclusive
            enter_commit(ctx);
            return;
        }
        ctx.tx.set_state(TxState::ExclAcq);
        if (cfg_.fp_mechanism == FpMechanism::SortedSeq && ctx.tx.repeat.flagged()) {
            ctx.tx.seq.active = true;
            ctx.tx.seq.order = targets;
            std::sort(ctx.tx.seq.order.begin(), ctx.tx.seq.order.end());
            ctx.tx.seq.next_index = 0;
            ++stats_.fp.seq_rounds;
            issue_next_seq(ctx);
        } else {
            ctx.excl_outstanding = static_cast<uint32_t>(targets.size());
            for (Addr l : targets) issue_upgrade(ctx, l);
        }
    }

    void issue_next_seq(CoreCtx& ctx) {
        Addr l = ctx.tx.seq.order[ctx.tx.seq.next_index++];
        ctx.excl_outstanding = 1;
        issue_upgrade(ctx, l);
    }

    void issue_upgrade(CoreCtx& ctx, Addr l) {
        ctx.excl_pending.push_back(l);
        CoreCtx* pc = &ctx;
        dir_.get_exclusive(ctx.id, l, [this, pc, l](std::vector<Word> data) {
            on_upgrade_grant(*pc, l, std::move(data));
        }, ctx.tx.privileged);
    }

    void on_upgrade_grant(CoreCtx& ctx, Addr l, std::vector<Word> data) {
        auto pi = std::find(ctx.excl_pending.begin(), ctx.excl_pending.end(), l);
        if (pi != ctx.excl_pending.end()) ctx.excl_pending.erase(pi);
        CacheEntry* e = ctx.l1.find(l);
        if (e) {
            e->state = LineState::Exclusive;
            e->data = std::move(data);
            ctx.l1.touch(*e);
        }
        // Absent: the transaction died and the line was surrendered while
        // the grant was in flight; the directory's stale-owner handling
        // covers the rest, so don't reinstall it.
        --ctx.excl_outstanding;
        if (ctx.excl_outstanding > 0) return;
        if (ctx.excl_aborted) {  // all in-flight grants absorbed; abort now
            abort_and_fail(ctx);
            return;
        }
        if (ctx.tx.seq.active && ctx.tx.seq.next_index < ctx.tx.seq.order.size()) {
            issue_next_seq(ctx);
            return;
        }
        enter_commit(ctx);
    }

    void enter_commit(CoreCtx& ctx) {
        ctx.tx.set_state(TxState::CommitPhase);
        attempts_[ctx.attempt_index].commit_start = kernel_.now();
        Cycle dur = static_cast<Cycle>(ctx.tx.tshrs.write_count()) * cfg_.commit_write_latency;
        CoreCtx* pc = &ctx;
        kernel_.schedule(dur, [this, pc] { finish_commit(*pc); });
    }

    void finish_commit(CoreCtx& ctx) {
        std::vector<std::pair<Addr, Word>> writes;
        for (const Tshr& t : ctx.tx.tshrs.entries()) {
            if (!t.valid || !t.write_set) continue;
            CacheEntry* e = ctx.l1.find(t.line);
            if (!e) throw InvariantViolation("write-set line missing at commit");
            e->data = t.data;
            e->state = LineState::Modified;
            ctx.l1.touch(*e);
            for (uint32_t wi = 0; wi < cfg_.words_per_line(); ++wi)
                if (t.written_mask & (1ull << wi))
                    writes.push_back({t.line + static_cast<Addr>(wi) * kWordBytes, t.data[wi]});
        }
        log_.push_back({ctx.id, kernel_.now(), order_seq_++, true,
                        ctx.tx.tshrs.read_lines(), std::move(writes)});
        ++stats_.commits;
        trace_.txn(ctx.id, ctx.tx.tx_start_cycle, kernel_.now(), true, "-",
                   ctx.tx.tshrs.read_count(), ctx.tx.tshrs.write_count());
        TxAttempt& a = attempts_[ctx.attempt_index];
        a.end = kernel_.now();
        a.committed = true;
        a.flagged = ctx.tx.repeat.flagged();
        a.commit_end = kernel_.now();
        ctx.tx.streak.on_commit();
        set_privileged(ctx, false);
        ctx.tx.tshrs.end_transaction();
        ctx.tx.seq.reset();
        ctx.tx.pending_cause.reset();
        ctx.tx.sc_executed = false;
        ctx.tx.set_state(TxState::Outside);
        drain_stalls(ctx);
        dir_.clear_privileged(ctx.id);
        ctx.exp_window = 2;
        ctx.obs.last_sc = 1;
        ctx.obs.last_sc_cycle = kernel_.now();
        ++ctx.obs.commits;
        if (commit_hook_) commit_hook_(ctx.id);
        complete(ctx);
    }

    // Abort bookkeeping plus the failed-SC completion.
    void abort_and_fail(CoreCtx& ctx) {
        AbortCause cause = ctx.tx.pending_cause.value_or(AbortCause{AbortKind::InvalidateHit, false});
        stats_.note_abort(cause, cfg_.eager_exclusivity);
        trace_.txn(ctx.id, ctx.tx.tx_start_cycle, kernel_.now(), false, to_string(cause.kind),
                   ctx.tx.tshrs.read_count(), ctx.tx.tshrs.write_count());
        TxAttempt& a = attempts_[ctx.attempt_index];
        a.end = kernel_.now();
        a.committed = false;
        a.flagged = ctx.tx.repeat.flagged();
        a.cause = cause;
        ctx.tx.streak.on_abort();
        set_privileged(ctx, false);
        ctx.tx.tshrs.end_transaction();
        ctx.tx.seq.reset();
        ctx.tx.pending_cause.reset();
        ctx.tx.sc_executed = false;
        ctx.excl_outstanding = 0;
        ctx.excl_aborted = false;
        ctx.excl_pending.clear();
        ctx.tx.set_state(TxState::Outside);
        drain_stalls(ctx);
        dir_.clear_privileged(ctx.id);
        ctx.obs.last_sc = 0;
        ctx.obs.last_sc_cycle = kernel_.now();
        complete(ctx);
    }

    // ---- token forward progress ----

    void set_privileged(CoreCtx& ctx, bool on) {
        if (ctx.tx.privileged == on) return;
        ctx.tx.privileged = on;
        privileged_count_ += on ? 1 : -1;
        if (privileged_count_ > 1)
            throw InvariantViolation("two token-privileged transactions at once");
        if (on && ctx.attempt_index != SIZE_MAX)
            attempts_[ctx.attempt_index].privileged_used = true;
    }

    void request_token(CoreCtx& ctx) {
        ctx.tx.token.outstanding = true;
        ctx.tx.token.request_tx_serial = ctx.tx.tx_serial;
        ++stats_.fp.token_requests;
        CoreCtx* pc = &ctx;
        dir_.get_exclusive(ctx.id, cfg_.token_line, [this, pc](std::vector<Word>) {
            token_granted(*pc);
        });
    }

    void token_granted(CoreCtx& ctx) {
        ctx.tx.token.held = true;
        ctx.tx.token.outstanding = false;
        bool same_tx = ctx.tx.token.request_tx_serial == ctx.tx.tx_serial;
        TxState st = ctx.tx.state();
        if (same_tx && (st == TxState::InsideNonAbort || st == TxState::ExclAcq)) {
            set_privileged(ctx, true);
            ++stats_.fp.token_grants_in_time;
        }
        // A late grant just leaves the token parked here for the next start.
        if (ctx.waiting_token) {
            ctx.waiting_token = false;
            auto r = std::move(ctx.token_resume);
            ctx.token_resume = nullptr;
            r();
        }
    }

    void maybe_engage_token(CoreCtx& ctx) {
        if (cfg_.fp_mechanism != FpMechanism::Token) return;
        if (!ctx.tx.repeat.flagged() || ctx.engaged_this_tx) return;
        if (ctx.tx.state() != TxState::InsideNonAbort) return;
        ctx.engaged_this_tx = true;
        if (ctx.tx.token.held) {
            set_privileged(ctx, true);
            return;
        }
        if (!ctx.tx.token.outstanding) request_token(ctx);
        else ctx.tx.token.request_tx_serial = ctx.tx.tx_serial;  // re-arm for this attempt
    }

    // ---- incoming coherence ----

    void deliver(CoreId target, bool invalidate, Addr line, ReplyFn reply) {
        CoreCtx& ctx = *cores_[target];
        ReqAction act = ctx.tx.decide(line, invalidate, ctx.l1.state(line));
        if (act == ReqAction::Respond) {
            do_respond(ctx, invalidate, line, reply);
            return;
        }
        if (act == ReqAction::RespondAndAbort) {
            doom(ctx, invalidate ? AbortKind::InvalidateHit : AbortKind::DowngradeHit,
                 !ctx.tx.sc_executed);
            do_respond(ctx, invalidate, line, reply);
            return;
        }
        if (act == ReqAction::Nack) {  // keep the copy; the directory parks the request
            ++stats_.fp.nacked_msgs;
            reply({std::nullopt, true});
            return;
        }
        ++stats_.fp.stalled_msgs;
        StalledReq s;
        s.invalidate = invalidate;
        s.line = line;
        s.reply = std::move(reply);
        s.stalled_at = kernel_.now();
        s.pre_sc = !ctx.tx.sc_executed;
        s.id = ctx.l1.next_stall_id++;
        s.bounded = ctx.tx.seq.active && ctx.tx.state() == TxState::ExclAcq;
        bool bounded = s.bounded;
        uint64_t id = s.id;
        ctx.l1.stall_queue.push_back(std::move(s));
        if (bounded)
            arm_seq_watchdog(ctx, id, ctx.l1.stall_generation, ctx.tx.seq.next_index);
    }

    // A sorted-seq stall is insurance against a wedged holder, not a license
    // to kill one that is getting somewhere: at each deadline the stall is
    // released (dooming the holder) only if the holder's acquisition has not
    // advanced since the last check. A holder that reached the commit phase
    // drains the stall itself shortly.
    void arm_seq_watchdog(CoreCtx& ctx, uint64_t id, uint64_t gen, size_t progress) {
        CoreCtx* pc = &ctx;
        kernel_.schedule(cfg_.seq_stall_bound, [this, pc, id, gen, progress] {
            if (pc->l1.stall_generation != gen) return;       // already drained
            if (pc->tx.state() == TxState::CommitPhase) return;  // drain answers it soon
            auto& q = pc->l1.stall_queue;
            auto it = std::find_if(q.begin(), q.end(),
                                   [id](const StalledReq& r) { return r.id == id; });
            if (it == q.end()) return;
            if (pc->tx.state() == TxState::ExclAcq && pc->tx.seq.next_index > progress) {
                arm_seq_watchdog(*pc, id, gen, pc->tx.seq.next_index);
                return;
            }
            StalledReq r = std::move(*it);
            q.erase(it);
            if (pc->tx.state() == TxState::ExclAcq)
                doom(*pc, r.invalidate ? AbortKind::InvalidateHit : AbortKind::DowngradeHit, false);
            do_respond(*pc, r.invalidate, r.line, r.reply);
        });
    }

    void do_respond(CoreCtx& ctx, bool invalidate, Addr line, ReplyFn& reply) {
        if (line == cfg_.token_line) {  // the token slot, never in the L1 array
            if (invalidate) ctx.tx.token.held = false;
            reply({std::nullopt, false});
            return;
        }
        CacheEntry* e = ctx.l1.find(line);
        if (!e) {  // silently evicted; the directory copes
            reply({std::nullopt, false});
            return;
        }
        Directory::ReplyData data;
        if (e->state == LineState::Modified) data = e->data;
        if (invalidate) e->state = LineState::Invalid;
        else if (e->state != LineState::Shared) e->state = LineState::Shared;
        reply({std::move(data), false});
    }

    void drain_stalls(CoreCtx& ctx) {
        ++ctx.l1.stall_generation;
        std::deque<StalledReq> q;
        q.swap(ctx.l1.stall_queue);
        for (StalledReq& s : q) do_respond(ctx, s.invalidate, s.line, s.reply);
    }

    // ---- line state machinery (blocking, continuation passing) ----

    // Line present in any state (plain and doomed accesses).
    void with_line_any(CoreCtx& ctx, Addr line, bool pre_sc, std::function<void()> k) {
        CacheEntry* e = ctx.l1.find(line);
        if (e) {
            ctx.l1.touch(*e);
            k();
            return;
        }
        CoreCtx* pc = &ctx;
        make_room(ctx, line, pre_sc, [this, pc, line, k = std::move(k)] {
            dir_.get_shared(pc->id, line, [this, pc, line, k](std::vector<Word> data) {
                pc->l1.install(line, LineState::Shared, std::move(data));
                k();
            }, pc->tx.privileged);
        });
    }

    // Line present and exactly Shared (transactional accesses). A local
    // Exclusive/Modified copy goes through a blocking self-downgrade first.
    void with_line_shared(CoreCtx& ctx, Addr line, bool pre_sc, std::function<void()> k) {
        CacheEntry* e = ctx.l1.find(line);
        if (e && e->state == LineState::Shared) {
            ctx.l1.touch(*e);
            k();
            return;
        }
        CoreCtx* pc = &ctx;
        if (e) {  // Exclusive or Modified: demote; the entry answers coherence meanwhile
            Directory::ReplyData wb;
            if (e->state == LineState::Modified) wb = e->data;
            dir_.self_downgrade(ctx.id, line, std::move(wb), [this, pc, line, pre_sc, k = std::move(k)] {
                CacheEntry* e2 = pc->l1.find(line);
                if (!e2) {  // raced away during the round trip; fetch fresh
                    with_line_shared(*pc, line, pre_sc, std::move(k));
                    return;
                }
                e2->state = LineState::Shared;
                pc->l1.touch(*e2);
                k();
            });
            return;
        }
        make_room(ctx, line, pre_sc, [this, pc, line, k = std::move(k)] {
            dir_.get_shared(pc->id, line, [this, pc, line, k](std::vector<Word> data) {
                pc->l1.install(line, LineState::Shared, std::move(data));
                k();
            }, pc->tx.privileged);
        });
    }

    // Line present Exclusive or Modified (plain stores, eager-mode buffering).
    void with_line_exclusive(CoreCtx& ctx, Addr line, bool pre_sc, std::function<void()> k) {
        CacheEntry* e = ctx.l1.find(line);
        if (e && (e->state == LineState::Exclusive || e->state == LineState::Modified)) {
            ctx.l1.touch(*e);
            k();
            return;
        }
        CoreCtx* pc = &ctx;
        if (e) {  // Shared: upgrade in place
            dir_.get_exclusive(ctx.id, line, [this, pc, line, pre_sc, k = std::move(k)](std::vector<Word> data) {
                CacheEntry* e2 = pc->l1.find(line);
                if (e2) {
                    e2->state = LineState::Exclusive;
                    e2->data = std::move(data);
                    pc->l1.touch(*e2);
                    k();
                    return;
                }
                // invalidated while upgrading; install fresh
                make_room(*pc, line, pre_sc, [this, pc, line, k, data = std::move(data)] {
                    pc->l1.install(line, LineState::Exclusive, data);
                    k();
                });
            }, ctx.tx.privileged);
            return;
        }
        make_room(ctx, line, pre_sc, [this, pc, line, k = std::move(k)] {
            dir_.get_exclusive(pc->id, line, [this, pc, line, k](std::vector<Word> data) {
                pc->l1.install(line, LineState::Exclusive, std::move(data));
                k();
            }, pc->tx.privileged);
        });
    }

    // Frees a way in the target set. Replacement never displaces a line the
    // running transaction tracks; if nothing else is left, that is a
    // Capacity abort and the fill proceeds unconstrained (the transaction is
    // doomed anyway). A Modified victim goes back over a blocking writeback;
    // it keeps answering coherence from the cache until the ack returns.
    void make_room(CoreCtx& ctx, Addr line, bool pre_sc, std::function<void()> k) {
        if (ctx.l1.free_way(line)) {
            k();
            return;
        }
        const TshrFile* pinned =
            (ctx.tx.active() && !ctx.tx.doomed()) ? &ctx.tx.tshrs : nullptr;
        CacheEntry* vic = ctx.l1.choose_victim(line, pinned);
        if (!vic) {
            doom(ctx, AbortKind::Capacity, pre_sc);
            vic = ctx.l1.choose_victim(line, nullptr);
            if (!vic) throw InvariantViolation("no victim even unconstrained");
        }
        if (vic->state == LineState::Modified) {
            Addr vline = vic->line;
            std::vector<Word> data = vic->data;
            CoreCtx* pc = &ctx;
            dir_.evict_writeback(ctx.id, vline, std::move(data), [pc, vline, k = std::move(k)] {
                CacheEntry* e2 = pc->l1.find(vline);
                if (e2) e2->state = LineState::Invalid;
                k();
            });
            return;
        }
        vic->state = LineState::Invalid;  // clean: silent
        k();
    }

    // ---- invariants ----

    // Runs right after every directory grant: a line has at most one
    // exclusive holder, and never an exclusive holder plus sharers.
    void check_single_writer(Addr line) {
        int excl = 0, shared = 0;
        if (line == cfg_.token_line)
            for (auto& c : cores_) excl += c->tx.token.held ? 1 : 0;
        for (auto& c : cores_) {
            LineState st = c->l1.state(line);
            if (st == LineState::Exclusive || st == LineState::Modified) ++excl;
            else if (st == LineState::Shared) ++shared;
        }
        if (excl > 1) throw InvariantViolation("two exclusive holders of one line");
        if (excl == 1 && shared > 0)
            throw InvariantViolation("exclusive holder coexists with sharers");
    }

    void note_tshr_highwater(CoreCtx& ctx) {
        uint32_t v = static_cast<uint32_t>(ctx.tx.tshrs.valid_count());
        if (v > stats_.max_tshr_used) stats_.max_tshr_used = v;
    }

    SimConfig cfg_;
    EventQueue kernel_;
    MemoryImage mem_;
    TraceSink trace_;
    Directory dir_;
    std::vector<std::unique_ptr<CoreCtx>> cores_;
    std::function<void(CoreId)> commit_hook_;

    StatsRecord stats_;
    std::vector<TxLogEntry> log_;
    std::vector<TxAttempt> attempts_;
    uint64_t order_seq_ = 0;
    int privileged_count_ = 0;
    int done_count_ = 0;
    bool all_done_ = false;
    Cycle done_cycle_ = 0;
    bool ran_ = false;
};

}  // namespace htmsim
