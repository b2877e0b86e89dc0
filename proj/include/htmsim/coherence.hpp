#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "htmsim/config.hpp"
#include "htmsim/event_queue.hpp"
#include "htmsim/memory.hpp"
#include "htmsim/trace.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

// Flat directory co-located with the L2. Requests for the same line are
// serviced one at a time (FIFO); requests for different lines proceed
// independently. Invalidations are acknowledgement-counted: an exclusive
// grant is sent only after every sharer has answered, and a stalled answer
// (HTM deferral) delays the grant by exactly the stall time.
//
// Sharer/owner bookkeeping is conservative: clean evictions are silent, so
// an Invalidate or Downgrade can reach a cache that no longer holds the
// line; the cache answers with a plain Ack and the directory falls back to
// its own (current, because the line was clean) memory copy.
//
// Token privilege shows up here in two ways. Requests from the privileged
// core jump to the head of a line's queue. And a nack answer to an
// Invalidate parks the whole request: it goes back in the queue and the
// line stops dispatching for everyone except the nacking core until
// clear_privileged says its transaction is over. Both keep the privileged
// core's own upgrades flowing while everyone else waits it out.
class Directory {
public:
    using ReplyData = std::optional<std::vector<Word>>;
    // Delivers one Invalidate/Downgrade to an L1; the L1 answers through the
    // reply callback (immediately or after a stall).
    using DeliverFn = std::function<void(CoreId target, bool invalidate, Addr line,
                                         std::function<void(FanReply)> reply)>;

    Directory(const SimConfig& cfg, EventQueue& kernel, MemoryImage& mem, TraceSink& trace)
        : cfg_(&cfg), kernel_(&kernel), mem_(&mem), trace_(&trace),
          jrng_(cfg.seed * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull),
          chan_floor_(static_cast<size_t>(cfg.num_cores + 1) * (cfg.num_cores + 1), 0) {}

    void set_deliver(DeliverFn f) { deliver_ = std::move(f); }
    void set_post_grant_check(std::function<void(Addr)> f) { post_grant_check_ = std::move(f); }
    // Asks whether a core is still token-privileged. A nack answer races the
    // nacker's own commit by one hop; parking must re-check on arrival or the
    // block could be installed after its clear_privileged already ran.
    void set_privilege_probe(std::function<bool(CoreId)> f) { privilege_probe_ = std::move(f); }

    // All four entry points are called at the requester's send time and
    // account one hop before the request reaches the directory.

    void get_shared(CoreId c, Addr line, std::function<void(std::vector<Word>)> grant,
                    bool privileged = false) {
        trace_->msg(kernel_->now(), "GetShared", line, core_name(c), "dir");
        Request r;
        r.kind = Kind::GetShared;
        r.core = c;
        r.grant = std::move(grant);
        r.privileged = privileged;
        send_to_dir(line, std::move(r));
    }

    void get_exclusive(CoreId c, Addr line, std::function<void(std::vector<Word>)> grant,
                       bool privileged = false) {
        trace_->msg(kernel_->now(), "GetExclusive", line, core_name(c), "dir");
        Request r;
        r.kind = Kind::GetExclusive;
        r.core = c;
        r.grant = std::move(grant);
        r.privileged = privileged;
        send_to_dir(line, std::move(r));
    }

    // Transactional accesses keep their lines Shared; a locally Exclusive or
    // Modified line is demoted through the directory first.
    void self_downgrade(CoreId c, Addr line, ReplyData writeback, std::function<void()> ack) {
        trace_->msg(kernel_->now(), writeback ? "WritebackData" : "Ack", line, core_name(c), "dir");
        Request r;
        r.kind = Kind::SelfDowngrade;
        r.core = c;
        r.writeback = std::move(writeback);
        r.ack = std::move(ack);
        send_to_dir(line, std::move(r));
    }

    void evict_writeback(CoreId c, Addr line, std::vector<Word> data, std::function<void()> ack) {
        trace_->msg(kernel_->now(), "WritebackData", line, core_name(c), "dir");
        Request r;
        r.kind = Kind::EvictWriteback;
        r.core = c;
        r.writeback = std::move(data);
        r.ack = std::move(ack);
        send_to_dir(line, std::move(r));
    }

    // Withdraws a queued GetExclusive that has not started processing (the
    // issuing transaction died first). A request already dispatched or still
    // in flight to the directory cannot be withdrawn; the caller keeps
    // waiting for that grant and absorbs it. Dead requests otherwise fan
    // invalidations that kill live transactions for nothing.
    bool cancel_exclusive(CoreId c, Addr line) {
        auto it = lines_.find(line);
        if (it == lines_.end()) return false;
        auto& pending = it->second.pending;
        for (auto p = pending.begin(); p != pending.end(); ++p) {
            if (p->kind == Kind::GetExclusive && p->core == c) {
                trace_->msg(kernel_->now(), "CancelExclusive", line, core_name(c), "dir");
                pending.erase(p);
                return true;
            }
        }
        return false;
    }

    // The privileged transaction on `c` committed or aborted: lines it nacked
    // on resume dispatching for everyone.
    void clear_privileged(CoreId c) {
        for (size_t i = 0; i < blocked_lines_.size();) {
            Addr line = blocked_lines_[i];
            DirLine& dl = lines_[line];
            if (dl.blocked_by != c) { ++i; continue; }
            dl.blocked_by = -1;
            blocked_lines_.erase(blocked_lines_.begin() + static_cast<ptrdiff_t>(i));
            dispatch(line);
        }
    }

    bool quiesced() const {
        if (fanout_sent_ != fanout_answered_) return false;
        for (auto& kv : lines_)
            if (kv.second.busy || !kv.second.pending.empty()) return false;
        return true;
    }

    uint64_t fanout_sent() const { return fanout_sent_; }
    uint64_t fanout_answered() const { return fanout_answered_; }

    struct Snapshot {
        std::vector<CoreId> sharers;
        CoreId owner = -1;
    };
    Snapshot snapshot(Addr line) const {
        auto it = lines_.find(line);
        if (it == lines_.end()) return {};
        return {it->second.sharers, it->second.owner};
    }

private:
    enum class Kind : uint8_t { GetShared, GetExclusive, SelfDowngrade, EvictWriteback };

    struct Request {
        Kind kind = Kind::GetShared;
        CoreId core = -1;
        bool privileged = false;  // requester holds the token: queue-jumps
        ReplyData writeback;
        std::function<void(std::vector<Word>)> grant;
        std::function<void()> ack;
    };

    struct DirLine {
        std::vector<CoreId> sharers;  // kept sorted
        CoreId owner = -1;
        bool busy = false;
        CoreId blocked_by = -1;  // nacking core; only its requests dispatch
        std::deque<Request> pending;
    };

    // Transit delay for one message on the (src, dst) channel: one hop plus
    // 0..hop_jitter cycles of network variability. Each channel delivers in
    // FIFO order, so a message never overtakes an earlier one between the
    // same endpoints (grants and the invalidates chasing them stay ordered);
    // messages from different sources race freely.
    Cycle transit(int src, int dst) {
        Cycle t = kernel_->now() + cfg_->hop_latency;
        if (cfg_->hop_jitter)
            t += std::uniform_int_distribution<Cycle>(0, cfg_->hop_jitter)(jrng_);
        Cycle& floor = chan_floor_[static_cast<size_t>(src) * (cfg_->num_cores + 1) + dst];
        if (t <= floor) t = floor + 1;
        floor = t;
        return t - kernel_->now();
    }

    int ep_dir() const { return cfg_->num_cores; }

    void send_to_dir(Addr line, Request r) {
        kernel_->schedule(transit(r.core, ep_dir()),
                          [this, line, r = std::make_shared<Request>(std::move(r))]() mutable {
                              arrive(line, std::move(*r));
                          });
    }

    void arrive(Addr line, Request r) {
        DirLine& dl = lines_[line];
        bool parked = dl.blocked_by >= 0 && r.core != dl.blocked_by;
        if (dl.busy || parked) {
            if (r.privileged) dl.pending.push_front(std::move(r));
            else dl.pending.push_back(std::move(r));
            return;
        }
        begin(line, std::move(r));
    }

    // Service start. Requests that need no fan and no writeback are served
    // pipelined: directory state updates here, at the serialization point,
    // the line is held only for the tag occupancy, and the data response is
    // charged the full array latency. Requests that must fan keep the line
    // busy end to end; their fans may never leave before an earlier grant,
    // which holds because a successor's earliest send is
    // begin + occupancy + jitter + l2 > this grant's begin + l2 + jitter.
    void begin(Addr line, Request r) {
        DirLine& dl = lines_[line];
        dl.busy = true;
        Cycle jit = service_jitter();
        if (try_fast(line, dl, r, jit)) {
            kernel_->schedule(cfg_->dir_occupancy + jit, [this, line] {
                lines_[line].busy = false;
                dispatch(line);
            });
            return;
        }
        kernel_->schedule(cfg_->l2_latency + jit,
                          [this, line, r = std::make_shared<Request>(std::move(r))]() mutable {
                              process(line, std::move(*r));
                          });
    }

    // Claims requests the directory can answer from its own state: reads of
    // a line with no exclusive copy, and upgrades nobody else holds. State
    // mutates now; later services (serialized behind the occupancy window)
    // see it. The response data is also read now, the snapshot at this
    // request's place in the service order.
    bool try_fast(Addr line, DirLine& dl, Request& r, Cycle jit) {
        if (r.kind == Kind::GetShared && (dl.owner < 0 || dl.owner == r.core)) {
            if (dl.owner == r.core) dl.owner = -1;  // silently lost clean Exclusive
            add_sharer(dl, r.core);
            send_grant_later(line, r, /*exclusive=*/false, jit);
            return true;
        }
        if (r.kind == Kind::GetExclusive) {
            bool others = dl.owner >= 0 && dl.owner != r.core;
            for (CoreId s : dl.sharers)
                if (s != r.core) others = true;
            if (others) return false;
            dl.sharers.clear();
            dl.owner = r.core;
            send_grant_later(line, r, /*exclusive=*/true, jit);
            return true;
        }
        return false;
    }

    void send_grant_later(Addr line, Request& r, bool exclusive, Cycle jit) {
        std::vector<Word> data = mem_->read_line(line);
        CoreId c = r.core;
        kernel_->schedule(cfg_->l2_latency + jit,
                          [this, line, c, exclusive, grant = std::move(r.grant),
                           data = std::move(data)]() mutable {
            trace_->msg(kernel_->now(), exclusive ? "DataExclusive" : "DataShared",
                        line, "dir", core_name(c));
            Cycle d = transit(ep_dir(), c);
            kernel_->schedule(d, [grant = std::move(grant), data = std::move(data)]() mutable {
                grant(std::move(data));
            });
            if (post_grant_check_)
                kernel_->schedule(d, [this, line] { post_grant_check_(line); });
        });
    }

    Cycle service_jitter() {
        if (cfg_->l2_jitter == 0) return 0;
        return std::uniform_int_distribution<Cycle>(0, cfg_->l2_jitter)(jrng_);
    }

    void add_sharer(DirLine& dl, CoreId c) {
        auto it = std::lower_bound(dl.sharers.begin(), dl.sharers.end(), c);
        if (it == dl.sharers.end() || *it != c) dl.sharers.insert(it, c);
    }
    void remove_sharer(DirLine& dl, CoreId c) {
        auto it = std::lower_bound(dl.sharers.begin(), dl.sharers.end(), c);
        if (it != dl.sharers.end() && *it == c) dl.sharers.erase(it);
    }

    // One Invalidate or Downgrade to one cache, reply collected back at the
    // directory one hop after the cache answers.
    void fan_to(CoreId target, bool invalidate, Addr line, std::function<void(FanReply)> collect) {
        ++fanout_sent_;
        trace_->msg(kernel_->now(), invalidate ? "Invalidate" : "Downgrade", line, "dir", core_name(target));
        kernel_->schedule(transit(ep_dir(), target), [this, target, invalidate, line,
                                                      collect = std::move(collect)]() mutable {
            deliver_(target, invalidate, line,
                     [this, target, line, collect = std::move(collect)](FanReply fr) mutable {
                         trace_->msg(kernel_->now(),
                                     fr.nack ? "Nack" : (fr.data ? "WritebackData" : "Ack"),
                                     line, core_name(target), "dir");
                         kernel_->schedule(transit(target, ep_dir()),
                                           [this, collect = std::move(collect),
                                            fr = std::move(fr)]() mutable {
                                               ++fanout_answered_;
                                               collect(std::move(fr));
                                           });
                     });
        });
    }

    void grant_shared(Addr line, const Request& r) {
        DirLine& dl = lines_[line];
        add_sharer(dl, r.core);
        send_data(line, r, /*exclusive=*/false);
        finish(line);
    }

    void grant_exclusive(Addr line, const Request& r) {
        DirLine& dl = lines_[line];
        dl.sharers.clear();
        dl.owner = r.core;
        send_data(line, r, /*exclusive=*/true);
        finish(line);
    }

    // Data response plus the single-writer probe, scheduled for the same
    // cycle so the probe runs right after the requester has installed it.
    void send_data(Addr line, const Request& r, bool exclusive) {
        std::vector<Word> data = mem_->read_line(line);
        trace_->msg(kernel_->now(), exclusive ? "DataExclusive" : "DataShared",
                    line, "dir", core_name(r.core));
        Cycle d = transit(ep_dir(), r.core);
        kernel_->schedule(d, [grant = r.grant, data = std::move(data)]() mutable {
            grant(std::move(data));
        });
        if (post_grant_check_)
            kernel_->schedule(d, [this, line] { post_grant_check_(line); });
    }

    void grant_ack(Addr line, const Request& r) {
        trace_->msg(kernel_->now(), "Ack", line, "dir", core_name(r.core));
        Cycle d = transit(ep_dir(), r.core);
        kernel_->schedule(d, [ack = r.ack]() { ack(); });
        if (post_grant_check_)
            kernel_->schedule(d, [this, line] { post_grant_check_(line); });
        finish(line);
    }

    void finish(Addr line) {
        lines_[line].busy = false;
        dispatch(line);
    }

    void dispatch(Addr line) {
        DirLine& dl = lines_[line];
        if (dl.busy || dl.pending.empty()) return;
        auto it = dl.pending.begin();
        if (dl.blocked_by >= 0) {
            // Only the nacker's own requests run; they may sit behind others
            // (an upgrade sent before the token arrived), so search, don't
            // just test the front.
            it = std::find_if(dl.pending.begin(), dl.pending.end(),
                              [&dl](const Request& r) { return r.core == dl.blocked_by; });
            if (it == dl.pending.end()) return;
        }
        Request next = std::move(*it);
        dl.pending.erase(it);
        begin(line, std::move(next));
    }

    // A privileged target refused the Invalidate: put the request back in the
    // queue and stop dispatching this line for other cores until the
    // privileged transaction ends. Partial fan effects (other sharers already
    // invalidated, a dirty owner's data already applied) stand; the retry
    // recomputes its fan from the current sharer set. If the nacker's
    // transaction already ended while the nack was in flight, there is no
    // block to install and the retry proceeds at once.
    void park(Addr line, CoreId blocker, Request r) {
        trace_->msg(kernel_->now(), "Parked", line, "dir", core_name(r.core));
        DirLine& dl = lines_[line];
        bool still_privileged = privilege_probe_ && privilege_probe_(blocker);
        if (still_privileged && dl.blocked_by != blocker) {
            if (dl.blocked_by >= 0)
                throw InvariantViolation("line nacked by two different cores");
            dl.blocked_by = blocker;
            blocked_lines_.push_back(line);
        }
        dl.pending.push_back(std::move(r));
        dl.busy = false;
        dispatch(line);  // the blocker's own request may be waiting
    }

    void process(Addr line, Request r) {
        DirLine& dl = lines_[line];
        switch (r.kind) {
            case Kind::GetShared: {
                if (dl.owner >= 0 && dl.owner != r.core) {
                    CoreId o = dl.owner;
                    fan_to(o, /*invalidate=*/false, line,
                           [this, line, o, r = std::make_shared<Request>(std::move(r))](FanReply fr) {
                               if (fr.nack)
                                   throw InvariantViolation("nack on a Downgrade");
                               DirLine& dl2 = lines_[line];
                               if (fr.data) mem_->write_line(line, *fr.data);
                               if (dl2.owner == o) {
                                   dl2.owner = -1;
                                   add_sharer(dl2, o);
                               }
                               grant_shared(line, *r);
                           });
                    return;
                }
                if (dl.owner == r.core) dl.owner = -1;  // silently lost clean Exclusive
                grant_shared(line, r);
                return;
            }
            case Kind::GetExclusive: {
                std::vector<CoreId> targets = dl.sharers;
                if (dl.owner >= 0) targets.push_back(dl.owner);
                std::sort(targets.begin(), targets.end());
                targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
                targets.erase(std::remove(targets.begin(), targets.end(), r.core), targets.end());
                if (targets.empty()) {
                    grant_exclusive(line, r);
                    return;
                }
                auto rp = std::make_shared<Request>(std::move(r));
                auto remaining = std::make_shared<size_t>(targets.size());
                auto nacker = std::make_shared<CoreId>(-1);
                for (CoreId t : targets) {
                    fan_to(t, /*invalidate=*/true, line,
                           [this, line, t, rp, remaining, nacker](FanReply fr) {
                        DirLine& dl2 = lines_[line];
                        if (fr.nack) {
                            *nacker = t;  // kept its copy: still a sharer
                        } else {
                            if (fr.data && dl2.owner == t) mem_->write_line(line, *fr.data);
                            if (dl2.owner == t) dl2.owner = -1;
                            remove_sharer(dl2, t);
                        }
                        if (--*remaining == 0) {
                            if (*nacker >= 0) park(line, *nacker, std::move(*rp));
                            else grant_exclusive(line, *rp);
                        }
                    });
                }
                return;
            }
            case Kind::SelfDowngrade: {
                if (dl.owner == r.core) {
                    if (r.writeback) mem_->write_line(line, *r.writeback);
                    dl.owner = -1;
                    add_sharer(dl, r.core);
                }
                // Otherwise a Downgrade overtook us and already demoted the
                // line (and collected the dirty data); nothing to apply.
                grant_ack(line, r);
                return;
            }
            case Kind::EvictWriteback: {
                if (dl.owner == r.core) {
                    if (r.writeback) mem_->write_line(line, *r.writeback);
                    dl.owner = -1;
                } else {
                    remove_sharer(dl, r.core);
                }
                grant_ack(line, r);
                return;
            }
        }
    }

    const SimConfig* cfg_;
    EventQueue* kernel_;
    MemoryImage* mem_;
    TraceSink* trace_;
    DeliverFn deliver_;
    std::function<void(Addr)> post_grant_check_;
    std::function<bool(CoreId)> privilege_probe_;
    std::unordered_map<Addr, DirLine> lines_;
    std::vector<Addr> blocked_lines_;
    std::mt19937_64 jrng_;
    std::vector<Cycle> chan_floor_;  // per (src,dst) last delivery, keeps channels FIFO
    uint64_t fanout_sent_ = 0;
    uint64_t fanout_answered_ = 0;
};

}  // namespace htmsim
