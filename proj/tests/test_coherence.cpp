#include <catch_amalgamated.hpp>

#include <functional>
#include <optional>
#include <vector>

#include "htmsim/cache.hpp"
#include "htmsim/coherence.hpp"
#include "htmsim/event_queue.hpp"
#include "htmsim/memory.hpp"
#include "htmsim/trace.hpp"
#include "htmsim/tshr.hpp"
#include "test_util.hpp"

using namespace htmsim;
using htmsim::test::quiet_cfg;

namespace {

struct FanSeen {
    Cycle cycle;
    CoreId target;
    bool invalidate;
    Addr line;
};

// Directory under test with scriptable cache endpoints. Each target answers
// according to `answer`; the default is an immediate clean ack.
struct DirRig {
    SimConfig cfg;
    EventQueue kernel;
    MemoryImage mem;
    TraceSink trace;
    Directory dir;
    std::vector<FanSeen> fans;
    std::function<FanReply(CoreId, bool, Addr)> answer;

    explicit DirRig(int cores)
        : cfg(quiet_cfg(cores)), mem(cfg.line_size), dir(cfg, kernel, mem, trace) {
        answer = [](CoreId, bool, Addr) { return FanReply{std::nullopt, false}; };
        dir.set_deliver([this](CoreId t, bool inval, Addr line,
                               std::function<void(FanReply)> reply) {
            fans.push_back({kernel.now(), t, inval, line});
            reply(answer(t, inval, line));
        });
    }

    void run() {
        while (!kernel.empty()) kernel.step();
    }
};

}  // namespace

TEST_CASE("uncontended read: one hop, array access, one hop") {
    DirRig rig(2);
    rig.mem.write_word(0x1000, 77);

    Cycle granted = 0;
    std::vector<Word> got;
    rig.dir.get_shared(0, 0x1000, [&](std::vector<Word> data) {
        granted = rig.kernel.now();
        got = std::move(data);
    });
    rig.run();

    CHECK(granted == rig.cfg.hop_latency + rig.cfg.l2_latency + rig.cfg.hop_latency);
    CHECK(got[0] == 77);
    CHECK(rig.fans.empty());
    auto snap = rig.dir.snapshot(0x1000);
    REQUIRE(snap.sharers.size() == 1);
    CHECK(snap.sharers[0] == 0);
    CHECK(snap.owner == -1);
}

TEST_CASE("read of an owned line downgrades the owner first") {
    DirRig rig(2);
    // Core 1 owns the line with dirty data; its downgrade answer carries it.
    Cycle t0 = 0;
    {
        bool done = false;
        rig.dir.get_exclusive(1, 0x2000, [&](std::vector<Word>) { done = true; });
        rig.run();
        REQUIRE(done);
        t0 = rig.kernel.now();
    }
    rig.answer = [&](CoreId, bool inval, Addr) {
        CHECK_FALSE(inval);  // read wants a downgrade, not an invalidate
        std::vector<Word> dirty(rig.cfg.words_per_line(), 0);
        dirty[0] = 1234;
        return FanReply{dirty, false};
    };

    Cycle granted = 0;
    Word seen = 0;
    rig.dir.get_shared(0, 0x2000, [&](std::vector<Word> data) {
        granted = rig.kernel.now();
        seen = data[0];
    });
    rig.run();

    // hop to dir, array access, hop out to the owner, hop back with the
    // data, then the response leaves: 4 + 12 + 4 + 4 + 4 = 28 at stock
    // numbers.
    CHECK(granted - t0 == 2 * rig.cfg.hop_latency + rig.cfg.l2_latency
                              + 2 * rig.cfg.hop_latency);
    CHECK(seen == 1234);
    CHECK(rig.mem.read_word(0x2000) == 1234);  // writeback applied
    REQUIRE(rig.fans.size() == 1);
    CHECK(rig.fans[0].target == 1);
    auto snap = rig.dir.snapshot(0x2000);
    CHECK(snap.owner == -1);
    CHECK(snap.sharers == std::vector<CoreId>{0, 1});
}

TEST_CASE("upgrade waits for every sharer's ack") {
    DirRig rig(4);
    for (CoreId c : {1, 2, 3}) {
        bool done = false;
        rig.dir.get_shared(c, 0x3000, [&](std::vector<Word>) { done = true; });
        rig.run();
        REQUIRE(done);
    }

    Cycle granted = 0;
    rig.dir.get_exclusive(1, 0x3000, [&](std::vector<Word>) { granted = rig.kernel.now(); });
    rig.run();

    // Invalidates go to the other two sharers only, and the grant follows
    // the last ack.
    REQUIRE(rig.fans.size() == 2);
    CHECK(rig.fans[0].invalidate);
    CHECK(rig.fans[1].invalidate);
    CHECK(rig.fans[0].target != 1);
    CHECK(rig.fans[1].target != 1);
    CHECK(granted > 0);
    auto snap = rig.dir.snapshot(0x3000);
    CHECK(snap.owner == 1);
    CHECK(snap.sharers.empty());
    CHECK(rig.dir.fanout_sent() == rig.dir.fanout_answered());
}

TEST_CASE("same line serializes, different lines do not") {
    DirRig rig(3);
    Cycle ga = 0, gb = 0, gc = 0;
    // Two cores, two lines, same send cycle: both grants land together.
    rig.dir.get_shared(0, 0x4000, [&](std::vector<Word>) { ga = rig.kernel.now(); });
    rig.dir.get_shared(1, 0x4040, [&](std::vector<Word>) { gb = rig.kernel.now(); });
    // Same line as core 0, sent the same cycle from another core: its grant
    // starts only after the first service's occupancy window.
    rig.dir.get_shared(2, 0x4000, [&](std::vector<Word>) { gc = rig.kernel.now(); });
    rig.run();

    Cycle clean = rig.cfg.hop_latency + rig.cfg.l2_latency + rig.cfg.hop_latency;
    CHECK(ga == clean);
    CHECK(gb == clean);
    CHECK(gc == clean + rig.cfg.dir_occupancy);
}

TEST_CASE("messages on one channel never reorder") {
    DirRig rig(2);
    Cycle g1 = 0, g2 = 0;
    // One core sends two reads the same cycle; the second request reaches
    // the directory a cycle later (channel FIFO), so its grant trails.
    rig.dir.get_shared(0, 0x5000, [&](std::vector<Word>) { g1 = rig.kernel.now(); });
    rig.dir.get_shared(0, 0x5040, [&](std::vector<Word>) { g2 = rig.kernel.now(); });
    rig.run();
    CHECK(g2 == g1 + 1);
}

TEST_CASE("eviction writeback updates memory and clears the owner") {
    DirRig rig(2);
    bool owned = false;
    rig.dir.get_exclusive(0, 0x6000, [&](std::vector<Word>) { owned = true; });
    rig.run();
    REQUIRE(owned);

    std::vector<Word> dirty(rig.cfg.words_per_line(), 0);
    dirty[3] = 555;
    bool acked = false;
    rig.dir.evict_writeback(0, 0x6000, dirty, [&] { acked = true; });
    rig.run();

    CHECK(acked);
    CHECK(rig.mem.read_word(0x6000 + 3 * kWordBytes) == 555);
    CHECK(rig.dir.snapshot(0x6000).owner == -1);
    CHECK(rig.dir.quiesced());
}

TEST_CASE("self downgrade demotes owner to sharer and applies the data") {
    DirRig rig(2);
    bool owned = false;
    rig.dir.get_exclusive(0, 0x7000, [&](std::vector<Word>) { owned = true; });
    rig.run();
    REQUIRE(owned);

    std::vector<Word> dirty(rig.cfg.words_per_line(), 0);
    dirty[0] = 42;
    bool acked = false;
    rig.dir.self_downgrade(0, 0x7000, dirty, [&] { acked = true; });
    rig.run();

    CHECK(acked);
    CHECK(rig.mem.read_word(0x7000) == 42);
    auto snap = rig.dir.snapshot(0x7000);
    CHECK(snap.owner == -1);
    CHECK(snap.sharers == std::vector<CoreId>{0});
}

TEST_CASE("an invalidate reaching a silently evicted copy is harmless") {
    DirRig rig(3);
    for (CoreId c : {0, 1}) {
        bool done = false;
        rig.dir.get_shared(c, 0x8000, [&](std::vector<Word>) { done = true; });
        rig.run();
        REQUIRE(done);
    }
    // Core 1 dropped the line without telling anyone; it just acks.
    bool granted = false;
    rig.dir.get_exclusive(2, 0x8000, [&](std::vector<Word>) { granted = true; });
    rig.run();
    CHECK(granted);
    CHECK(rig.dir.snapshot(0x8000).owner == 2);
}

TEST_CASE("queued upgrades can be withdrawn, dispatched ones cannot") {
    DirRig rig(3);
    // Two sharers so core 2's upgrade needs a fan and core 1's queued
    // request sits behind it.
    for (CoreId c : {0, 1}) {
        bool done = false;
        rig.dir.get_shared(c, 0x9000, [&](std::vector<Word>) { done = true; });
        rig.run();
        REQUIRE(done);
    }
    bool g2 = false, g1 = false;
    Cycle base = rig.kernel.now();
    rig.dir.get_exclusive(2, 0x9000, [&](std::vector<Word>) { g2 = true; });
    rig.dir.get_exclusive(1, 0x9000, [&](std::vector<Word>) { g1 = true; });
    // Let both requests arrive; the first is then mid-service.
    while (!rig.kernel.empty() && rig.kernel.next_cycle() <= base + rig.cfg.hop_latency + 2)
        rig.kernel.step();

    CHECK_FALSE(rig.dir.cancel_exclusive(2, 0x9000));  // already dispatched
    CHECK(rig.dir.cancel_exclusive(1, 0x9000));        // still queued
    CHECK_FALSE(rig.dir.cancel_exclusive(1, 0x9000));  // only once
    rig.run();
    CHECK(g2);
    CHECK_FALSE(g1);  // withdrawn requests never grant
    CHECK(rig.dir.quiesced());
}

TEST_CASE("a nack parks the requester until the privilege clears") {
    DirRig rig(2);
    bool p_priv = true;
    rig.dir.set_privilege_probe([&](CoreId c) { return c == 0 && p_priv; });

    bool shared0 = false;
    rig.dir.get_shared(0, 0xA000, [&](std::vector<Word>) { shared0 = true; });
    rig.run();
    REQUIRE(shared0);

    int nacks_left = 1;
    rig.answer = [&](CoreId t, bool inval, Addr) -> FanReply {
        if (t == 0 && inval && nacks_left > 0) {
            --nacks_left;
            return {std::nullopt, true};
        }
        return {std::nullopt, false};
    };

    Cycle granted1 = 0;
    rig.dir.get_exclusive(1, 0xA000, [&](std::vector<Word>) { granted1 = rig.kernel.now(); });
    rig.run();

    // The fan was refused; the request is parked, not granted, and the
    // nacker is still a sharer.
    CHECK(granted1 == 0);
    CHECK(rig.dir.snapshot(0xA000).sharers == std::vector<CoreId>{0});
    CHECK_FALSE(rig.dir.quiesced());

    // While parked, the blocker's own upgrade still dispatches.
    Cycle granted0 = 0;
    rig.dir.get_exclusive(0, 0xA000, [&](std::vector<Word>) { granted0 = rig.kernel.now(); });
    rig.run();
    CHECK(granted0 > 0);
    CHECK(granted1 == 0);

    // Privilege ends: the parked upgrade replays against the new state
    // (core 0 now owns the line) and finally grants.
    p_priv = false;
    rig.dir.clear_privileged(0);
    rig.run();
    CHECK(granted1 > granted0);
    CHECK(rig.dir.snapshot(0xA000).owner == 1);
    CHECK(rig.dir.quiesced());
}

TEST_CASE("post-grant probe runs for every grant") {
    DirRig rig(2);
    int probes = 0;
    rig.dir.set_post_grant_check([&](Addr line) {
        CHECK(line == 0xB000);
        ++probes;
    });
    bool a = false, b = false;
    rig.dir.get_shared(0, 0xB000, [&](std::vector<Word>) { a = true; });
    rig.run();
    rig.dir.get_exclusive(1, 0xB000, [&](std::vector<Word>) { b = true; });
    rig.run();
    CHECK(a);
    CHECK(b);
    CHECK(probes == 2);
}

TEST_CASE("L1 geometry and victim policy") {
    SimConfig cfg = quiet_cfg(1);
    CHECK(cfg.num_sets() == 128);
    CHECK(cfg.words_per_line() == 8);

    L1Cache l1(cfg);
    Addr stride = Addr(cfg.num_sets()) * cfg.line_size;  // same-set stride

    SECTION("set mapping wraps by line index") {
        CHECK(l1.set_index(0) == 0);
        CHECK(l1.set_index(64) == 1);
        CHECK(l1.set_index(stride) == 0);
    }

    SECTION("LRU victim among unpinned ways") {
        for (uint32_t i = 0; i < cfg.l1_assoc; ++i)
            l1.install(stride * i, LineState::Shared,
                       std::vector<Word>(cfg.words_per_line(), 0));
        CHECK(l1.free_way(stride * 99) == nullptr);

        // Touch everything except line 2's entry: line 2 becomes LRU.
        for (uint32_t i = 0; i < cfg.l1_assoc; ++i)
            if (i != 2) l1.touch(*l1.find(stride * i));
        CacheEntry* v = l1.choose_victim(stride * 99, nullptr);
        REQUIRE(v != nullptr);
        CHECK(v->line == stride * 2);

        // Pin line 2 in a TSHR: the victim moves to the next oldest.
        TshrFile pins(8, cfg.words_per_line());
        pins.allocate(stride * 2, false);
        v = l1.choose_victim(stride * 99, &pins);
        REQUIRE(v != nullptr);
        CHECK(v->line != stride * 2);

        // Pin every way: no victim at all.
        for (uint32_t i = 0; i < cfg.l1_assoc; ++i)
            if (i != 2) pins.allocate(stride * i, false);
        CHECK(l1.choose_victim(stride * 99, &pins) == nullptr);
    }

    SECTION("find ignores invalid entries") {
        CacheEntry& e = l1.install(128, LineState::Shared,
                                   std::vector<Word>(cfg.words_per_line(), 7));
        CHECK(l1.find(128) == &e);
        CHECK(l1.state(128) == LineState::Shared);
        e.state = LineState::Invalid;
        CHECK(l1.find(128) == nullptr);
        CHECK(l1.state(128) == LineState::Invalid);
    }
}

TEST_CASE("TSHR file allocation, leftovers and bookkeeping") {
    TshrFile f(4, 8);
    CHECK(f.has_free());
    f.allocate(0x100, false);
    Tshr& w = f.allocate(0x200, true);
    w.data.assign(8, 0);
    w.data[1] = 9;
    w.written_mask = 1u << 1;

    CHECK(f.valid_count() == 2);
    CHECK(f.read_count() == 1);
    CHECK(f.write_count() == 1);
    CHECK(f.write_lines() == std::vector<Addr>{0x200});
    REQUIRE(f.find_valid(0x100) != nullptr);
    CHECK(f.find_valid(0x300) == nullptr);

    f.end_transaction();
    CHECK(f.valid_count() == 0);
    CHECK(f.find_valid(0x100) == nullptr);
    CHECK(f.matches_leftover(0x100));
    CHECK(f.matches_leftover(0x200));
    CHECK_FALSE(f.matches_leftover(0x300));

    // Fresh slots are preferred over left-over slots, preserving the hints.
    f.allocate(0x300, false);
    f.allocate(0x400, false);
    CHECK(f.matches_leftover(0x100));
    CHECK(f.matches_leftover(0x200));
    // Only left-over slots remain; they get reused.
    f.allocate(0x500, false);
    CHECK(f.valid_count() == 3);
    CHECK(f.has_free());
    f.allocate(0x600, false);
    CHECK_FALSE(f.has_free());
    CHECK_THROWS_AS(f.allocate(0x700, false), InvariantViolation);
}
