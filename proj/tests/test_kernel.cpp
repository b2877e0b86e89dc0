#include <catch_amalgamated.hpp>

#include <vector>

#include "htmsim/event_queue.hpp"
#include "htmsim/rng.hpp"

using namespace htmsim;

TEST_CASE("events fire at now plus delay, in time order") {
    EventQueue q;
    std::vector<int> order;
    q.schedule(10, [&] { order.push_back(10); });
    q.schedule(3, [&] { order.push_back(3); });
    q.schedule(7, [&] { order.push_back(7); });

    REQUIRE(q.next_cycle() == 3);
    CHECK(q.step() == 3);
    CHECK(q.step() == 7);
    CHECK(q.step() == 10);
    CHECK(q.now() == 10);
    CHECK(q.empty());
    CHECK(order == std::vector<int>{3, 7, 10});
}

TEST_CASE("same-cycle events fire in insertion order") {
    EventQueue q;
    std::vector<int> order;
    q.schedule(5, [&] { order.push_back(1); });
    q.schedule(5, [&] { order.push_back(2); });
    q.schedule(5, [&] { order.push_back(3); });
    while (!q.empty()) q.step();
    CHECK(order == std::vector<int>{1, 2, 3});
}

TEST_CASE("handlers can schedule, including for the current cycle") {
    EventQueue q;
    std::vector<int> order;
    q.schedule(2, [&] {
        order.push_back(1);
        q.schedule(0, [&] { order.push_back(2); });   // same cycle, runs next
        q.schedule(4, [&] { order.push_back(4); });
    });
    q.schedule(3, [&] { order.push_back(3); });
    while (!q.empty()) q.step();
    CHECK(order == std::vector<int>{1, 2, 3, 4});
    CHECK(q.now() == 6);
}

TEST_CASE("now never runs backwards and pending tracks the backlog") {
    EventQueue q;
    CHECK(q.empty());
    q.schedule(1, [] {});
    q.schedule(1, [] {});
    CHECK(q.pending() == 2);
    Cycle prev = 0;
    while (!q.empty()) {
        Cycle t = q.step();
        CHECK(t >= prev);
        prev = t;
    }
    CHECK(q.pending() == 0);
}

TEST_CASE("rng is deterministic per seed and honors range bounds") {
    Rng a(42), b(42), c(43);
    bool same = true, diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t va = a.next();
        same = same && (va == b.next());
        diff = diff || (va != c.next());
    }
    CHECK(same);
    CHECK(diff);

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        uint64_t v = r.range(2, 6);
        REQUIRE(v >= 2);
        REQUIRE(v <= 6);
    }
    CHECK(r.range(9, 9) == 9);
    CHECK_THROWS_AS(r.range(5, 4), std::invalid_argument);
}
