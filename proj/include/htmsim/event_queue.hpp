#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <utility>

#include "htmsim/types.hpp"

namespace htmsim {

// Discrete-event kernel. Events fire at exactly now+delay; events due the
// same cycle fire in insertion order, which makes every run a total
// deterministic order.
class EventQueue {
public:
    Cycle now() const { return now_; }
    bool empty() const { return events_.empty(); }
    size_t pending() const { return events_.size(); }

    uint64_t schedule(Cycle delay, std::function<void()> fn) {
        uint64_t id = next_seq_++;
        events_.emplace(std::make_pair(now_ + delay, id), std::move(fn));
        return id;
    }

    Cycle next_cycle() const { return events_.begin()->first.first; }

    // Pops and runs the earliest event; returns the cycle it fired at.
    Cycle step() {
        auto node = events_.extract(events_.begin());
        now_ = node.key().first;
        node.mapped()();
        return now_;
    }

private:
    std::map<std::pair<Cycle, uint64_t>, std::function<void()>> events_;
    Cycle now_ = 0;
    uint64_t next_seq_ = 0;
};

}  // namespace htmsim
