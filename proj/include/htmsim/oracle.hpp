#pragma once

#include <algorithm>
#include <cstdarg>
#include <cstdio>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "htmsim/memory.hpp"
#include "htmsim/system.hpp"
#include "htmsim/types.hpp"

namespace htmsim {

struct OracleResult {
    bool ok = true;
    std::string detail;
};

inline OracleResult oracle_fail(const char* fmt, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    return {false, buf};
}

// Serializability check: replay every committed unit (transactions as atomic
// word sets, plain stores as singletons) in visibility order against the
// initial image; the result must equal the machine's final memory.
inline OracleResult replay_serial(const std::vector<TxLogEntry>& log,
                                  const MemoryImage& initial,
                                  const MemoryImage& final_img) {
    std::vector<const TxLogEntry*> order;
    order.reserve(log.size());
    for (const auto& e : log) order.push_back(&e);
    std::sort(order.begin(), order.end(), [](const TxLogEntry* a, const TxLogEntry* b) {
        if (a->visible_cycle != b->visible_cycle) return a->visible_cycle < b->visible_cycle;
        return a->order_seq < b->order_seq;
    });
    MemoryImage img = initial;
    for (const TxLogEntry* e : order)
        for (const auto& [addr, val] : e->writes) img.write_word(addr, val);
    auto div = MemoryImage::first_divergence(img, final_img);
    if (div) {
        return oracle_fail("serial replay diverges at 0x%llx: replayed 0x%llx, machine 0x%llx",
                           (unsigned long long)div->first,
                           (unsigned long long)div->second.first,
                           (unsigned long long)div->second.second);
    }
    return {};
}

// One completed queue operation, recorded by the workload in linearization
// (commit) order.
struct QueueEvent {
    bool enqueue = false;
    CoreId core = -1;
    Word value = 0;
};

// FIFO semantics over the whole history: the j-th successful dequeue returns
// the j-th enqueued value, values are unique, nothing is lost or duplicated,
// and whatever was never dequeued is exactly the residue left in memory.
inline OracleResult check_queue_history(const std::vector<QueueEvent>& events,
                                        const std::vector<Word>& residue) {
    std::vector<Word> enq, deq;
    std::vector<size_t> enq_pos, deq_pos;
    for (size_t i = 0; i < events.size(); ++i) {
        if (events[i].enqueue) {
            enq.push_back(events[i].value);
            enq_pos.push_back(i);
        } else {
            deq.push_back(events[i].value);
            deq_pos.push_back(i);
        }
    }
    std::set<Word> uniq(enq.begin(), enq.end());
    if (uniq.size() != enq.size()) return oracle_fail("duplicate enqueued value");
    if (deq.size() > enq.size())
        return oracle_fail("%zu dequeues but only %zu enqueues", deq.size(), enq.size());
    for (size_t j = 0; j < deq.size(); ++j) {
        if (deq[j] != enq[j])
            return oracle_fail("dequeue %zu returned 0x%llx, FIFO order requires 0x%llx",
                               j, (unsigned long long)deq[j], (unsigned long long)enq[j]);
        if (deq_pos[j] < enq_pos[j])
            return oracle_fail("dequeue %zu linearized before its enqueue", j);
    }
    size_t d = deq.size();
    if (residue.size() != enq.size() - d)
        return oracle_fail("queue residue has %zu values, expected %zu",
                           residue.size(), enq.size() - d);
    for (size_t j = 0; j < residue.size(); ++j)
        if (residue[j] != enq[d + j])
            return oracle_fail("queue residue[%zu] is 0x%llx, expected 0x%llx",
                               j, (unsigned long long)residue[j],
                               (unsigned long long)enq[d + j]);
    return {};
}

// Walks a singly linked chain of node addresses starting at the pointer
// stored at head_ptr_addr. Fails (empty result, ok flag via detail) only via
// the caller noticing max_nodes exceeded.
inline std::vector<Addr> walk_chain(const MemoryImage& mem, Addr head_ptr_addr,
                                    uint32_t next_off, size_t max_nodes) {
    std::vector<Addr> nodes;
    Addr p = mem.read_word(head_ptr_addr);
    while (p != kNullPtr && nodes.size() <= max_nodes) {
        nodes.push_back(p);
        p = mem.read_word(p + next_off);
    }
    return nodes;
}

// Structural check of the sorted doubly linked list: strictly ascending
// keys, prev pointers mirror next pointers, and no node left flagged.
struct ListLayout {
    uint32_t key_off = 0;
    uint32_t next_off = 64;
    uint32_t prev_off = 128;
    uint32_t flag_off = 192;
};

inline OracleResult check_list_state(const MemoryImage& mem, Addr head_ptr_addr,
                                     const ListLayout& lay, size_t max_nodes,
                                     size_t* length_out = nullptr) {
    std::vector<Addr> nodes = walk_chain(mem, head_ptr_addr, lay.next_off, max_nodes);
    if (nodes.size() > max_nodes) return oracle_fail("list longer than %zu nodes (cycle?)", max_nodes);
    Addr prev_expected = kNullPtr;
    Word last_key = 0;
    for (size_t i = 0; i < nodes.size(); ++i) {
        Addr p = nodes[i];
        Word key = mem.read_word(p + lay.key_off);
        Word prevv = mem.read_word(p + lay.prev_off);
        Word flag = mem.read_word(p + lay.flag_off);
        if (prevv != prev_expected)
            return oracle_fail("node %zu at 0x%llx has prev 0x%llx, expected 0x%llx",
                               i, (unsigned long long)p, (unsigned long long)prevv,
                               (unsigned long long)prev_expected);
        if (flag != 0)
            return oracle_fail("node %zu at 0x%llx still flagged", i, (unsigned long long)p);
        if (i > 0 && key <= last_key)
            return oracle_fail("node %zu key %llu not above %llu",
                               i, (unsigned long long)key, (unsigned long long)last_key);
        last_key = key;
        prev_expected = p;
    }
    if (length_out) *length_out = nodes.size();
    return {};
}

}  // namespace htmsim
