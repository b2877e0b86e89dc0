#pragma once

#include <cstdint>
#include <vector>

#include "htmsim/types.hpp"

namespace htmsim {

// Transaction status holding register. One per tracked cache line: the tag,
// a speculative copy of the line for buffered stores, and the bookkeeping
// bits. After commit/abort the entry is invalidated but keeps its tag with
// left_over set, so the next transaction can recognize a repeated attempt.
struct Tshr {
    Addr line = 0;
    std::vector<Word> data;      // speculative image; filled on first store
    uint64_t written_mask = 0;   // words this transaction stored (log instrumentation)
    bool write_set = false;
    bool valid = false;
    bool left_over = false;
};

class TshrFile {
public:
    TshrFile(uint32_t count, uint32_t words_per_line)
        : words_per_line_(words_per_line), regs_(count) {}

    uint32_t size() const { return static_cast<uint32_t>(regs_.size()); }

    Tshr* find_valid(Addr line) {
        for (auto& t : regs_)
            if (t.valid && t.line == line) return &t;
        return nullptr;
    }
    const Tshr* find_valid(Addr line) const {
        for (auto& t : regs_)
            if (t.valid && t.line == line) return &t;
        return nullptr;
    }

    bool has_free() const {
        for (auto& t : regs_)
            if (!t.valid) return true;
        return false;
    }

    bool matches_leftover(Addr line) const {
        for (auto& t : regs_)
            if (t.left_over && !t.valid && t.line == line) return true;
        return false;
    }

    // Prefers slots without a left-over tag so the repeat hints survive as
    // long as possible; reuses a left-over slot only when it must.
    Tshr& allocate(Addr line, bool write) {
        Tshr* slot = nullptr;
        for (auto& t : regs_) {
            if (t.valid) continue;
            if (!t.left_over) { slot = &t; break; }
            if (!slot) slot = &t;
        }
        if (!slot) throw InvariantViolation("TshrFile::allocate with no free entry");
        slot->line = line;
        slot->data.clear();
        slot->written_mask = 0;
        slot->write_set = write;
        slot->valid = true;
        slot->left_over = false;
        return *slot;
    }

    // Commit or abort: every valid entry becomes a left-over (tag retained).
    void end_transaction() {
        for (auto& t : regs_) {
            if (!t.valid) continue;
            t.valid = false;
            t.left_over = true;
            t.data.clear();
            t.written_mask = 0;
        }
        check();
    }

    int valid_count() const {
        int n = 0;
        for (auto& t : regs_) n += t.valid ? 1 : 0;
        return n;
    }
    int write_count() const {
        int n = 0;
        for (auto& t : regs_) n += (t.valid && t.write_set) ? 1 : 0;
        return n;
    }
    int read_count() const {
        int n = 0;
        for (auto& t : regs_) n += (t.valid && !t.write_set) ? 1 : 0;
        return n;
    }

    std::vector<Addr> write_lines() const {  // allocation order
        std::vector<Addr> v;
        for (auto& t : regs_)
            if (t.valid && t.write_set) v.push_back(t.line);
        return v;
    }
    std::vector<Addr> read_lines() const {
        std::vector<Addr> v;
        for (auto& t : regs_)
            if (t.valid && !t.write_set) v.push_back(t.line);
        return v;
    }

    std::vector<Tshr>& entries() { return regs_; }
    const std::vector<Tshr>& entries() const { return regs_; }
    uint32_t words_per_line() const { return words_per_line_; }

    void check() const {
        for (auto& t : regs_)
            if (t.valid && t.left_over)
                throw InvariantViolation("TSHR valid and left_over set together");
    }

private:
    uint32_t words_per_line_;
    std::vector<Tshr> regs_;
};

}  // namespace htmsim
