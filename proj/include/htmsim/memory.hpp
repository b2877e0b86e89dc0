#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "htmsim/types.hpp"

namespace htmsim {

// Sparse word-addressable memory, kept at line granularity. Untouched lines
// read as zero. Used both as the simulated backing store and as the replay
// oracle's working image.
class MemoryImage {
public:
    MemoryImage() = default;
    explicit MemoryImage(uint32_t line_size) : line_size_(line_size) {}

    uint32_t line_size() const { return line_size_; }
    uint32_t words_per_line() const { return line_size_ / kWordBytes; }

    Addr line_of(Addr a) const { return a & ~static_cast<Addr>(line_size_ - 1); }

    std::vector<Word>& line(Addr line_addr) {
        auto& l = lines_[line_addr];
        if (l.empty()) l.assign(words_per_line(), 0);
        return l;
    }

    std::vector<Word> read_line(Addr line_addr) const {
        auto it = lines_.find(line_addr);
        if (it != lines_.end()) return it->second;
        return std::vector<Word>(words_per_line(), 0);
    }

    Word read_word(Addr a) const {
        auto it = lines_.find(line_of(a));
        if (it == lines_.end()) return 0;
        return it->second[(a & (line_size_ - 1)) / kWordBytes];
    }

    void write_word(Addr a, Word v) { line(line_of(a))[(a & (line_size_ - 1)) / kWordBytes] = v; }

    void write_line(Addr line_addr, const std::vector<Word>& data) { lines_[line_addr] = data; }

    // First differing word between two images, across the union of their
    // touched lines. Deterministic (sorted) scan order.
    static std::optional<std::pair<Addr, std::pair<Word, Word>>> first_divergence(
            const MemoryImage& a, const MemoryImage& b) {
        std::vector<Addr> keys;
        keys.reserve(a.lines_.size() + b.lines_.size());
        for (auto& kv : a.lines_) keys.push_back(kv.first);
        for (auto& kv : b.lines_) keys.push_back(kv.first);
        std::sort(keys.begin(), keys.end());
        keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
        for (Addr la : keys) {
            std::vector<Word> wa = a.read_line(la);
            std::vector<Word> wb = b.read_line(la);
            for (size_t i = 0; i < wa.size(); ++i) {
                if (wa[i] != wb[i])
                    return std::make_pair(la + i * kWordBytes, std::make_pair(wa[i], wb[i]));
            }
        }
        return std::nullopt;
    }

    const std::unordered_map<Addr, std::vector<Word>>& raw() const { return lines_; }

private:
    uint32_t line_size_ = 64;
    std::unordered_map<Addr, std::vector<Word>> lines_;
};

}  // namespace htmsim
