#pragma once

#include <cstdio>
#include <ostream>
#include <string>

#include "htmsim/types.hpp"

namespace htmsim {

// Optional text trace: one line per coherence message and one per finished
// transaction. Off (null sink) unless the harness opens one.
class TraceSink {
public:
    TraceSink() = default;
    explicit TraceSink(std::ostream* out) : out_(out) {}

    bool enabled() const { return out_ != nullptr; }

    void msg(Cycle cycle, const char* kind, Addr line, const std::string& from, const std::string& to) {
        if (!out_) return;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "msg,%llu,%s,0x%llx,%s,%s\n",
                      static_cast<unsigned long long>(cycle), kind,
                      static_cast<unsigned long long>(line), from.c_str(), to.c_str());
        *out_ << buf;
    }

    void txn(CoreId core, Cycle start, Cycle end, bool committed, const char* cause,
             int read_lines, int write_lines) {
        if (!out_) return;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "txn,%d,%llu,%llu,%s,%s,%d,%d\n",
                      core, static_cast<unsigned long long>(start),
                      static_cast<unsigned long long>(end),
                      committed ? "commit" : "abort", cause, read_lines, write_lines);
        *out_ << buf;
    }

private:
    std::ostream* out_ = nullptr;
};

inline std::string core_name(CoreId c) { return "c" + std::to_string(c); }

}  // namespace htmsim
