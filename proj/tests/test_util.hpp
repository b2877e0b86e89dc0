#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "htmsim/config.hpp"
#include "htmsim/program.hpp"
#include "htmsim/system.hpp"

namespace htmsim::test {

// Machine with every source of timing noise zeroed, for exact-latency and
// exact-interleaving tests.
inline SimConfig quiet_cfg(int cores) {
    SimConfig cfg;
    cfg.num_cores = cores;
    cfg.l2_jitter = 0;
    cfg.hop_jitter = 0;
    cfg.seed = 1;
    return cfg;
}

// Parks a core forever out of the way (programs are mandatory on every core).
inline std::unique_ptr<ThreadProgram> idle() {
    return std::make_unique<FixedProgram>(FixedProgram::of({}));
}

inline std::unique_ptr<ThreadProgram> script(std::vector<MemOp> ops) {
    return std::make_unique<FixedProgram>(FixedProgram::of(std::move(ops)));
}

inline std::unique_ptr<ThreadProgram> script_at(std::vector<FixedProgram::Entry> seq) {
    return std::make_unique<FixedProgram>(std::move(seq));
}

}  // namespace htmsim::test
