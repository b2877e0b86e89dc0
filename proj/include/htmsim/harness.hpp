#pragma once

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "htmsim/config.hpp"
#include "htmsim/oracle.hpp"
#include "htmsim/stats.hpp"
#include "htmsim/system.hpp"
#include "htmsim/types.hpp"
#include "htmsim/workloads.hpp"

namespace htmsim {

// One experiment: a workload on a fresh system. `base` carries machine
// parameters; threads/fp/seed are copied over it.
struct RunSpec {
    std::string workload = "counters";  // counters | queue | dlist
    int threads = 4;
    int counters_k = 2;  // counters only
    Duration duration = Duration::Short;
    SyncKind sync = SyncKind::Htm;
    FpMechanism fp = FpMechanism::None;
    uint64_t ops = 1 << 10;
    uint64_t seed = 1;
    Cycle cycle_limit = 200'000'000;
    SimConfig base;
};

struct RunResult {
    RunSpec spec;
    StatsRecord stats;
    bool oracle_ok = true;
    std::string oracle_detail;
    bool cycle_limited = false;
};

inline SimConfig config_for(const RunSpec& spec) {
    SimConfig cfg = spec.base;
    cfg.num_cores = spec.threads;
    cfg.fp_mechanism = spec.fp;
    cfg.seed = spec.seed;
    return cfg;
}

inline BuiltWorkload build_workload(System& sys, const RunSpec& spec) {
    if (spec.workload == "counters")
        return build_counters(sys, spec.counters_k, spec.duration, spec.sync, spec.ops);
    if (spec.workload == "queue") return build_queue(sys, spec.ops);
    if (spec.workload == "dlist") return build_dlist(sys, spec.ops);
    throw std::invalid_argument("unknown workload: " + spec.workload);
}

// Runs one experiment and applies every oracle: serial replay of the commit
// log, the workload's structural check, the success quota, and the TSHR
// occupancy bound. A cycle-limit overrun is reported, not thrown.
inline RunResult run_experiment(const RunSpec& spec, std::ostream* trace = nullptr) {
    RunResult res;
    res.spec = spec;
    System sys(config_for(spec));
    BuiltWorkload w = build_workload(sys, spec);
    if (trace) sys.set_trace(trace);
    MemoryImage initial = sys.initial_memory();

    try {
        sys.run(spec.cycle_limit);
    } catch (const CycleLimitExceeded&) {
        res.cycle_limited = true;
        res.stats = sys.stats();
        res.stats.cycles = spec.cycle_limit;
        res.oracle_ok = false;
        res.oracle_detail = "cycle limit exceeded";
        res.stats.oracle_ok = false;
        return res;
    }

    res.stats = sys.stats();
    if (res.stats.cycles > 0)
        res.stats.throughput_per_kcycle =
            1000.0 * double(res.stats.commits) / double(res.stats.cycles);

    auto fail = [&res](OracleResult r) {
        if (res.oracle_ok && !r.ok) {
            res.oracle_ok = false;
            res.oracle_detail = r.detail;
        }
    };
    fail(replay_serial(sys.log(), initial, sys.arch_memory()));
    fail(w.check(sys));
    uint64_t total = 0;
    for (uint64_t s : res.stats.per_thread_successes) total += s;
    if (total != w.expected_total)
        fail(oracle_fail("finished with %llu successful operations, expected %llu",
                         (unsigned long long)total, (unsigned long long)w.expected_total));
    if (w.tshr_bound && res.stats.max_tshr_used > w.tshr_bound)
        fail(oracle_fail("max TSHR occupancy %u exceeds workload bound %zu",
                         res.stats.max_tshr_used, w.tshr_bound));
    res.stats.oracle_ok = res.oracle_ok;
    return res;
}

inline std::vector<RunResult> sweep(const std::vector<RunSpec>& specs) {
    std::vector<RunResult> out;
    out.reserve(specs.size());
    for (const RunSpec& s : specs) out.push_back(run_experiment(s));
    return out;
}

// The stock grid: counters over thread count, counter count and duration;
// queue and dlist over thread count; three seeds each.
inline std::vector<RunSpec> default_sweep(uint64_t ops = 1 << 10) {
    std::vector<RunSpec> specs;
    const int threads[] = {2, 4, 8};
    const uint64_t seeds[] = {1, 2, 3};
    for (uint64_t seed : seeds) {
        for (int n : threads) {
            for (int k : {2, 3, 4}) {
                for (Duration d : {Duration::Short, Duration::Long}) {
                    RunSpec s;
                    s.workload = "counters";
                    s.threads = n;
                    s.counters_k = k;
                    s.duration = d;
                    s.ops = ops;
                    s.seed = seed;
                    specs.push_back(s);
                }
            }
        }
        for (int n : threads) {
            RunSpec s;
            s.workload = "queue";
            s.threads = n;
            s.ops = ops;
            s.seed = seed;
            specs.push_back(s);
        }
        for (int n : threads) {
            RunSpec s;
            s.workload = "dlist";
            s.threads = n;
            s.ops = ops;
            s.seed = seed;
            specs.push_back(s);
        }
    }
    return specs;
}

// One spec per value, varying a single named parameter over a base spec.
// Axis values are strings so every axis parses the same way.
inline std::vector<RunSpec> sweep_axis(const std::string& axis,
                                       const std::vector<std::string>& values,
                                       const RunSpec& base) {
    std::vector<RunSpec> specs;
    specs.reserve(values.size());
    for (const std::string& v : values) {
        RunSpec s = base;
        if (axis == "threads") s.threads = std::stoi(v);
        else if (axis == "counters") s.counters_k = std::stoi(v);
        else if (axis == "duration") s.duration = parse_duration(v);
        else if (axis == "sync") s.sync = parse_sync(v);
        else if (axis == "fp" || axis == "fp_mechanism") s.fp = parse_fp(v);
        else throw std::invalid_argument("unknown sweep axis: " + axis);
        specs.push_back(std::move(s));
    }
    return specs;
}

inline const char* csv_header() {
    return "workload,threads,counters,duration,sync,fp,seed,commits,aborts_total,aborts_inval,"
           "aborts_dwng,aborts_presc,aborts_capacity,aborts_overflow,app_failures,cycles,"
           "throughput_per_kcycle,oracle_ok";
}

inline std::string csv_row(const RunResult& r) {
    char buf[512];
    const RunSpec& s = r.spec;
    const StatsRecord& st = r.stats;
    int k = s.workload == "counters" ? s.counters_k : 0;
    std::snprintf(buf, sizeof(buf),
                  "%s,%d,%d,%s,%s,%s,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%llu,%.3f,%d",
                  s.workload.c_str(), s.threads, k, to_string(s.duration), to_string(s.sync),
                  to_string(s.fp), (unsigned long long)s.seed, (unsigned long long)st.commits,
                  (unsigned long long)st.aborts_total, (unsigned long long)st.aborts_inval,
                  (unsigned long long)st.aborts_dwng, (unsigned long long)st.aborts_presc,
                  (unsigned long long)st.aborts_capacity, (unsigned long long)st.aborts_overflow,
                  (unsigned long long)st.app_failures, (unsigned long long)st.cycles,
                  st.throughput_per_kcycle, r.oracle_ok ? 1 : 0);
    return buf;
}

inline void emit_csv(const std::vector<RunResult>& results, std::ostream& out) {
    out << csv_header() << "\n";
    for (const RunResult& r : results) out << csv_row(r) << "\n";
}

}  // namespace htmsim
