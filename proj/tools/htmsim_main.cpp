// Command line front end: single experiments and the stock sweep, with CSV
// or JSON output and an optional event trace.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "htmsim/harness.hpp"

using namespace htmsim;
using nlohmann::json;

namespace {

struct Opts {
    int threads = 4;
    int counters_k = 2;
    std::string duration = "short";
    std::string sync = "htm";
    std::string fp = "none";
    uint64_t ops = 1 << 10;
    uint64_t seed = 1;
    int reps = 1;
    uint64_t cycle_limit = 200'000'000;
    std::string trace_path;
    std::string out_path;
    bool as_json = false;
    std::string config_path;
};

void apply_config_file(SimConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    in >> j;
    auto opt = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("num_cores", cfg.num_cores);
    opt("line_size", cfg.line_size);
    opt("l1_size", cfg.l1_size);
    opt("l1_assoc", cfg.l1_assoc);
    opt("num_tshrs", cfg.num_tshrs);
    opt("l1_hit_latency", cfg.l1_hit_latency);
    opt("l2_latency", cfg.l2_latency);
    opt("l2_jitter", cfg.l2_jitter);
    opt("hop_jitter", cfg.hop_jitter);
    opt("dir_occupancy", cfg.dir_occupancy);
    opt("cancel_stale_upgrades", cfg.cancel_stale_upgrades);
    opt("hop_latency", cfg.hop_latency);
    opt("commit_write_latency", cfg.commit_write_latency);
    opt("token_line", cfg.token_line);
    opt("repeated_match_threshold", cfg.repeated_match_threshold);
    opt("abort_streak_bits", cfg.abort_streak_bits);
    opt("token_wait_window", cfg.token_wait_window);
    opt("seq_stall_bound", cfg.seq_stall_bound);
    opt("eager_exclusivity", cfg.eager_exclusivity);
    if (j.contains("fp_mechanism")) cfg.fp_mechanism = parse_fp(j.at("fp_mechanism").get<std::string>());
}

json result_json(const RunResult& r) {
    const StatsRecord& st = r.stats;
    json j{{"workload", r.spec.workload},
           {"threads", r.spec.threads},
           {"counters", r.spec.workload == "counters" ? r.spec.counters_k : 0},
           {"duration", to_string(r.spec.duration)},
           {"sync", to_string(r.spec.sync)},
           {"fp", to_string(r.spec.fp)},
           {"seed", r.spec.seed},
           {"commits", st.commits},
           {"aborts_total", st.aborts_total},
           {"aborts_inval", st.aborts_inval},
           {"aborts_dwng", st.aborts_dwng},
           {"aborts_presc", st.aborts_presc},
           {"aborts_capacity", st.aborts_capacity},
           {"aborts_overflow", st.aborts_overflow},
           {"aborts_interrupt", st.aborts_interrupt},
           {"app_failures", st.app_failures},
           {"cycles", st.cycles},
           {"throughput_per_kcycle", st.throughput_per_kcycle},
           {"max_tshr_used", st.max_tshr_used},
           {"per_thread_successes", st.per_thread_successes},
           {"token_requests", st.fp.token_requests},
           {"token_grants_in_time", st.fp.token_grants_in_time},
           {"stalled_msgs", st.fp.stalled_msgs},
           {"nacked_msgs", st.fp.nacked_msgs},
           {"seq_rounds", st.fp.seq_rounds},
           {"oracle_ok", r.oracle_ok},
           {"cycle_limited", r.cycle_limited}};
    if (!r.oracle_ok) j["oracle_detail"] = r.oracle_detail;
    return j;
}

int emit_results(const std::vector<RunResult>& results, const Opts& o) {
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!o.out_path.empty()) {
        file.open(o.out_path, std::ios::trunc);
        if (!file) {
            std::cerr << "cannot open output file: " << o.out_path << "\n";
            return 2;
        }
        out = &file;
    }
    if (o.as_json) {
        json arr = json::array();
        for (const RunResult& r : results) arr.push_back(result_json(r));
        *out << arr.dump(2) << "\n";
    } else {
        emit_csv(results, *out);
    }
    int rc = 0;
    for (const RunResult& r : results) {
        if (!r.oracle_ok || r.cycle_limited) rc = 1;
        if (!r.oracle_ok)
            std::cerr << "oracle violation (" << r.spec.workload << " seed " << r.spec.seed
                      << "): " << r.oracle_detail << "\n";
    }
    return rc;
}

int run_single(const std::string& workload, const Opts& o) {
    RunSpec spec;
    spec.workload = workload;
    spec.threads = o.threads;
    spec.counters_k = o.counters_k;
    spec.duration = parse_duration(o.duration);
    spec.sync = parse_sync(o.sync);
    spec.fp = parse_fp(o.fp);
    spec.ops = o.ops;
    spec.cycle_limit = o.cycle_limit;
    if (!o.config_path.empty()) apply_config_file(spec.base, o.config_path);

    std::ofstream trace_file;
    std::ostream* trace = nullptr;
    if (!o.trace_path.empty()) {
        trace_file.open(o.trace_path, std::ios::trunc);
        if (!trace_file) {
            std::cerr << "cannot open trace file: " << o.trace_path << "\n";
            return 2;
        }
        trace = &trace_file;
    }

    std::vector<RunResult> results;
    for (int rep = 0; rep < o.reps; ++rep) {
        spec.seed = o.seed + uint64_t(rep);
        results.push_back(run_experiment(spec, trace));
    }
    return emit_results(results, o);
}

int run_sweep(const Opts& o) {
    std::vector<RunSpec> specs = default_sweep(o.ops);
    for (RunSpec& s : specs) {
        s.cycle_limit = o.cycle_limit;
        if (!o.config_path.empty()) apply_config_file(s.base, o.config_path);
    }
    return emit_results(sweep(specs), o);
}

void add_common(CLI::App* cmd, Opts& o, bool workload_opts) {
    if (workload_opts) {
        cmd->add_option("--threads", o.threads, "number of cores running the workload");
        cmd->add_option("--fp", o.fp, "forward progress mechanism: none|token|sorted");
        cmd->add_option("--seed", o.seed, "base RNG seed");
        cmd->add_option("--reps", o.reps, "repetitions with consecutive seeds")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--trace", o.trace_path, "write a message/transaction trace to this file");
    }
    cmd->add_option("--ops", o.ops, "total operations across all threads");
    cmd->add_option("--cycle-limit", o.cycle_limit, "abort the run after this many cycles");
    cmd->add_option("--out", o.out_path, "write results to this file instead of stdout");
    cmd->add_flag("--json", o.as_json, "emit JSON instead of CSV");
    cmd->add_option("--config", o.config_path, "JSON file with machine parameter overrides");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cycle-level simulator of LL/SC hardware transactional memory on MESI"};
    app.require_subcommand(1);
    Opts o;

    CLI::App* counters = app.add_subcommand("counters", "shared counter increments");
    add_common(counters, o, true);
    counters->add_option("--counters", o.counters_k, "counters incremented per transaction");
    counters->add_option("--duration", o.duration, "transaction length: short|long");
    counters->add_option("--sync", o.sync, "htm|htm-backoff|tts|tts-backoff");

    CLI::App* queue = app.add_subcommand("queue", "concurrent FIFO queue producers/consumers");
    add_common(queue, o, true);

    CLI::App* dlist = app.add_subcommand("dlist", "sorted doubly linked list inserts/deletes");
    add_common(dlist, o, true);

    CLI::App* sw = app.add_subcommand("sweep", "run the stock configuration grid");
    add_common(sw, o, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (counters->parsed()) return run_single("counters", o);
        if (queue->parsed()) return run_single("queue", o);
        if (dlist->parsed()) return run_single("dlist", o);
        return run_sweep(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
