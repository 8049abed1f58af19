#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <string>
#include <vector>

#include "quicsim/analysis.hpp"
#include "quicsim/config.hpp"
#include "quicsim/scenario.hpp"

namespace quicsim {

struct CellOutcome {
    std::string scenario_id;
    std::string csv_row;
    std::string trace_text;
    bool failed = false;
    std::string error;
};

struct GridRunOutcome {
    std::string csv;  // header + one row per run, in expansion order
    std::vector<std::string> failed_cells;
};

namespace runner_impl {

inline std::string sanitize_id(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        if (c == '/') c = '_';
    }
    return out;
}

// Stack-delay jitter is the only randomness; it is derived from the config
// seed and the cell index so reruns and parallel runs agree.
inline Duration jittered_delay(Duration base, Duration jitter, std::uint64_t seed,
                               std::size_t cell_index) {
    if (jitter <= 0) return base;
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (cell_index + 1)));
    std::uniform_int_distribution<Duration> dist(0, jitter);
    return base + dist(rng);
}

inline CellOutcome run_cell(const GridConfig& cfg, const GridCell& cell, std::size_t index) {
    CellOutcome out;
    out.scenario_id = cell.params.id;
    try {
        ScenarioParams params = cell.params;
        const Duration delay = jittered_delay(cfg.stack_delay_us, cfg.stack_delay_jitter_us,
                                              cfg.seed, index);
        params.client_stack_delay_us = delay;
        params.server_stack_delay_us = delay;
        RunResult result = run_scenario(params);

        CsvRow row;
        row.scenario_id = params.id;
        row.mode = params.mode;
        row.rtt_us = params.rtt_us;
        row.delta_t_us = params.delta_t_us;
        row.cert_bytes = params.cert_bytes;
        row.profile = params.profile.name;
        row.ttfb_us = extract_ttfb(result.events);
        row.probes_sent = count_client_probes(result.events);
        row.spurious_retransmits = count_spurious_retransmits(result.events);
        out.csv_row = csv_line(row);
        out.trace_text = emit_trace(result.events);
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
    }
    return out;
}

}  // namespace runner_impl

// Executes every expanded cell (optionally in parallel) and assembles the
// CSV in expansion order, so parallel output equals serial output. With a
// non-empty out_dir one trace file is written per run plus summary.csv.
inline GridRunOutcome run_grid(const GridConfig& cfg, int parallelism = 1,
                               const std::string& out_dir = "") {
    const std::vector<GridCell> cells = expand_grid(cfg);
    std::vector<CellOutcome> outcomes(cells.size());

    if (parallelism <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            outcomes[i] = runner_impl::run_cell(cfg, cells[i], i);
        }
    } else {
        std::vector<std::future<void>> workers;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < parallelism; ++w) {
            workers.push_back(std::async(std::launch::async, [&] {
                while (true) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= cells.size()) return;
                    outcomes[i] = runner_impl::run_cell(cfg, cells[i], i);
                }
            }));
        }
        for (auto& w : workers) w.get();
    }

    GridRunOutcome out;
    std::string csv;
    if (cfg.stack_delay_jitter_us > 0) {
        csv += "# seed=" + std::to_string(cfg.seed) + "\n";
    }
    csv += kCsvHeader;
    csv += '\n';
    for (const CellOutcome& o : outcomes) {
        if (o.failed) {
            out.failed_cells.push_back(o.scenario_id + ": " + o.error);
            continue;
        }
        csv += o.csv_row;
        csv += '\n';
    }
    out.csv = std::move(csv);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        for (const CellOutcome& o : outcomes) {
            if (o.failed) continue;
            std::ofstream trace_file(std::filesystem::path(out_dir) /
                                     (runner_impl::sanitize_id(o.scenario_id) + ".trace"));
            trace_file << o.trace_text;
        }
        std::ofstream csv_file(std::filesystem::path(out_dir) / "summary.csv");
        csv_file << out.csv;
    }
    return out;
}

}  // namespace quicsim
