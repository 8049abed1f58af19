// Command-line front end: scenario grids, canonical experiment
// reproduction, and offline classification of handshake observations.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "quicsim/analysis.hpp"
#include "quicsim/config.hpp"
#include "quicsim/experiments.hpp"
#include "quicsim/profiles.hpp"
#include "quicsim/runner.hpp"
#include "quicsim/trace.hpp"

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::filesystem::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << content;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int parallelism,
            std::optional<std::uint64_t> seed) {
    quicsim::GridConfig cfg;
    try {
        cfg = quicsim::parse_grid_config(read_file(config_path));
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    if (seed) cfg.seed = *seed;
    quicsim::GridRunOutcome outcome = quicsim::run_grid(cfg, parallelism, out_dir);
    std::cout << outcome.csv;
    if (!outcome.failed_cells.empty()) {
        std::cerr << outcome.failed_cells.size() << " cell(s) failed:\n";
        for (const std::string& f : outcome.failed_cells) {
            std::cerr << "  " << f << "\n";
        }
        return 1;
    }
    return 0;
}

int cmd_reproduce(const std::string& figure, const std::string& out_dir) {
    using namespace quicsim;
    std::string csv;
    std::string file;
    if (figure == "fig2") {
        csv = experiments::reproduce_pto_evolution_csv();
        file = "fig2_pto_evolution.csv";
    } else if (figure == "fig3") {
        csv = experiments::reproduce_sweet_spot_csv();
        file = "fig3_sweet_spot.csv";
    } else if (figure == "loss_first_server_flight") {
        csv = experiments::reproduce_loss_csv(LossScenario::FirstServerFlightRemainder);
        file = "loss_first_server_flight.csv";
    } else if (figure == "loss_second_client_flight") {
        csv = experiments::reproduce_loss_csv(LossScenario::SecondClientFlight);
        file = "loss_second_client_flight.csv";
    } else if (figure == "amplification") {
        csv = experiments::reproduce_amplification_csv();
        file = "amplification.csv";
    } else if (figure == "guidelines") {
        csv = experiments::reproduce_guidelines_csv();
        file = "guidelines.csv";
    } else {
        std::cerr << "unknown figure '" << figure
                  << "' (expected fig2, fig3, loss_first_server_flight, "
                     "loss_second_client_flight, amplification, guidelines)\n";
        return 2;
    }
    std::cout << csv;
    if (!out_dir.empty()) {
        write_file((std::filesystem::path(out_dir) / file).string(), csv);
    }
    return 0;
}

// Observation files reuse the trace schema; events may carry a conn=<id>
// detail to hold several observations in one file.
int cmd_classify(const std::string& path, const std::string& out_path) {
    using namespace quicsim;
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    std::vector<std::string> errors;
    std::vector<TraceEvent> events = parse_trace_lenient(text, &errors);
    for (const std::string& e : errors) {
        std::cerr << e << "\n";
    }
    if (events.empty() && !errors.empty()) {
        std::cerr << "all rows malformed\n";
        return 1;
    }

    std::map<std::int64_t, std::vector<TraceEvent>> by_conn;
    for (const TraceEvent& e : events) {
        std::int64_t conn = 0;
        if (auto it = e.detail.find("conn"); it != e.detail.end()) conn = it->second;
        by_conn[conn].push_back(e);
    }

    std::ostringstream os;
    os << "observation_id,classification,ack_sh_delay_us,ack_delay_exceeds_rtt,"
          "ack_delay_minus_rtt_us\n";
    for (const auto& [conn, conn_events] : by_conn) {
        HandshakeObservation obs = observation_from_trace(conn_events);
        os << conn << ',' << to_string(classify(obs)) << ',';
        if (auto d = ack_sh_delay(obs)) {
            os << *d;
        } else {
            os << "undefined";
        }
        os << ',';
        if (auto cmp = ack_delay_vs_rtt(obs)) {
            os << (cmp->exceeds_rtt ? 1 : 0) << ',' << cmp->difference_us;
        } else {
            os << "undefined,undefined";
        }
        os << '\n';
    }
    std::cout << os.str();
    if (!out_path.empty()) {
        write_file(out_path, os.str());
    }
    return 0;
}

int cmd_profiles() {
    using namespace quicsim;
    std::cout << "name,default_pto_ms,second_flight_datagrams,probe_count,quirks\n";
    for (const ImplementationProfile& p : builtin_profiles()) {
        std::cout << p.name << ',' << p.default_pto_us / kMicrosPerMilli << ',';
        for (std::size_t i = 0; i < p.second_flight_datagrams.size(); ++i) {
            if (i) std::cout << '|';
            std::cout << p.second_flight_datagrams[i];
        }
        std::cout << ',' << p.probe_count << ',';
        bool first = true;
        for (Quirk q : p.quirks) {
            if (!first) std::cout << '|';
            std::cout << to_string(q);
            first = false;
        }
        std::cout << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deterministic QUIC handshake simulator: instant ACK vs wait-for-certificate"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    int parallelism = 1;
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "execute a scenario grid from a config file");
    run->add_option("--config", config_path, "JSON scenario configuration")->required();
    run->add_option("--out-dir", out_dir, "directory for traces and summary.csv");
    run->add_option("--parallelism", parallelism, "concurrent grid cells")->default_val(1);
    run->add_option("--seed", seed, "override the config seed");

    std::string figure;
    std::string repro_out_dir;
    auto* repro = app.add_subcommand("reproduce", "run a canonical experiment and print its CSV");
    repro->add_option("figure", figure,
                      "fig2 | fig3 | loss_first_server_flight | loss_second_client_flight | "
                      "amplification | guidelines")
        ->required();
    repro->add_option("--out-dir", repro_out_dir, "also write the CSV here");

    std::string obs_path;
    std::string classify_out;
    auto* classify = app.add_subcommand("classify-file", "classify handshake observations");
    classify->add_option("observations", obs_path, "observation file (trace schema)")->required();
    classify->add_option("--out", classify_out, "write the classification CSV here");

    app.add_subcommand("profiles", "list built-in implementation profiles");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, parallelism, seed);
        if (repro->parsed()) return cmd_reproduce(figure, repro_out_dir);
        if (classify->parsed()) return cmd_classify(obs_path, classify_out);
        return cmd_profiles();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
