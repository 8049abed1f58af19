#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "quicsim/analysis.hpp"
#include "quicsim/scenario.hpp"

namespace quicsim::experiments {

// Serialization-free regime: at 100 Gbit/s every handshake datagram
// serializes in exactly 1 us, and the one-way delay is compensated by that
// 1 us so a measured RTT sample equals the nominal RTT to the microsecond.
// This is the configuration under which the 3x delta_t law is exact.
inline ScenarioParams clean_path(Duration rtt_us, Duration delta_t_us, ServerMode mode,
                                 const ImplementationProfile& profile) {
    ScenarioParams p;
    p.rtt_us = rtt_us;
    p.owd_us = rtt_us / 2 - 1;
    p.delta_t_us = delta_t_us;
    p.bandwidth_bits_per_s = 100'000'000'000;
    p.mode = mode;
    p.profile = profile;
    p.id = std::string("clean/") + to_string(mode) + "/" + profile.name;
    return p;
}

// The testbed configuration: 10 Mbit/s, symmetric one-way delays.
inline ScenarioParams testbed_path(Duration rtt_us, Duration delta_t_us, ServerMode mode,
                                   const ImplementationProfile& profile) {
    ScenarioParams p;
    p.rtt_us = rtt_us;
    p.delta_t_us = delta_t_us;
    p.bandwidth_bits_per_s = 10'000'000;
    p.mode = mode;
    p.profile = profile;
    p.id = std::string("testbed/") + to_string(mode) + "/" + profile.name;
    return p;
}

inline LossRule second_client_flight_loss() {
    LossRule r;
    r.direction = Direction::ClientToServer;
    r.by_content = true;
    r.content = ContentSelector::EntireSecondClientFlight;
    return r;
}

inline LossRule first_server_flight_remainder_loss() {
    LossRule r;
    r.direction = Direction::ServerToClient;
    r.by_content = true;
    r.content = ContentSelector::RemainingFirstServerFlight;
    return r;
}

struct HandshakeMetrics {
    std::optional<Duration> ttfb_us;
    std::optional<SimTime> client_handshake_complete_us;
    std::optional<SimTime> server_handshake_complete_us;
    std::optional<Duration> first_pto_us;  // armed right after the first RTT sample
    std::optional<SimTime> first_serverhello_us;
    int probes_sent = 0;
    int spurious_retransmits = 0;
    bool probe_before_serverhello = false;
    RunStatus status = RunStatus::Completed;
    std::vector<TraceEvent> events;
};

inline HandshakeMetrics run_and_measure(const ScenarioParams& params) {
    RunResult result = run_scenario(params);
    HandshakeMetrics m;
    m.ttfb_us = extract_ttfb(result.events);
    m.client_handshake_complete_us = handshake_complete_time(result.events, Actor::Client);
    m.server_handshake_complete_us = handshake_complete_time(result.events, Actor::Server);
    m.first_pto_us = first_pto_after_first_sample(result.events, Actor::Client);
    m.first_serverhello_us = first_serverhello_reception(result.events);
    m.probes_sent = count_client_probes(result.events);
    m.spurious_retransmits = count_spurious_retransmits(result.events);
    if (m.first_serverhello_us) {
        for (const TraceEvent& e : result.events) {
            if (e.actor == Actor::Client && e.kind == TraceKind::Emit && e.detail.count("probe") &&
                e.time_us < *m.first_serverhello_us) {
                m.probe_before_serverhello = true;
            }
        }
    } else {
        m.probe_before_serverhello = m.probes_sent > 0;
    }
    m.status = result.report.status;
    m.events = std::move(result.events);
    return m;
}

// ---------------------------------------------------------------------------
// Canonical comparison CSVs for the reproduce subcommands.

// PTO evolution, model vs simulator point 0, across the RTT/delta_t grid.
inline std::string reproduce_pto_evolution_csv() {
    std::ostringstream os;
    os << "rtt_us,delta_t_us,sample_index,pto_wfc_us,pto_iack_us,gap_us,"
          "sim_first_pto_wfc_us,sim_first_pto_iack_us,sim_gap_us\n";
    const ImplementationProfile profile = lookup_profile("quic-go");
    for (Duration rtt : {ms(1), ms(9), ms(20), ms(100), ms(300)}) {
        for (Duration dt : {ms(1), ms(4), ms(10)}) {
            auto wfc = run_and_measure(clean_path(rtt, dt, ServerMode::Wfc, profile));
            auto iack = run_and_measure(clean_path(rtt, dt, ServerMode::Iack, profile));
            PtoSeries series = pto_evolution(rtt, dt, 8);
            for (const PtoPoint& pt : series.points) {
                os << rtt << ',' << dt << ',' << pt.sample_index << ',' << pt.pto_wfc_us << ','
                   << pt.pto_iack_us << ',' << pt.gap_us() << ',';
                if (pt.sample_index == 0 && wfc.first_pto_us && iack.first_pto_us) {
                    os << *wfc.first_pto_us << ',' << *iack.first_pto_us << ','
                       << (*wfc.first_pto_us - *iack.first_pto_us);
                } else {
                    os << "-1,-1,-1";
                }
                os << '\n';
            }
        }
    }
    return os.str();
}

// Spurious-retransmit region: relative improvement and the boundary between
// useful and spurious probing, model and simulator side by side.
inline std::string reproduce_sweet_spot_csv() {
    std::ostringstream os;
    os << "rtt_us,delta_t_us,relative_improvement,model_spurious,sim_probe_before_serverhello\n";
    const ImplementationProfile profile = lookup_profile("quic-go");
    for (Duration rtt : {ms(1), ms(9), ms(20)}) {
        for (Duration dt : {ms(1), rtt, 2 * rtt, 3 * rtt - ms(1), 3 * rtt + ms(1), 4 * rtt}) {
            auto m = run_and_measure(clean_path(rtt, dt, ServerMode::Iack, profile));
            os << rtt << ',' << dt << ',' << relative_improvement(rtt, dt) << ','
               << (spurious_retransmit(rtt, dt) ? 1 : 0) << ','
               << (m.probe_before_serverhello ? 1 : 0) << '\n';
        }
    }
    return os.str();
}

inline std::string reproduce_loss_csv(LossScenario which) {
    std::ostringstream os;
    os << "profile,loss,ttfb_wfc_us,ttfb_iack_us,iack_minus_wfc_us\n";
    for (const char* name : {"quic-go", "neqo", "ngtcp2", "aioquic", "picoquic"}) {
        const ImplementationProfile profile = lookup_profile(name);
        auto with_loss = [&](ServerMode mode) {
            ScenarioParams p = which == LossScenario::SecondClientFlight
                                   ? clean_path(ms(9), ms(4), mode, profile)
                                   : testbed_path(ms(9), ms(4), mode, profile);
            p.loss_rules = {which == LossScenario::SecondClientFlight
                                ? second_client_flight_loss()
                                : first_server_flight_remainder_loss()};
            return run_and_measure(p);
        };
        auto wfc = with_loss(ServerMode::Wfc);
        auto iack = with_loss(ServerMode::Iack);
        os << name << ',' << to_string(which) << ',' << (wfc.ttfb_us ? *wfc.ttfb_us : -1) << ','
           << (iack.ttfb_us ? *iack.ttfb_us : -1) << ',';
        if (wfc.ttfb_us && iack.ttfb_us) {
            os << (*iack.ttfb_us - *wfc.ttfb_us);
        } else {
            os << "incomplete";
        }
        os << '\n';
    }
    return os.str();
}

// Anti-amplification scenario: large certificate, long certificate-store
// delay; handshake completion and TTFB per mode.
inline std::string reproduce_amplification_csv() {
    std::ostringstream os;
    os << "profile,mode,handshake_complete_us,ttfb_us,probes_sent\n";
    for (const char* name : {"neqo", "ngtcp2", "picoquic"}) {
        const ImplementationProfile profile = lookup_profile(name);
        for (ServerMode mode : {ServerMode::Wfc, ServerMode::Iack}) {
            ScenarioParams p = testbed_path(ms(9), ms(200), mode, profile);
            p.cert_bytes = 5113;
            auto m = run_and_measure(p);
            os << name << ',' << to_string(mode) << ','
               << (m.client_handshake_complete_us ? *m.client_handshake_complete_us : -1) << ','
               << (m.ttfb_us ? *m.ttfb_us : -1) << ',' << m.probes_sent << '\n';
        }
    }
    return os.str();
}

struct GuidelineCell {
    bool cert_exceeds_limit;
    LossScenario loss;
    Duration delta_t_us;
    ServerMode recommended;
};

inline std::vector<GuidelineCell> guideline_cells(Duration rtt_us) {
    std::vector<GuidelineCell> cells;
    for (bool exceeds : {false, true}) {
        for (LossScenario loss : {LossScenario::FirstServerFlightRemainder,
                                  LossScenario::SecondClientFlight}) {
            // loss columns; evaluated at both delta_t values by callers
            cells.push_back({exceeds, loss, ms(4), recommend_mode(exceeds, loss, ms(4), rtt_us)});
        }
        for (Duration dt : {ms(4), ms(40)}) {
            cells.push_back(
                {exceeds, LossScenario::None, dt, recommend_mode(exceeds, LossScenario::None, dt, rtt_us)});
        }
    }
    return cells;
}

inline HandshakeMetrics run_guideline_cell(const GuidelineCell& cell, ServerMode mode,
                                           Duration rtt_us) {
    ScenarioParams p = testbed_path(rtt_us, cell.delta_t_us, mode, lookup_profile("quic-go"));
    p.cert_bytes = cell.cert_exceeds_limit ? 5113 : 1212;
    if (cell.loss == LossScenario::SecondClientFlight) {
        p.loss_rules = {second_client_flight_loss()};
    } else if (cell.loss == LossScenario::FirstServerFlightRemainder) {
        p.loss_rules = {first_server_flight_remainder_loss()};
    }
    return run_and_measure(p);
}

inline std::string reproduce_guidelines_csv() {
    std::ostringstream os;
    os << "cert_exceeds_limit,loss,delta_t_us,recommended,ttfb_recommended_us,ttfb_alternative_us,"
          "recommended_not_worse\n";
    const Duration rtt = ms(9);
    for (const GuidelineCell& base : guideline_cells(rtt)) {
        std::vector<Duration> dts = base.loss == LossScenario::None
                                        ? std::vector<Duration>{base.delta_t_us}
                                        : std::vector<Duration>{ms(4), ms(40)};
        for (Duration dt : dts) {
            GuidelineCell cell = base;
            cell.delta_t_us = dt;
            cell.recommended = recommend_mode(cell.cert_exceeds_limit, cell.loss, dt, rtt);
            const ServerMode alt =
                cell.recommended == ServerMode::Iack ? ServerMode::Wfc : ServerMode::Iack;
            auto rec = run_guideline_cell(cell, cell.recommended, rtt);
            auto other = run_guideline_cell(cell, alt, rtt);
            const bool ok = rec.ttfb_us && other.ttfb_us && *rec.ttfb_us <= *other.ttfb_us;
            os << (cell.cert_exceeds_limit ? 1 : 0) << ',' << to_string(cell.loss) << ',' << dt
               << ',' << to_string(cell.recommended) << ','
               << (rec.ttfb_us ? *rec.ttfb_us : -1) << ',' << (other.ttfb_us ? *other.ttfb_us : -1)
               << ',' << (ok ? 1 : 0) << '\n';
        }
    }
    return os.str();
}

}  // namespace quicsim::experiments
