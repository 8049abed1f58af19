#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "quicsim/netem.hpp"
#include "quicsim/recovery.hpp"
#include "quicsim/sim_time.hpp"
#include "quicsim/trace.hpp"

namespace quicsim {

// ---------------------------------------------------------------------------
// Closed-form PTO evolution (numeric model next to the simulator).

struct PtoPoint {
    int sample_index = 0;
    Duration pto_wfc_us = 0;
    Duration pto_iack_us = 0;

    Duration gap_us() const { return pto_wfc_us - pto_iack_us; }
};

struct PtoSeries {
    Duration rtt_us = 0;
    Duration delta_t_us = 0;
    std::vector<PtoPoint> points;
};

// Both tracks are seeded with their first RTT sample (rtt + delta_t for WFC,
// rtt for IACK) and then fed n-1 samples of exactly rtt. Point 0's gap is
// exactly 3 * delta_t and contracts from there.
inline PtoSeries pto_evolution(Duration rtt_us, Duration delta_t_us, int n) {
    if (rtt_us <= 0 || n < 1) {
        throw std::logic_error("pto_evolution: rtt must be positive and n >= 1");
    }
    PtoSeries series;
    series.rtt_us = rtt_us;
    series.delta_t_us = delta_t_us;
    RttEstimator wfc;
    RttEstimator iack;
    wfc.update(rtt_us + delta_t_us, 0, false);
    iack.update(rtt_us, 0, false);
    for (int i = 0; i < n; ++i) {
        if (i > 0) {
            wfc.update(rtt_us, 0, false);
            iack.update(rtt_us, 0, false);
        }
        PtoPoint pt;
        pt.sample_index = i;
        pt.pto_wfc_us = pto_duration(wfc, Space::Initial, 0);
        pt.pto_iack_us = pto_duration(iack, Space::Initial, 0);
        series.points.push_back(pt);
    }
    return series;
}

// A delay between frontend and certificate store at or above the client's
// post-IACK PTO (3 x RTT) makes the probe timer fire before the ServerHello
// can arrive.
inline bool spurious_retransmit(Duration rtt_us, Duration delta_t_us) {
    if (rtt_us <= 0) {
        throw std::logic_error("spurious_retransmit: rtt must be positive");
    }
    return delta_t_us >= 3 * rtt_us;
}

inline double relative_improvement(Duration rtt_us, Duration delta_t_us) {
    if (rtt_us <= 0) {
        throw std::logic_error("relative_improvement: rtt must be positive");
    }
    return 3.0 * static_cast<double>(delta_t_us) / static_cast<double>(rtt_us);
}

// ---------------------------------------------------------------------------
// Deployment guideline decision function.

enum class LossScenario { None, FirstServerFlightRemainder, SecondClientFlight };

inline const char* to_string(LossScenario l) {
    switch (l) {
        case LossScenario::None: return "none";
        case LossScenario::FirstServerFlightRemainder: return "first_server_flight_remainder";
        case LossScenario::SecondClientFlight: return "second_client_flight";
    }
    return "?";
}

inline ServerMode recommend_mode(bool cert_exceeds_limit, LossScenario loss, Duration delta_t_us,
                                 Duration rtt_us) {
    if (cert_exceeds_limit) {
        return ServerMode::Iack;
    }
    switch (loss) {
        case LossScenario::FirstServerFlightRemainder:
            return ServerMode::Wfc;
        case LossScenario::SecondClientFlight:
            return ServerMode::Iack;
        case LossScenario::None:
            return delta_t_us < 3 * rtt_us ? ServerMode::Iack : ServerMode::Wfc;
    }
    return ServerMode::Iack;
}

// ---------------------------------------------------------------------------
// Metric extraction from traces.

inline std::optional<SimTime> first_client_emit(const std::vector<TraceEvent>& events) {
    for (const TraceEvent& e : events) {
        if (e.actor == Actor::Client && e.kind == TraceKind::Emit) return e.time_us;
    }
    return std::nullopt;
}

// Time from the client's first emission to its reception of the first
// application STREAM byte; nullopt when the run never delivered one.
inline std::optional<Duration> extract_ttfb(const std::vector<TraceEvent>& events) {
    auto start = first_client_emit(events);
    if (!start) return std::nullopt;
    for (const TraceEvent& e : events) {
        if (e.actor == Actor::Client && e.kind == TraceKind::FirstAppByte) {
            return e.time_us - *start;
        }
    }
    return std::nullopt;
}

inline std::optional<SimTime> handshake_complete_time(const std::vector<TraceEvent>& events,
                                                      Actor actor) {
    for (const TraceEvent& e : events) {
        if (e.actor == actor && e.kind == TraceKind::HandshakeComplete) return e.time_us;
    }
    return std::nullopt;
}

inline int count_client_probes(const std::vector<TraceEvent>& events) {
    int n = 0;
    for (const TraceEvent& e : events) {
        if (e.actor == Actor::Client && e.kind == TraceKind::Emit && e.detail.count("probe")) {
            ++n;
        }
    }
    return n;
}

inline std::optional<SimTime> first_serverhello_reception(const std::vector<TraceEvent>& events) {
    for (const TraceEvent& e : events) {
        if (e.actor == Actor::Client && e.kind == TraceKind::Receive) {
            for (const std::string& f : e.frames) {
                if (f == "CRYPTO:server_hello") return e.time_us;
            }
        }
    }
    return std::nullopt;
}

// Probes emitted before the ServerHello ever arrived: retransmissions that
// loss-free runs would not have needed.
inline int count_spurious_retransmits(const std::vector<TraceEvent>& events) {
    auto sh = first_serverhello_reception(events);
    int n = 0;
    for (const TraceEvent& e : events) {
        if (e.actor == Actor::Client && e.kind == TraceKind::Emit && e.detail.count("probe")) {
            if (!sh || e.time_us < *sh) ++n;
        }
    }
    return n;
}

// First armed PTO duration after the first RTT sample; the simulator-side
// counterpart of pto_evolution point 0.
inline std::optional<Duration> first_pto_after_first_sample(const std::vector<TraceEvent>& events,
                                                            Actor actor) {
    bool sampled = false;
    for (const TraceEvent& e : events) {
        if (e.actor != actor) continue;
        if (e.kind == TraceKind::RttSample && !e.detail.count("quirk_discarded")) sampled = true;
        if (sampled && e.kind == TraceKind::PtoArmed) {
            auto it = e.detail.find("duration_us");
            if (it != e.detail.end()) return it->second;
        }
    }
    return std::nullopt;
}

// Replays a trace and checks the anti-amplification budget at every server
// emission before address validation (a received Handshake-space packet,
// flagged on the receive event).
inline std::optional<std::string> audit_amplification(const std::vector<TraceEvent>& events,
                                                      std::int64_t factor = 3) {
    std::int64_t received = 0;
    std::int64_t sent = 0;
    bool validated = false;
    for (const TraceEvent& e : events) {
        if (e.actor != Actor::Server) continue;
        if (e.kind == TraceKind::Receive && e.size_bytes) {
            received += *e.size_bytes;
            if (e.detail.count("address_validated")) validated = true;
        }
        if (e.kind == TraceKind::Emit && e.size_bytes && !validated) {
            sent += *e.size_bytes;
            if (sent > factor * received) {
                return "amplification violated at t=" + format_us(e.time_us) + ": sent " +
                       std::to_string(sent) + " B vs received " + std::to_string(received) + " B";
            }
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Summaries and CSV output.

struct TtfbSummary {
    std::string scenario_id;
    std::vector<Duration> ttfbs_us;  // completed runs, sorted ascending
    int incomplete = 0;

    bool empty() const { return ttfbs_us.empty(); }

    // Nearest-rank percentile over completed runs.
    Duration percentile(int p) const {
        if (ttfbs_us.empty()) {
            throw std::logic_error("TtfbSummary::percentile on empty summary");
        }
        const std::size_t n = ttfbs_us.size();
        std::size_t rank = static_cast<std::size_t>(
            std::ceil(static_cast<double>(p) / 100.0 * static_cast<double>(n)));
        if (rank == 0) rank = 1;
        return ttfbs_us[rank - 1];
    }

    Duration median() const { return percentile(50); }
};

inline TtfbSummary summarize(const std::string& scenario_id,
                             const std::vector<std::optional<Duration>>& run_ttfbs) {
    if (run_ttfbs.empty()) {
        throw std::logic_error("summarize: needs at least one run");
    }
    TtfbSummary s;
    s.scenario_id = scenario_id;
    for (const auto& t : run_ttfbs) {
        if (t) {
            s.ttfbs_us.push_back(*t);
        } else {
            ++s.incomplete;
        }
    }
    std::sort(s.ttfbs_us.begin(), s.ttfbs_us.end());
    return s;
}

inline constexpr const char* kCsvHeader =
    "scenario_id,mode,rtt_us,delta_t_us,cert_bytes,profile,ttfb_us,completed,probes_sent,"
    "spurious_retransmits";

struct CsvRow {
    std::string scenario_id;
    ServerMode mode = ServerMode::Iack;
    Duration rtt_us = 0;
    Duration delta_t_us = 0;
    std::int64_t cert_bytes = 0;
    std::string profile;
    std::optional<Duration> ttfb_us;
    int probes_sent = 0;
    int spurious_retransmits = 0;
};

inline std::string csv_line(const CsvRow& r) {
    std::ostringstream os;
    os << r.scenario_id << ',' << to_string(r.mode) << ',' << r.rtt_us << ',' << r.delta_t_us
       << ',' << r.cert_bytes << ',' << r.profile << ',' << (r.ttfb_us ? *r.ttfb_us : -1) << ','
       << (r.ttfb_us ? 1 : 0) << ',' << r.probes_sent << ',' << r.spurious_retransmits;
    return os.str();
}

}  // namespace quicsim
