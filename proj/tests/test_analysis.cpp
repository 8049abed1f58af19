#include <catch_amalgamated.hpp>

#include <array>
#include <cstdlib>
#include <vector>

#include "quicsim/analysis.hpp"

using namespace quicsim;

namespace {

// Independent EWMA recomputation for the PTO-evolution series, mirroring the
// estimator rules with a plain loop.
std::vector<std::int64_t> oracle_gaps(std::int64_t rtt, std::int64_t dt, int n) {
    auto step = [](std::array<std::int64_t, 2>& sv, std::int64_t sample) {
        auto& [s, v] = sv;
        std::int64_t dev = s > sample ? s - sample : sample - s;
        v = (3 * v + dev + 2) / 4;
        s = (7 * s + sample + 4) / 8;
    };
    auto pto = [](const std::array<std::int64_t, 2>& sv) {
        std::int64_t var_term = 4 * sv[1];
        if (var_term < 1000) var_term = 1000;
        return sv[0] + var_term;
    };
    std::array<std::int64_t, 2> wfc{rtt + dt, (rtt + dt + 1) / 2};
    std::array<std::int64_t, 2> iack{rtt, (rtt + 1) / 2};
    std::vector<std::int64_t> gaps;
    for (int i = 0; i < n; ++i) {
        if (i > 0) {
            step(wfc, rtt);
            step(iack, rtt);
        }
        gaps.push_back(pto(wfc) - pto(iack));
    }
    return gaps;
}

}  // namespace

TEST_CASE("pto_evolution point 0: exact 3x delta_t gap") {
    auto series = pto_evolution(ms(9), ms(4), 8);
    CHECK(series.points[0].pto_wfc_us == 39000);
    CHECK(series.points[0].pto_iack_us == 27000);
    CHECK(series.points[0].gap_us() == ms(12));

    // delta_t 0 keeps the tracks identical at every index
    auto same = pto_evolution(ms(9), 0, 10);
    for (const PtoPoint& pt : same.points) {
        CHECK(pt.pto_wfc_us == pt.pto_iack_us);
    }
}

TEST_CASE("pto_evolution matches the independent recomputation and contracts") {
    for (auto [rtt, dt] : std::vector<std::pair<Duration, Duration>>{
             {ms(9), ms(4)}, {ms(1), ms(1)}, {ms(20), ms(10)}, {ms(100), ms(4)}, {ms(300), ms(10)}}) {
        const int n = 25;
        auto series = pto_evolution(rtt, dt, n);
        auto expected = oracle_gaps(rtt, dt, n);
        REQUIRE(series.points.size() == static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            INFO("rtt=" << rtt << " dt=" << dt << " i=" << i);
            REQUIRE(series.points[i].gap_us() == expected[i]);
        }
        // the gap starts at exactly 3*delta_t, rises briefly (the WFC
        // track's rttvar absorbs the delta_t step), peaks by sample 2 within
        // 18%, then decays monotonically and ends well below the start
        CHECK(series.points[0].gap_us() == 3 * dt);
        for (int i = 0; i < n; ++i) {
            CHECK(series.points[i].gap_us() <= (3 * dt * 118) / 100);
            if (i >= 3) CHECK(series.points[i].gap_us() <= series.points[i - 1].gap_us());
        }
        CHECK(series.points[12].gap_us() < series.points[0].gap_us());
        CHECK(series.points[24].gap_us() <= series.points[0].gap_us() / 10);
    }
}

TEST_CASE("pto_evolution rejects bad inputs") {
    CHECK_THROWS_AS(pto_evolution(0, ms(4), 3), std::logic_error);
    CHECK_THROWS_AS(pto_evolution(ms(9), ms(4), 0), std::logic_error);
}

TEST_CASE("spurious retransmit boundary") {
    CHECK_FALSE(spurious_retransmit(ms(9), 26000));  // 26 ms < 27 ms
    CHECK(spurious_retransmit(ms(9), 28000));
    CHECK_FALSE(spurious_retransmit(3000, 7200));  // the Cloudflare-like regime
    // the tie counts as spurious: the probe fires at or before the flight
    CHECK(spurious_retransmit(ms(9), ms(27)));
    CHECK_THROWS_AS(spurious_retransmit(0, 0), std::logic_error);

    CHECK(relative_improvement(ms(9), ms(4)) == Catch::Approx(12.0 / 9.0));
    CHECK(relative_improvement(ms(1), ms(4)) == Catch::Approx(12.0));
}

TEST_CASE("recommend_mode reproduces the deployment table") {
    const Duration rtt = ms(9);
    // certificate within the limit
    CHECK(recommend_mode(false, LossScenario::FirstServerFlightRemainder, ms(4), rtt) ==
          ServerMode::Wfc);
    CHECK(recommend_mode(false, LossScenario::SecondClientFlight, ms(4), rtt) == ServerMode::Iack);
    CHECK(recommend_mode(false, LossScenario::None, ms(4), rtt) == ServerMode::Iack);
    CHECK(recommend_mode(false, LossScenario::None, ms(40), rtt) == ServerMode::Wfc);
    // certificate above the limit: always instant ACK
    CHECK(recommend_mode(true, LossScenario::FirstServerFlightRemainder, ms(4), rtt) ==
          ServerMode::Iack);
    CHECK(recommend_mode(true, LossScenario::SecondClientFlight, ms(4), rtt) == ServerMode::Iack);
    CHECK(recommend_mode(true, LossScenario::None, ms(4), rtt) == ServerMode::Iack);
    CHECK(recommend_mode(true, LossScenario::None, ms(40), rtt) == ServerMode::Iack);
    // the boundary belongs to the WFC column
    CHECK(recommend_mode(false, LossScenario::None, ms(27), rtt) == ServerMode::Wfc);
}

TEST_CASE("extract_ttfb walks from the first emission to the first app byte") {
    std::vector<TraceEvent> events;
    TraceEvent ch;
    ch.time_us = 100;
    ch.actor = Actor::Client;
    ch.kind = TraceKind::Emit;
    events.push_back(ch);
    SECTION("missing first byte marks the run incomplete") {
        CHECK_FALSE(extract_ttfb(events).has_value());
    }
    SECTION("ttfb is relative to the ClientHello emission") {
        TraceEvent fab;
        fab.time_us = 25000;
        fab.actor = Actor::Client;
        fab.kind = TraceKind::FirstAppByte;
        events.push_back(fab);
        CHECK(extract_ttfb(events) == Duration{24900});
    }
}

TEST_CASE("summarize uses nearest-rank percentiles and excludes incomplete runs") {
    SECTION("median of three") {
        auto s = summarize("x", {ms(10), ms(11), ms(12)});
        CHECK(s.median() == ms(11));
        CHECK(s.percentile(100) == ms(12));
        CHECK(s.percentile(1) == ms(10));
    }
    SECTION("single run") {
        auto s = summarize("x", {ms(7)});
        CHECK(s.median() == ms(7));
    }
    SECTION("incomplete runs are excluded but counted") {
        auto s = summarize("x", {ms(10), std::nullopt, ms(12), std::nullopt});
        CHECK(s.ttfbs_us.size() == 2);
        CHECK(s.incomplete == 2);
        CHECK(s.median() == ms(10));  // nearest rank: ceil(0.5*2) = 1st
    }
    SECTION("all incomplete yields an empty summary") {
        auto s = summarize("x", {std::nullopt, std::nullopt});
        CHECK(s.empty());
        CHECK(s.incomplete == 2);
        CHECK_THROWS_AS(s.median(), std::logic_error);
    }
    SECTION("no runs at all is a contract violation") {
        CHECK_THROWS_AS(summarize("x", {}), std::logic_error);
    }
}

TEST_CASE("csv schema is fixed") {
    CHECK(std::string(kCsvHeader) ==
          "scenario_id,mode,rtt_us,delta_t_us,cert_bytes,profile,ttfb_us,completed,probes_sent,"
          "spurious_retransmits");
    CsvRow row;
    row.scenario_id = "s/rtt9000/dt4000/iack/quic-go/cert1212/r0";
    row.mode = ServerMode::Iack;
    row.rtt_us = ms(9);
    row.delta_t_us = ms(4);
    row.cert_bytes = 1212;
    row.profile = "quic-go";
    row.ttfb_us = 25972;
    row.probes_sent = 0;
    row.spurious_retransmits = 0;
    CHECK(csv_line(row) ==
          "s/rtt9000/dt4000/iack/quic-go/cert1212/r0,iack,9000,4000,1212,quic-go,25972,1,0,0");
    row.ttfb_us.reset();
    CHECK(csv_line(row) ==
          "s/rtt9000/dt4000/iack/quic-go/cert1212/r0,iack,9000,4000,1212,quic-go,-1,0,0,0");
}

TEST_CASE("amplification auditor flags a violating trace") {
    std::vector<TraceEvent> events;
    TraceEvent recv;
    recv.time_us = 0;
    recv.actor = Actor::Server;
    recv.kind = TraceKind::Receive;
    recv.datagram = {Endpoint::Client, 1};
    recv.size_bytes = 1000;
    events.push_back(recv);
    TraceEvent emit;
    emit.time_us = 10;
    emit.actor = Actor::Server;
    emit.kind = TraceKind::Emit;
    emit.datagram = {Endpoint::Server, 1};
    emit.size_bytes = 3001;
    events.push_back(emit);
    CHECK(audit_amplification(events).has_value());
    events[1].size_bytes = 3000;
    CHECK_FALSE(audit_amplification(events).has_value());
}
