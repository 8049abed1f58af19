#include <catch_amalgamated.hpp>

#include <random>
#include <string>
#include <vector>

#include "quicsim/trace.hpp"

using namespace quicsim;

namespace {

TraceEvent random_event(std::mt19937_64& rng, SimTime at) {
    std::uniform_int_distribution<int> pick(0, 9);
    std::uniform_int_distribution<std::int64_t> num(0, 1'000'000);
    TraceEvent e;
    e.time_us = at;
    e.actor = static_cast<Actor>(pick(rng) % 3);
    e.kind = static_cast<TraceKind>(pick(rng));
    if (pick(rng) % 2) {
        e.datagram = {pick(rng) % 2 ? Endpoint::Client : Endpoint::Server,
                      static_cast<std::uint64_t>(num(rng))};
    }
    if (pick(rng) % 2) e.space = static_cast<Space>(pick(rng) % 3);
    if (pick(rng) % 2) e.frames = {"ACK", "CRYPTO:server_hello", "PADDING"};
    if (pick(rng) % 2) e.size_bytes = num(rng);
    if (pick(rng) % 2) e.detail["sample_us"] = num(rng);
    if (pick(rng) % 2) e.detail["ack_delay_us"] = num(rng);
    return e;
}

HandshakeObservation make_obs(std::vector<ServerRecord> records,
                              std::optional<Duration> rtt = std::nullopt) {
    HandshakeObservation obs;
    obs.client_hello_time_us = 0;
    obs.server_records = std::move(records);
    obs.measured_rtt_us = rtt;
    return obs;
}

}  // namespace

TEST_CASE("emit/parse round-trip is the identity on generated traces") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<TraceEvent> events;
        SimTime t = 0;
        std::uniform_int_distribution<std::int64_t> step(0, 5000);
        const int n = 1 + static_cast<int>(rng() % 40);
        for (int i = 0; i < n; ++i) {
            t += step(rng);
            events.push_back(random_event(rng, t));
        }
        const std::string text = emit_trace(events);
        const std::vector<TraceEvent> parsed = parse_trace(text);
        REQUIRE(parsed == events);
        // serialization is stable byte-for-byte
        REQUIRE(emit_trace(parsed) == text);
    }
}

TEST_CASE("empty stream parses to an empty list") {
    CHECK(parse_trace("").empty());
    CHECK(parse_trace(std::string(kTraceHeader) + "\n").empty());
}

TEST_CASE("malformed lines report their line number") {
    const std::string text = std::string(kTraceHeader) + "\n123 client emit\nnot-a-line\n";
    CHECK_THROWS_AS(parse_trace(text), TraceParseError);
    try {
        parse_trace(text);
    } catch (const TraceParseError& e) {
        CHECK(e.line == 3);
    }
    std::vector<std::string> errors;
    auto events = parse_trace_lenient(text, &errors);
    CHECK(events.size() == 1);
    CHECK(errors.size() == 1);
}

TEST_CASE("validation flags decreasing timestamps and unmatched emits") {
    TraceEvent a;
    a.time_us = 100;
    a.kind = TraceKind::Emit;
    a.datagram = {Endpoint::Client, 1};
    TraceEvent b;
    b.time_us = 50;
    b.kind = TraceKind::Receive;
    b.datagram = {Endpoint::Client, 1};
    CHECK(validate_trace({a, b}).has_value());  // time goes backwards

    b.time_us = 200;
    CHECK_FALSE(validate_trace({a, b}).has_value());
    CHECK(validate_trace({a}).has_value());  // emit without receive/drop
}

TEST_CASE("classification follows the first-record rule") {
    SECTION("separate ACK then ServerHello is an instant ACK") {
        auto obs = make_obs({{9000, true, false, false, Duration{0}},
                             {12200, false, true, false, std::nullopt}});
        CHECK(classify(obs) == HandshakeClass::Iack);
        CHECK(ack_sh_delay(obs) == Duration{3200});  // the Cloudflare median regime
    }
    SECTION("ACK and ServerHello in one datagram is coalesced") {
        auto obs = make_obs({{13000, true, true, true, Duration{4000}}});
        CHECK(classify(obs) == HandshakeClass::Coalesced);
        CHECK(ack_sh_delay(obs) == Duration{0});
    }
    SECTION("an ACK that no ServerHello follows") {
        auto obs = make_obs({{9000, true, false, false, Duration{0}},
                             {25000, true, false, false, Duration{0}}});
        CHECK(classify(obs) == HandshakeClass::AckOnly);
        CHECK_FALSE(ack_sh_delay(obs).has_value());
    }
    SECTION("no records at all") {
        CHECK(classify(make_obs({})) == HandshakeClass::NoResponse);
        CHECK_FALSE(ack_sh_delay(make_obs({})).has_value());
    }
}

TEST_CASE("ack delay versus measured rtt") {
    SECTION("advertised delay above the RTT is flagged") {
        auto obs = make_obs({{9000, true, true, true, Duration{14000}}}, Duration{9000});
        auto cmp = ack_delay_vs_rtt(obs);
        REQUIRE(cmp);
        CHECK(cmp->exceeds_rtt);
        CHECK(cmp->difference_us == 5000);
    }
    SECTION("zero delay never exceeds") {
        auto obs = make_obs({{9000, true, true, true, Duration{0}}}, Duration{9000});
        auto cmp = ack_delay_vs_rtt(obs);
        REQUIRE(cmp);
        CHECK_FALSE(cmp->exceeds_rtt);
    }
    SECTION("delay equal to the RTT does not exceed (strict comparison)") {
        auto obs = make_obs({{9000, true, true, true, Duration{9000}}}, Duration{9000});
        auto cmp = ack_delay_vs_rtt(obs);
        REQUIRE(cmp);
        CHECK_FALSE(cmp->exceeds_rtt);
        CHECK(cmp->difference_us == 0);
    }
    SECTION("missing fields yield no comparison") {
        auto no_rtt = make_obs({{9000, true, true, true, Duration{14000}}});
        CHECK_FALSE(ack_delay_vs_rtt(no_rtt).has_value());
        auto no_delay = make_obs({{9000, true, true, true, std::nullopt}}, Duration{9000});
        CHECK_FALSE(ack_delay_vs_rtt(no_delay).has_value());
    }
}

TEST_CASE("observations derive from trace events") {
    std::vector<TraceEvent> events;
    TraceEvent ch;
    ch.time_us = 0;
    ch.actor = Actor::Client;
    ch.kind = TraceKind::Emit;
    ch.datagram = {Endpoint::Client, 1};
    ch.frames = {"CRYPTO:client_hello", "PADDING"};
    events.push_back(ch);

    TraceEvent sample;
    sample.time_us = 10008;
    sample.actor = Actor::Client;
    sample.kind = TraceKind::RttSample;
    sample.detail["sample_us"] = 10008;
    sample.detail["ack_delay_us"] = 0;

    TraceEvent iack;
    iack.time_us = 10008;
    iack.actor = Actor::Client;
    iack.kind = TraceKind::Receive;
    iack.datagram = {Endpoint::Server, 1};
    iack.frames = {"ACK"};
    iack.detail["ack_delay_us"] = 0;
    events.push_back(iack);
    events.push_back(sample);

    TraceEvent flight;
    flight.time_us = 14962;
    flight.actor = Actor::Client;
    flight.kind = TraceKind::Receive;
    flight.datagram = {Endpoint::Server, 2};
    flight.frames = {"CRYPTO:server_hello", "CRYPTO:cert_chain"};
    events.push_back(flight);

    HandshakeObservation obs = observation_from_trace(events);
    CHECK(obs.client_hello_time_us == 0);
    REQUIRE(obs.server_records.size() == 2);
    CHECK(obs.server_records[0].contains_ack);
    CHECK_FALSE(obs.server_records[0].contains_serverhello);
    CHECK(obs.server_records[1].contains_serverhello);
    CHECK(obs.measured_rtt_us == Duration{10008});
    CHECK(classify(obs) == HandshakeClass::Iack);
    CHECK(ack_sh_delay(obs) == Duration{4954});
}
