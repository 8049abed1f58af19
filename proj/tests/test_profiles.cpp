#include <catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "quicsim/config.hpp"
#include "quicsim/profiles.hpp"

using namespace quicsim;

TEST_CASE("the built-in registry holds exactly the eight measured clients") {
    auto profiles = builtin_profiles();
    REQUIRE(profiles.size() == 8);

    std::set<std::string> names;
    for (const auto& p : profiles) {
        CHECK(p.default_pto_us > 0);
        CHECK(names.insert(p.name).second);  // unique
    }

    auto check = [&](const char* name, std::int64_t pto_ms, std::vector<std::uint64_t> flight,
                     std::set<Quirk> quirks) {
        const ImplementationProfile p = lookup_profile(name);
        CHECK(p.default_pto_us == ms(pto_ms));
        CHECK(p.second_flight_datagrams == flight);
        CHECK(p.quirks == quirks);
    };
    check("aioquic", 200, {2, 3, 4}, {});
    check("go-x-net", 999, {2, 3, 4}, {Quirk::ErroneousPtoInit});
    check("mvfst", 100, {2, 3, 4}, {Quirk::NoProbeOnIack});
    check("neqo", 300, {2, 3}, {});
    check("ngtcp2", 300, {2, 3, 4}, {});
    check("picoquic", 250, {2, 3, 4, 5}, {Quirk::IgnoreIackRttSample, Quirk::NoProbeOnIack});
    check("quic-go", 200, {2, 3, 4}, {});
    check("quiche", 999, {2}, {Quirk::DropCoalescedPingReply});
}

TEST_CASE("profile lookups") {
    CHECK(lookup_profile("mvfst").default_pto_us == ms(100));
    CHECK(lookup_profile("picoquic").has_quirk(Quirk::IgnoreIackRttSample));
    CHECK(lookup_profile("quiche").second_flight_datagrams == std::vector<std::uint64_t>{2});
    CHECK_THROWS(lookup_profile("msquic"));
}

TEST_CASE("quirk overrides at client decision points") {
    const auto picoquic = lookup_profile("picoquic");
    const auto quiche = lookup_profile("quiche");
    const auto quicgo = lookup_profile("quic-go");

    CHECK(apply_quirk(picoquic, DecisionPoint::IngestIackRttSample) ==
          BehaviorOverride::DiscardSample);
    CHECK(apply_quirk(quiche, DecisionPoint::ReceiveCoalescedPingReply) ==
          BehaviorOverride::DropDatagram);
    CHECK(apply_quirk(quicgo, DecisionPoint::IngestIackRttSample) == BehaviorOverride::PassThrough);
    CHECK(apply_quirk(quicgo, DecisionPoint::ProbeAfterIack) == BehaviorOverride::PassThrough);
    CHECK(apply_quirk(picoquic, DecisionPoint::ProbeAfterIack) == BehaviorOverride::SuppressProbe);
    CHECK(apply_quirk(lookup_profile("go-x-net"), DecisionPoint::FirstSampleInit) ==
          BehaviorOverride::MisinitializeEstimator);
}

TEST_CASE("quirk names round-trip; unknown names are configuration errors") {
    for (Quirk q : {Quirk::IgnoreIackRttSample, Quirk::NoProbeOnIack,
                    Quirk::DropCoalescedPingReply, Quirk::RetransmitClientHelloOnPto,
                    Quirk::ErroneousPtoInit}) {
        CHECK(quirk_from_string(to_string(q)) == q);
    }
    CHECK_THROWS(quirk_from_string("resets_cid_twice"));
}

TEST_CASE("registry round-trips through the config profile schema") {
    // serialize every built-in as a custom profile and reload it
    std::string json = R"({"name":"roundtrip","custom_profiles":[)";
    bool first = true;
    for (const auto& p : builtin_profiles()) {
        if (!first) json += ",";
        first = false;
        json += R"({"name":")" + p.name + R"(","default_pto_us":)" +
                std::to_string(p.default_pto_us) + R"(,"second_flight_datagrams":[)";
        for (std::size_t i = 0; i < p.second_flight_datagrams.size(); ++i) {
            if (i) json += ",";
            json += std::to_string(p.second_flight_datagrams[i]);
        }
        json += R"(],"probe_count":)" + std::to_string(p.probe_count) + R"(,"quirks":[)";
        std::size_t qi = 0;
        for (Quirk q : p.quirks) {
            if (qi++) json += ",";
            json += std::string("\"") + to_string(q) + "\"";
        }
        json += "]}";
    }
    json += "]}";

    GridConfig cfg = parse_grid_config(json);
    REQUIRE(cfg.custom_profiles.size() == builtin_profiles().size());
    for (const auto& original : builtin_profiles()) {
        CHECK(resolve_profile(cfg, original.name) == original);
    }
}
