#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "quicsim/sim_time.hpp"

namespace quicsim {

// Client-side behavior deviations observed per implementation.
enum class Quirk {
    IgnoreIackRttSample,       // discards the lower RTT induced by the instant ACK
    NoProbeOnIack,             // an instant ACK does not trigger later probe packets
    DropCoalescedPingReply,    // drops PING replies as invalid together with coalesced packets
    RetransmitClientHelloOnPto,  // Initial-space probe resends the ClientHello instead of PING
    ErroneousPtoInit,          // mis-initializes smoothed RTT / variation to a constant
};

inline const char* to_string(Quirk q) {
    switch (q) {
        case Quirk::IgnoreIackRttSample: return "ignore_iack_rtt_sample";
        case Quirk::NoProbeOnIack: return "no_probe_on_iack";
        case Quirk::DropCoalescedPingReply: return "drop_coalesced_ping_reply";
        case Quirk::RetransmitClientHelloOnPto: return "retransmit_clienthello_on_pto";
        case Quirk::ErroneousPtoInit: return "erroneous_pto_init";
    }
    return "?";
}

inline Quirk quirk_from_string(const std::string& name) {
    if (name == "ignore_iack_rtt_sample") return Quirk::IgnoreIackRttSample;
    if (name == "no_probe_on_iack") return Quirk::NoProbeOnIack;
    if (name == "drop_coalesced_ping_reply") return Quirk::DropCoalescedPingReply;
    if (name == "retransmit_clienthello_on_pto") return Quirk::RetransmitClientHelloOnPto;
    if (name == "erroneous_pto_init") return Quirk::ErroneousPtoInit;
    throw std::runtime_error("unknown quirk: " + name);
}

// Per-implementation client defaults: default PTO before the first RTT
// sample and the UDP datagram indices that carry the second client flight
// under that implementation's packet coalescence.
struct ImplementationProfile {
    std::string name;
    Duration default_pto_us = 0;
    std::vector<std::uint64_t> second_flight_datagrams;  // ascending, 1-based sender ordinals
    int probe_count = 1;
    std::set<Quirk> quirks;
    Duration erroneous_init_smoothed_us = 90000;  // used only with ErroneousPtoInit

    bool has_quirk(Quirk q) const { return quirks.count(q) != 0; }

    bool operator==(const ImplementationProfile& o) const {
        return name == o.name && default_pto_us == o.default_pto_us &&
               second_flight_datagrams == o.second_flight_datagrams &&
               probe_count == o.probe_count && quirks == o.quirks &&
               erroneous_init_smoothed_us == o.erroneous_init_smoothed_us;
    }
};

inline std::vector<ImplementationProfile> builtin_profiles() {
    auto mk = [](std::string name, std::int64_t pto_ms, std::vector<std::uint64_t> flight,
                 std::set<Quirk> quirks = {}) {
        ImplementationProfile p;
        p.name = std::move(name);
        p.default_pto_us = ms(pto_ms);
        p.second_flight_datagrams = std::move(flight);
        p.quirks = std::move(quirks);
        return p;
    };
    return {
        mk("aioquic", 200, {2, 3, 4}),
        mk("go-x-net", 999, {2, 3, 4}, {Quirk::ErroneousPtoInit}),
        mk("mvfst", 100, {2, 3, 4}, {Quirk::NoProbeOnIack}),
        mk("neqo", 300, {2, 3}),
        mk("ngtcp2", 300, {2, 3, 4}),
        mk("picoquic", 250, {2, 3, 4, 5}, {Quirk::IgnoreIackRttSample, Quirk::NoProbeOnIack}),
        mk("quic-go", 200, {2, 3, 4}),
        mk("quiche", 999, {2}, {Quirk::DropCoalescedPingReply}),
    };
}

inline ImplementationProfile lookup_profile(const std::string& name) {
    for (auto& p : builtin_profiles()) {
        if (p.name == name) return p;
    }
    throw std::runtime_error("unknown profile: " + name);
}

// Client-side decision points where a quirk may override default behavior.
enum class DecisionPoint {
    IngestIackRttSample,       // an RTT sample derived from an ACK-only server datagram
    ProbeAfterIack,            // arming/sending probes after an instant ACK with nothing in flight
    ReceiveCoalescedPingReply,  // a datagram coalescing a PING reply with other packets
    InitialProbeKind,          // what an Initial-space probe carries
    FirstSampleInit,           // initialization of smoothed RTT / variation
};

enum class BehaviorOverride {
    PassThrough,
    DiscardSample,
    SuppressProbe,
    DropDatagram,
    RetransmitClientHello,
    MisinitializeEstimator,
};

inline BehaviorOverride apply_quirk(const ImplementationProfile& profile, DecisionPoint event) {
    switch (event) {
        case DecisionPoint::IngestIackRttSample:
            return profile.has_quirk(Quirk::IgnoreIackRttSample) ? BehaviorOverride::DiscardSample
                                                                 : BehaviorOverride::PassThrough;
        case DecisionPoint::ProbeAfterIack:
            return profile.has_quirk(Quirk::NoProbeOnIack) ? BehaviorOverride::SuppressProbe
                                                           : BehaviorOverride::PassThrough;
        case DecisionPoint::ReceiveCoalescedPingReply:
            return profile.has_quirk(Quirk::DropCoalescedPingReply) ? BehaviorOverride::DropDatagram
                                                                    : BehaviorOverride::PassThrough;
        case DecisionPoint::InitialProbeKind:
            return profile.has_quirk(Quirk::RetransmitClientHelloOnPto)
                       ? BehaviorOverride::RetransmitClientHello
                       : BehaviorOverride::PassThrough;
        case DecisionPoint::FirstSampleInit:
            return profile.has_quirk(Quirk::ErroneousPtoInit) ? BehaviorOverride::MisinitializeEstimator
                                                              : BehaviorOverride::PassThrough;
    }
    return BehaviorOverride::PassThrough;
}

}  // namespace quicsim
