#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "quicsim/endpoints.hpp"
#include "quicsim/netem.hpp"
#include "quicsim/profiles.hpp"
#include "quicsim/sim_time.hpp"
#include "quicsim/timeline.hpp"
#include "quicsim/trace.hpp"

namespace quicsim {

inline constexpr SimTime kDefaultQuiescenceLimitUs = 30'000'000;  // 30 s simulated

struct ScenarioParams {
    std::string id = "scenario";
    Duration rtt_us = ms(9);
    std::optional<Duration> owd_us;  // overrides rtt/2 when set
    Duration delta_t_us = 0;
    std::int64_t bandwidth_bits_per_s = 10'000'000;
    std::int64_t cert_bytes = 1212;
    ServerMode mode = ServerMode::Iack;
    ImplementationProfile profile = lookup_profile("quic-go");
    std::vector<LossRule> loss_rules;
    bool pad_iack = false;
    bool early_settings = false;
    bool request_after_handshake = false;
    Duration client_stack_delay_us = 0;
    Duration server_stack_delay_us = 0;
    Duration server_default_pto_us = ms(200);
    int server_probe_count = 1;
    std::int64_t response_bytes = 10240;
    std::int64_t request_bytes = 64;
    SimTime quiescence_limit_us = kDefaultQuiescenceLimitUs;
    SizeModel sizes;
};

struct RunResult {
    std::vector<TraceEvent> events;
    SimulationReport report;
};

// One deterministic handshake simulation: client and server endpoints wired
// through a symmetric link, run until the event queue drains or the
// quiescence limit is hit.
inline RunResult run_scenario(const ScenarioParams& p) {
    Timeline timeline;
    TraceRecorder trace;

    LinkConfig link_cfg;
    link_cfg.one_way_delay_us = p.owd_us.value_or(p.rtt_us / 2);
    link_cfg.bandwidth_bits_per_s = p.bandwidth_bits_per_s;
    Link link(timeline, trace, link_cfg);
    link.set_loss_rules(p.loss_rules, p.profile, p.mode);

    ServerConfig server_cfg;
    server_cfg.mode = p.mode;
    server_cfg.delta_t_us = p.delta_t_us;
    server_cfg.cert_bytes = p.cert_bytes;
    server_cfg.pad_iack = p.pad_iack;
    server_cfg.default_pto_us = p.server_default_pto_us;
    server_cfg.early_settings = p.early_settings;
    server_cfg.response_bytes = p.response_bytes;
    server_cfg.stack_delay_us = p.server_stack_delay_us;
    server_cfg.probe_count = p.server_probe_count;

    ClientConfig client_cfg;
    client_cfg.profile = p.profile;
    client_cfg.request_after_handshake = p.request_after_handshake;
    client_cfg.stack_delay_us = p.client_stack_delay_us;
    client_cfg.request_bytes = p.request_bytes;

    ServerEndpoint server(timeline, link, trace, server_cfg, p.sizes);
    ClientEndpoint client(timeline, link, trace, client_cfg, p.sizes);

    link.set_receiver(Direction::ClientToServer,
                      [&server](const Datagram& d, SimTime now, bool burst) {
                          server.on_datagram(d, now, burst);
                      });
    link.set_receiver(Direction::ServerToClient,
                      [&client](const Datagram& d, SimTime now, bool burst) {
                          client.on_datagram(d, now, burst);
                      });

    client.start();
    RunResult result;
    result.report = timeline.run_until_quiescent(p.quiescence_limit_us);
    result.events = trace.take();
    return result;
}

}  // namespace quicsim
