#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "quicsim/profiles.hpp"
#include "quicsim/sim_time.hpp"
#include "quicsim/timeline.hpp"
#include "quicsim/trace.hpp"
#include "quicsim/wire.hpp"

namespace quicsim {

enum class Direction { ClientToServer, ServerToClient };

inline const char* to_string(Direction d) {
    return d == Direction::ClientToServer ? "client_to_server" : "server_to_client";
}

enum class ServerMode { Iack, Wfc };

inline const char* to_string(ServerMode m) { return m == ServerMode::Iack ? "iack" : "wfc"; }

struct LinkConfig {
    Duration one_way_delay_us = 4500;
    std::int64_t bandwidth_bits_per_s = 10'000'000;
};

// Whole-microsecond serialization time, rounded up.
inline Duration serialization_us(std::int64_t size_bytes, std::int64_t bandwidth_bits_per_s) {
    if (bandwidth_bits_per_s <= 0) {
        throw std::logic_error("serialization_us: non-positive bandwidth");
    }
    const std::int64_t bits_times_1e6 = size_bytes * 8 * 1'000'000;
    return (bits_times_1e6 + bandwidth_bits_per_s - 1) / bandwidth_bits_per_s;
}

enum class ContentSelector {
    RemainingFirstServerFlight,  // the first server flight except its first datagram
    EntireSecondClientFlight,    // all datagrams of the second client flight
};

inline ContentSelector content_selector_from_string(const std::string& s) {
    if (s == "remaining_first_server_flight") return ContentSelector::RemainingFirstServerFlight;
    if (s == "entire_second_client_flight") return ContentSelector::EntireSecondClientFlight;
    throw std::runtime_error("unknown loss content selector: " + s);
}

// Maps a content selector through the active profile's coalescence table to
// concrete (direction, datagram-index) pairs. The mapping is static: if an
// early PTO inserts probe datagrams, index-based drops hit the probes
// instead of the nominal flight, reproducing the testbed's caveat.
inline std::vector<std::pair<Direction, std::uint64_t>> resolve_content_selector(
    ContentSelector selector, const ImplementationProfile& profile, ServerMode mode) {
    std::vector<std::pair<Direction, std::uint64_t>> out;
    switch (selector) {
        case ContentSelector::EntireSecondClientFlight:
            for (std::uint64_t i : profile.second_flight_datagrams) {
                out.emplace_back(Direction::ClientToServer, i);
            }
            break;
        case ContentSelector::RemainingFirstServerFlight:
            // Under IACK the ACK occupies datagram 1 and the flight spans
            // datagrams 2-3; under WFC the coalesced flight spans 1-2.
            out.emplace_back(Direction::ServerToClient, 2);
            if (mode == ServerMode::Iack) {
                out.emplace_back(Direction::ServerToClient, 3);
            }
            break;
    }
    return out;
}

struct LossRule {
    Direction direction = Direction::ClientToServer;
    bool by_content = false;
    std::vector<std::uint64_t> indices;  // ByIndex
    ContentSelector content = ContentSelector::EntireSecondClientFlight;
    std::size_t max_applications = std::numeric_limits<std::size_t>::max();
};

struct TransmitOutcome {
    bool delivered = false;
    SimTime at_us = 0;  // delivery time when delivered
};

// Symmetric link with per-direction FIFO serialization at the configured
// bandwidth and deterministic loss injection. Rules apply in declaration
// order at link ingress; dropped datagrams do not consume bandwidth.
//
// Deliveries carry a burst flag: true while the next datagram in the same
// direction serialized back-to-back behind this one. Endpoints defer their
// reactions to the end of a burst, which is the zero-stack-delay analog of
// batched socket reads.
class Link {
public:
    using Receiver = std::function<void(const Datagram&, SimTime now, bool burst_continues)>;

    Link(Timeline& timeline, TraceRecorder& trace, LinkConfig config)
        : timeline_(&timeline), trace_(&trace), config_(config) {}

    void set_receiver(Direction dir, Receiver r) { pipe(dir).receiver = std::move(r); }

    // Resolves ByContent rules against the active profile/mode once.
    void set_loss_rules(const std::vector<LossRule>& rules, const ImplementationProfile& profile,
                        ServerMode mode) {
        rules_.clear();
        for (const LossRule& r : rules) {
            ActiveRule ar;
            ar.max_applications = r.max_applications;
            if (r.by_content) {
                for (auto& [dir, idx] : resolve_content_selector(r.content, profile, mode)) {
                    ar.match.insert({dir, idx});
                }
            } else {
                for (std::uint64_t idx : r.indices) {
                    ar.match.insert({r.direction, idx});
                }
            }
            rules_.push_back(std::move(ar));
        }
    }

    TransmitOutcome transmit(Direction dir, Datagram datagram, SimTime emit_time) {
        if (emit_time < timeline_->now()) {
            throw std::logic_error("Link::transmit: emission in the past");
        }
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            ActiveRule& rule = rules_[i];
            if (rule.applied >= rule.max_applications) continue;
            if (rule.match.count({dir, datagram.index}) == 0) continue;
            ++rule.applied;
            TraceEvent e;
            e.time_us = emit_time;
            e.actor = Actor::Link;
            e.kind = TraceKind::Drop;
            e.datagram = {datagram.sender, datagram.index};
            e.size_bytes = datagram.size_bytes;
            e.detail["loss_rule"] = static_cast<std::int64_t>(i);
            trace_->record(e);
            return TransmitOutcome{false, 0};
        }

        Pipe& p = pipe(dir);
        const SimTime ser_start = std::max(emit_time, p.busy_until);
        const SimTime ser_end = ser_start + serialization_us(datagram.size_bytes, config_.bandwidth_bits_per_s);
        p.busy_until = ser_end;
        const SimTime delivery = ser_end + config_.one_way_delay_us;
        p.in_flight.push_back(InFlight{ser_start, ser_end});
        timeline_->schedule(delivery, [this, dir, d = std::move(datagram), delivery]() {
            deliver(dir, d, delivery);
        });
        return TransmitOutcome{true, delivery};
    }

    const LinkConfig& config() const { return config_; }

private:
    struct InFlight {
        SimTime ser_start;
        SimTime ser_end;
    };
    struct Pipe {
        SimTime busy_until = 0;
        std::deque<InFlight> in_flight;
        Receiver receiver;
    };
    struct ActiveRule {
        std::set<std::pair<Direction, std::uint64_t>> match;
        std::size_t max_applications = 0;
        std::size_t applied = 0;
    };

    Pipe& pipe(Direction d) { return d == Direction::ClientToServer ? to_server_ : to_client_; }

    void deliver(Direction dir, const Datagram& d, SimTime now) {
        Pipe& p = pipe(dir);
        const InFlight mine = p.in_flight.front();
        p.in_flight.pop_front();
        const bool burst_continues =
            !p.in_flight.empty() && p.in_flight.front().ser_start <= mine.ser_end;
        if (p.receiver) {
            p.receiver(d, now, burst_continues);
        }
    }

    Timeline* timeline_;
    TraceRecorder* trace_;
    LinkConfig config_;
    Pipe to_server_;
    Pipe to_client_;
    std::vector<ActiveRule> rules_;
};

}  // namespace quicsim
