#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "quicsim/sim_time.hpp"
#include "quicsim/wire.hpp"

namespace quicsim {

enum class Actor { Client, Server, Link };

inline const char* to_string(Actor a) {
    switch (a) {
        case Actor::Client: return "client";
        case Actor::Server: return "server";
        case Actor::Link: return "link";
    }
    return "?";
}

enum class TraceKind {
    Emit,
    Receive,
    Drop,
    PtoArmed,
    PtoExpired,
    RttSample,
    BudgetBlocked,
    BudgetUnblocked,
    HandshakeComplete,
    FirstAppByte,
};

inline const char* to_string(TraceKind k) {
    switch (k) {
        case TraceKind::Emit: return "emit";
        case TraceKind::Receive: return "receive";
        case TraceKind::Drop: return "drop";
        case TraceKind::PtoArmed: return "pto_armed";
        case TraceKind::PtoExpired: return "pto_expired";
        case TraceKind::RttSample: return "rtt_sample";
        case TraceKind::BudgetBlocked: return "budget_blocked";
        case TraceKind::BudgetUnblocked: return "budget_unblocked";
        case TraceKind::HandshakeComplete: return "handshake_complete";
        case TraceKind::FirstAppByte: return "first_app_byte";
    }
    return "?";
}

struct TraceEvent {
    SimTime time_us = 0;
    Actor actor = Actor::Client;
    TraceKind kind = TraceKind::Emit;
    std::optional<std::pair<Endpoint, std::uint64_t>> datagram;  // (sender, index)
    std::optional<Space> space;
    std::vector<std::string> frames;  // frame kinds, CRYPTO/STREAM annotated with role
    std::optional<std::int64_t> size_bytes;
    std::map<std::string, std::int64_t> detail;  // sample_us, ack_delay_us, ...

    bool operator==(const TraceEvent& o) const {
        return time_us == o.time_us && actor == o.actor && kind == o.kind &&
               datagram == o.datagram && space == o.space && frames == o.frames &&
               size_bytes == o.size_bytes && detail == o.detail;
    }
};

inline constexpr const char* kTraceHeader = "# quicsim-trace v1";

namespace detail_impl {

inline std::string join_frames(const std::vector<std::string>& frames) {
    std::string out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (i) out += '|';
        out += frames[i];
    }
    return out;
}

inline Actor actor_from(const std::string& s) {
    if (s == "client") return Actor::Client;
    if (s == "server") return Actor::Server;
    if (s == "link") return Actor::Link;
    throw std::runtime_error("bad actor: " + s);
}

inline TraceKind kind_from(const std::string& s) {
    for (TraceKind k : {TraceKind::Emit, TraceKind::Receive, TraceKind::Drop, TraceKind::PtoArmed,
                        TraceKind::PtoExpired, TraceKind::RttSample, TraceKind::BudgetBlocked,
                        TraceKind::BudgetUnblocked, TraceKind::HandshakeComplete,
                        TraceKind::FirstAppByte}) {
        if (s == to_string(k)) return k;
    }
    throw std::runtime_error("bad event kind: " + s);
}

inline Space space_from(const std::string& s) {
    if (s == "initial") return Space::Initial;
    if (s == "handshake") return Space::Handshake;
    if (s == "application") return Space::Application;
    throw std::runtime_error("bad space: " + s);
}

}  // namespace detail_impl

// One line per event:
//   <time_us> <actor> <kind> [dgram=<sender>:<index>] [space=..] [frames=A|B]
//   [size=N] [<key>=<int> ...]
// Detail keys are emitted in sorted order so equal events serialize
// byte-identically.
inline std::string emit_trace_line(const TraceEvent& e) {
    std::ostringstream os;
    os << e.time_us << ' ' << to_string(e.actor) << ' ' << to_string(e.kind);
    if (e.datagram) {
        os << " dgram=" << to_string(e.datagram->first) << ':' << e.datagram->second;
    }
    if (e.space) {
        os << " space=" << to_string(*e.space);
    }
    if (!e.frames.empty()) {
        os << " frames=" << detail_impl::join_frames(e.frames);
    }
    if (e.size_bytes) {
        os << " size=" << *e.size_bytes;
    }
    for (const auto& [k, v] : e.detail) {
        os << ' ' << k << '=' << v;
    }
    return os.str();
}

inline std::string emit_trace(const std::vector<TraceEvent>& events) {
    std::string out = kTraceHeader;
    out += '\n';
    for (const TraceEvent& e : events) {
        out += emit_trace_line(e);
        out += '\n';
    }
    return out;
}

struct TraceParseError : std::runtime_error {
    int line = 0;
    TraceParseError(int line_no, const std::string& msg)
        : std::runtime_error("trace line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
};

inline TraceEvent parse_trace_line(const std::string& line, int line_no) {
    std::istringstream is(line);
    TraceEvent e;
    std::string actor, kind;
    if (!(is >> e.time_us >> actor >> kind)) {
        throw TraceParseError(line_no, "expected '<time_us> <actor> <kind>'");
    }
    try {
        e.actor = detail_impl::actor_from(actor);
        e.kind = detail_impl::kind_from(kind);
        std::string tok;
        while (is >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("expected key=value, got '" + tok + "'");
            }
            std::string key = tok.substr(0, eq);
            std::string val = tok.substr(eq + 1);
            if (key == "dgram") {
                auto colon = val.find(':');
                if (colon == std::string::npos) {
                    throw std::runtime_error("bad dgram '" + val + "'");
                }
                std::string who = val.substr(0, colon);
                Endpoint sender = who == "client" ? Endpoint::Client : Endpoint::Server;
                if (who != "client" && who != "server") {
                    throw std::runtime_error("bad dgram sender '" + who + "'");
                }
                e.datagram = {sender, std::stoull(val.substr(colon + 1))};
            } else if (key == "space") {
                e.space = detail_impl::space_from(val);
            } else if (key == "frames") {
                std::string cur;
                for (char c : val) {
                    if (c == '|') {
                        e.frames.push_back(cur);
                        cur.clear();
                    } else {
                        cur += c;
                    }
                }
                e.frames.push_back(cur);
            } else if (key == "size") {
                e.size_bytes = std::stoll(val);
            } else {
                e.detail[key] = std::stoll(val);
            }
        }
    } catch (const TraceParseError&) {
        throw;
    } catch (const std::exception& ex) {
        throw TraceParseError(line_no, ex.what());
    }
    return e;
}

inline std::vector<TraceEvent> parse_trace(const std::string& text) {
    std::vector<TraceEvent> events;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        events.push_back(parse_trace_line(line, line_no));
    }
    return events;
}

// Lenient variant for imported observation files: malformed lines are
// reported, well-formed ones kept.
inline std::vector<TraceEvent> parse_trace_lenient(const std::string& text,
                                                   std::vector<std::string>* errors) {
    std::vector<TraceEvent> events;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        try {
            events.push_back(parse_trace_line(line, line_no));
        } catch (const std::exception& ex) {
            if (errors) errors->push_back(ex.what());
        }
    }
    return events;
}

// Structural validation: timestamps non-decreasing, every emitted datagram
// is received or dropped exactly once.
inline std::optional<std::string> validate_trace(const std::vector<TraceEvent>& events) {
    SimTime last = 0;
    std::map<std::pair<int, std::uint64_t>, int> open_emits;  // (sender, index) -> count
    for (const TraceEvent& e : events) {
        if (e.time_us < last) {
            return "timestamps decrease at t=" + format_us(e.time_us);
        }
        last = e.time_us;
        if (!e.datagram) continue;
        auto key = std::make_pair(static_cast<int>(e.datagram->first), e.datagram->second);
        if (e.kind == TraceKind::Emit) {
            ++open_emits[key];
        } else if (e.kind == TraceKind::Receive || e.kind == TraceKind::Drop) {
            if (--open_emits[key] < 0) {
                return "receive/drop without emit for datagram index " +
                       std::to_string(e.datagram->second);
            }
        }
    }
    for (const auto& [key, count] : open_emits) {
        if (count != 0) {
            return "emitted datagram index " + std::to_string(key.second) +
                   " has no matching receive or drop";
        }
    }
    return std::nullopt;
}

class TraceRecorder {
public:
    void record(TraceEvent e) { events_.push_back(std::move(e)); }
    const std::vector<TraceEvent>& events() const { return events_; }
    std::vector<TraceEvent> take() { return std::move(events_); }

private:
    std::vector<TraceEvent> events_;
};

// ---------------------------------------------------------------------------
// Instant-ACK deployment classification from handshake observations.

enum class HandshakeClass { Iack, Coalesced, AckOnly, NoResponse };

inline const char* to_string(HandshakeClass c) {
    switch (c) {
        case HandshakeClass::Iack: return "iack";
        case HandshakeClass::Coalesced: return "coalesced";
        case HandshakeClass::AckOnly: return "ack_only";
        case HandshakeClass::NoResponse: return "no_response";
    }
    return "?";
}

struct ServerRecord {
    SimTime time_us = 0;
    bool contains_ack = false;
    bool contains_serverhello = false;
    bool same_datagram = false;  // ACK and ServerHello coalesced in this datagram
    std::optional<Duration> ack_delay_us;
};

struct HandshakeObservation {
    SimTime client_hello_time_us = 0;
    std::vector<ServerRecord> server_records;  // ordered by time
    std::optional<Duration> measured_rtt_us;
};

// Classification uses only the first server record, mirroring the
// first-ACK-of-the-connection filter: a separate ACK preceding a later
// ServerHello is an instant ACK; ACK and ServerHello in one datagram is
// coalesced; an ACK that no ServerHello ever follows is AckOnly.
inline HandshakeClass classify(const HandshakeObservation& obs) {
    if (obs.server_records.empty()) return HandshakeClass::NoResponse;
    const ServerRecord& first = obs.server_records.front();
    if (first.contains_ack && first.contains_serverhello) return HandshakeClass::Coalesced;
    if (first.contains_ack && !first.contains_serverhello) {
        for (std::size_t i = 1; i < obs.server_records.size(); ++i) {
            if (obs.server_records[i].contains_serverhello) return HandshakeClass::Iack;
        }
        return HandshakeClass::AckOnly;
    }
    return HandshakeClass::NoResponse;
}

// Delay between the first ACK and the ServerHello; zero when coalesced,
// undefined for AckOnly/NoResponse.
inline std::optional<Duration> ack_sh_delay(const HandshakeObservation& obs) {
    switch (classify(obs)) {
        case HandshakeClass::Coalesced:
            return Duration{0};
        case HandshakeClass::Iack: {
            SimTime ack_time = obs.server_records.front().time_us;
            for (std::size_t i = 1; i < obs.server_records.size(); ++i) {
                if (obs.server_records[i].contains_serverhello) {
                    return obs.server_records[i].time_us - ack_time;
                }
            }
            return std::nullopt;
        }
        default:
            return std::nullopt;
    }
}

struct AckDelayComparison {
    bool exceeds_rtt = false;
    Duration difference_us = 0;  // ack_delay - rtt
};

// Compares the advertised acknowledgment delay of the first ACK against the
// measured RTT; an advertised delay above the RTT cannot be subtracted
// meaningfully by the peer.
inline std::optional<AckDelayComparison> ack_delay_vs_rtt(const HandshakeObservation& obs) {
    if (!obs.measured_rtt_us || obs.server_records.empty()) return std::nullopt;
    const ServerRecord& first = obs.server_records.front();
    if (!first.ack_delay_us) return std::nullopt;
    AckDelayComparison out;
    out.difference_us = *first.ack_delay_us - *obs.measured_rtt_us;
    out.exceeds_rtt = *first.ack_delay_us > *obs.measured_rtt_us;
    return out;
}

// Derives a handshake observation from trace events (one connection). The
// client's first emission is the ClientHello; every client reception of a
// server datagram becomes a server record.
inline HandshakeObservation observation_from_trace(const std::vector<TraceEvent>& events) {
    HandshakeObservation obs;
    bool saw_ch = false;
    for (const TraceEvent& e : events) {
        if (!saw_ch && e.actor == Actor::Client && e.kind == TraceKind::Emit) {
            obs.client_hello_time_us = e.time_us;
            saw_ch = true;
        }
        if (e.actor == Actor::Client && e.kind == TraceKind::Receive && e.datagram &&
            e.datagram->first == Endpoint::Server) {
            ServerRecord r;
            r.time_us = e.time_us;
            for (const std::string& f : e.frames) {
                if (f == "ACK") r.contains_ack = true;
                if (f == "CRYPTO:server_hello") r.contains_serverhello = true;
            }
            r.same_datagram = r.contains_ack && r.contains_serverhello;
            if (auto it = e.detail.find("ack_delay_us"); it != e.detail.end()) {
                r.ack_delay_us = it->second;
            }
            obs.server_records.push_back(r);
        }
        if (!obs.measured_rtt_us && e.actor == Actor::Client && e.kind == TraceKind::RttSample) {
            if (auto it = e.detail.find("sample_us"); it != e.detail.end()) {
                obs.measured_rtt_us = it->second;
            }
        }
    }
    return obs;
}

}  // namespace quicsim
