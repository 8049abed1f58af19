#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "quicsim/recovery.hpp"
#include "quicsim/sim_time.hpp"

namespace quicsim {

enum class Endpoint { Client, Server };

inline const char* to_string(Endpoint e) {
    return e == Endpoint::Client ? "client" : "server";
}

enum class CryptoRole { ClientHello, ServerHello, CertChain, Finished };

inline const char* to_string(CryptoRole r) {
    switch (r) {
        case CryptoRole::ClientHello: return "client_hello";
        case CryptoRole::ServerHello: return "server_hello";
        case CryptoRole::CertChain: return "cert_chain";
        case CryptoRole::Finished: return "finished";
    }
    return "?";
}

enum class StreamRole { Request, Response, Settings };

struct AckFrame {
    std::vector<std::uint64_t> acked;  // packet numbers, ascending
    Duration ack_delay_us = 0;
};

struct CryptoFrame {
    CryptoRole role;
    std::int64_t offset = 0;
    std::int64_t length = 0;
    std::int64_t stream_total = 0;  // total bytes of the flight's crypto stream
};

struct PingFrame {};

struct StreamFrame {
    StreamRole role;
    std::int64_t offset = 0;
    std::int64_t length = 0;
    std::int64_t stream_total = 0;
};

struct PaddingFrame {
    std::int64_t length = 0;
};

using Frame = std::variant<AckFrame, CryptoFrame, PingFrame, StreamFrame, PaddingFrame>;

inline const char* frame_kind_name(const Frame& f) {
    struct Visitor {
        const char* operator()(const AckFrame&) const { return "ACK"; }
        const char* operator()(const CryptoFrame&) const { return "CRYPTO"; }
        const char* operator()(const PingFrame&) const { return "PING"; }
        const char* operator()(const StreamFrame&) const { return "STREAM"; }
        const char* operator()(const PaddingFrame&) const { return "PADDING"; }
    };
    return std::visit(Visitor{}, f);
}

struct Packet {
    Space space = Space::Initial;
    std::uint64_t number = 0;
    std::vector<Frame> frames;
    std::int64_t size_bytes = 0;

    // A packet is ACK-eliciting iff it contains a frame other than
    // ACK/PADDING. The instant ACK is not ACK-eliciting, which is why it
    // yields the server no RTT sample.
    bool ack_eliciting() const {
        for (const Frame& f : frames) {
            if (!std::holds_alternative<AckFrame>(f) && !std::holds_alternative<PaddingFrame>(f)) {
                return true;
            }
        }
        return false;
    }
};

struct Datagram {
    Endpoint sender = Endpoint::Client;
    std::uint64_t index = 0;  // per-sender emission ordinal, 1-based
    std::vector<Packet> packets;
    std::int64_t size_bytes = 0;

    bool ack_eliciting() const {
        for (const Packet& p : packets) {
            if (p.ack_eliciting()) return true;
        }
        return false;
    }

    bool ack_only() const { return !packets.empty() && !ack_eliciting(); }

    bool contains_crypto(CryptoRole role) const {
        for (const Packet& p : packets) {
            for (const Frame& f : p.frames) {
                if (const auto* c = std::get_if<CryptoFrame>(&f); c && c->role == role) {
                    return true;
                }
            }
        }
        return false;
    }

    bool contains_ack() const {
        for (const Packet& p : packets) {
            for (const Frame& f : p.frames) {
                if (std::holds_alternative<AckFrame>(f)) return true;
            }
        }
        return false;
    }

    std::vector<std::string> frame_names() const {
        std::vector<std::string> names;
        for (const Packet& p : packets) {
            for (const Frame& f : p.frames) {
                names.emplace_back(frame_kind_name(f));
            }
        }
        return names;
    }
};

// Byte-size model for simulated datagrams. The handshake-relevant sizes
// follow the study's testbed (1200 B padded client Initial, certificate
// flights split into <= 1252 B datagrams); the overheads are model choices
// and overridable from the scenario configuration.
struct SizeModel {
    std::int64_t client_initial = 1200;       // padded ClientHello datagram
    std::int64_t iack_plain = 60;             // unpadded instant ACK
    std::int64_t iack_padded = 1200;          // instant ACK with pad_iack
    std::int64_t ack_only = 60;               // standalone ACK datagram
    std::int64_t flight_overhead = 400;       // crypto/framing bytes on top of the certificate
    std::int64_t flight_initial_head = 200;   // leading Initial-space bytes (ACK+ServerHello)
    std::int64_t max_datagram = 1252;         // emulator MTU
    std::int64_t second_flight_datagram = 300;
    std::int64_t settings_datagram = 80;      // control-stream SETTINGS emission
    std::int64_t datagram_overhead = 52;      // per-datagram header bytes for stream data
    std::int64_t response_payload_per_datagram = 1200;
};

}  // namespace quicsim
