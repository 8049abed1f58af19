#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "quicsim/interval_set.hpp"
#include "quicsim/netem.hpp"
#include "quicsim/profiles.hpp"
#include "quicsim/recovery.hpp"
#include "quicsim/sim_time.hpp"
#include "quicsim/timeline.hpp"
#include "quicsim/trace.hpp"
#include "quicsim/wire.hpp"

namespace quicsim {

struct ServerConfig {
    ServerMode mode = ServerMode::Iack;
    Duration delta_t_us = 0;  // frontend <-> certificate store delay
    std::int64_t cert_bytes = 1212;
    bool pad_iack = false;
    Duration default_pto_us = ms(200);
    std::int64_t amplification_factor = 3;
    bool early_settings = false;
    std::int64_t response_bytes = 10240;
    Duration stack_delay_us = 0;
    int probe_count = 1;
};

struct ClientConfig {
    ImplementationProfile profile;
    bool request_after_handshake = false;  // send the request only once the
                                           // server confirms the Finished
    Duration stack_delay_us = 0;
    std::int64_t request_bytes = 64;
};

// Anti-amplification budget: until the client address is validated the
// server may emit at most factor x the bytes it received.
struct AmplificationState {
    std::int64_t bytes_received = 0;
    std::int64_t bytes_sent = 0;
    bool address_validated = false;

    bool can_send(std::int64_t more, std::int64_t factor) const {
        return address_validated || bytes_sent + more <= factor * bytes_received;
    }
};

namespace detail_impl {

inline std::vector<std::string> annotated_frames(const Datagram& d) {
    std::vector<std::string> names;
    for (const Packet& p : d.packets) {
        for (const Frame& f : p.frames) {
            if (const auto* c = std::get_if<CryptoFrame>(&f)) {
                names.push_back(std::string("CRYPTO:") + to_string(c->role));
            } else if (const auto* s = std::get_if<StreamFrame>(&f)) {
                const char* role = s->role == StreamRole::Request    ? "request"
                                   : s->role == StreamRole::Response ? "response"
                                                                     : "settings";
                names.push_back(std::string("STREAM:") + role);
            } else {
                names.emplace_back(frame_kind_name(f));
            }
        }
    }
    return names;
}

inline std::optional<Duration> first_ack_delay(const Datagram& d) {
    for (const Packet& p : d.packets) {
        for (const Frame& f : p.frames) {
            if (const auto* a = std::get_if<AckFrame>(&f)) {
                return a->ack_delay_us;
            }
        }
    }
    return std::nullopt;
}

}  // namespace detail_impl

// State shared by both endpoint machines: per-space packet numbering, sent
// packet bookkeeping, pending acknowledgments, one PTO timer.
class EndpointBase {
public:
    EndpointBase(Actor actor, Timeline& timeline, Link& link, TraceRecorder& trace,
                 Direction out_dir)
        : actor_(actor), timeline_(&timeline), link_(&link), trace_(&trace), out_dir_(out_dir) {}

    virtual ~EndpointBase() = default;

protected:
    enum class SendTag { ClientHello, FirstFlight, SecondFlight, Request, Probe, AckOnly, AppData };

    struct SentPacket {
        Space space;
        std::uint64_t pn;
        SimTime send_us;
        bool eliciting;
        bool acked = false;
        bool lost = false;  // declared lost via packet-number threshold
        SendTag tag;
        // crypto/stream range carried, for retransmission (servers)
        std::int64_t chunk_offset = -1;
        std::int64_t chunk_length = 0;
        bool is_stream = false;
        StreamRole stream_role = StreamRole::Response;
    };

    struct SpaceRecv {
        std::vector<std::uint64_t> pns;  // everything received, ascending
        SimTime largest_arrival = 0;
        bool flush_pending = false;  // an unacknowledged ack-eliciting packet
    };

    static int space_idx(Space s) { return static_cast<int>(s); }

    std::uint64_t next_pn(Space s) { return next_pn_[space_idx(s)]++; }

    void note_received_packet(const Packet& p, SimTime arrival) {
        SpaceRecv& r = recv_[space_idx(p.space)];
        r.pns.push_back(p.number);
        r.largest_arrival = arrival;
        if (p.ack_eliciting()) r.flush_pending = true;
    }

    bool any_flush_pending() const {
        for (const SpaceRecv& r : recv_) {
            if (r.flush_pending) return true;
        }
        return false;
    }

    // Builds ACK frames for every space with received packets and clears
    // the flush flags. ack_delay is the time since the newest reception.
    std::vector<Packet> build_ack_packets(SimTime now) {
        const bool force = std::exchange(force_ack_all_, false);
        std::vector<Packet> packets;
        for (Space s : {Space::Initial, Space::Handshake, Space::Application}) {
            SpaceRecv& r = recv_[space_idx(s)];
            if (r.pns.empty()) continue;
            if (!r.flush_pending && !force) continue;
            AckFrame ack;
            ack.acked = r.pns;
            ack.ack_delay_us = now - r.largest_arrival;
            Packet p;
            p.space = s;
            p.number = next_pn(s);
            p.frames.push_back(ack);
            p.size_bytes = 0;
            packets.push_back(std::move(p));
            r.flush_pending = false;
        }
        return packets;
    }

    struct AckOutcome {
        bool any_newly = false;
        std::vector<const SentPacket*> newly;
        std::vector<const SentPacket*> declared_lost;
        std::optional<Duration> sample_us;
        Duration ack_delay_us = 0;
    };

    // An RTT sample is taken only when the largest acknowledged packet is
    // newly acknowledged and at least one newly acknowledged packet was
    // ACK-eliciting (RFC 9002 section 5.1). Unacknowledged packets below the
    // largest acknowledged one are declared lost: the link is FIFO, so a
    // packet-number gap in a cumulative ACK is an exact loss signal.
    AckOutcome process_ack(Space space, const AckFrame& frame, SimTime arrival) {
        AckOutcome out;
        out.ack_delay_us = frame.ack_delay_us;
        std::uint64_t largest = 0;
        bool any_newly_eliciting = false;
        for (std::uint64_t pn : frame.acked) {
            largest = std::max(largest, pn);
            for (SentPacket& sp : sent_) {
                if (sp.space == space && sp.pn == pn && !sp.acked) {
                    sp.acked = true;
                    out.newly.push_back(&sp);
                    out.any_newly = true;
                    if (sp.eliciting) any_newly_eliciting = true;
                }
            }
        }
        bool largest_newly = false;
        for (const SentPacket* sp : out.newly) {
            if (sp->pn == largest) largest_newly = true;
        }
        if (largest_newly && any_newly_eliciting) {
            for (const SentPacket& sp : sent_) {
                if (sp.space == space && sp.pn == largest) {
                    out.sample_us = arrival - sp.send_us;
                }
            }
        }
        if (out.any_newly) {
            for (SentPacket& sp : sent_) {
                if (sp.space == space && !sp.acked && !sp.lost && sp.pn < largest) {
                    sp.lost = true;
                    out.declared_lost.push_back(&sp);
                }
            }
        }
        return out;
    }

    bool bytes_in_flight() const {
        for (const SentPacket& sp : sent_) {
            if (sp.eliciting && !sp.acked && !sp.lost) return true;
        }
        return false;
    }

    Space oldest_unacked_space() const {
        for (const SentPacket& sp : sent_) {
            if (sp.eliciting && !sp.acked && !sp.lost) return sp.space;
        }
        return Space::Initial;
    }

    // Emits through the link, assigning the per-sender ordinal and tracing.
    void send_datagram(std::vector<Packet> packets, std::int64_t size, SendTag tag, SimTime now,
                       std::map<std::string, std::int64_t> extra_detail = {}) {
        Datagram d;
        d.sender = actor_ == Actor::Client ? Endpoint::Client : Endpoint::Server;
        d.index = next_index_++;
        d.packets = std::move(packets);
        d.size_bytes = size;

        for (const Packet& p : d.packets) {
            SentPacket sp;
            sp.space = p.space;
            sp.pn = p.number;
            sp.send_us = now;
            sp.eliciting = p.ack_eliciting();
            sp.tag = tag;
            for (const Frame& f : p.frames) {
                if (const auto* c = std::get_if<CryptoFrame>(&f)) {
                    sp.chunk_offset = c->offset;
                    sp.chunk_length = c->length;
                } else if (const auto* s = std::get_if<StreamFrame>(&f)) {
                    sp.chunk_offset = s->offset;
                    sp.chunk_length = s->length;
                    sp.is_stream = true;
                    sp.stream_role = s->role;
                }
            }
            sent_.push_back(sp);
        }

        TraceEvent e;
        e.time_us = now;
        e.actor = actor_;
        e.kind = TraceKind::Emit;
        e.datagram = {d.sender, d.index};
        e.space = d.packets.empty() ? std::optional<Space>{} : d.packets.front().space;
        e.frames = detail_impl::annotated_frames(d);
        e.size_bytes = size;
        for (auto& [k, v] : extra_detail) e.detail[k] = v;
        trace_->record(e);

        on_bytes_emitted(size);
        emitted_eliciting_ = emitted_eliciting_ || d.ack_eliciting();
        link_->transmit(out_dir_, std::move(d), now);
    }

    virtual void on_bytes_emitted(std::int64_t) {}

    void record_receive(const Datagram& d, SimTime now,
                        std::map<std::string, std::int64_t> extra = {}) {
        TraceEvent e;
        e.time_us = now;
        e.actor = actor_;
        e.kind = TraceKind::Receive;
        e.datagram = {d.sender, d.index};
        e.space = d.packets.empty() ? std::optional<Space>{} : d.packets.front().space;
        e.frames = detail_impl::annotated_frames(d);
        e.size_bytes = d.size_bytes;
        if (auto delay = detail_impl::first_ack_delay(d)) {
            e.detail["ack_delay_us"] = *delay;
        }
        for (auto& [k, v] : extra) e.detail[k] = v;
        trace_->record(e);
    }

    void trace_simple(TraceKind kind, SimTime now, std::map<std::string, std::int64_t> detail = {},
                      std::optional<Space> space = {}) {
        TraceEvent e;
        e.time_us = now;
        e.actor = actor_;
        e.kind = kind;
        e.space = space;
        e.detail = std::move(detail);
        trace_->record(e);
    }

    void trace_rtt_sample(SimTime now, Duration sample, Duration ack_delay,
                          const RttEstimator& est, bool discarded = false) {
        std::map<std::string, std::int64_t> detail{{"sample_us", sample},
                                                   {"ack_delay_us", ack_delay}};
        if (discarded) {
            detail["quirk_discarded"] = 1;
        } else {
            detail["smoothed_us"] = est.smoothed();
            detail["rttvar_us"] = est.var();
        }
        trace_simple(TraceKind::RttSample, now, std::move(detail));
    }

    void arm_pto(SimTime now, Duration base, Space space) {
        pto_.space = space;
        pto_.arm(*timeline_, base, now, [this] { on_pto_expired(timeline_->now()); });
        trace_simple(TraceKind::PtoArmed, now,
                     {{"duration_us", pto_.effective(base)},
                      {"expiry_us", now + pto_.effective(base)},
                      {"backoff", pto_.backoff_exponent}},
                     space);
    }

    virtual void on_pto_expired(SimTime now) = 0;

    Actor actor_;
    Timeline* timeline_;
    Link* link_;
    TraceRecorder* trace_;
    Direction out_dir_;

    std::uint64_t next_pn_[3] = {0, 0, 0};
    std::uint64_t next_index_ = 1;
    std::vector<SentPacket> sent_;
    SpaceRecv recv_[3];
    bool force_ack_all_ = false;
    RttEstimator est_;
    PtoState pto_;
    bool emitted_eliciting_ = false;  // per-reaction flag
};

// ---------------------------------------------------------------------------

class ServerEndpoint;  // forward

class ClientEndpoint : public EndpointBase {
public:
    ClientEndpoint(Timeline& timeline, Link& link, TraceRecorder& trace, ClientConfig config,
                   SizeModel sizes)
        : EndpointBase(Actor::Client, timeline, link, trace, Direction::ClientToServer),
          cfg_(std::move(config)),
          sizes_(sizes) {}

    // Emits the ClientHello and arms the default PTO.
    void start() {
        const SimTime now = timeline_->now();
        send_clienthello(now);
        arm_pto(now, profile().default_pto_us, Space::Initial);
        emitted_eliciting_ = false;
    }

    void on_datagram(const Datagram& d, SimTime now, bool burst_continues) {
        if (should_quirk_drop(d)) {
            record_receive(d, now, {{"quirk_dropped", 1}});
        } else {
            record_receive(d, now);
            ingest(d, now);
        }
        if (!burst_continues) {
            react(now);
        }
    }

    bool handshake_complete() const { return handshake_complete_; }
    const RttEstimator& estimator() const { return est_; }

private:
    const ImplementationProfile& profile() const { return cfg_.profile; }

    bool should_quirk_drop(const Datagram& d) const {
        if (apply_quirk(profile(), DecisionPoint::ReceiveCoalescedPingReply) !=
            BehaviorOverride::DropDatagram) {
            return false;
        }
        if (d.ack_only()) return false;
        // coalesced datagram whose ACK acknowledges one of our PING probes
        for (const Packet& p : d.packets) {
            for (const Frame& f : p.frames) {
                const auto* ack = std::get_if<AckFrame>(&f);
                if (!ack) continue;
                for (std::uint64_t pn : ack->acked) {
                    for (const SentPacket& sp : sent_) {
                        if (sp.space == p.space && sp.pn == pn && sp.tag == SendTag::Probe &&
                            !sp.acked) {
                            return true;
                        }
                    }
                }
            }
        }
        return false;
    }

    void ingest(const Datagram& d, SimTime now) {
        const bool iack_style = d.ack_only();
        if (iack_style && !handshake_complete_) saw_server_ack_only_ = true;
        // The sample-ignoring quirk drops the instant ACK's effect entirely:
        // neither an RTT sample nor the acknowledgment itself registers, so
        // the next cumulative ACK (in the coalesced flight) becomes the
        // first sample, just as under WFC.
        const bool discard_acks =
            iack_style && !handshake_complete_ &&
            apply_quirk(profile(), DecisionPoint::IngestIackRttSample) ==
                BehaviorOverride::DiscardSample;
        for (const Packet& p : d.packets) {
            note_received_packet(p, now);
            for (const Frame& f : p.frames) {
                if (const auto* ack = std::get_if<AckFrame>(&f)) {
                    if (discard_acks) {
                        trace_rtt_sample(now, peek_sample(p.space, *ack, now), ack->ack_delay_us,
                                         est_, /*discarded=*/true);
                        continue;
                    }
                    handle_ack(p.space, *ack, now, iack_style);
                } else if (const auto* c = std::get_if<CryptoFrame>(&f)) {
                    if (c->role == CryptoRole::ServerHello || c->role == CryptoRole::CertChain) {
                        flight_total_ = c->stream_total;
                        flight_recv_.insert(c->offset, c->offset + c->length);
                    }
                } else if (const auto* s = std::get_if<StreamFrame>(&f)) {
                    if ((s->role == StreamRole::Response || s->role == StreamRole::Settings) &&
                        !first_app_byte_seen_) {
                        first_app_byte_seen_ = true;
                        trace_simple(TraceKind::FirstAppByte, now,
                                     {{"stream_settings", s->role == StreamRole::Settings ? 1 : 0}});
                    }
                }
            }
        }
    }

    // Sample the would-be RTT of an ACK frame without registering it.
    Duration peek_sample(Space space, const AckFrame& frame, SimTime arrival) const {
        Duration sample = 0;
        for (const SentPacket& sp : sent_) {
            if (sp.space == space && !frame.acked.empty() && sp.pn == frame.acked.back()) {
                sample = arrival - sp.send_us;
            }
        }
        return sample;
    }

    void handle_ack(Space space, const AckFrame& frame, SimTime arrival, bool /*iack_style*/) {
        AckOutcome out = process_ack(space, frame, arrival);
        for (const SentPacket* sp : out.newly) {
            if (sp->tag == SendTag::SecondFlight || sp->tag == SendTag::Request) {
                second_flight_acked_some_ = true;
            }
        }
        for (const SentPacket* sp : out.declared_lost) {
            if (sp->tag == SendTag::SecondFlight || sp->tag == SendTag::Request) {
                lost_flight_data_ = true;
            } else if (sp->tag == SendTag::ClientHello) {
                lost_clienthello_ = true;
            }
        }
        if (out.any_newly) had_newly_ = true;
        if (!out.sample_us) return;
        if (!est_.has_sample() && apply_quirk(profile(), DecisionPoint::FirstSampleInit) ==
                                      BehaviorOverride::MisinitializeEstimator) {
            est_.force_initialize(profile().erroneous_init_smoothed_us,
                                  div_round_half_up(profile().erroneous_init_smoothed_us, 2),
                                  *out.sample_us);
        } else {
            est_.update(*out.sample_us, out.ack_delay_us, handshake_complete_);
        }
        trace_rtt_sample(arrival, *out.sample_us, out.ack_delay_us, est_);
    }

    void react(SimTime now) {
        const SimTime emit_at = now + cfg_.stack_delay_us;
        const bool flight_done = flight_total_ > 0 && flight_recv_.covers(0, flight_total_);

        if (!handshake_complete_ && flight_done) {
            handshake_complete_ = true;
            trace_simple(TraceKind::HandshakeComplete, now);
            schedule_emission(emit_at, [this] { send_second_flight(timeline_->now()); });
        } else if (std::exchange(lost_flight_data_, false)) {
            // loss declared by an acknowledgment gap: resend without
            // waiting for the probe timeout; pending ACKs ride along, or go
            // out standalone when every lost byte is already acknowledged
            schedule_emission(emit_at, [this] {
                if (!emit_blueprint(timeline_->now(), false) && any_flush_pending()) {
                    send_ack_only(timeline_->now());
                }
            });
        } else if (any_flush_pending()) {
            schedule_emission(emit_at, [this] { send_ack_only(timeline_->now()); });
        }
        if (std::exchange(lost_clienthello_, false)) {
            schedule_emission(emit_at, [this] { send_clienthello(timeline_->now()); });
        }

        if (cfg_.request_after_handshake && handshake_complete_ && second_flight_acked_some_ &&
            !request_sent_) {
            request_sent_ = true;
            schedule_emission(emit_at, [this] { send_request_datagram(timeline_->now()); });
        }

        if (cfg_.stack_delay_us == 0) {
            settle_pto(now);
        } else {
            timeline_->schedule(emit_at, [this] { settle_pto(timeline_->now()); });
        }
    }

    void schedule_emission(SimTime at, std::function<void()> fn) {
        if (at == timeline_->now()) {
            fn();
        } else {
            timeline_->schedule(at, std::move(fn));
        }
    }

    // PTO policy: the timer restarts when an ack-eliciting datagram is sent
    // or newly acknowledged. With nothing in flight the timer stays armed
    // while the handshake is incomplete (the server may be blocked by the
    // amplification limit), unless the no-probe-on-IACK quirk applies.
    void settle_pto(SimTime now) {
        if (!emitted_eliciting_ && !had_newly_) return;
        if (had_newly_) pto_.on_newly_acked();
        emitted_eliciting_ = false;
        had_newly_ = false;

        if (bytes_in_flight()) {
            arm_pto(now, current_pto_base(oldest_unacked_space()), oldest_unacked_space());
            return;
        }
        if (!handshake_complete_) {
            if (saw_server_ack_only_ && apply_quirk(profile(), DecisionPoint::ProbeAfterIack) ==
                                            BehaviorOverride::SuppressProbe) {
                pto_.disarm(*timeline_);
                return;
            }
            arm_pto(now, current_pto_base(Space::Initial), Space::Initial);
            return;
        }
        pto_.disarm(*timeline_);
    }

    Duration current_pto_base(Space space) const {
        return pto_duration(est_, space, profile().default_pto_us, kPtoGranularityUs,
                            handshake_complete_);
    }

    void on_pto_expired(SimTime now) override {
        trace_simple(TraceKind::PtoExpired, now, {{"backoff", pto_.backoff_exponent}}, pto_.space);
        ProbeDirective directive = pto_.on_expired(bytes_in_flight(), profile().probe_count);
        probes_sent_ += 1;

        if (directive.kind == ProbeKind::RetransmitTail) {
            if (!retransmit_second_flight(now)) {
                send_clienthello(now, /*probe=*/true);
            }
        } else {
            if (apply_quirk(profile(), DecisionPoint::InitialProbeKind) ==
                BehaviorOverride::RetransmitClientHello) {
                send_clienthello(now, /*probe=*/true);
            } else {
                for (int i = 0; i < directive.probe_count; ++i) send_ping(now);
            }
        }
        arm_pto(now, current_pto_base(pto_.space), pto_.space);
        emitted_eliciting_ = false;
    }

    // --- emissions --------------------------------------------------------

    void send_clienthello(SimTime now, bool probe = false) {
        Packet p;
        p.space = Space::Initial;
        p.number = next_pn(Space::Initial);
        p.frames.push_back(CryptoFrame{CryptoRole::ClientHello, 0, 280, 280});
        p.frames.push_back(PaddingFrame{sizes_.client_initial - 280});
        p.size_bytes = sizes_.client_initial;
        std::map<std::string, std::int64_t> detail;
        if (probe) detail["probe"] = 1;
        send_datagram({std::move(p)}, sizes_.client_initial,
                      probe ? SendTag::Probe : SendTag::ClientHello, now, detail);
    }

    void send_ping(SimTime now) {
        std::vector<Packet> packets = build_ack_packets(now);
        Packet p;
        p.space = Space::Initial;
        p.number = next_pn(Space::Initial);
        p.frames.push_back(PingFrame{});
        p.frames.push_back(PaddingFrame{sizes_.client_initial - 1});
        p.size_bytes = sizes_.client_initial;
        packets.push_back(std::move(p));
        send_datagram(std::move(packets), sizes_.client_initial, SendTag::Probe, now,
                      {{"probe", 1}});
    }

    void send_ack_only(SimTime now) {
        std::vector<Packet> packets = build_ack_packets(now);
        if (packets.empty()) return;
        send_datagram(std::move(packets), sizes_.ack_only, SendTag::AckOnly, now);
    }

    // Second client flight: handshake completion plus (unless deferred) the
    // request, split across as many datagrams as the active profile
    // coalesces it into (Appendix C mapping).
    void send_second_flight(SimTime now) {
        blueprint_.clear();
        const std::size_t n = profile().second_flight_datagrams.size();
        const std::int64_t req_total = cfg_.request_bytes;
        const bool carry_request = !cfg_.request_after_handshake;

        for (std::size_t j = 0; j < n; ++j) {
            BlueprintDatagram bp;
            if (j == 0) {
                bp.has_acks = true;
                BlueprintPacket fin;
                fin.space = Space::Handshake;
                fin.frames.push_back(CryptoFrame{CryptoRole::Finished, 0, 36, 36});
                bp.packets.push_back(std::move(fin));
            }
            if (carry_request) {
                if (n == 1) {
                    BlueprintPacket req;
                    req.space = Space::Application;
                    req.frames.push_back(StreamFrame{StreamRole::Request, 0, req_total, req_total});
                    bp.packets.push_back(std::move(req));
                } else if (j >= 1) {
                    const std::int64_t chunk = req_total / static_cast<std::int64_t>(n - 1);
                    const std::int64_t offset = chunk * static_cast<std::int64_t>(j - 1);
                    const std::int64_t len =
                        (j == n - 1) ? req_total - offset : chunk;
                    BlueprintPacket req;
                    req.space = Space::Application;
                    req.frames.push_back(StreamFrame{StreamRole::Request, offset, len, req_total});
                    bp.packets.push_back(std::move(req));
                }
            }
            blueprint_.push_back(std::move(bp));
        }
        emit_blueprint(now, /*all=*/true);
    }

    void send_request_datagram(SimTime now) {
        Packet p;
        p.space = Space::Application;
        p.number = next_pn(Space::Application);
        p.frames.push_back(StreamFrame{StreamRole::Request, 0, cfg_.request_bytes, cfg_.request_bytes});
        p.size_bytes = sizes_.second_flight_datagram;
        send_datagram({std::move(p)}, sizes_.second_flight_datagram, SendTag::Request, now);
    }

    bool retransmit_second_flight(SimTime now) {
        if (blueprint_.empty()) return false;
        return emit_blueprint(now, /*all=*/false, /*probe=*/true);
    }

    struct BlueprintPacket {
        Space space;
        std::vector<Frame> frames;
        std::uint64_t last_pn = 0;
        bool sent_once = false;
    };
    struct BlueprintDatagram {
        bool has_acks = false;
        std::vector<BlueprintPacket> packets;
    };

    bool blueprint_datagram_acked(const BlueprintDatagram& bp) const {
        for (const BlueprintPacket& bpp : bp.packets) {
            if (!bpp.sent_once) return false;
            bool acked = false;
            for (const SentPacket& sp : sent_) {
                if (sp.space == bpp.space && sp.pn == bpp.last_pn && sp.acked) acked = true;
            }
            if (!acked) return false;
        }
        return !bp.packets.empty();
    }

    // Emits blueprint datagrams (all, or only those not fully acknowledged
    // for PTO retransmission). ACK frames are refreshed at emission.
    bool emit_blueprint(SimTime now, bool all, bool probe = false) {
        bool any = false;
        for (BlueprintDatagram& bp : blueprint_) {
            if (!all && blueprint_datagram_acked(bp)) continue;
            if (!all && bp.packets.empty()) continue;
            std::vector<Packet> packets;
            if (bp.has_acks) {
                force_ack_all_ = true;
                for (Packet& ap : build_ack_packets(now)) packets.push_back(std::move(ap));
            }
            for (BlueprintPacket& bpp : bp.packets) {
                Packet p;
                p.space = bpp.space;
                p.number = next_pn(bpp.space);
                p.frames = bpp.frames;
                p.size_bytes = 0;
                bpp.last_pn = p.number;
                bpp.sent_once = true;
                packets.push_back(std::move(p));
            }
            if (packets.empty()) continue;
            std::map<std::string, std::int64_t> detail;
            if (probe) detail["probe"] = 1;
            send_datagram(std::move(packets), sizes_.second_flight_datagram, SendTag::SecondFlight,
                          now, detail);
            any = true;
        }
        return any;
    }

    ClientConfig cfg_;
    SizeModel sizes_;

    IntervalSet flight_recv_;
    std::int64_t flight_total_ = -1;
    bool handshake_complete_ = false;
    bool saw_server_ack_only_ = false;
    bool first_app_byte_seen_ = false;
    bool second_flight_acked_some_ = false;
    bool request_sent_ = false;
    bool had_newly_ = false;
    bool lost_flight_data_ = false;
    bool lost_clienthello_ = false;
    int probes_sent_ = 0;
    std::vector<BlueprintDatagram> blueprint_;
};

// ---------------------------------------------------------------------------

class ServerEndpoint : public EndpointBase {
public:
    ServerEndpoint(Timeline& timeline, Link& link, TraceRecorder& trace, ServerConfig config,
                   SizeModel sizes)
        : EndpointBase(Actor::Server, timeline, link, trace, Direction::ServerToClient),
          cfg_(config),
          sizes_(sizes) {}

    void on_datagram(const Datagram& d, SimTime now, bool burst_continues) {
        amp_.bytes_received += d.size_bytes;
        std::map<std::string, std::int64_t> extra;
        bool carries_request = false;
        for (const Packet& p : d.packets) {
            for (const Frame& f : p.frames) {
                if (const auto* s = std::get_if<StreamFrame>(&f);
                    s && s->role == StreamRole::Request) {
                    carries_request = true;
                }
            }
        }
        if (carries_request && !fin_seen_ && !d.contains_crypto(CryptoRole::Finished)) {
            // 1-RTT data ahead of the Finished stays buffered until the
            // handshake completes
            extra["request_before_handshake"] = 1;
        }
        if (!amp_.address_validated) {
            for (const Packet& p : d.packets) {
                if (p.space == Space::Handshake) {
                    amp_.address_validated = true;
                    extra["address_validated"] = 1;
                    break;
                }
            }
        }
        record_receive(d, now, extra);
        for (const Packet& p : d.packets) {
            note_received_packet(p, now);
            for (const Frame& f : p.frames) {
                if (const auto* ack = std::get_if<AckFrame>(&f)) {
                    handle_ack(p.space, *ack, now);
                } else if (const auto* c = std::get_if<CryptoFrame>(&f)) {
                    handle_crypto(*c, now);
                } else if (const auto* s = std::get_if<StreamFrame>(&f)) {
                    if (s->role == StreamRole::Request) {
                        request_total_ = s->stream_total;
                        request_recv_.insert(s->offset, s->offset + s->length);
                    }
                }
            }
        }
        if (!burst_continues) react(now);
    }

    const AmplificationState& amplification() const { return amp_; }
    bool handshake_complete() const { return fin_seen_; }

private:
    struct Chunk {
        enum class Kind { Crypto, Stream } kind = Kind::Crypto;
        Space space = Space::Initial;
        CryptoRole crypto_role = CryptoRole::ServerHello;
        StreamRole stream_role = StreamRole::Response;
        std::int64_t offset = 0;
        std::int64_t length = 0;
        std::int64_t stream_total = 0;
        bool standalone = false;  // never packed with other chunks (stream data)
    };

    bool request_complete() const {
        return request_total_ > 0 && request_recv_.covers(0, request_total_);
    }

    void handle_crypto(const CryptoFrame& c, SimTime now) {
        if (c.role == CryptoRole::ClientHello) {
            if (!ch_seen_) {
                ch_seen_ = true;
                ch_arrival_ = now;
                iack_due_ = cfg_.mode == ServerMode::Iack;
                timeline_->schedule(now + cfg_.delta_t_us, [this] {
                    on_certificate_ready(timeline_->now());
                });
            }
        } else if (c.role == CryptoRole::Finished) {
            if (!fin_seen_) {
                fin_seen_ = true;
                trace_simple(TraceKind::HandshakeComplete, now);
                if (cfg_.early_settings && !settings_queued_) {
                    settings_queued_ = true;
                    Chunk s;
                    s.kind = Chunk::Kind::Stream;
                    s.space = Space::Application;
                    s.stream_role = StreamRole::Settings;
                    s.offset = 0;
                    s.length = sizes_.settings_datagram - sizes_.datagram_overhead;
                    s.stream_total = s.length;
                    s.standalone = true;
                    outbox_.push_back(s);
                }
            }
        }
    }

    void handle_ack(Space space, const AckFrame& frame, SimTime arrival) {
        AckOutcome out = process_ack(space, frame, arrival);
        if (out.any_newly) had_newly_ = true;
        for (const SentPacket* sp : out.newly) {
            if (sp->chunk_offset >= 0) {
                acked_ranges(*sp).insert(sp->chunk_offset, sp->chunk_offset + sp->chunk_length);
            }
        }
        for (const SentPacket* sp : out.declared_lost) {
            restage_if_uncovered(*sp);
        }
        if (out.sample_us) {
            est_.update(*out.sample_us, out.ack_delay_us, fin_seen_);
            trace_rtt_sample(arrival, *out.sample_us, out.ack_delay_us, est_);
        }
    }

    IntervalSet& acked_ranges(const SentPacket& sp) {
        if (!sp.is_stream) return acked_crypto_;
        return sp.stream_role == StreamRole::Settings ? acked_settings_ : acked_response_;
    }

    // Queues a lost packet's payload for retransmission unless another copy
    // of those bytes was already acknowledged or is already staged.
    void restage_if_uncovered(const SentPacket& sp) {
        if (sp.chunk_offset < 0) return;
        IntervalSet& acked = acked_ranges(const_cast<SentPacket&>(sp));
        if (acked.covers(sp.chunk_offset, sp.chunk_offset + sp.chunk_length)) return;
        if (already_staged(sp.chunk_offset, sp.space, sp.is_stream)) return;
        Chunk c;
        if (sp.is_stream) {
            c.kind = Chunk::Kind::Stream;
            c.stream_role = sp.stream_role;
            c.stream_total = sp.stream_role == StreamRole::Response ? cfg_.response_bytes
                                                                    : sp.chunk_length;
            c.standalone = true;
        } else {
            c.kind = Chunk::Kind::Crypto;
            c.crypto_role =
                sp.space == Space::Initial ? CryptoRole::ServerHello : CryptoRole::CertChain;
            c.stream_total = flight_total_;
        }
        c.space = sp.space;
        c.offset = sp.chunk_offset;
        c.length = sp.chunk_length;
        outbox_.push_back(c);
    }

    void react(SimTime now) {
        if (iack_due_) {
            iack_due_ = false;
            send_instant_ack(now);
        }
        if (fin_seen_ && request_complete() && !response_queued_) {
            response_queued_ = true;
            queue_response();
        }
        pump(now);
        // A WFC server holds every acknowledgment back until the
        // certificate is available; the first flight coalesces them.
        const bool wfc_waiting =
            cfg_.mode == ServerMode::Wfc && ch_seen_ && !flight_built_;
        if (any_flush_pending() && !wfc_waiting) {
            send_ack_only(now);
        }
        settle_pto(now);
    }

    void on_certificate_ready(SimTime now) {
        if (flight_built_) return;
        flight_built_ = true;
        build_first_flight();
        // The flight head carries the current cumulative ACK state; under
        // WFC that is the (delayed) first ACK of the ClientHello, under
        // IACK a re-acknowledgment.
        force_ack_all_ = true;
        pump(now);
        settle_pto(now);
    }

    // The first server flight is one crypto stream of cert + overhead
    // bytes: an Initial-space head (ACK+ServerHello under WFC, ServerHello
    // under IACK) followed by Handshake-space certificate data.
    void build_first_flight() {
        flight_total_ = cfg_.cert_bytes + sizes_.flight_overhead;
        Chunk head;
        head.kind = Chunk::Kind::Crypto;
        head.space = Space::Initial;
        head.crypto_role = CryptoRole::ServerHello;
        head.offset = 0;
        head.length = sizes_.flight_initial_head;
        head.stream_total = flight_total_;
        outbox_.push_back(head);

        Chunk rest;
        rest.kind = Chunk::Kind::Crypto;
        rest.space = Space::Handshake;
        rest.crypto_role = CryptoRole::CertChain;
        rest.offset = sizes_.flight_initial_head;
        rest.length = flight_total_ - sizes_.flight_initial_head;
        rest.stream_total = flight_total_;
        outbox_.push_back(rest);
    }

    void queue_response() {
        const std::int64_t per = sizes_.response_payload_per_datagram;
        for (std::int64_t off = 0; off < cfg_.response_bytes; off += per) {
            Chunk c;
            c.kind = Chunk::Kind::Stream;
            c.space = Space::Application;
            c.stream_role = StreamRole::Response;
            c.offset = off;
            c.length = std::min(per, cfg_.response_bytes - off);
            c.stream_total = cfg_.response_bytes;
            c.standalone = true;
            outbox_.push_back(c);
        }
    }

    // Emits staged chunks as datagrams of at most max_datagram bytes, in
    // order, stopping at the anti-amplification budget. Pending ACKs ride in
    // the first datagram built by a pump (which is how a PING reply ends up
    // coalesced with certificate data).
    void pump(SimTime now) {
        bool first_of_pump = true;
        while (!outbox_.empty()) {
            std::vector<Packet> packets;
            std::int64_t size = 0;
            if (first_of_pump) {
                for (Packet& ap : build_ack_packets(now)) packets.push_back(std::move(ap));
            }
            // pack crypto chunks up to the MTU; stream chunks one per datagram
            std::int64_t capacity = sizes_.max_datagram;
            while (!outbox_.empty() && capacity > 0) {
                Chunk& c = outbox_.front();
                if (c.kind == Chunk::Kind::Stream) {
                    if (size > 0) break;
                    Packet p;
                    p.space = c.space;
                    p.number = next_pn(c.space);
                    p.frames.push_back(StreamFrame{c.stream_role, c.offset, c.length, c.stream_total});
                    p.size_bytes = c.length + sizes_.datagram_overhead;
                    size = c.length + sizes_.datagram_overhead;
                    packets.push_back(std::move(p));
                    outbox_.pop_front();
                    break;
                }
                const std::int64_t take = std::min(c.length, capacity);
                Packet p;
                p.space = c.space;
                p.number = next_pn(c.space);
                p.frames.push_back(CryptoFrame{c.crypto_role, c.offset, take, c.stream_total});
                p.size_bytes = take;
                packets.push_back(std::move(p));
                size += take;
                capacity -= take;
                c.offset += take;
                c.length -= take;
                if (c.length == 0) outbox_.pop_front();
            }
            if (packets.empty()) break;
            if (!amp_.can_send(size, cfg_.amplification_factor)) {
                // restore what this iteration consumed
                unwind(packets);
                if (!blocked_reported_) {
                    blocked_reported_ = true;
                    trace_simple(TraceKind::BudgetBlocked, now,
                                 {{"bytes_sent", amp_.bytes_sent},
                                  {"bytes_received", amp_.bytes_received}});
                }
                return;
            }
            if (blocked_reported_) {
                blocked_reported_ = false;
                trace_simple(TraceKind::BudgetUnblocked, now,
                             {{"bytes_sent", amp_.bytes_sent},
                              {"bytes_received", amp_.bytes_received}});
            }
            SendTag tag = SendTag::FirstFlight;
            for (const Packet& p : packets) {
                for (const Frame& f : p.frames) {
                    if (std::holds_alternative<StreamFrame>(f)) tag = SendTag::AppData;
                }
            }
            send_datagram(std::move(packets), size, tag, now);
            first_of_pump = false;
        }
    }

    // Puts crypto/stream frames of an unbuildable datagram back at the
    // front of the outbox, preserving order.
    void unwind(std::vector<Packet>& packets) {
        std::vector<Chunk> restored;
        for (const Packet& p : packets) {
            for (const Frame& f : p.frames) {
                if (const auto* c = std::get_if<CryptoFrame>(&f)) {
                    Chunk ch;
                    ch.kind = Chunk::Kind::Crypto;
                    ch.space = p.space;
                    ch.crypto_role = c->role;
                    ch.offset = c->offset;
                    ch.length = c->length;
                    ch.stream_total = c->stream_total;
                    restored.push_back(ch);
                    --next_pn_[space_idx(p.space)];
                } else if (const auto* s = std::get_if<StreamFrame>(&f)) {
                    Chunk ch;
                    ch.kind = Chunk::Kind::Stream;
                    ch.space = p.space;
                    ch.stream_role = s->role;
                    ch.offset = s->offset;
                    ch.length = s->length;
                    ch.stream_total = s->stream_total;
                    ch.standalone = true;
                    restored.push_back(ch);
                    --next_pn_[space_idx(p.space)];
                } else if (std::holds_alternative<AckFrame>(f)) {
                    // re-flag the spaces we tried to ack
                    recv_[space_idx(p.space)].flush_pending = true;
                    --next_pn_[space_idx(p.space)];
                }
            }
        }
        // merge adjacent crypto chunks back in front
        for (auto it = restored.rbegin(); it != restored.rend(); ++it) {
            outbox_.push_front(*it);
        }
    }

    void send_instant_ack(SimTime now) {
        std::vector<Packet> packets = build_ack_packets(now);
        if (packets.empty()) return;
        const std::int64_t size = cfg_.pad_iack ? sizes_.iack_padded : sizes_.iack_plain;
        if (cfg_.pad_iack) {
            packets.front().frames.push_back(PaddingFrame{size - sizes_.iack_plain});
        }
        send_datagram(std::move(packets), size, SendTag::AckOnly, now, {{"instant_ack", 1}});
    }

    void send_ack_only(SimTime now) {
        std::vector<Packet> packets = build_ack_packets(now);
        if (packets.empty()) return;
        send_datagram(std::move(packets), sizes_.ack_only, SendTag::AckOnly, now);
    }

    void settle_pto(SimTime now) {
        if (!emitted_eliciting_ && !had_newly_) return;
        if (had_newly_) pto_.on_newly_acked();
        emitted_eliciting_ = false;
        had_newly_ = false;
        if (bytes_in_flight()) {
            arm_pto(now, pto_duration(est_, oldest_unacked_space(), cfg_.default_pto_us,
                                      kPtoGranularityUs, fin_seen_),
                    oldest_unacked_space());
        } else {
            pto_.disarm(*timeline_);
        }
    }

    // PTO probe: restage every unacknowledged crypto range (tail bytes in
    // flight) and pump within the budget; if the budget still blocks, only
    // the backoff advances.
    // PTO probe: restage every unacknowledged in-flight crypto/stream range
    // (tail bytes) and pump within the budget; if the budget still blocks,
    // only the backoff advances.
    void on_pto_expired(SimTime now) override {
        trace_simple(TraceKind::PtoExpired, now, {{"backoff", pto_.backoff_exponent}}, pto_.space);
        pto_.on_expired(bytes_in_flight(), cfg_.probe_count);

        for (const SentPacket& sp : sent_) {
            if (sp.acked || sp.lost || !sp.eliciting || sp.chunk_offset < 0) continue;
            restage_if_uncovered(sp);
        }
        pump(now);
        if (bytes_in_flight() || !outbox_.empty()) {
            arm_pto(now, pto_duration(est_, oldest_unacked_space(), cfg_.default_pto_us,
                                      kPtoGranularityUs, fin_seen_),
                    pto_.space);
        }
        emitted_eliciting_ = false;
    }

    bool already_staged(std::int64_t offset, Space space, bool is_stream) const {
        for (const Chunk& c : outbox_) {
            const bool kind_match = is_stream == (c.kind == Chunk::Kind::Stream);
            if (kind_match && c.space == space && c.offset <= offset &&
                offset < c.offset + c.length) {
                return true;
            }
        }
        return false;
    }

    void on_bytes_emitted(std::int64_t size) override { amp_.bytes_sent += size; }

    ServerConfig cfg_;
    SizeModel sizes_;

    AmplificationState amp_;
    bool ch_seen_ = false;
    SimTime ch_arrival_ = 0;
    bool iack_due_ = false;
    bool flight_built_ = false;
    std::int64_t flight_total_ = 0;
    bool fin_seen_ = false;
    bool settings_queued_ = false;
    bool response_queued_ = false;
    std::int64_t request_total_ = -1;
    IntervalSet request_recv_;
    std::deque<Chunk> outbox_;
    IntervalSet acked_crypto_;
    IntervalSet acked_response_;
    IntervalSet acked_settings_;
    bool blocked_reported_ = false;
    bool had_newly_ = false;
};

}  // namespace quicsim
