#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>

#include "quicsim/sim_time.hpp"
#include "quicsim/timeline.hpp"

namespace quicsim {

enum class Space { Initial, Handshake, Application };

inline const char* to_string(Space s) {
    switch (s) {
        case Space::Initial: return "initial";
        case Space::Handshake: return "handshake";
        case Space::Application: return "application";
    }
    return "?";
}

inline constexpr Duration kPtoGranularityUs = 1000;        // kGranularity, 1 ms
inline constexpr Duration kDefaultMaxAckDelayUs = 25000;   // 25 ms

// RTT estimator per RFC 9002 section 5, integer microseconds with
// round-half-up division. The first sample initializes smoothed_rtt to the
// sample and rtt_var to sample/2 and deliberately ignores the peer's
// acknowledgment delay; that initialization rule is what makes the first
// PTO exactly 3x the first sample.
class RttEstimator {
public:
    explicit RttEstimator(Duration max_ack_delay_peer = kDefaultMaxAckDelayUs)
        : max_ack_delay_peer_(max_ack_delay_peer) {}

    void update(Duration sample_us, Duration ack_delay_us, bool handshake_confirmed) {
        if (sample_us <= 0) {
            throw std::logic_error("RttEstimator::update: non-positive sample");
        }
        latest_ = sample_us;
        if (!has_sample_) {
            has_sample_ = true;
            min_ = sample_us;
            smoothed_ = sample_us;
            var_ = div_round_half_up(sample_us, 2);
            return;
        }
        min_ = std::min(min_, sample_us);
        Duration delay = ack_delay_us;
        if (handshake_confirmed) {
            delay = std::min(delay, max_ack_delay_peer_);
        }
        // Subtract the ack delay only if the result stays at or above
        // min_rtt (RFC 9002 section 5.3; Appendix D of the study).
        Duration adjusted = sample_us;
        if (sample_us - delay >= min_) {
            adjusted = sample_us - delay;
        }
        var_ = div_round_half_up(3 * var_ + std::abs(smoothed_ - adjusted), 4);
        smoothed_ = div_round_half_up(7 * smoothed_ + adjusted, 8);
    }

    bool has_sample() const { return has_sample_; }
    Duration latest() const { return latest_; }
    Duration min_rtt() const { return min_; }
    Duration smoothed() const { return smoothed_; }
    Duration var() const { return var_; }
    Duration max_ack_delay_peer() const { return max_ack_delay_peer_; }

    // Test/quirk hook: go-x-net style deterministic mis-initialization.
    void force_initialize(Duration smoothed_us, Duration var_us, Duration min_us) {
        has_sample_ = true;
        smoothed_ = smoothed_us;
        var_ = var_us;
        min_ = min_us;
        latest_ = min_us;
    }

private:
    Duration max_ack_delay_peer_;
    bool has_sample_ = false;
    Duration latest_ = 0;
    Duration min_ = 0;
    Duration smoothed_ = 0;
    Duration var_ = 0;
};

// Base PTO duration for one packet-number space. Without a sample this is
// the implementation's default PTO (Appendix C profiles choose much less
// than the recommended 1 s). The peer max_ack_delay only applies in the
// application space once the handshake is confirmed.
inline Duration pto_duration(const RttEstimator& est, Space space, Duration profile_default_us,
                             Duration granularity_us = kPtoGranularityUs,
                             bool handshake_confirmed = false) {
    if (!est.has_sample()) {
        return profile_default_us;
    }
    Duration d = est.smoothed() + std::max<Duration>(4 * est.var(), granularity_us);
    if (space == Space::Application && handshake_confirmed) {
        d += est.max_ack_delay_peer();
    }
    return d;
}

// First-PTO improvement of instant ACK over wait-for-certificate: the WFC
// first sample is inflated by delta_t, and the first PTO is 3x the first
// sample, so the gap is exactly 3 * delta_t.
inline Duration first_pto_improvement(Duration delta_t_us) {
    if (delta_t_us < 0) {
        throw std::logic_error("first_pto_improvement: negative delta_t");
    }
    return 3 * delta_t_us;
}

enum class ProbeKind {
    RetransmitTail,  // unacknowledged bytes in flight are resent
    Ping,            // nothing outstanding; send a PING frame
};

struct ProbeDirective {
    ProbeKind kind = ProbeKind::Ping;
    int probe_count = 1;  // 1-2 datagram probes per expiry
};

// PTO timer state for one endpoint. The effective duration is
// base * 2^backoff_exponent; the exponent resets when a newly-acknowledging
// ACK arrives (not on any ACK).
struct PtoState {
    int backoff_exponent = 0;
    std::optional<EventHandle> timer;
    Space space = Space::Initial;

    Duration effective(Duration base_us) const {
        return base_us * (Duration{1} << backoff_exponent);
    }

    // Cancels any pending timer and schedules expiry at
    // now + base * 2^backoff. At most one timer is pending per state.
    EventHandle arm(Timeline& timeline, Duration base_us, SimTime now,
                    std::function<void()> on_expiry) {
        if (base_us <= 0) {
            throw std::logic_error("PtoState::arm: non-positive base duration");
        }
        disarm(timeline);
        EventHandle h = timeline.schedule(now + effective(base_us), std::move(on_expiry));
        timer = h;
        return h;
    }

    void disarm(Timeline& timeline) {
        if (timer) {
            timeline.cancel(*timer);
            timer.reset();
        }
    }

    ProbeDirective on_expired(bool bytes_in_flight, int probe_count = 1) {
        timer.reset();
        ++backoff_exponent;
        ProbeDirective d;
        d.kind = bytes_in_flight ? ProbeKind::RetransmitTail : ProbeKind::Ping;
        d.probe_count = probe_count;
        return d;
    }

    void on_newly_acked() { backoff_exponent = 0; }
};

}  // namespace quicsim
