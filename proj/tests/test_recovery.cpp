#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <random>
#include <vector>

#include "quicsim/recovery.hpp"
#include "quicsim/timeline.hpp"

using namespace quicsim;

namespace {

// Independent brute-force recomputation of the estimator, kept free of the
// production code path: plain loop, explicit rounding.
struct OracleState {
    bool has_sample = false;
    std::int64_t smoothed = 0;
    std::int64_t var = 0;
    std::int64_t min = 0;
    std::int64_t latest = 0;
};

OracleState oracle_feed(const std::vector<std::array<std::int64_t, 2>>& samples,
                        bool handshake_confirmed, std::int64_t max_ack_delay) {
    OracleState st;
    for (const auto& [sample, delay] : samples) {
        st.latest = sample;
        if (!st.has_sample) {
            st.has_sample = true;
            st.smoothed = sample;
            st.var = (sample + 1) / 2;  // round half up
            st.min = sample;
            continue;
        }
        if (sample < st.min) st.min = sample;
        std::int64_t d = delay;
        if (handshake_confirmed && d > max_ack_delay) d = max_ack_delay;
        std::int64_t adjusted = sample;
        if (sample - d >= st.min) adjusted = sample - d;
        std::int64_t dev = st.smoothed > adjusted ? st.smoothed - adjusted : adjusted - st.smoothed;
        st.var = (3 * st.var + dev + 2) / 4;
        st.smoothed = (7 * st.smoothed + adjusted + 4) / 8;
    }
    return st;
}

std::int64_t oracle_pto(const OracleState& st, std::int64_t granularity) {
    std::int64_t v = 4 * st.var;
    if (v < granularity) v = granularity;
    return st.smoothed + v;
}

}  // namespace

TEST_CASE("first sample initializes smoothed and var, ignoring ack delay") {
    RttEstimator est;
    est.update(9000, 2000, false);
    CHECK(est.smoothed() == 9000);
    CHECK(est.var() == 4500);
    CHECK(est.min_rtt() == 9000);
    CHECK(est.latest() == 9000);
}

TEST_CASE("second sample follows the EWMA recurrences") {
    RttEstimator est;
    est.update(9000, 2000, false);
    est.update(13000, 0, false);
    // var = 3/4*4500 + 1/4*|9000-13000| = 4375; smoothed = 7/8*9000 + 1/8*13000 = 9500
    CHECK(est.var() == 4375);
    CHECK(est.smoothed() == 9500);
}

TEST_CASE("ack delay is not subtracted below min_rtt") {
    RttEstimator est;
    est.update(9000, 0, false);
    est.update(10000, 12000, false);
    // 10000 - 12000 < min_rtt -> the raw sample is used
    CHECK(est.smoothed() == (7 * 9000 + 10000 + 4) / 8);
    CHECK(est.min_rtt() == 9000);
}

TEST_CASE("ack delay capped at peer max only after handshake confirmation") {
    RttEstimator confirmed(25000);
    confirmed.update(100000, 0, true);
    confirmed.update(180000, 60000, true);  // capped to 25000 -> adjusted 155000
    RttEstimator handshake(25000);
    handshake.update(100000, 0, false);
    handshake.update(180000, 60000, false);  // uncapped -> adjusted 120000
    CHECK(confirmed.smoothed() == (7 * 100000 + 155000 + 4) / 8);
    CHECK(handshake.smoothed() == (7 * 100000 + 120000 + 4) / 8);
}

TEST_CASE("non-positive samples are rejected") {
    RttEstimator est;
    CHECK_THROWS_AS(est.update(0, 0, false), std::logic_error);
    CHECK_THROWS_AS(est.update(-5, 0, false), std::logic_error);
}

TEST_CASE("pto duration") {
    RttEstimator est;
    SECTION("no sample falls back to the profile default") {
        CHECK(pto_duration(est, Space::Initial, ms(200)) == ms(200));
    }
    SECTION("first sample yields exactly 3x the sample") {
        est.update(9000, 0, false);
        CHECK(pto_duration(est, Space::Initial, ms(200)) == 27000);
    }
    SECTION("granularity floors the variance term") {
        est.update(9000, 0, false);
        for (int i = 0; i < 60; ++i) est.update(9000, 0, false);
        // round-half-up makes var converge to its fixpoint 2, not 0
        CHECK(est.var() == 2);
        CHECK(pto_duration(est, Space::Initial, ms(200)) == 9000 + kPtoGranularityUs);
    }
    SECTION("max_ack_delay applies only in the application space post-confirmation") {
        est.update(9500 - 500, 0, false);
        est.update(9500, 0, false);
        const Duration base = est.smoothed() + std::max<Duration>(4 * est.var(), kPtoGranularityUs);
        CHECK(pto_duration(est, Space::Application, ms(200), kPtoGranularityUs, true) ==
              base + kDefaultMaxAckDelayUs);
        CHECK(pto_duration(est, Space::Application, ms(200), kPtoGranularityUs, false) == base);
        CHECK(pto_duration(est, Space::Initial, ms(200), kPtoGranularityUs, true) == base);
    }
}

TEST_CASE("3x initialization holds for any first sample and ack delay") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::int64_t> sample_dist(1000, 400000);
    std::uniform_int_distribution<std::int64_t> delay_dist(0, 50000);
    for (int i = 0; i < 500; ++i) {
        RttEstimator est;
        const std::int64_t s = sample_dist(rng);
        est.update(s, delay_dist(rng), false);
        const Duration pto = pto_duration(est, Space::Initial, ms(999));
        CHECK(std::abs(pto - 3 * s) <= 2);  // odd samples round var up by 1 -> +2 us
    }
}

TEST_CASE("first PTO gap between inflated and accurate sample is exactly 3x delta") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::int64_t> rtt_dist(500, 150000);
    std::uniform_int_distribution<std::int64_t> dt_dist(0, 300000);
    for (int i = 0; i < 500; ++i) {
        const std::int64_t rtt = rtt_dist(rng) * 2;  // even, as microsecond grids are
        const std::int64_t dt = dt_dist(rng);
        RttEstimator wfc;
        RttEstimator iack;
        wfc.update(rtt + dt, 0, false);
        iack.update(rtt, 0, false);
        const Duration gap = pto_duration(wfc, Space::Initial, 0) -
                             pto_duration(iack, Space::Initial, 0);
        CHECK(std::abs(gap - 3 * dt) <= 2);
        CHECK(first_pto_improvement(dt) == 3 * dt);
    }
}

TEST_CASE("estimator matches the brute-force oracle on random sequences") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::int64_t> len_dist(1, 50);
    std::uniform_int_distribution<std::int64_t> sample_dist(400, 400000);
    std::uniform_int_distribution<std::int64_t> delay_dist(0, 60000);
    std::bernoulli_distribution confirmed_dist(0.5);

    for (int seq = 0; seq < 1000; ++seq) {
        const bool confirmed = confirmed_dist(rng);
        std::vector<std::array<std::int64_t, 2>> samples;
        const std::int64_t n = len_dist(rng);
        for (std::int64_t i = 0; i < n; ++i) {
            samples.push_back({sample_dist(rng), delay_dist(rng)});
        }
        RttEstimator est;
        for (const auto& [s, d] : samples) est.update(s, d, confirmed);
        OracleState oracle = oracle_feed(samples, confirmed, kDefaultMaxAckDelayUs);
        REQUIRE(est.smoothed() == oracle.smoothed);
        REQUIRE(est.var() == oracle.var);
        REQUIRE(est.min_rtt() == oracle.min);
        REQUIRE(est.latest() == oracle.latest);
        REQUIRE(pto_duration(est, Space::Initial, ms(999)) == oracle_pto(oracle, kPtoGranularityUs));
    }
}

TEST_CASE("EWMA contracts toward repeated identical samples") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::int64_t> sample_dist(1000, 300000);

    SECTION("identical samples from the start: smoothed stays, var decays monotonically") {
        for (int i = 0; i < 50; ++i) {
            const std::int64_t s = sample_dist(rng);
            RttEstimator est;
            est.update(s, 0, false);
            std::int64_t prev_var = est.var();
            for (int k = 0; k < 30; ++k) {
                est.update(s, 0, false);
                CHECK(est.smoothed() == s);
                CHECK(est.var() <= prev_var);
                prev_var = est.var();
            }
        }
    }

    SECTION("after a divergent first sample, smoothed approaches the steady value") {
        for (int i = 0; i < 50; ++i) {
            const std::int64_t first = sample_dist(rng);
            const std::int64_t steady = sample_dist(rng);
            RttEstimator est;
            est.update(first, 0, false);
            std::int64_t prev_err = std::abs(est.smoothed() - steady);
            for (int k = 0; k < 30; ++k) {
                est.update(steady, 0, false);
                const std::int64_t err = std::abs(est.smoothed() - steady);
                CHECK(err <= prev_err);
                prev_err = err;
            }
            CHECK(prev_err <= std::abs(first - steady) / 16);
        }
    }
}

TEST_CASE("ack-delay floor: adjusted sample never drops below min_rtt") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<std::int64_t> sample_dist(400, 100000);
    std::uniform_int_distribution<std::int64_t> delay_dist(0, 120000);
    for (int i = 0; i < 300; ++i) {
        RttEstimator est;
        std::int64_t implied_min = -1;
        for (int k = 0; k < 20; ++k) {
            const std::int64_t s = sample_dist(rng);
            est.update(s, delay_dist(rng), false);
            implied_min = implied_min < 0 ? s : std::min(implied_min, s);
            CHECK(est.min_rtt() == implied_min);
            CHECK(est.min_rtt() <= est.smoothed() + 4 * est.var());
        }
    }
}

TEST_CASE("pto state: arm, re-arm, backoff, probe directive") {
    Timeline tl;
    PtoState pto;
    int fired = 0;

    SECTION("arm schedules at now + base * 2^backoff") {
        tl.schedule(9000, [&] { pto.arm(tl, 27000, tl.now(), [&] { ++fired; }); });
        tl.run_until_quiescent(1'000'000);
        CHECK(fired == 1);
        CHECK(tl.now() == 36000);
    }

    SECTION("backoff doubles the interval") {
        pto.backoff_exponent = 1;
        tl.schedule(36000, [&] { pto.arm(tl, 27000, tl.now(), [&] { ++fired; }); });
        tl.run_until_quiescent(1'000'000);
        CHECK(tl.now() == 90000);
    }

    SECTION("re-arming cancels the prior timer") {
        pto.arm(tl, 1000, 0, [&] { ++fired; });
        pto.arm(tl, 5000, 0, [&] { ++fired; });
        tl.run_until_quiescent(1'000'000);
        CHECK(fired == 1);
        CHECK(tl.now() == 5000);
    }

    SECTION("expiry directives") {
        ProbeDirective d1 = pto.on_expired(true);
        CHECK(d1.kind == ProbeKind::RetransmitTail);
        CHECK(pto.backoff_exponent == 1);
        ProbeDirective d2 = pto.on_expired(false);
        CHECK(d2.kind == ProbeKind::Ping);
        CHECK(pto.backoff_exponent == 2);
        pto.on_newly_acked();
        CHECK(pto.backoff_exponent == 0);
    }
}

TEST_CASE("first_pto_improvement examples") {
    CHECK(first_pto_improvement(ms(4)) == ms(12));
    CHECK(first_pto_improvement(0) == 0);
    CHECK(first_pto_improvement(8230) == 24690);  // 8.23 ms -> 24.7 ms-scale improvement
    CHECK_THROWS_AS(first_pto_improvement(-1), std::logic_error);
}
