#include <catch_amalgamated.hpp>

#include <vector>

#include "quicsim/timeline.hpp"

using namespace quicsim;

TEST_CASE("events fire at their scheduled time") {
    Timeline tl;
    SimTime fired_at = -1;
    tl.schedule(4500, [&] { fired_at = tl.now(); });
    auto report = tl.run_until_quiescent(10'000'000);
    CHECK(fired_at == 4500);
    CHECK(report.final_time_us == 4500);
    CHECK(report.dispatched == 1);
    CHECK(report.status == RunStatus::Completed);
}

TEST_CASE("equal fire times dispatch in scheduling order") {
    Timeline tl;
    std::vector<int> order;
    tl.schedule(100, [&] { order.push_back(1); });
    tl.schedule(100, [&] { order.push_back(2); });
    tl.schedule(50, [&] { order.push_back(0); });
    tl.run_until_quiescent(1000);
    CHECK(order == std::vector<int>{0, 1, 2});
}

TEST_CASE("scheduling in the past is a fatal error") {
    Timeline tl;
    tl.schedule(100, [&] {
        CHECK_THROWS_AS(tl.schedule(50, [] {}), std::logic_error);
    });
    tl.run_until_quiescent(1000);
}

TEST_CASE("cancel semantics") {
    Timeline tl;
    bool fired = false;
    EventHandle h = tl.schedule(100, [&] { fired = true; });

    SECTION("cancel pending event") {
        CHECK(tl.cancel(h));
        CHECK_FALSE(tl.cancel(h));  // second cancel
        tl.run_until_quiescent(1000);
        CHECK_FALSE(fired);
    }

    SECTION("cancel after dispatch") {
        tl.run_until_quiescent(1000);
        CHECK(fired);
        CHECK_FALSE(tl.cancel(h));
    }
}

TEST_CASE("empty queue reports time zero") {
    Timeline tl;
    auto report = tl.run_until_quiescent(1000);
    CHECK(report.final_time_us == 0);
    CHECK(report.dispatched == 0);
    CHECK(report.status == RunStatus::Completed);
}

TEST_CASE("pending events past the limit yield a timeout report") {
    Timeline tl;
    int count = 0;
    // self-rescheduling chain that doubles its interval, like a PTO backoff
    std::function<void()> chain = [&] {
        ++count;
        tl.schedule(tl.now() * 2 + 1000, chain);
    };
    tl.schedule(1000, chain);
    auto report = tl.run_until_quiescent(100'000);
    CHECK(report.status == RunStatus::Timeout);
    CHECK(report.final_time_us == 100'000);
    CHECK(count > 0);
}

TEST_CASE("conservation: every event dispatches or cancels exactly once") {
    Timeline tl;
    int dispatched = 0;
    std::vector<EventHandle> handles;
    for (int i = 0; i < 200; ++i) {
        handles.push_back(tl.schedule(i * 7 % 101, [&] { ++dispatched; }));
    }
    int cancelled = 0;
    for (std::size_t i = 0; i < handles.size(); i += 3) {
        if (tl.cancel(handles[i])) ++cancelled;
    }
    auto report = tl.run_until_quiescent(1'000'000);
    CHECK(dispatched + cancelled == 200);
    CHECK(report.dispatched == static_cast<std::uint64_t>(dispatched));
}

TEST_CASE("causality: dispatched events never observe a later timeline") {
    Timeline tl;
    bool ok = true;
    for (int i = 0; i < 100; ++i) {
        SimTime at = (i * 37) % 500;
        tl.schedule(at, [&tl, at, &ok] { ok = ok && tl.now() == at; });
    }
    tl.run_until_quiescent(1'000'000);
    CHECK(ok);
}
