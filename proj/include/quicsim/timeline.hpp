#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "quicsim/sim_time.hpp"

namespace quicsim {

using EventHandle = std::uint64_t;

enum class RunStatus {
    Completed,  // event queue drained
    Timeout,    // events still pending past the limit (stalled scenario)
};

struct SimulationReport {
    SimTime final_time_us = 0;
    std::uint64_t dispatched = 0;
    RunStatus status = RunStatus::Completed;
};

// Deterministic discrete-event timeline. Events are totally ordered by
// (fire_time, sequence); the sequence is assigned at scheduling time, so
// simultaneous events dispatch in scheduling order. Cancelled events are
// never dispatched; every scheduled event is dispatched or cancelled
// exactly once.
class Timeline {
public:
    SimTime now() const { return now_; }

    EventHandle schedule(SimTime fire_time, std::function<void()> action) {
        if (fire_time < now_) {
            throw std::logic_error("Timeline::schedule: fire_time " + format_us(fire_time) +
                                   " is in the past (now " + format_us(now_) + ")");
        }
        const EventHandle handle = next_sequence_++;
        pending_.push(Entry{fire_time, handle});
        actions_.emplace(handle, std::move(action));
        return handle;
    }

    // True if the event was pending and is now removed; false if it already
    // fired or was cancelled before.
    bool cancel(EventHandle handle) {
        return actions_.erase(handle) != 0;
    }

    SimulationReport run_until_quiescent(SimTime limit_us) {
        SimulationReport report;
        while (!pending_.empty()) {
            const Entry top = pending_.top();
            auto it = actions_.find(top.handle);
            if (it == actions_.end()) {
                pending_.pop();  // cancelled tombstone
                continue;
            }
            if (top.fire_time > limit_us) {
                report.status = RunStatus::Timeout;
                report.final_time_us = limit_us;
                return report;
            }
            pending_.pop();
            std::function<void()> action = std::move(it->second);
            actions_.erase(it);
            now_ = top.fire_time;
            action();
            ++report.dispatched;
        }
        report.final_time_us = now_;
        return report;
    }

    std::size_t pending_count() const { return actions_.size(); }

private:
    struct Entry {
        SimTime fire_time;
        EventHandle handle;  // doubles as the monotone tie-break sequence
    };
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.fire_time != b.fire_time) return a.fire_time > b.fire_time;
            return a.handle > b.handle;
        }
    };

    SimTime now_ = 0;
    EventHandle next_sequence_ = 1;
    std::priority_queue<Entry, std::vector<Entry>, Later> pending_;
    std::unordered_map<EventHandle, std::function<void()>> actions_;
};

}  // namespace quicsim
