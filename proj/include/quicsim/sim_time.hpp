#pragma once

#include <cstdint>
#include <string>

namespace quicsim {

// All simulation timestamps and durations are integer microseconds.
// Integer arithmetic keeps long timelines free of accumulation error and
// lets equality-based tests be exact.
using SimTime = std::int64_t;
using Duration = std::int64_t;

inline constexpr Duration kMicrosPerMilli = 1000;

inline constexpr Duration ms(std::int64_t v) { return v * kMicrosPerMilli; }

// Integer division rounding half up; used by the RTT estimator so the
// documented 2 us tolerances hold.
inline constexpr std::int64_t div_round_half_up(std::int64_t num, std::int64_t den) {
    return (num + den / 2) / den;
}

inline std::string format_us(SimTime t) {
    return std::to_string(t) + "us";
}

}  // namespace quicsim
