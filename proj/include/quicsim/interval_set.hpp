#pragma once

#include <cstdint>
#include <map>

namespace quicsim {

// Sorted set of half-open byte ranges; used to reassemble crypto/stream
// data and detect holes left by datagram loss.
class IntervalSet {
public:
    void insert(std::int64_t begin, std::int64_t end) {
        if (begin >= end) return;
        auto it = ranges_.lower_bound(begin);
        if (it != ranges_.begin()) {
            auto prev = std::prev(it);
            if (prev->second >= begin) {
                begin = prev->first;
                end = std::max(end, prev->second);
                it = ranges_.erase(prev);
            }
        }
        while (it != ranges_.end() && it->first <= end) {
            end = std::max(end, it->second);
            it = ranges_.erase(it);
        }
        ranges_.emplace(begin, end);
    }

    bool covers(std::int64_t begin, std::int64_t end) const {
        if (begin >= end) return true;
        auto it = ranges_.upper_bound(begin);
        if (it == ranges_.begin()) return false;
        --it;
        return it->first <= begin && it->second >= end;
    }

    std::int64_t covered_bytes() const {
        std::int64_t total = 0;
        for (const auto& [b, e] : ranges_) total += e - b;
        return total;
    }

    bool empty() const { return ranges_.empty(); }

private:
    std::map<std::int64_t, std::int64_t> ranges_;  // begin -> end
};

}  // namespace quicsim
