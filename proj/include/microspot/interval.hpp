#pragma once

#include <algorithm>
#include <cstdint>

namespace microspot {

/// 0-based half-open frame interval [start, end).
struct Interval {
    std::int64_t start = 0;
    std::int64_t end = 0;

    std::int64_t length() const { return end > start ? end - start : 0; }
    bool empty() const { return end <= start; }

    std::int64_t intersection_length(const Interval& o) const {
        const auto lo = std::max(start, o.start);
        const auto hi = std::min(end, o.end);
        return hi > lo ? hi - lo : 0;
    }

    bool intersects(const Interval& o) const { return intersection_length(o) > 0; }

    bool operator==(const Interval&) const = default;
};

} // namespace microspot
