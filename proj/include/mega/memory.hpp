#pragma once

#include <string>
#include <vector>

#include "mega/relation.hpp"
#include "mega/taint.hpp"

namespace mega {

// Fixed-capacity FIFO caches of per-frame intermediate features, one level
// per aggregation stage input. All levels always hold the same frame set;
// eviction removes the oldest frame from every level at once. Entries are
// plain values with no gradient linkage: callers must extract feature values
// before pushing, which makes every later read gradient-free by construction.
class LongRangeMemory {
public:
    LongRangeMemory(int levels, int capacity);

    int levels() const { return static_cast<int>(levels_.size()); }
    int capacity() const { return capacity_; }
    int occupancy() const { return levels_.empty() ? 0 : static_cast<int>(levels_.front().size()); }
    bool empty() const { return occupancy() == 0; }

    // Cached frame indices, oldest first (identical at every level).
    std::vector<int> cached_frames() const;

    // Appends one frame's features at every level, then evicts the oldest
    // frame from all levels if capacity is exceeded. frame_index must be
    // strictly greater than every cached index. taints, when given, must
    // parallel per_level box counts.
    void push(int frame_index, const std::vector<std::vector<BoxFeature>>& per_level,
              const std::vector<std::vector<TaintSet>>& taints = {});

    // All cached boxes at one level, oldest frame first.
    std::vector<BoxFeature> view(int level) const;

    // Taints parallel to view(level); empty sets when pushes carried none.
    std::vector<TaintSet> view_taints(int level) const;

    void clear();

    // Debugging dump: frame indices and feature payloads per level.
    std::string dump_json() const;

private:
    struct Entry {
        int frame_index = 0;
        std::vector<BoxFeature> boxes;
        std::vector<TaintSet> taints;
    };

    void require_level(int level) const;

    int capacity_ = 0;
    std::vector<std::vector<Entry>> levels_;
};

}  // namespace mega
