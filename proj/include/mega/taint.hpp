#pragma once

#include <set>

namespace mega {

// Origin labels carried alongside box features to measure where information
// can flow from. `local` holds source frame indices reachable through the
// local window lineage. `global` holds global-path slot ids: a negative id
// -(p+1) marks direct use of the current global window's position p, a
// nonnegative id marks a frame whose cached features carry earlier global
// information through the memory.
struct TaintSet {
    std::set<int> local;
    std::set<int> global;

    bool operator==(const TaintSet&) const = default;
};

inline void taint_merge(TaintSet& into, const TaintSet& from) {
    into.local.insert(from.local.begin(), from.local.end());
    into.global.insert(from.global.begin(), from.global.end());
}

}  // namespace mega
