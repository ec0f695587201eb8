#include "mega/memory.hpp"

#include "json.hpp"

namespace mega {

LongRangeMemory::LongRangeMemory(int levels, int capacity) : capacity_(capacity) {
    if (levels < 1) throw ContractViolation("LongRangeMemory: need at least one level");
    if (capacity < 0) throw ContractViolation("LongRangeMemory: negative capacity");
    levels_.resize(static_cast<std::size_t>(levels));
}

void LongRangeMemory::require_level(int level) const {
    if (level < 0 || level >= levels())
        throw ContractViolation("LongRangeMemory: level " + std::to_string(level) + " outside 0.." +
                                std::to_string(levels() - 1));
}

std::vector<int> LongRangeMemory::cached_frames() const {
    std::vector<int> out;
    if (levels_.empty()) return out;
    out.reserve(levels_.front().size());
    for (const Entry& e : levels_.front()) out.push_back(e.frame_index);
    return out;
}

void LongRangeMemory::push(int frame_index, const std::vector<std::vector<BoxFeature>>& per_level,
                           const std::vector<std::vector<TaintSet>>& taints) {
    if (static_cast<int>(per_level.size()) != levels())
        throw ContractViolation("LongRangeMemory::push: got " + std::to_string(per_level.size()) +
                                " levels, memory has " + std::to_string(levels()));
    if (!taints.empty() && taints.size() != per_level.size())
        throw ContractViolation("LongRangeMemory::push: taint level count mismatch");
    for (const std::vector<Entry>& lvl : levels_)
        if (!lvl.empty() && lvl.back().frame_index >= frame_index)
            throw ContractViolation("LongRangeMemory::push: frame " + std::to_string(frame_index) +
                                    " not newer than cached frame " + std::to_string(lvl.back().frame_index));
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        if (!taints.empty() && taints[i].size() != per_level[i].size())
            throw ContractViolation("LongRangeMemory::push: taint count mismatch at level " + std::to_string(i));
        Entry e;
        e.frame_index = frame_index;
        e.boxes = per_level[i];
        if (!taints.empty()) e.taints = taints[i];
        levels_[i].push_back(std::move(e));
    }
    while (occupancy() > capacity_)
        for (std::vector<Entry>& lvl : levels_) lvl.erase(lvl.begin());
}

std::vector<BoxFeature> LongRangeMemory::view(int level) const {
    require_level(level);
    std::vector<BoxFeature> out;
    for (const Entry& e : levels_[static_cast<std::size_t>(level)])
        out.insert(out.end(), e.boxes.begin(), e.boxes.end());
    return out;
}

std::vector<TaintSet> LongRangeMemory::view_taints(int level) const {
    require_level(level);
    std::vector<TaintSet> out;
    for (const Entry& e : levels_[static_cast<std::size_t>(level)]) {
        if (e.taints.empty())
            out.resize(out.size() + e.boxes.size());
        else
            out.insert(out.end(), e.taints.begin(), e.taints.end());
    }
    return out;
}

void LongRangeMemory::clear() {
    for (std::vector<Entry>& lvl : levels_) lvl.clear();
}

std::string LongRangeMemory::dump_json() const {
    nlohmann::json doc;
    doc["capacity"] = capacity_;
    doc["frames"] = cached_frames();
    nlohmann::json lvls = nlohmann::json::array();
    for (const std::vector<Entry>& lvl : levels_) {
        nlohmann::json jl = nlohmann::json::array();
        for (const Entry& e : lvl) {
            nlohmann::json je;
            je["frame"] = e.frame_index;
            nlohmann::json boxes = nlohmann::json::array();
            for (const BoxFeature& b : e.boxes) {
                boxes.push_back({{"cx", b.cx},
                                 {"cy", b.cy},
                                 {"w", b.w},
                                 {"h", b.h},
                                 {"objectness", b.objectness},
                                 {"feat", b.semantic}});
            }
            je["boxes"] = std::move(boxes);
            jl.push_back(std::move(je));
        }
        lvls.push_back(std::move(jl));
    }
    doc["levels"] = std::move(lvls);
    return doc.dump();
}

}  // namespace mega
