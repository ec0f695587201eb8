#pragma once

#include <cstdint>
#include <vector>

#include "mega/relation.hpp"

namespace mega {

// Candidate boxes of one frame, sorted by descending objectness (ties keep
// their original proposal order).
struct FrameProposals {
    int frame_index = 0;
    std::vector<BoxFeature> boxes;
};

// Stable-sorts boxes by descending objectness and stamps frame_index on them.
void normalize_frame(FrameProposals& frame);

// Throws ContractViolation when the sort invariant is broken or a box carries
// a different frame_index.
void require_frame_invariants(const FrameProposals& frame);

// First k boxes (the top-k by objectness given the sort invariant).
FrameProposals truncate_top_k(const FrameProposals& frame, int k);

enum class PoolRole { local, global, memory_view };

struct ProposalPool {
    PoolRole role = PoolRole::local;
    std::vector<FrameProposals> frames;

    int total_boxes() const;
    std::vector<BoxFeature> all_boxes() const;  // concatenated in frame order
};

// Local pool around key frame `key` (1-based). The symmetric window
// key-tau..key+tau is clipped to [1, T]; online mode uses the trailing window
// key-t_l+1..key instead. The key frame contributes every box; other frames
// are truncated to their top k_l.
ProposalPool build_local_pool(const std::vector<FrameProposals>& video, int key, int tau, int t_l, int k_l,
                              bool online);

// Seeded random frame order for global sampling; windows of length T_g slide
// one position per key frame and wrap modulo T.
class GlobalSampler {
public:
    GlobalSampler(int video_length, std::uint64_t seed);

    const std::vector<int>& permutation() const { return order_; }

    // Frames at positions key-1 .. key+t_g-2 of the permutation, modulo T.
    std::vector<int> window(int key, int t_g) const;

    // Causal variant: scans at most T positions starting at key-1 and keeps
    // the first t_g entries that do not exceed key.
    std::vector<int> online_window(int key, int t_g) const;

private:
    std::vector<int> order_;
};

ProposalPool build_global_pool(const std::vector<FrameProposals>& video, const GlobalSampler& sampler, int key,
                               int t_g, int k_g, bool online);

// Truncates every frame of the pool to its top k_d boxes.
ProposalPool distill(const ProposalPool& pool, int k_d);

}  // namespace mega
