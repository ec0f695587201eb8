#include "mega/pools.hpp"

#include <algorithm>

namespace mega {

namespace {

void require_video_frame(const std::vector<FrameProposals>& video, int t) {
    if (t < 1 || t > static_cast<int>(video.size()))
        throw ContractViolation("video frame " + std::to_string(t) + " outside 1.." + std::to_string(video.size()));
    if (video[t - 1].frame_index != t)
        throw ContractViolation("video frame at position " + std::to_string(t) + " carries index " +
                                std::to_string(video[t - 1].frame_index) + "; source must be frames 1..T in order");
}

}  // namespace

void normalize_frame(FrameProposals& frame) {
    for (BoxFeature& b : frame.boxes) b.frame_index = frame.frame_index;
    std::stable_sort(frame.boxes.begin(), frame.boxes.end(),
                     [](const BoxFeature& a, const BoxFeature& b) { return a.objectness > b.objectness; });
}

void require_frame_invariants(const FrameProposals& frame) {
    for (std::size_t i = 0; i < frame.boxes.size(); ++i) {
        if (frame.boxes[i].frame_index != frame.frame_index)
            throw ContractViolation("frame " + std::to_string(frame.frame_index) + " holds a box stamped " +
                                    std::to_string(frame.boxes[i].frame_index));
        if (i > 0 && frame.boxes[i - 1].objectness < frame.boxes[i].objectness)
            throw ContractViolation("frame " + std::to_string(frame.frame_index) + " boxes not sorted by objectness");
    }
}

FrameProposals truncate_top_k(const FrameProposals& frame, int k) {
    if (k < 0) throw ContractViolation("truncate_top_k: negative k");
    require_frame_invariants(frame);
    FrameProposals out;
    out.frame_index = frame.frame_index;
    const std::size_t keep = std::min(frame.boxes.size(), static_cast<std::size_t>(k));
    out.boxes.assign(frame.boxes.begin(), frame.boxes.begin() + static_cast<std::ptrdiff_t>(keep));
    return out;
}

int ProposalPool::total_boxes() const {
    int n = 0;
    for (const FrameProposals& f : frames) n += static_cast<int>(f.boxes.size());
    return n;
}

std::vector<BoxFeature> ProposalPool::all_boxes() const {
    std::vector<BoxFeature> out;
    out.reserve(static_cast<std::size_t>(total_boxes()));
    for (const FrameProposals& f : frames) out.insert(out.end(), f.boxes.begin(), f.boxes.end());
    return out;
}

ProposalPool build_local_pool(const std::vector<FrameProposals>& video, int key, int tau, int t_l, int k_l,
                              bool online) {
    const int total = static_cast<int>(video.size());
    if (key < 1 || key > total)
        throw ContractViolation("build_local_pool: key " + std::to_string(key) + " outside 1.." + std::to_string(total));
    int lo, hi;
    if (online) {
        lo = std::max(1, key - t_l + 1);
        hi = key;
    } else {
        lo = std::max(1, key - tau);
        hi = std::min(total, key + tau);
    }
    ProposalPool pool;
    pool.role = PoolRole::local;
    for (int t = lo; t <= hi; ++t) {
        require_video_frame(video, t);
        if (t == key) {
            require_frame_invariants(video[t - 1]);
            pool.frames.push_back(video[t - 1]);
        } else {
            pool.frames.push_back(truncate_top_k(video[t - 1], k_l));
        }
    }
    return pool;
}

GlobalSampler::GlobalSampler(int video_length, std::uint64_t seed) {
    if (video_length < 1) throw ContractViolation("GlobalSampler: video length must be positive");
    order_.resize(static_cast<std::size_t>(video_length));
    for (int i = 0; i < video_length; ++i) order_[static_cast<std::size_t>(i)] = i + 1;
    Rng rng(seed);
    rng.shuffle(order_);
}

std::vector<int> GlobalSampler::window(int key, int t_g) const {
    const int total = static_cast<int>(order_.size());
    if (key < 1) throw ContractViolation("GlobalSampler::window: key must be >= 1");
    if (t_g > total)
        throw ContractViolation("GlobalSampler::window: t_g " + std::to_string(t_g) + " exceeds video length " +
                                std::to_string(total));
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(std::max(0, t_g)));
    for (int i = 0; i < t_g; ++i) out.push_back(order_[static_cast<std::size_t>((key - 1 + i) % total)]);
    return out;
}

std::vector<int> GlobalSampler::online_window(int key, int t_g) const {
    const int total = static_cast<int>(order_.size());
    if (key < 1) throw ContractViolation("GlobalSampler::online_window: key must be >= 1");
    std::vector<int> out;
    for (int i = 0; i < total && static_cast<int>(out.size()) < t_g; ++i) {
        const int frame = order_[static_cast<std::size_t>((key - 1 + i) % total)];
        if (frame <= key) out.push_back(frame);
    }
    return out;
}

ProposalPool build_global_pool(const std::vector<FrameProposals>& video, const GlobalSampler& sampler, int key,
                               int t_g, int k_g, bool online) {
    const std::vector<int> frames = online ? sampler.online_window(key, t_g) : sampler.window(key, t_g);
    ProposalPool pool;
    pool.role = PoolRole::global;
    for (int t : frames) {
        require_video_frame(video, t);
        pool.frames.push_back(truncate_top_k(video[t - 1], k_g));
    }
    return pool;
}

ProposalPool distill(const ProposalPool& pool, int k_d) {
    ProposalPool out;
    out.role = pool.role;
    out.frames.reserve(pool.frames.size());
    for (const FrameProposals& f : pool.frames) out.frames.push_back(truncate_top_k(f, k_d));
    return out;
}

}  // namespace mega
