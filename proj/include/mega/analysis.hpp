#pragma once

#include <set>
#include <utility>
#include <vector>

#include "mega/pipeline.hpp"

namespace mega {

// Unclipped steady-state reference counts reachable from a key frame:
// (n_l * t_m + t_l) local frames and (n_l * t_m + t_g) global frame-slots.
// All inputs must be nonnegative.
std::pair<long long, long long> aggregation_size(long long n_l, long long t_m, long long t_l, long long t_g);

// Source set actually reaching one key frame's final features, measured by
// running the pipeline with origin taints. local_frames holds frame indices
// in the local-window lineage. global_slots holds global-path ids: negative
// -(p+1) for position p of the key's own global window, nonnegative for a
// frame whose cached features relay earlier global information.
struct ReceptiveField {
    int key = 0;
    std::set<int> local_frames;
    std::set<int> global_slots;
};

// Traces the receptive field of key frame k on a T-frame synthetic source.
// Taint flow depends only on the window, stack, and memory structure, so the
// per-frame and per-head widths are shrunk to fixed tiny values before the
// run; t_l, tau, t_g, t_m, n_g, n_l, online, base_model, and seed are taken
// from cfg.
ReceptiveField trace_receptive_field(const PipelineConfig& cfg, int video_length, int key);

// Closed-form operation counts for a run of T frames, no execution. The
// per-frame entries reproduce the counters of run_video exactly, including
// window clipping and memory fill-in; steady_state is the cost of one frame
// with a full window and full memory, the quantity whose growth in t_m is
// linear.
struct CostReport {
    int frames = 0;
    std::vector<StageCounters> per_frame;        // index = frame - 1
    StageCounters global_total;                  // global stage, summed over frames
    std::vector<StageCounters> local_totals;     // per local stack, summed over frames
    StageCounters totals;                        // everything
    StageCounters steady_state;                  // one saturated frame
};

CostReport count_ops(const PipelineConfig& cfg, int video_length);

}  // namespace mega
