#pragma once

#include <cstdint>
#include <vector>

#include "mega/eval.hpp"
#include "mega/pools.hpp"

namespace mega {

// One moving object: linear motion, fixed size, and a per-frame quality
// curve in [0,1]. Quality 1 is a clean view; low quality (occlusion, blur)
// degrades the emitted semantic feature and objectness but the object is
// still present and counts as ground truth.
struct TrackSpec {
    int class_id = 1;  // 1..num_classes
    double cx0 = 0.5;
    double cy0 = 0.5;
    double vx = 0.0;
    double vy = 0.0;
    double w = 0.1;
    double h = 0.1;
    std::vector<double> quality;  // length = scene frame count
};

struct SceneModel {
    int num_classes = 3;
    int dim = 16;
    int frames = 50;
    Matrix class_embeddings;  // num_classes x dim, row c-1 for class c
    std::vector<TrackSpec> tracks;
    double objectness_base = 0.3;
    double objectness_gain = 0.6;
    double distractor_objectness_lo = 0.02;
    double distractor_objectness_hi = 0.25;
};

void validate_scene(const SceneModel& scene);

// Well-separated random sign embeddings, one per class.
Matrix make_class_embeddings(int num_classes, int dim, Rng& rng);

// A few always-visible tracks per class with slow linear motion.
SceneModel make_default_scene(int num_classes, int dim, int frames, std::uint64_t seed);

// Benchmark scene: one track per class plus an extra, with occlusion
// episodes longer than a typical local window, so only long-range reuse can
// carry appearance evidence across the gap.
SceneModel make_occlusion_scene(int num_classes, int dim, int frames, std::uint64_t seed);

// Emits the proposal stream: every track emits one box per frame (semantic =
// quality-weighted class embedding plus noise, objectness tied to quality);
// distractor boxes with noise features fill each frame up to
// proposals_per_frame. Deterministic per (scene, proposals_per_frame, seed).
std::vector<FrameProposals> synth_video(const SceneModel& scene, int proposals_per_frame, std::uint64_t seed);

// Per-frame ground truth: every track's box at that frame, regardless of
// quality.
std::vector<std::vector<GroundTruthBox>> ground_truth(const SceneModel& scene);

// The track geometry at frame t (1-based).
BoxGeom track_box(const TrackSpec& track, int frame);

}  // namespace mega
