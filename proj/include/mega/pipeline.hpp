#pragma once

#include <cstdint>
#include <vector>

#include "mega/detect.hpp"
#include "mega/eval.hpp"
#include "mega/memory.hpp"
#include "mega/pools.hpp"
#include "mega/taint.hpp"

namespace mega {

// Full aggregation pipeline configuration. Offline mode uses the symmetric
// window t_l = 2*tau+1 around the key; online mode uses the trailing t_l
// frames. base_model forces memory capacity to zero, which makes the
// enhanced stacks collapse to plain local aggregation.
struct PipelineConfig {
    bool base_model = false;
    bool online = false;
    int video_length = 0;  // declared T; 0 derives it from the source
    int t_l = 25;
    int tau = 12;
    int t_g = 10;
    int t_m = 25;
    int n_g = 1;
    int n_l = 3;
    int k_l = 80;
    int k_g = 80;
    int k_d = 20;
    int proposals = 300;  // N, per-frame candidate boxes
    int num_classes = 30;
    int dim = 64;
    int heads = 8;
    int embed_dim = 40;
    double nms_threshold = 0.5;
    std::uint64_t seed = 1;

    int effective_capacity() const { return base_model ? 0 : t_m; }
    int memory_level_count() const { return n_l + 1; }
};

// Small dimensions for tests and demos; same structure as the defaults.
PipelineConfig desk_config();

// Throws ContractViolation naming the offending field.
void validate_config(const PipelineConfig& cfg);

// All learnable parameters: n_g location-free global modules, n_l
// location-based local modules, and the detection head.
struct ModelParams {
    std::vector<RelationParams> global_stacks;
    std::vector<RelationParams> local_stacks;
    HeadParams head;

    ModelParams() = default;
    ModelParams(const PipelineConfig& cfg, Rng& rng);
    std::vector<Param*> param_list();
    void zero_grads();
};

struct SpanRef {
    int frame_index = 0;
    int begin = 0;
    int count = 0;
};

// A proposal pool lifted to a feature matrix: box metadata, contiguous
// per-frame spans, the (possibly tape-tracked) features, and optional
// origin taints for receptive-field tracing.
struct PoolFeatures {
    std::vector<BoxFeature> boxes;
    std::vector<SpanRef> spans;
    Var features;
    std::vector<TaintSet> taints;

    int rows() const { return static_cast<int>(boxes.size()); }
    const SpanRef* find_span(int frame_index) const;
};

// Local pool boxes are tainted {local: origin frame}; global pool boxes are
// tainted {global: -(window position + 1)}, marking the slot rather than the
// shuffled frame behind it.
PoolFeatures make_pool_features(const ProposalPool& pool, bool trace);

struct StageCounters {
    long long attn_pairs = 0;
    long long value_mults = 0;
    long long feature_updates = 0;

    void add_module(int n_q, int n_ref, int num_heads);
    void add(const StageCounters& other);
    bool operator==(const StageCounters&) const = default;
};

// One memory level as seen by a stack: plain feature rows, no gradients.
struct MemoryView {
    std::vector<BoxFeature> boxes;
    std::vector<TaintSet> taints;  // parallel to boxes, or empty

    bool empty() const { return boxes.empty(); }
};

std::vector<MemoryView> memory_views(const LongRangeMemory& memory, int n_l);

// n_g location-free relation modules over the local pool; the global pool
// is reused as references at every stack and never updated. No-op when
// n_g == 0; throws when n_g >= 1 and the global pool is empty.
void global_stage(PoolFeatures& local, const PoolFeatures& global_pool, ModelParams& params,
                  const PipelineConfig& cfg, Tape* tape, StageCounters& counters);

// One location-based stack, 1-based index. References: at stack 1 the full
// current pool, at later stacks the per-frame top-k_d view, concatenated
// with the memory view for level stack_index-1. Memory rows join as
// constants, so no gradient ever flows into cached features.
void local_stack(PoolFeatures& local, int stack_index, const MemoryView& memory, ModelParams& params,
                 const PipelineConfig& cfg, Tape* tape, StageCounters& counters);

// Feature snapshots of one frame's rows at every level: level 0 after the
// global stage (top k_l), level j after local stack j (top k_d). Features
// are stored as plain values in the boxes' semantic field.
struct LevelSnapshots {
    int frame_index = 0;
    std::vector<std::vector<BoxFeature>> levels;
    std::vector<std::vector<TaintSet>> taints;

    bool captured() const { return !levels.empty(); }
};

// Intermediate pool features after each stage: levels[0] after the global
// stage, levels[j] after local stack j. departing holds the snapshot of
// snapshot_frame when one was requested.
struct StageState {
    std::vector<Var> levels;
    LevelSnapshots departing;
};

// Runs the global stage and all n_l local stacks in place. views must hold
// n_l entries (views[j-1] is read by stack j); pass empty views for a
// memoryless pass. snapshot_frame > 0 captures that frame's per-level rows.
StageState run_stages(PoolFeatures& local, const PoolFeatures& global_pool, const std::vector<MemoryView>& views,
                      ModelParams& params, const PipelineConfig& cfg, Tape* tape, int snapshot_frame,
                      StageCounters& counters);

// Push-time provenance relabeling: the cached rows become frame
// frame_index's contribution, so the global lineage collapses to that frame
// plus previously recorded concrete frames; window-slot markers (negative
// ids) are dropped.
TaintSet push_taint_transform(const TaintSet& taint, int frame_index);

struct FrameStats {
    int frame = 0;
    int local_rows = 0;
    int global_rows = 0;
    int memory_frames = 0;  // occupancy while detecting this frame
    int memory_rows = 0;    // rows across the n_l viewed levels
    int detections = 0;
    StageCounters counters;
};

struct RunResult {
    std::vector<std::vector<Detection>> detections;  // index = frame - 1
    std::vector<FrameStats> stats;
    StageCounters totals;
    std::vector<TaintSet> key_taints;                 // final key-frame taint per frame when traced
    std::vector<std::vector<int>> memory_after_key;  // cached frame ids after each key's push
};

// The streaming inference loop. Offline: prefetch frames 1..tau+1 and the
// first t_g entries of the seeded shuffle, then per key detect, push the
// departing frame k-tau into memory, and prefetch frame k+tau+1 plus the
// next shuffled frame. Online: fetch frame k at step k, trailing window,
// causal global sampling, departing frame k-t_l+1. Deterministic per
// (source, config, params).
RunResult run_video(const std::vector<FrameProposals>& video, ModelParams& params, const PipelineConfig& cfg,
                    bool trace = false);

// ---------------------------------------------------------------------------
// Training: temporal dropout with a gradient-free long-range memory.

struct TrainingInstance {
    int key = 0;
    std::vector<FrameProposals> local_frames;   // key (all boxes) + sampled window frames, ascending
    std::vector<FrameProposals> global_frames;  // sampled whole-video frames, top k_g
    std::vector<FrameProposals> memory_frames;  // sampled memory-window frames, top k_l, ascending
    std::vector<GroundTruthBox> truth;          // ground truth of the key frame
};

// Samples the dropout approximation of the full pools: the key plus two
// window frames, two whole-video frames, and two memory-window frames
// (fewer when clipping leaves fewer candidates; none in base mode).
TrainingInstance sample_training_instance(const std::vector<FrameProposals>& video,
                                          const std::vector<std::vector<GroundTruthBox>>& truth, int key,
                                          const PipelineConfig& cfg, Rng& rng);

// The approximate memory built from a base-model pass over the sampled
// memory frames, per-level, capacity-free.
struct TrainingMemory {
    std::vector<std::vector<BoxFeature>> levels;

    bool empty() const;
    std::vector<MemoryView> views(int n_l) const;
};

// Runs the memoryless aggregation over inst.memory_frames with
// inst.global_frames as global references and stores every intermediate
// level. tape == nullptr builds entirely off the tape; a non-null tape runs
// the same computation on the tape and detaches the stored rows, which must
// leave training gradients bitwise unchanged (the stop-gradient property).
TrainingMemory build_training_memory(const TrainingInstance& inst, ModelParams& params, const PipelineConfig& cfg,
                                     Tape* tape);

// Proposal-to-truth assignment for the head losses.
struct MatchResult {
    std::vector<int> labels;         // per box: 0 background, -1 ignored, else class id
    std::vector<int> positive_rows;  // rows with a positive label
    Matrix regression_targets;       // |positive_rows| x 4
};
MatchResult match_proposals(const std::vector<BoxFeature>& key_boxes, const std::vector<GroundTruthBox>& truth);

// Phase-B forward pass: global stage + local stacks over the sampled local
// pool with mhat as the (constant) memory, head over the key rows, and the
// classification + regression loss as a scalar (tracked when tape != nullptr).
Var training_loss(const TrainingInstance& inst, const TrainingMemory& mhat, ModelParams& params,
                  const PipelineConfig& cfg, Tape* tape);

// One SGD step: builds the memory off the tape, backpropagates the loss,
// and applies params -= lr * grad. Returns the loss value; throws
// NumericError when it is not finite.
double train_step(const TrainingInstance& inst, ModelParams& params, const PipelineConfig& cfg, double lr);

}  // namespace mega
