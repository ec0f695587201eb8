#include "mega/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace mega {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

std::vector<int> span_top_indices(const PoolFeatures& pool, int per_span) {
    std::vector<int> idx;
    for (const SpanRef& s : pool.spans) {
        const int take = std::min(per_span, s.count);
        for (int i = 0; i < take; ++i) idx.push_back(s.begin + i);
    }
    return idx;
}

std::vector<BoxFeature> select_boxes(const std::vector<BoxFeature>& boxes, const std::vector<int>& idx) {
    std::vector<BoxFeature> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(boxes[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace

PipelineConfig desk_config() {
    PipelineConfig cfg;
    cfg.t_l = 7;
    cfg.tau = 3;
    cfg.t_g = 3;
    cfg.t_m = 4;
    cfg.n_g = 1;
    cfg.n_l = 2;
    cfg.k_l = 4;
    cfg.k_g = 4;
    cfg.k_d = 2;
    cfg.proposals = 8;
    cfg.num_classes = 3;
    cfg.dim = 16;
    cfg.heads = 4;
    cfg.embed_dim = 20;
    return cfg;
}

void validate_config(const PipelineConfig& cfg) {
    require(cfg.t_l >= 1, "config field t_l must be >= 1");
    require(cfg.tau >= 0, "config field tau must be >= 0");
    if (!cfg.online)
        require(cfg.t_l == 2 * cfg.tau + 1, "config field t_l must equal 2*tau+1 (" + std::to_string(cfg.t_l) +
                                                " vs tau " + std::to_string(cfg.tau) + ")");
    require(cfg.t_g >= 0, "config field t_g must be >= 0");
    require(cfg.t_m >= 0, "config field t_m must be >= 0");
    require(cfg.n_g >= 0, "config field n_g must be >= 0");
    require(cfg.n_l >= 1, "config field n_l must be >= 1");
    if (cfg.n_g >= 1) {
        require(cfg.t_g >= 1, "config field t_g must be >= 1 when n_g >= 1");
        require(cfg.k_g >= 1, "config field k_g must be >= 1 when n_g >= 1");
    }
    require(cfg.proposals >= 1, "config field proposals must be >= 1");
    require(cfg.k_l >= 1, "config field k_l must be >= 1");
    require(cfg.k_d >= 1, "config field k_d must be >= 1");
    require(cfg.k_d <= cfg.k_l, "config field k_d must not exceed k_l");
    require(cfg.k_l <= cfg.proposals, "config field k_l must not exceed proposals");
    require(cfg.num_classes >= 1, "config field num_classes must be >= 1");
    require(cfg.dim >= 1, "config field dim must be >= 1");
    require(cfg.heads >= 1, "config field heads must be >= 1");
    require(cfg.dim % cfg.heads == 0, "config field dim must be divisible by heads");
    require(cfg.embed_dim >= 8 && cfg.embed_dim % 2 == 0, "config field embed_dim must be even and >= 8");
    require(cfg.nms_threshold >= 0.0 && cfg.nms_threshold <= 1.0, "config field nms_threshold must lie in [0, 1]");
    require(cfg.video_length >= 0, "config field video_length must be >= 0");
}

ModelParams::ModelParams(const PipelineConfig& cfg, Rng& rng) {
    validate_config(cfg);
    for (int s = 0; s < cfg.n_g; ++s)
        global_stacks.emplace_back("global" + std::to_string(s), cfg.dim, cfg.heads, cfg.embed_dim, rng);
    for (int s = 0; s < cfg.n_l; ++s)
        local_stacks.emplace_back("local" + std::to_string(s), cfg.dim, cfg.heads, cfg.embed_dim, rng);
    head = HeadParams(cfg.dim, cfg.num_classes, rng);
}

std::vector<Param*> ModelParams::param_list() {
    std::vector<Param*> out;
    for (RelationParams& p : global_stacks)
        for (Param* q : p.param_list()) out.push_back(q);
    for (RelationParams& p : local_stacks)
        for (Param* q : p.param_list()) out.push_back(q);
    for (Param* q : head.param_list()) out.push_back(q);
    return out;
}

void ModelParams::zero_grads() {
    for (Param* p : param_list()) p->zero_grad();
}

const SpanRef* PoolFeatures::find_span(int frame_index) const {
    for (const SpanRef& s : spans)
        if (s.frame_index == frame_index) return &s;
    return nullptr;
}

PoolFeatures make_pool_features(const ProposalPool& pool, bool trace) {
    PoolFeatures out;
    int offset = 0;
    int position = 0;
    for (const FrameProposals& frame : pool.frames) {
        out.spans.push_back(SpanRef{frame.frame_index, offset, static_cast<int>(frame.boxes.size())});
        for (const BoxFeature& box : frame.boxes) {
            out.boxes.push_back(box);
            if (trace) {
                TaintSet t;
                if (pool.role == PoolRole::global)
                    t.global.insert(-(position + 1));
                else
                    t.local.insert(box.frame_index);
                out.taints.push_back(std::move(t));
            }
        }
        offset += static_cast<int>(frame.boxes.size());
        ++position;
    }
    if (!out.boxes.empty()) out.features = Var(semantic_matrix(out.boxes));
    return out;
}

void StageCounters::add_module(int n_q, int n_ref, int num_heads) {
    attn_pairs += static_cast<long long>(n_q) * n_ref;
    value_mults += static_cast<long long>(n_ref) * num_heads;
    feature_updates += n_q;
}

void StageCounters::add(const StageCounters& other) {
    attn_pairs += other.attn_pairs;
    value_mults += other.value_mults;
    feature_updates += other.feature_updates;
}

std::vector<MemoryView> memory_views(const LongRangeMemory& memory, int n_l) {
    require(memory.levels() >= n_l, "memory_views: memory has " + std::to_string(memory.levels()) +
                                        " levels, stacks need " + std::to_string(n_l));
    std::vector<MemoryView> out(static_cast<std::size_t>(n_l));
    if (memory.empty()) return out;
    for (int j = 0; j < n_l; ++j) {
        out[static_cast<std::size_t>(j)].boxes = memory.view(j);
        out[static_cast<std::size_t>(j)].taints = memory.view_taints(j);
    }
    return out;
}

void global_stage(PoolFeatures& local, const PoolFeatures& global_pool, ModelParams& params,
                  const PipelineConfig& cfg, Tape* tape, StageCounters& counters) {
    if (cfg.n_g == 0) return;
    require(local.rows() >= 1, "global_stage: empty local pool");
    require(global_pool.rows() >= 1, "global_stage: empty global pool with n_g >= 1");
    TaintSet ref_union;
    if (!local.taints.empty())
        for (const TaintSet& t : global_pool.taints) taint_merge(ref_union, t);
    const Matrix no_positions;
    for (int s = 0; s < cfg.n_g; ++s) {
        RelationResult res = relation_core(local.features, global_pool.features, no_positions,
                                           params.global_stacks[static_cast<std::size_t>(s)],
                                           RelationMode::location_free, tape);
        counters.add_module(local.rows(), global_pool.rows(), cfg.heads);
        local.features = res.features;
        if (!local.taints.empty())
            for (TaintSet& t : local.taints) taint_merge(t, ref_union);
    }
}

void local_stack(PoolFeatures& local, int stack_index, const MemoryView& memory, ModelParams& params,
                 const PipelineConfig& cfg, Tape* tape, StageCounters& counters) {
    require(stack_index >= 1 && stack_index <= cfg.n_l,
            "local_stack: stack index " + std::to_string(stack_index) + " outside 1.." + std::to_string(cfg.n_l));
    require(local.rows() >= 1, "local_stack: empty pool");

    std::vector<int> ref_idx;
    bool full_pool = stack_index == 1;
    if (!full_pool) {
        ref_idx = span_top_indices(local, cfg.k_d);
        full_pool = static_cast<int>(ref_idx.size()) == local.rows();
    }
    Var refs = full_pool ? local.features : gather_rows(local.features, ref_idx);
    std::vector<BoxFeature> ref_meta = full_pool ? local.boxes : select_boxes(local.boxes, ref_idx);
    if (!memory.empty()) {
        refs = concat_rows({refs, Var(semantic_matrix(memory.boxes))});
        ref_meta.insert(ref_meta.end(), memory.boxes.begin(), memory.boxes.end());
    }

    const Matrix positions = position_embedding_matrix(local.boxes, ref_meta, cfg.embed_dim);
    RelationResult res = relation_core(local.features, refs, positions,
                                       params.local_stacks[static_cast<std::size_t>(stack_index - 1)],
                                       RelationMode::location_based, tape);
    counters.add_module(local.rows(), refs.value.rows(), cfg.heads);

    if (!local.taints.empty()) {
        TaintSet ref_union;
        if (full_pool)
            for (const TaintSet& t : local.taints) taint_merge(ref_union, t);
        else
            for (int i : ref_idx) taint_merge(ref_union, local.taints[static_cast<std::size_t>(i)]);
        if (!memory.empty())
            for (const TaintSet& t : memory.taints) taint_merge(ref_union, t);
        for (TaintSet& t : local.taints) taint_merge(t, ref_union);
    }
    local.features = res.features;
}

namespace {

void capture_level(StageState& state, const PoolFeatures& local, int frame, int per_span) {
    const SpanRef* span = local.find_span(frame);
    require(span != nullptr, "run_stages: snapshot frame " + std::to_string(frame) + " not in the pool");
    const int take = std::min(per_span, span->count);
    std::vector<BoxFeature> rows;
    std::vector<TaintSet> taints;
    for (int i = 0; i < take; ++i) {
        BoxFeature box = local.boxes[static_cast<std::size_t>(span->begin + i)];
        box.semantic = local.features.value.row(span->begin + i);
        rows.push_back(std::move(box));
        if (!local.taints.empty()) taints.push_back(local.taints[static_cast<std::size_t>(span->begin + i)]);
    }
    state.departing.levels.push_back(std::move(rows));
    if (!local.taints.empty()) state.departing.taints.push_back(std::move(taints));
}

}  // namespace

StageState run_stages(PoolFeatures& local, const PoolFeatures& global_pool, const std::vector<MemoryView>& views,
                      ModelParams& params, const PipelineConfig& cfg, Tape* tape, int snapshot_frame,
                      StageCounters& counters) {
    require(static_cast<int>(views.size()) == cfg.n_l,
            "run_stages: " + std::to_string(views.size()) + " memory views for " + std::to_string(cfg.n_l) +
                " stacks");
    StageState state;
    state.departing.frame_index = snapshot_frame;
    global_stage(local, global_pool, params, cfg, tape, counters);
    state.levels.push_back(local.features);
    if (snapshot_frame > 0) capture_level(state, local, snapshot_frame, cfg.k_l);
    for (int j = 1; j <= cfg.n_l; ++j) {
        local_stack(local, j, views[static_cast<std::size_t>(j - 1)], params, cfg, tape, counters);
        state.levels.push_back(local.features);
        if (snapshot_frame > 0) capture_level(state, local, snapshot_frame, cfg.k_d);
    }
    return state;
}

TaintSet push_taint_transform(const TaintSet& taint, int frame_index) {
    TaintSet out;
    out.local = taint.local;
    out.global.insert(frame_index);
    for (int g : taint.global)
        if (g >= 0) out.global.insert(g);
    return out;
}

RunResult run_video(const std::vector<FrameProposals>& video, ModelParams& params, const PipelineConfig& cfg,
                    bool trace) {
    validate_config(cfg);
    const int T = cfg.video_length > 0 ? cfg.video_length : static_cast<int>(video.size());
    require(T >= 1, "run_video: source declares no frames");
    const bool use_global = cfg.n_g > 0;
    if (use_global)
        require(cfg.t_g <= T,
                "run_video: t_g " + std::to_string(cfg.t_g) + " exceeds video length " + std::to_string(T));

    std::vector<char> fetched(static_cast<std::size_t>(T) + 1, 0);
    auto fetch = [&](int t) {
        require(t >= 1 && t <= T, "run_video: prefetch of frame " + std::to_string(t) + " outside 1.." +
                                      std::to_string(T));
        require(static_cast<int>(video.size()) >= t,
                "run_video: source ends at frame " + std::to_string(video.size()) + " before declared frame " +
                    std::to_string(t));
        require(video[static_cast<std::size_t>(t - 1)].frame_index == t,
                "run_video: source position " + std::to_string(t) + " carries frame index " +
                    std::to_string(video[static_cast<std::size_t>(t - 1)].frame_index));
        fetched[static_cast<std::size_t>(t)] = 1;
    };
    auto require_fetched = [&](int t) {
        require(t >= 1 && t <= T && fetched[static_cast<std::size_t>(t)] == 1,
                "run_video: frame " + std::to_string(t) + " consumed before prefetch");
    };

    GlobalSampler sampler(T, cfg.seed);
    if (!cfg.online) {
        for (int t = 1; t <= std::min(cfg.tau + 1, T); ++t) fetch(t);
        if (use_global)
            for (int i = 0; i < cfg.t_g; ++i) fetch(sampler.permutation()[static_cast<std::size_t>(i)]);
    }

    LongRangeMemory memory(cfg.memory_level_count(), cfg.effective_capacity());
    RunResult out;
    out.detections.resize(static_cast<std::size_t>(T));
    if (trace) out.key_taints.resize(static_cast<std::size_t>(T));

    for (int k = 1; k <= T; ++k) {
        if (cfg.online) fetch(k);
        const int lo = cfg.online ? std::max(1, k - cfg.t_l + 1) : std::max(1, k - cfg.tau);
        const int hi = cfg.online ? k : std::min(T, k + cfg.tau);
        for (int t = lo; t <= hi; ++t) require_fetched(t);

        PoolFeatures local = make_pool_features(build_local_pool(video, k, cfg.tau, cfg.t_l, cfg.k_l, cfg.online),
                                                trace);
        PoolFeatures global;
        if (use_global) {
            const std::vector<int> window =
                cfg.online ? sampler.online_window(k, cfg.t_g) : sampler.window(k, cfg.t_g);
            for (int f : window) require_fetched(f);
            global = make_pool_features(build_global_pool(video, sampler, k, cfg.t_g, cfg.k_g, cfg.online), trace);
        }

        const std::vector<MemoryView> views = memory_views(memory, cfg.n_l);
        const int departing = cfg.online ? k - cfg.t_l + 1 : k - cfg.tau;
        const bool will_push = cfg.effective_capacity() > 0 && departing >= 1;

        FrameStats stats;
        stats.frame = k;
        stats.local_rows = local.rows();
        stats.global_rows = use_global ? global.rows() : 0;
        stats.memory_frames = memory.occupancy();
        for (const MemoryView& v : views) stats.memory_rows += static_cast<int>(v.boxes.size());

        StageState state =
            run_stages(local, global, views, params, cfg, nullptr, will_push ? departing : 0, stats.counters);

        const SpanRef* key_span = local.find_span(k);
        require(key_span != nullptr && key_span->count >= 1,
                "run_video: key frame " + std::to_string(k) + " has no proposals");
        Var key_feats = slice_rows(local.features, key_span->begin, key_span->count);
        const HeadOutput head = head_forward(key_feats, params.head, nullptr);
        const std::vector<BoxFeature> key_boxes(local.boxes.begin() + key_span->begin,
                                                local.boxes.begin() + key_span->begin + key_span->count);
        std::vector<Detection> dets =
            nms(decode_detections(head.cls_logits.value, head.deltas.value, key_boxes, cfg.num_classes),
                cfg.nms_threshold);
        stats.detections = static_cast<int>(dets.size());

        if (trace) {
            TaintSet u;
            for (int i = 0; i < key_span->count; ++i)
                taint_merge(u, local.taints[static_cast<std::size_t>(key_span->begin + i)]);
            out.key_taints[static_cast<std::size_t>(k - 1)] = std::move(u);
        }
        out.detections[static_cast<std::size_t>(k - 1)] = std::move(dets);
        out.totals.add(stats.counters);
        out.stats.push_back(stats);

        if (will_push) {
            std::vector<std::vector<TaintSet>> push_taints;
            for (const std::vector<TaintSet>& level : state.departing.taints) {
                std::vector<TaintSet> transformed;
                transformed.reserve(level.size());
                for (const TaintSet& t : level) transformed.push_back(push_taint_transform(t, departing));
                push_taints.push_back(std::move(transformed));
            }
            memory.push(departing, state.departing.levels, push_taints);
        }

        out.memory_after_key.push_back(memory.cached_frames());

        if (!cfg.online) {
            if (k + cfg.tau + 1 <= T) fetch(k + cfg.tau + 1);
            if (use_global) fetch(sampler.permutation()[static_cast<std::size_t>((k - 1 + cfg.t_g) % T)]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

TrainingInstance sample_training_instance(const std::vector<FrameProposals>& video,
                                          const std::vector<std::vector<GroundTruthBox>>& truth, int key,
                                          const PipelineConfig& cfg, Rng& rng) {
    validate_config(cfg);
    const int T = static_cast<int>(video.size());
    require(T >= 1, "sample_training_instance: empty video");
    require(key >= 1 && key <= T, "sample_training_instance: key " + std::to_string(key) + " outside 1.." +
                                      std::to_string(T));
    require(static_cast<int>(truth.size()) == T, "sample_training_instance: truth covers " +
                                                     std::to_string(truth.size()) + " frames, video " +
                                                     std::to_string(T));

    TrainingInstance inst;
    inst.key = key;

    const int lo = cfg.online ? std::max(1, key - cfg.t_l + 1) : std::max(1, key - cfg.tau);
    const int hi = cfg.online ? key : std::min(T, key + cfg.tau);
    std::vector<int> window_candidates;
    for (int t = lo; t <= hi; ++t)
        if (t != key) window_candidates.push_back(t);
    rng.shuffle(window_candidates);
    std::vector<int> local_ids(window_candidates.begin(),
                               window_candidates.begin() +
                                   std::min<std::size_t>(2, window_candidates.size()));
    local_ids.push_back(key);
    std::sort(local_ids.begin(), local_ids.end());
    for (int t : local_ids)
        inst.local_frames.push_back(t == key ? video[static_cast<std::size_t>(t - 1)]
                                             : truncate_top_k(video[static_cast<std::size_t>(t - 1)], cfg.k_l));

    std::vector<int> all_ids(static_cast<std::size_t>(T));
    std::iota(all_ids.begin(), all_ids.end(), 1);
    rng.shuffle(all_ids);
    for (int i = 0; i < std::min(2, T); ++i)
        inst.global_frames.push_back(truncate_top_k(video[static_cast<std::size_t>(all_ids[static_cast<std::size_t>(i)] - 1)], cfg.k_g));

    if (cfg.effective_capacity() > 0) {
        const int newest = cfg.online ? key - cfg.t_l : key - cfg.tau - 1;
        std::vector<int> memory_candidates;
        for (int t = std::max(1, newest - cfg.t_m + 1); t <= std::min(newest, T); ++t) memory_candidates.push_back(t);
        rng.shuffle(memory_candidates);
        std::vector<int> memory_ids(memory_candidates.begin(),
                                    memory_candidates.begin() +
                                        std::min<std::size_t>(2, memory_candidates.size()));
        std::sort(memory_ids.begin(), memory_ids.end());
        for (int t : memory_ids)
            inst.memory_frames.push_back(truncate_top_k(video[static_cast<std::size_t>(t - 1)], cfg.k_l));
    }

    inst.truth = truth[static_cast<std::size_t>(key - 1)];
    return inst;
}

bool TrainingMemory::empty() const { return levels.empty(); }

std::vector<MemoryView> TrainingMemory::views(int n_l) const {
    std::vector<MemoryView> out(static_cast<std::size_t>(n_l));
    if (empty()) return out;
    require(static_cast<int>(levels.size()) == n_l + 1,
            "TrainingMemory: " + std::to_string(levels.size()) + " levels for " + std::to_string(n_l) + " stacks");
    for (int j = 0; j < n_l; ++j) out[static_cast<std::size_t>(j)].boxes = levels[static_cast<std::size_t>(j)];
    return out;
}

TrainingMemory build_training_memory(const TrainingInstance& inst, ModelParams& params, const PipelineConfig& cfg,
                                     Tape* tape) {
    TrainingMemory out;
    if (inst.memory_frames.empty()) return out;

    ProposalPool pool;
    pool.role = PoolRole::local;
    pool.frames = inst.memory_frames;
    PoolFeatures feats = make_pool_features(pool, false);

    PoolFeatures global;
    if (cfg.n_g > 0) {
        require(!inst.global_frames.empty(), "build_training_memory: no sampled global frames with n_g >= 1");
        ProposalPool gp;
        gp.role = PoolRole::global;
        gp.frames = inst.global_frames;
        global = make_pool_features(gp, false);
    }

    const std::vector<MemoryView> no_memory(static_cast<std::size_t>(cfg.n_l));
    StageCounters counters;
    StageState state = run_stages(feats, global, no_memory, params, cfg, tape, 0, counters);

    for (int level = 0; level <= cfg.n_l; ++level) {
        const int per_span = level == 0 ? cfg.k_l : cfg.k_d;
        const Matrix& values = state.levels[static_cast<std::size_t>(level)].value;
        std::vector<BoxFeature> rows;
        for (const SpanRef& s : feats.spans) {
            const int take = std::min(per_span, s.count);
            for (int i = 0; i < take; ++i) {
                BoxFeature box = feats.boxes[static_cast<std::size_t>(s.begin + i)];
                box.semantic = values.row(s.begin + i);
                rows.push_back(std::move(box));
            }
        }
        out.levels.push_back(std::move(rows));
    }
    return out;
}

MatchResult match_proposals(const std::vector<BoxFeature>& key_boxes, const std::vector<GroundTruthBox>& truth) {
    MatchResult out;
    std::vector<std::array<double, 4>> targets;
    for (std::size_t i = 0; i < key_boxes.size(); ++i) {
        const BoxFeature& b = key_boxes[i];
        const BoxGeom p{b.cx, b.cy, b.w, b.h};
        int best = -1;
        double best_v = -1.0;
        for (std::size_t g = 0; g < truth.size(); ++g) {
            const double v = iou(p, truth[g].box);
            if (v > best_v) {
                best_v = v;
                best = static_cast<int>(g);
            }
        }
        int label;
        if (best >= 0 && best_v >= 0.5)
            label = truth[static_cast<std::size_t>(best)].class_id;
        else if (best_v < 0.4)
            label = 0;
        else
            label = -1;
        out.labels.push_back(label);
        if (label > 0) {
            out.positive_rows.push_back(static_cast<int>(i));
            const BoxGeom& g = truth[static_cast<std::size_t>(best)].box;
            targets.push_back({(g.cx - p.cx) / p.w, (g.cy - p.cy) / p.h, std::log(g.w / p.w), std::log(g.h / p.h)});
        }
    }
    if (!targets.empty()) {
        out.regression_targets = Matrix(static_cast<int>(targets.size()), 4);
        for (std::size_t r = 0; r < targets.size(); ++r)
            for (int c = 0; c < 4; ++c) out.regression_targets.at(static_cast<int>(r), c) = targets[r][static_cast<std::size_t>(c)];
    }
    return out;
}

Var training_loss(const TrainingInstance& inst, const TrainingMemory& mhat, ModelParams& params,
                  const PipelineConfig& cfg, Tape* tape) {
    require(!inst.local_frames.empty(), "training_loss: instance has no local frames");

    ProposalPool pool;
    pool.role = PoolRole::local;
    pool.frames = inst.local_frames;
    PoolFeatures local = make_pool_features(pool, false);

    PoolFeatures global;
    if (cfg.n_g > 0) {
        require(!inst.global_frames.empty(), "training_loss: no sampled global frames with n_g >= 1");
        ProposalPool gp;
        gp.role = PoolRole::global;
        gp.frames = inst.global_frames;
        global = make_pool_features(gp, false);
    }

    StageCounters counters;
    run_stages(local, global, mhat.views(cfg.n_l), params, cfg, tape, 0, counters);

    const SpanRef* key_span = local.find_span(inst.key);
    require(key_span != nullptr && key_span->count >= 1, "training_loss: key frame has no proposals");
    Var key_feats = slice_rows(local.features, key_span->begin, key_span->count);
    const HeadOutput head = head_forward(key_feats, params.head, tape);

    const std::vector<BoxFeature> key_boxes(local.boxes.begin() + key_span->begin,
                                            local.boxes.begin() + key_span->begin + key_span->count);
    const MatchResult match = match_proposals(key_boxes, inst.truth);
    Var loss = softmax_cross_entropy(head.cls_logits, match.labels);
    if (!match.positive_rows.empty()) {
        Var pos_deltas = gather_rows(head.deltas, match.positive_rows);
        loss = add(loss, smooth_l1_loss(pos_deltas, match.regression_targets, 1.0,
                                        static_cast<int>(match.positive_rows.size())));
    }
    return loss;
}

double train_step(const TrainingInstance& inst, ModelParams& params, const PipelineConfig& cfg, double lr) {
    params.zero_grads();
    Tape tape;
    const TrainingMemory mhat = build_training_memory(inst, params, cfg, nullptr);
    Var loss = training_loss(inst, mhat, params, cfg, &tape);
    if (!loss.value.all_finite()) throw NumericError("train_step: loss is not finite");
    tape.backward(loss);
    if (lr != 0.0)
        for (Param* p : params.param_list()) p->value = mat_sub(p->value, mat_scale(p->grad, lr));
    return loss.value.at(0, 0);
}

}  // namespace mega
