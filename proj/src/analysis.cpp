#include "mega/analysis.hpp"

#include <algorithm>
#include <string>

namespace mega {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractViolation(msg);
}

}  // namespace

std::pair<long long, long long> aggregation_size(long long n_l, long long t_m, long long t_l, long long t_g) {
    require(n_l >= 0 && t_m >= 0 && t_l >= 0 && t_g >= 0, "aggregation_size: all inputs must be >= 0");
    return {n_l * t_m + t_l, n_l * t_m + t_g};
}

ReceptiveField trace_receptive_field(const PipelineConfig& cfg, int video_length, int key) {
    require(video_length >= 1, "trace_receptive_field: video_length must be >= 1");
    require(key >= 1 && key <= video_length,
            "trace_receptive_field: key " + std::to_string(key) + " outside 1.." + std::to_string(video_length));

    PipelineConfig tiny = cfg;
    tiny.video_length = 0;
    tiny.proposals = 2;
    tiny.k_l = 2;
    tiny.k_g = 2;
    tiny.k_d = 1;
    tiny.num_classes = 1;
    tiny.dim = 8;
    tiny.heads = 2;
    tiny.embed_dim = 8;
    validate_config(tiny);

    Rng rng(tiny.seed + 0x9e3779b9u);
    std::vector<FrameProposals> video;
    video.reserve(static_cast<std::size_t>(video_length));
    for (int t = 1; t <= video_length; ++t) {
        FrameProposals frame;
        frame.frame_index = t;
        for (int b = 0; b < tiny.proposals; ++b) {
            BoxFeature box;
            box.frame_index = t;
            box.cx = rng.uniform(0.2, 0.8);
            box.cy = rng.uniform(0.2, 0.8);
            box.w = rng.uniform(0.05, 0.3);
            box.h = rng.uniform(0.05, 0.3);
            box.objectness = rng.uniform(0.1, 0.9);
            box.semantic.resize(static_cast<std::size_t>(tiny.dim));
            for (double& x : box.semantic) x = rng.uniform(-1.0, 1.0);
            frame.boxes.push_back(std::move(box));
        }
        normalize_frame(frame);
        video.push_back(std::move(frame));
    }

    ModelParams params(tiny, rng);
    const RunResult res = run_video(video, params, tiny, true);
    const TaintSet& taint = res.key_taints[static_cast<std::size_t>(key - 1)];

    ReceptiveField field;
    field.key = key;
    field.local_frames = taint.local;
    field.global_slots = taint.global;
    return field;
}

CostReport count_ops(const PipelineConfig& cfg, int video_length) {
    validate_config(cfg);
    require(video_length >= 1, "count_ops: video_length must be >= 1");
    if (cfg.n_g > 0)
        require(cfg.t_g <= video_length, "count_ops: t_g " + std::to_string(cfg.t_g) + " exceeds video length " +
                                             std::to_string(video_length));

    const int T = video_length;
    const long long n = cfg.proposals;
    const long long rows_per_global_frame = std::min<long long>(cfg.k_g, n);
    const int capacity = cfg.effective_capacity();

    CostReport report;
    report.frames = T;
    report.local_totals.resize(static_cast<std::size_t>(cfg.n_l));

    auto frame_cost = [&](long long window, long long global_frames, long long occ, StageCounters& frame_total,
                          CostReport* sink) {
        const long long pool = n + (window - 1) * cfg.k_l;
        const long long global_rows = cfg.n_g > 0 ? global_frames * rows_per_global_frame : 0;
        StageCounters g;
        for (int s = 0; s < cfg.n_g; ++s)
            g.add_module(static_cast<int>(pool), static_cast<int>(global_rows), cfg.heads);
        frame_total.add(g);
        if (sink) sink->global_total.add(g);
        for (int j = 1; j <= cfg.n_l; ++j) {
            const long long own = j == 1 ? pool : window * cfg.k_d;
            const long long mem = occ * (j == 1 ? cfg.k_l : cfg.k_d);
            StageCounters l;
            l.add_module(static_cast<int>(pool), static_cast<int>(own + mem), cfg.heads);
            frame_total.add(l);
            if (sink) sink->local_totals[static_cast<std::size_t>(j - 1)].add(l);
        }
    };

    for (int k = 1; k <= T; ++k) {
        long long window, global_frames, pushed;
        if (cfg.online) {
            window = std::min(cfg.t_l, k);
            global_frames = std::min(cfg.t_g, k);
            pushed = std::max(0, k - cfg.t_l);
        } else {
            window = std::min(T, k + cfg.tau) - std::max(1, k - cfg.tau) + 1;
            global_frames = cfg.t_g;
            pushed = std::max(0, k - 1 - cfg.tau);
        }
        const long long occ = capacity > 0 ? std::min<long long>(capacity, pushed) : 0;
        StageCounters frame_total;
        frame_cost(window, global_frames, occ, frame_total, &report);
        report.per_frame.push_back(frame_total);
        report.totals.add(frame_total);
    }

    frame_cost(cfg.t_l, cfg.t_g, capacity, report.steady_state, nullptr);
    return report;
}

}  // namespace mega
