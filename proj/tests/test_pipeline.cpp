#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mega/pipeline.hpp"
#include "mega/scene.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace mega;

namespace {

PipelineConfig tiny_config() {
    PipelineConfig cfg = desk_config();
    cfg.t_l = 3;
    cfg.tau = 1;
    cfg.t_g = 2;
    cfg.t_m = 2;
    cfg.n_g = 1;
    cfg.n_l = 2;
    cfg.k_l = 3;
    cfg.k_g = 2;
    cfg.k_d = 2;
    cfg.proposals = 4;
    cfg.num_classes = 2;
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.embed_dim = 8;
    return cfg;
}

std::vector<FrameProposals> make_video(Rng& rng, int frames, int boxes, int dim) {
    std::vector<FrameProposals> video;
    for (int t = 1; t <= frames; ++t) {
        FrameProposals f;
        f.frame_index = t;
        f.boxes = testsupport::random_boxes(rng, boxes, t, dim);
        normalize_frame(f);
        video.push_back(std::move(f));
    }
    return video;
}

std::vector<BoxFeature> with_features(const std::vector<BoxFeature>& boxes, const Matrix& features) {
    REQUIRE(features.rows() == static_cast<int>(boxes.size()));
    std::vector<BoxFeature> out = boxes;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].semantic = features.row(static_cast<int>(i));
    return out;
}

double max_row_diff(const std::vector<std::vector<double>>& oracle, const Matrix& got) {
    REQUIRE(static_cast<int>(oracle.size()) == got.rows());
    double worst = 0.0;
    for (int r = 0; r < got.rows(); ++r) {
        REQUIRE(static_cast<int>(oracle[static_cast<std::size_t>(r)].size()) == got.cols());
        for (int c = 0; c < got.cols(); ++c)
            worst = std::max(worst, std::abs(oracle[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] -
                                             got.at(r, c)));
    }
    return worst;
}

bool same_detections(const std::vector<std::vector<Detection>>& a, const std::vector<std::vector<Detection>>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t f = 0; f < a.size(); ++f) {
        if (a[f].size() != b[f].size()) return false;
        for (std::size_t i = 0; i < a[f].size(); ++i) {
            const Detection& x = a[f][i];
            const Detection& y = b[f][i];
            if (x.frame_index != y.frame_index || x.class_id != y.class_id || x.score != y.score ||
                x.box.cx != y.box.cx || x.box.cy != y.box.cy || x.box.w != y.box.w || x.box.h != y.box.h)
                return false;
        }
    }
    return true;
}

void expect_field_error(const PipelineConfig& cfg, const std::string& field) {
    try {
        validate_config(cfg);
        FAIL("expected rejection mentioning ", field);
    } catch (const ContractViolation& e) {
        CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
}

MemoryView view_from(Rng& rng, const std::vector<int>& frames, int boxes_per_frame, int dim) {
    MemoryView view;
    for (int f : frames) {
        std::vector<BoxFeature> boxes = testsupport::random_boxes(rng, boxes_per_frame, f, dim);
        view.boxes.insert(view.boxes.end(), boxes.begin(), boxes.end());
    }
    return view;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
    validate_config(desk_config());
    validate_config(PipelineConfig{});

    PipelineConfig cfg = desk_config();
    cfg.t_l = 8;
    expect_field_error(cfg, "t_l");

    cfg = desk_config();
    cfg.online = true;
    cfg.t_l = 8;  // trailing window needs no tau relation
    validate_config(cfg);

    cfg = desk_config();
    cfg.tau = -1;
    expect_field_error(cfg, "tau");

    cfg = desk_config();
    cfg.n_l = 0;
    expect_field_error(cfg, "n_l");

    cfg = desk_config();
    cfg.t_g = 0;
    expect_field_error(cfg, "t_g");

    cfg = desk_config();
    cfg.n_g = 0;
    cfg.t_g = 0;
    validate_config(cfg);

    cfg = desk_config();
    cfg.k_d = cfg.k_l + 1;
    expect_field_error(cfg, "k_d");

    cfg = desk_config();
    cfg.k_l = cfg.proposals + 1;
    expect_field_error(cfg, "k_l");

    cfg = desk_config();
    cfg.dim = 10;
    expect_field_error(cfg, "dim");

    cfg = desk_config();
    cfg.embed_dim = 7;
    expect_field_error(cfg, "embed_dim");

    cfg = desk_config();
    cfg.nms_threshold = 1.5;
    expect_field_error(cfg, "nms_threshold");
}

TEST_CASE("model parameters cover every stack and the head") {
    const PipelineConfig cfg = tiny_config();
    Rng rng(501);
    ModelParams params(cfg, rng);
    CHECK(params.global_stacks.size() == 1);
    CHECK(params.local_stacks.size() == 2);
    const int per_module = 3 * cfg.heads + cfg.heads + 2;
    CHECK(params.param_list().size() == static_cast<std::size_t>(3 * per_module + 4));

    params.zero_grads();
    for (Param* p : params.param_list()) {
        CHECK(p->grad.rows() == p->value.rows());
        CHECK(p->grad.cols() == p->value.cols());
    }
}

TEST_CASE("pool features carry spans and role-dependent taints") {
    Rng rng(502);
    const std::vector<FrameProposals> video = make_video(rng, 6, 4, 8);

    ProposalPool local = build_local_pool(video, 3, 1, 3, 3, false);
    PoolFeatures lf = make_pool_features(local, true);
    REQUIRE(lf.spans.size() == 3);
    CHECK(lf.spans[0].frame_index == 2);
    CHECK(lf.spans[1].frame_index == 3);
    CHECK(lf.spans[1].count == 4);  // key keeps every box
    CHECK(lf.spans[0].count == 3);
    CHECK(lf.rows() == 10);
    CHECK(lf.features.value.rows() == 10);
    CHECK(lf.features.value.cols() == 8);
    REQUIRE(lf.taints.size() == 10);
    CHECK(lf.taints[0].local == std::set<int>{2});
    CHECK(lf.taints[0].global.empty());
    CHECK(lf.taints[3].local == std::set<int>{3});
    CHECK(lf.find_span(3)->begin == 3);
    CHECK(lf.find_span(7) == nullptr);

    GlobalSampler sampler(6, 9);
    PoolFeatures gf = make_pool_features(build_global_pool(video, sampler, 1, 2, 2, false), true);
    REQUIRE(gf.rows() == 4);
    CHECK(gf.taints[0].global == std::set<int>{-1});
    CHECK(gf.taints[0].local.empty());
    CHECK(gf.taints[3].global == std::set<int>{-2});
}

TEST_CASE("global stage is identity under zero values and identity output") {
    PipelineConfig cfg = tiny_config();
    Rng rng(503);
    ModelParams params(cfg, rng);
    for (Param& p : params.global_stacks[0].wv) p.value = Matrix(p.value.rows(), p.value.cols());
    params.global_stacks[0].out_w.value = Matrix::identity(cfg.dim);
    params.global_stacks[0].out_b.value = Matrix(1, cfg.dim);
    params.global_stacks[0].h_activation = Activation::none;

    const std::vector<FrameProposals> video = make_video(rng, 6, 4, cfg.dim);
    PoolFeatures local = make_pool_features(build_local_pool(video, 3, 1, 3, 3, false), false);
    const Matrix before = local.features.value;
    GlobalSampler sampler(6, 1);
    PoolFeatures global = make_pool_features(build_global_pool(video, sampler, 3, 2, 2, false), false);

    StageCounters counters;
    global_stage(local, global, params, cfg, nullptr, counters);
    CHECK(bitwise_equal(before, local.features.value));
    CHECK(counters.attn_pairs == 10 * 4);
    CHECK(counters.value_mults == 4 * cfg.heads);
    CHECK(counters.feature_updates == 10);
}

TEST_CASE("global stage matches the loop oracle and keeps references fixed") {
    PipelineConfig cfg = tiny_config();
    cfg.n_g = 2;
    Rng rng(504);
    ModelParams params(cfg, rng);

    const std::vector<FrameProposals> video = make_video(rng, 8, 4, cfg.dim);
    PoolFeatures local = make_pool_features(build_local_pool(video, 4, 1, 3, 3, false), false);
    GlobalSampler sampler(8, 2);
    PoolFeatures global = make_pool_features(build_global_pool(video, sampler, 4, 2, 2, false), false);

    const std::vector<BoxFeature> original_queries = local.boxes;  // semantics still raw
    StageCounters counters;
    global_stage(local, global, params, cfg, nullptr, counters);

    // Stack 1 reads the raw features; stack 2 reads stack 1's output but the
    // SAME raw global references.
    const std::vector<std::vector<double>> after1 =
        testsupport::relation_loop_oracle(original_queries, global.boxes, params.global_stacks[0],
                                          RelationMode::location_free);
    std::vector<BoxFeature> mid = original_queries;
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i].semantic = after1[i];
    const std::vector<std::vector<double>> after2 =
        testsupport::relation_loop_oracle(mid, global.boxes, params.global_stacks[1], RelationMode::location_free);
    CHECK(max_row_diff(after2, local.features.value) < 1e-12);
}

TEST_CASE("empty global pool with stacks configured is rejected") {
    PipelineConfig cfg = tiny_config();
    Rng rng(505);
    ModelParams params(cfg, rng);
    const std::vector<FrameProposals> video = make_video(rng, 4, 4, cfg.dim);
    PoolFeatures local = make_pool_features(build_local_pool(video, 2, 1, 3, 3, false), false);
    PoolFeatures empty_global;
    StageCounters counters;
    CHECK_THROWS_AS(global_stage(local, empty_global, params, cfg, nullptr, counters), ContractViolation);

    cfg.n_g = 0;
    const Matrix before = local.features.value;
    global_stage(local, empty_global, params, cfg, nullptr, counters);
    CHECK(bitwise_equal(before, local.features.value));
}

TEST_CASE("local stacks match a loop oracle that concatenates the reference pools") {
    PipelineConfig cfg = tiny_config();
    Rng rng(506);
    ModelParams params(cfg, rng);

    const std::vector<FrameProposals> video = make_video(rng, 6, 4, cfg.dim);
    PoolFeatures local = make_pool_features(build_local_pool(video, 4, 1, 3, 3, false), false);

    MemoryView mem0 = view_from(rng, {2, 3}, 3, cfg.dim);
    MemoryView mem1 = view_from(rng, {2, 3}, 2, cfg.dim);

    // Stack 1: references are the full pool plus memory level 0.
    const std::vector<BoxFeature> q0 = local.boxes;  // raw semantics
    StageCounters counters;
    local_stack(local, 1, mem0, params, cfg, nullptr, counters);
    {
        std::vector<BoxFeature> refs = q0;
        refs.insert(refs.end(), mem0.boxes.begin(), mem0.boxes.end());
        const auto oracle =
            testsupport::relation_loop_oracle(q0, refs, params.local_stacks[0], RelationMode::location_based);
        CHECK(max_row_diff(oracle, local.features.value) < 1e-12);
        CHECK(counters.attn_pairs == 10LL * 16);
        CHECK(counters.value_mults == 16LL * cfg.heads);
    }

    // Stack 2: references are the per-frame top-k_d rows plus memory level 1.
    const std::vector<BoxFeature> q1 = with_features(local.boxes, local.features.value);
    local_stack(local, 2, mem1, params, cfg, nullptr, counters);
    {
        std::vector<BoxFeature> refs;
        for (const SpanRef& s : {SpanRef{3, 0, 3}, SpanRef{4, 3, 4}, SpanRef{5, 7, 3}})
            for (int i = 0; i < std::min(cfg.k_d, s.count); ++i)
                refs.push_back(q1[static_cast<std::size_t>(s.begin + i)]);
        refs.insert(refs.end(), mem1.boxes.begin(), mem1.boxes.end());
        const auto oracle =
            testsupport::relation_loop_oracle(q1, refs, params.local_stacks[1], RelationMode::location_based);
        CHECK(max_row_diff(oracle, local.features.value) < 1e-12);
    }

    // Empty memory collapses to plain local aggregation, bitwise.
    PoolFeatures a = make_pool_features(build_local_pool(video, 4, 1, 3, 3, false), false);
    PoolFeatures b = make_pool_features(build_local_pool(video, 4, 1, 3, 3, false), false);
    MemoryView none;
    StageCounters ca, cb;
    local_stack(a, 1, none, params, cfg, nullptr, ca);
    local_stack(b, 1, MemoryView{}, params, cfg, nullptr, cb);
    CHECK(bitwise_equal(a.features.value, b.features.value));
}

TEST_CASE("run_stages snapshots follow the per-level truncation rule") {
    PipelineConfig cfg = tiny_config();
    Rng rng(507);
    ModelParams params(cfg, rng);
    const std::vector<FrameProposals> video = make_video(rng, 6, 4, cfg.dim);

    PoolFeatures local = make_pool_features(build_local_pool(video, 4, 1, 3, 3, false), false);
    GlobalSampler sampler(6, 3);
    PoolFeatures global = make_pool_features(build_global_pool(video, sampler, 4, 2, 2, false), false);
    const std::vector<MemoryView> views(static_cast<std::size_t>(cfg.n_l));

    StageCounters counters;
    StageState state = run_stages(local, global, views, params, cfg, nullptr, 3, counters);

    REQUIRE(state.levels.size() == 3);  // after global, after stack 1, after stack 2
    REQUIRE(state.departing.levels.size() == 3);
    CHECK(state.departing.frame_index == 3);
    CHECK(state.departing.levels[0].size() == 3);  // k_l rows of frame 3
    CHECK(state.departing.levels[1].size() == 2);  // k_d rows
    CHECK(state.departing.levels[2].size() == 2);

    // Snapshot values equal the staged features of frame 3's span (begin 0).
    for (int level = 0; level < 3; ++level)
        for (std::size_t i = 0; i < state.departing.levels[static_cast<std::size_t>(level)].size(); ++i) {
            const std::vector<double>& semantic =
                state.departing.levels[static_cast<std::size_t>(level)][i].semantic;
            const std::vector<double> row = state.levels[static_cast<std::size_t>(level)].value.row(static_cast<int>(i));
            CHECK(semantic == row);
        }
    CHECK(bitwise_equal(state.levels.back().value, local.features.value));
}

TEST_CASE("push taint transform keeps local lineage and collapses global lineage") {
    TaintSet t;
    t.local = {4, 5, 6};
    t.global = {-1, -3, 2, 9};
    const TaintSet pushed = push_taint_transform(t, 7);
    CHECK(pushed.local == std::set<int>{4, 5, 6});
    CHECK(pushed.global == std::set<int>{2, 7, 9});
}

TEST_CASE("run_video is deterministic and replays bitwise") {
    const PipelineConfig cfg = desk_config();
    Rng rng(508);
    const std::vector<FrameProposals> video = make_video(rng, 12, cfg.proposals, cfg.dim);
    Rng prng(509);
    ModelParams params(cfg, prng);

    const RunResult a = run_video(video, params, cfg);
    const RunResult b = run_video(video, params, cfg);
    CHECK(same_detections(a.detections, b.detections));
    CHECK(a.totals == b.totals);
    REQUIRE(a.stats.size() == 12);
    for (std::size_t i = 0; i < a.stats.size(); ++i) {
        CHECK(a.stats[i].counters == b.stats[i].counters);
        CHECK(a.stats[i].local_rows == b.stats[i].local_rows);
    }
}

TEST_CASE("base model equals mega with zero memory, bitwise") {
    PipelineConfig mega_cfg = desk_config();
    mega_cfg.t_m = 0;
    PipelineConfig base_cfg = desk_config();
    base_cfg.base_model = true;  // keeps t_m at its default, capacity forced to 0

    Rng rng(510);
    const std::vector<FrameProposals> video = make_video(rng, 20, mega_cfg.proposals, mega_cfg.dim);
    Rng prng(511);
    ModelParams params_a(mega_cfg, prng);
    Rng prng2(511);
    ModelParams params_b(base_cfg, prng2);

    const RunResult a = run_video(video, params_a, mega_cfg);
    const RunResult b = run_video(video, params_b, base_cfg);
    CHECK(same_detections(a.detections, b.detections));
    CHECK(a.totals == b.totals);
    for (const FrameStats& s : a.stats) CHECK(s.memory_frames == 0);
}

TEST_CASE("memory follows the departing-frame schedule") {
    const PipelineConfig cfg = desk_config();
    Rng rng(512);
    const std::vector<FrameProposals> video = make_video(rng, 18, cfg.proposals, cfg.dim);
    Rng prng(513);
    ModelParams params(cfg, prng);

    const RunResult res = run_video(video, params, cfg);
    REQUIRE(res.memory_after_key.size() == 18);
    for (int k = 1; k <= 18; ++k) {
        const std::vector<int>& cached = res.memory_after_key[static_cast<std::size_t>(k - 1)];
        const int newest = k - cfg.tau;
        std::vector<int> expect;
        if (newest >= 1)
            for (int t = std::max(1, newest - cfg.t_m + 1); t <= newest; ++t) expect.push_back(t);
        CHECK(cached == expect);
    }
    // Occupancy while detecting key k reflects pushes up to key k-1.
    for (int k = 1; k <= 18; ++k) {
        const int pushed = std::max(0, k - 1 - cfg.tau);
        CHECK(res.stats[static_cast<std::size_t>(k - 1)].memory_frames == std::min(pushed, cfg.t_m));
    }
}

TEST_CASE("steady-state counters match the closed-form shapes") {
    const PipelineConfig cfg = desk_config();
    Rng rng(514);
    const std::vector<FrameProposals> video = make_video(rng, 30, cfg.proposals, cfg.dim);
    Rng prng(515);
    ModelParams params(cfg, prng);
    const RunResult res = run_video(video, params, cfg);

    const long long pool = cfg.proposals + (cfg.t_l - 1) * cfg.k_l;       // 32
    const long long global_rows = static_cast<long long>(cfg.t_g) * cfg.k_g;  // 12
    const long long refs1 = pool + static_cast<long long>(cfg.t_m) * cfg.k_l;
    const long long refs2 = static_cast<long long>(cfg.t_l + cfg.t_m) * cfg.k_d;
    const long long pairs = cfg.n_g * pool * global_rows + pool * refs1 + pool * refs2;
    const long long values = (cfg.n_g * global_rows + refs1 + refs2) * cfg.heads;
    const long long updates = (cfg.n_g + cfg.n_l) * pool;

    const FrameStats& mid = res.stats[19];  // key 20: full window, full memory
    CHECK(mid.local_rows == pool);
    CHECK(mid.global_rows == global_rows);
    CHECK(mid.memory_rows == cfg.t_m * cfg.k_l + cfg.t_m * cfg.k_d);
    CHECK(mid.counters.attn_pairs == pairs);
    CHECK(mid.counters.value_mults == values);
    CHECK(mid.counters.feature_updates == updates);
}

TEST_CASE("online mode is causal under future-frame mutation") {
    PipelineConfig cfg = desk_config();
    cfg.online = true;
    cfg.t_l = 5;
    Rng rng(516);
    const std::vector<FrameProposals> video = make_video(rng, 16, cfg.proposals, cfg.dim);
    Rng prng(517);
    ModelParams params(cfg, prng);

    const RunResult before = run_video(video, params, cfg);

    std::vector<FrameProposals> mutated = video;
    for (BoxFeature& b : mutated[11].boxes) {  // frame 12
        for (double& x : b.semantic) x = -x + 0.25;
        b.cx = std::min(0.95, b.cx + 0.02);
    }
    const RunResult after = run_video(mutated, params, cfg);

    for (int k = 1; k <= 11; ++k)
        CHECK(same_detections({before.detections[static_cast<std::size_t>(k - 1)]},
                              {after.detections[static_cast<std::size_t>(k - 1)]}));
    bool changed = false;
    for (int k = 12; k <= 16; ++k)
        if (!same_detections({before.detections[static_cast<std::size_t>(k - 1)]},
                             {after.detections[static_cast<std::size_t>(k - 1)]}))
            changed = true;
    CHECK(changed);
}

TEST_CASE("degenerate single-frame video still runs") {
    PipelineConfig cfg = tiny_config();
    cfg.t_l = 1;
    cfg.tau = 0;
    cfg.t_g = 1;
    Rng rng(518);
    const std::vector<FrameProposals> video = make_video(rng, 1, cfg.proposals, cfg.dim);
    Rng prng(519);
    ModelParams params(cfg, prng);
    const RunResult res = run_video(video, params, cfg);
    REQUIRE(res.detections.size() == 1);
    REQUIRE(res.stats.size() == 1);
    CHECK(res.stats[0].local_rows == cfg.proposals);
    CHECK(res.memory_after_key[0] == std::vector<int>{1});  // frame 1 departs immediately
}

TEST_CASE("run_video validates source length, frame stamps, and t_g") {
    PipelineConfig cfg = desk_config();
    Rng rng(521);
    ModelParams params(cfg, rng);

    std::vector<FrameProposals> video = make_video(rng, 10, cfg.proposals, cfg.dim);

    PipelineConfig declared = cfg;
    declared.video_length = 12;
    CHECK_THROWS_AS(run_video(video, params, declared), ContractViolation);

    std::vector<FrameProposals> bad = video;
    bad[4].frame_index = 99;
    CHECK_THROWS_AS(run_video(bad, params, cfg), ContractViolation);

    PipelineConfig wide = cfg;
    wide.t_g = 11;
    CHECK_THROWS_AS(run_video(video, params, wide), ContractViolation);

    CHECK_THROWS_AS(run_video({}, params, cfg), ContractViolation);
}

TEST_CASE("receptive field of a steady-state key matches the aggregation formula") {
    const PipelineConfig cfg = desk_config();
    Rng rng(522);
    const std::vector<FrameProposals> video = make_video(rng, 30, cfg.proposals, cfg.dim);
    Rng prng(523);
    ModelParams params(cfg, prng);

    const RunResult res = run_video(video, params, cfg, true);
    const int k = 25;
    const TaintSet& taint = res.key_taints[static_cast<std::size_t>(k - 1)];

    std::set<int> expect_local;
    for (int t = k - cfg.tau - cfg.n_l * cfg.t_m; t <= k + cfg.tau; ++t) expect_local.insert(t);
    CHECK(taint.local == expect_local);
    CHECK(static_cast<int>(taint.local.size()) == cfg.n_l * cfg.t_m + cfg.t_l);
    CHECK(static_cast<int>(taint.global.size()) == cfg.t_g + cfg.n_l * cfg.t_m);

    // Cold start: no memory yet, local lineage is the clipped window.
    const TaintSet& first = res.key_taints[0];
    std::set<int> cold;
    for (int t = 1; t <= 1 + cfg.tau; ++t) cold.insert(t);
    CHECK(first.local == cold);
    CHECK(static_cast<int>(first.global.size()) == cfg.t_g);

    // Zero-capacity runs never grow a memory lineage.
    PipelineConfig base = cfg;
    base.base_model = true;
    Rng prng2(523);
    ModelParams params2(base, prng2);
    const RunResult bres = run_video(video, params2, base, true);
    const TaintSet& btaint = bres.key_taints[static_cast<std::size_t>(k - 1)];
    std::set<int> window;
    for (int t = k - cfg.tau; t <= k + cfg.tau; ++t) window.insert(t);
    CHECK(btaint.local == window);
    CHECK(static_cast<int>(btaint.global.size()) == cfg.t_g);
    for (int g : btaint.global) CHECK(g < 0);
}

TEST_CASE("training instances sample the documented windows") {
    const PipelineConfig cfg = tiny_config();
    Rng scene_rng(524);
    const std::vector<FrameProposals> video = make_video(scene_rng, 10, cfg.proposals, cfg.dim);
    std::vector<std::vector<GroundTruthBox>> truth(10);

    Rng rng(525);
    const TrainingInstance inst = sample_training_instance(video, truth, 6, cfg, rng);
    CHECK(inst.key == 6);
    REQUIRE(inst.local_frames.size() == 3);
    CHECK(inst.local_frames[0].frame_index == 5);
    CHECK(inst.local_frames[1].frame_index == 6);
    CHECK(inst.local_frames[2].frame_index == 7);
    CHECK(inst.local_frames[1].boxes.size() == 4);  // key keeps all proposals
    CHECK(inst.local_frames[0].boxes.size() == 3);  // support truncated to k_l
    REQUIRE(inst.global_frames.size() == 2);
    for (const FrameProposals& f : inst.global_frames) {
        CHECK(f.frame_index >= 1);
        CHECK(f.frame_index <= 10);
        CHECK(f.boxes.size() <= 2);  // k_g
    }
    REQUIRE(inst.memory_frames.size() == 2);
    for (const FrameProposals& f : inst.memory_frames) {
        CHECK(f.frame_index >= 3);  // newest-t_m+1 = 4-2+1
        CHECK(f.frame_index <= 4);  // key - tau - 1
    }

    // Same seed replays the same draw; the memory window clips away near the
    // start; base mode never samples memory frames.
    Rng rng_b(525);
    const TrainingInstance again = sample_training_instance(video, truth, 6, cfg, rng_b);
    CHECK(again.local_frames[0].frame_index == inst.local_frames[0].frame_index);
    CHECK(again.global_frames[0].frame_index == inst.global_frames[0].frame_index);

    Rng rng_c(526);
    const TrainingInstance early = sample_training_instance(video, truth, 1, cfg, rng_c);
    CHECK(early.memory_frames.empty());
    REQUIRE(early.local_frames.size() == 2);  // window 1..2 has a single non-key frame
    CHECK(early.local_frames[0].frame_index == 1);
    CHECK(early.local_frames[1].frame_index == 2);

    PipelineConfig base = cfg;
    base.base_model = true;
    Rng rng_d(527);
    CHECK(sample_training_instance(video, truth, 6, base, rng_d).memory_frames.empty());

    Rng rng_e(528);
    CHECK_THROWS_AS(sample_training_instance(video, truth, 11, cfg, rng_e), ContractViolation);
    std::vector<std::vector<GroundTruthBox>> short_truth(9);
    CHECK_THROWS_AS(sample_training_instance(video, short_truth, 5, cfg, rng_e), ContractViolation);
}

TEST_CASE("proposal matching uses the documented thresholds") {
    std::vector<GroundTruthBox> truth(1);
    truth[0].class_id = 2;
    truth[0].box = BoxGeom{0.5, 0.5, 0.2, 0.2};

    auto box_at = [](double cx) {
        BoxFeature b;
        b.cx = cx;
        b.cy = 0.5;
        b.w = 0.2;
        b.h = 0.2;
        b.semantic = {1.0};
        return b;
    };
    std::vector<BoxFeature> proposals = {box_at(0.5), box_at(0.52), box_at(0.575), box_at(0.9)};

    const MatchResult match = match_proposals(proposals, truth);
    REQUIRE(match.labels.size() == 4);
    CHECK(match.labels[0] == 2);
    CHECK(match.labels[1] == 2);
    CHECK(match.labels[2] == -1);  // IoU ~0.45 sits in the ignore band
    CHECK(match.labels[3] == 0);
    REQUIRE(match.positive_rows == std::vector<int>{0, 1});
    CHECK(match.regression_targets.at(0, 0) == 0.0);
    CHECK(match.regression_targets.at(0, 2) == 0.0);
    CHECK(match.regression_targets.at(1, 0) == doctest::Approx(-0.1).epsilon(1e-12));

    const MatchResult none = match_proposals(proposals, {});
    for (int label : none.labels) CHECK(label == 0);
    CHECK(none.positive_rows.empty());
}

TEST_CASE("memory construction is gradient-free: on-tape detached equals off-tape") {
    const PipelineConfig cfg = tiny_config();
    const SceneModel scene = make_default_scene(cfg.num_classes, cfg.dim, 10, 31);
    const std::vector<FrameProposals> video = synth_video(scene, cfg.proposals, 32);
    const std::vector<std::vector<GroundTruthBox>> truth = ground_truth(scene);

    Rng prng(529);
    ModelParams params(cfg, prng);
    Rng srng(530);
    const TrainingInstance inst = sample_training_instance(video, truth, 7, cfg, srng);
    REQUIRE(!inst.memory_frames.empty());

    params.zero_grads();
    Tape tape_off;
    const TrainingMemory mhat_off = build_training_memory(inst, params, cfg, nullptr);
    Var loss_off = training_loss(inst, mhat_off, params, cfg, &tape_off);
    tape_off.backward(loss_off);
    std::vector<Matrix> grads_off;
    for (Param* p : params.param_list()) grads_off.push_back(p->grad);

    params.zero_grads();
    Tape tape_on;
    const TrainingMemory mhat_on = build_training_memory(inst, params, cfg, &tape_on);
    Var loss_on = training_loss(inst, mhat_on, params, cfg, &tape_on);
    tape_on.backward(loss_on);

    CHECK(loss_off.value.at(0, 0) == loss_on.value.at(0, 0));
    REQUIRE(mhat_off.levels.size() == mhat_on.levels.size());
    for (std::size_t l = 0; l < mhat_off.levels.size(); ++l) {
        REQUIRE(mhat_off.levels[l].size() == mhat_on.levels[l].size());
        for (std::size_t i = 0; i < mhat_off.levels[l].size(); ++i)
            CHECK(mhat_off.levels[l][i].semantic == mhat_on.levels[l][i].semantic);
    }
    const std::vector<Param*> plist = params.param_list();
    double total = 0.0;
    for (std::size_t i = 0; i < plist.size(); ++i) {
        CHECK(bitwise_equal(grads_off[i], plist[i]->grad));
        for (std::size_t j = 0; j < plist[i]->grad.size(); ++j) total += std::abs(plist[i]->grad[j]);
    }
    CHECK(total > 0.0);
}

TEST_CASE("training loss gradients agree with finite differences") {
    const PipelineConfig cfg = tiny_config();
    const SceneModel scene = make_default_scene(cfg.num_classes, cfg.dim, 10, 41);
    const std::vector<FrameProposals> video = synth_video(scene, cfg.proposals, 42);
    const std::vector<std::vector<GroundTruthBox>> truth = ground_truth(scene);

    bool done = false;
    for (std::uint64_t seed = 1; seed <= 12 && !done; ++seed) {
        Rng prng(seed);
        ModelParams params(cfg, prng);
        Rng srng(seed + 100);
        const TrainingInstance inst = sample_training_instance(video, truth, 7, cfg, srng);
        const TrainingMemory mhat = build_training_memory(inst, params, cfg, nullptr);

        std::vector<Param*> plist = params.param_list();
        const double err = grad_check(
            [&](Tape* tape) { return training_loss(inst, mhat, params, cfg, tape); },
            std::span<Param* const>(plist.data(), plist.size()), 1e-5);
        if (err < 1e-4) done = true;
    }
    CHECK(done);
}

TEST_CASE("sgd with zero learning rate leaves parameters untouched") {
    const PipelineConfig cfg = tiny_config();
    const SceneModel scene = make_default_scene(cfg.num_classes, cfg.dim, 10, 51);
    const std::vector<FrameProposals> video = synth_video(scene, cfg.proposals, 52);
    const std::vector<std::vector<GroundTruthBox>> truth = ground_truth(scene);

    Rng prng(531);
    ModelParams params(cfg, prng);
    Rng srng(532);
    const TrainingInstance inst = sample_training_instance(video, truth, 6, cfg, srng);

    std::vector<Matrix> before;
    for (Param* p : params.param_list()) before.push_back(p->value);
    const double loss = train_step(inst, params, cfg, 0.0);
    CHECK(std::isfinite(loss));
    const std::vector<Param*> plist = params.param_list();
    for (std::size_t i = 0; i < plist.size(); ++i) CHECK(bitwise_equal(before[i], plist[i]->value));
}

TEST_CASE("a short sgd run reduces the loss on a fixed scene") {
    const PipelineConfig cfg = tiny_config();
    const SceneModel scene = make_default_scene(cfg.num_classes, cfg.dim, 12, 61);
    const std::vector<FrameProposals> video = synth_video(scene, cfg.proposals, 62);
    const std::vector<std::vector<GroundTruthBox>> truth = ground_truth(scene);

    Rng prng(533);
    ModelParams params(cfg, prng);
    Rng srng(534);

    double first_avg = 0.0, last_avg = 0.0;
    const int steps = 60;
    std::vector<double> losses;
    for (int s = 0; s < steps; ++s) {
        const int key = 3 + static_cast<int>(srng.uniform_int(0, 6));
        const TrainingInstance inst = sample_training_instance(video, truth, key, cfg, srng);
        losses.push_back(train_step(inst, params, cfg, 0.05));
    }
    for (int i = 0; i < 10; ++i) {
        first_avg += losses[static_cast<std::size_t>(i)] / 10.0;
        last_avg += losses[losses.size() - 10 + static_cast<std::size_t>(i)] / 10.0;
    }
    CHECK(last_avg < first_avg);
}
