#include "mega/scene.hpp"

#include <algorithm>
#include <cmath>

namespace mega {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

void validate_scene(const SceneModel& scene) {
    if (scene.num_classes < 1) throw ContractViolation("SceneModel: num_classes must be >= 1");
    if (scene.dim < 1) throw ContractViolation("SceneModel: dim must be >= 1");
    if (scene.frames < 1) throw ContractViolation("SceneModel: frames must be >= 1");
    if (scene.class_embeddings.rows() != scene.num_classes || scene.class_embeddings.cols() != scene.dim)
        throw ContractViolation("SceneModel: class embedding shape " + scene.class_embeddings.shape_str() +
                                " does not match " + std::to_string(scene.num_classes) + " classes x " +
                                std::to_string(scene.dim));
    for (const TrackSpec& t : scene.tracks) {
        if (t.class_id < 1 || t.class_id > scene.num_classes)
            throw ContractViolation("SceneModel: track class " + std::to_string(t.class_id) + " out of range");
        if (static_cast<int>(t.quality.size()) != scene.frames)
            throw ContractViolation("SceneModel: track quality curve length " + std::to_string(t.quality.size()) +
                                    " does not match " + std::to_string(scene.frames) + " frames");
        if (!(t.w > 0.0) || !(t.h > 0.0)) throw ContractViolation("SceneModel: nonpositive track size");
    }
}

Matrix make_class_embeddings(int num_classes, int dim, Rng& rng) {
    Matrix emb(num_classes, dim);
    for (int c = 0; c < num_classes; ++c)
        for (int i = 0; i < dim; ++i) emb.at(c, i) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    return emb;
}

BoxGeom track_box(const TrackSpec& track, int frame) {
    BoxGeom g;
    const double lo_x = track.w / 2.0 + 0.01, hi_x = 0.99 - track.w / 2.0;
    const double lo_y = track.h / 2.0 + 0.01, hi_y = 0.99 - track.h / 2.0;
    g.cx = std::clamp(track.cx0 + track.vx * (frame - 1), lo_x, hi_x);
    g.cy = std::clamp(track.cy0 + track.vy * (frame - 1), lo_y, hi_y);
    g.w = track.w;
    g.h = track.h;
    return g;
}

SceneModel make_default_scene(int num_classes, int dim, int frames, std::uint64_t seed) {
    Rng rng(seed);
    SceneModel scene;
    scene.num_classes = num_classes;
    scene.dim = dim;
    scene.frames = frames;
    scene.class_embeddings = make_class_embeddings(num_classes, dim, rng);
    for (int c = 1; c <= num_classes; ++c) {
        TrackSpec t;
        t.class_id = c;
        t.cx0 = rng.uniform(0.2, 0.8);
        t.cy0 = rng.uniform(0.2, 0.8);
        t.vx = rng.uniform(-0.003, 0.003);
        t.vy = rng.uniform(-0.003, 0.003);
        t.w = rng.uniform(0.08, 0.18);
        t.h = rng.uniform(0.08, 0.18);
        t.quality.resize(static_cast<std::size_t>(frames));
        const double phase = rng.uniform(0.0, 6.28);
        for (int f = 0; f < frames; ++f) t.quality[static_cast<std::size_t>(f)] = 0.92 + 0.08 * std::sin(0.3 * f + phase);
        scene.tracks.push_back(std::move(t));
    }
    validate_scene(scene);
    return scene;
}

SceneModel make_occlusion_scene(int num_classes, int dim, int frames, std::uint64_t seed) {
    Rng rng(seed);
    SceneModel scene;
    scene.num_classes = num_classes;
    scene.dim = dim;
    scene.frames = frames;
    scene.class_embeddings = make_class_embeddings(num_classes, dim, rng);

    // Start corners spread the tracks apart so matching stays unambiguous.
    const double xs[4] = {0.25, 0.75, 0.25, 0.75};
    const double ys[4] = {0.3, 0.3, 0.72, 0.72};
    const int track_count = num_classes + 1;
    for (int i = 0; i < track_count; ++i) {
        TrackSpec t;
        t.class_id = i % num_classes + 1;
        t.cx0 = xs[i % 4] + rng.uniform(-0.03, 0.03);
        t.cy0 = ys[i % 4] + rng.uniform(-0.03, 0.03);
        t.vx = rng.uniform(-0.002, 0.002);
        t.vy = rng.uniform(-0.002, 0.002);
        t.w = rng.uniform(0.1, 0.16);
        t.h = rng.uniform(0.1, 0.16);
        t.quality.assign(static_cast<std::size_t>(frames), 1.0);

        // One long occlusion episode per track, longer than a short local
        // window, staggered so some object is always visible.
        const int duration = static_cast<int>(rng.uniform_int(9, 12));
        const int latest = std::max(16, frames - duration - 6);
        const int start = static_cast<int>(rng.uniform_int(15, latest));
        for (int f = start; f < std::min(frames, start + duration); ++f) t.quality[static_cast<std::size_t>(f)] = 0.05;
        scene.tracks.push_back(std::move(t));
    }
    validate_scene(scene);
    return scene;
}

std::vector<FrameProposals> synth_video(const SceneModel& scene, int proposals_per_frame, std::uint64_t seed) {
    validate_scene(scene);
    if (proposals_per_frame < static_cast<int>(scene.tracks.size()) + 1)
        throw ContractViolation("synth_video: proposals_per_frame " + std::to_string(proposals_per_frame) +
                                " below track count + 1");
    Rng rng(seed);
    std::vector<FrameProposals> video;
    video.reserve(static_cast<std::size_t>(scene.frames));
    for (int t = 1; t <= scene.frames; ++t) {
        FrameProposals frame;
        frame.frame_index = t;
        for (const TrackSpec& track : scene.tracks) {
            const double q = clamp01(track.quality[static_cast<std::size_t>(t - 1)]);
            const BoxGeom g = track_box(track, t);
            BoxFeature b;
            b.cx = g.cx;
            b.cy = g.cy;
            b.w = g.w;
            b.h = g.h;
            b.frame_index = t;
            b.semantic.resize(static_cast<std::size_t>(scene.dim));
            for (int i = 0; i < scene.dim; ++i)
                b.semantic[static_cast<std::size_t>(i)] =
                    q * scene.class_embeddings.at(track.class_id - 1, i) + (1.0 - q) * rng.normal();
            b.objectness = std::clamp(scene.objectness_base + scene.objectness_gain * q, 0.0, 0.99);
            frame.boxes.push_back(std::move(b));
        }
        while (static_cast<int>(frame.boxes.size()) < proposals_per_frame) {
            BoxFeature b;
            b.cx = rng.uniform(0.1, 0.9);
            b.cy = rng.uniform(0.1, 0.9);
            b.w = rng.uniform(0.04, 0.15);
            b.h = rng.uniform(0.04, 0.15);
            b.frame_index = t;
            b.semantic.resize(static_cast<std::size_t>(scene.dim));
            for (double& x : b.semantic) x = rng.normal();
            b.objectness = rng.uniform(scene.distractor_objectness_lo, scene.distractor_objectness_hi);
            frame.boxes.push_back(std::move(b));
        }
        normalize_frame(frame);
        video.push_back(std::move(frame));
    }
    return video;
}

std::vector<std::vector<GroundTruthBox>> ground_truth(const SceneModel& scene) {
    std::vector<std::vector<GroundTruthBox>> out(static_cast<std::size_t>(scene.frames));
    for (int t = 1; t <= scene.frames; ++t)
        for (const TrackSpec& track : scene.tracks) {
            GroundTruthBox g;
            g.class_id = track.class_id;
            g.box = track_box(track, t);
            out[static_cast<std::size_t>(t - 1)].push_back(g);
        }
    return out;
}

}  // namespace mega
