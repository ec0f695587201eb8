#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mega/analysis.hpp"
#include "mega/io.hpp"
#include "mega/scene.hpp"

namespace {

using nlohmann::json;
using namespace mega;

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Options {
    std::string command;
    std::string mode = "mega";
    PipelineConfig cfg;
    std::string config_path;
    std::string input;
    std::string synthetic;
    std::string out_dir = ".";
    std::string params_path;
    int steps = 200;
    double lr = 0.02;
};

long long parse_ll(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': not an integer: '" + value + "'");
    }
}

double parse_d(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': not a number: '" + value + "'");
    }
}

bool parse_b(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw UsageError("config key '" + key + "': not a boolean: '" + value + "'");
}

// File values fill the config first; command-line flags override below.
void apply_config_file(Options& o, bool& file_sets_tau) {
    std::vector<std::pair<std::string, std::string>> pairs;
    pairs = read_key_values(o.config_path);
    for (const auto& [key, value] : pairs) {
        PipelineConfig& c = o.cfg;
        if (key == "mode") {
            if (value != "base" && value != "mega") throw UsageError("config key 'mode': expected base or mega");
            o.mode = value;
        } else if (key == "online")
            c.online = parse_b(key, value);
        else if (key == "video_length")
            c.video_length = static_cast<int>(parse_ll(key, value));
        else if (key == "t_l")
            c.t_l = static_cast<int>(parse_ll(key, value));
        else if (key == "tau") {
            c.tau = static_cast<int>(parse_ll(key, value));
            file_sets_tau = true;
        } else if (key == "t_g")
            c.t_g = static_cast<int>(parse_ll(key, value));
        else if (key == "t_m")
            c.t_m = static_cast<int>(parse_ll(key, value));
        else if (key == "n_g")
            c.n_g = static_cast<int>(parse_ll(key, value));
        else if (key == "n_l")
            c.n_l = static_cast<int>(parse_ll(key, value));
        else if (key == "k_l")
            c.k_l = static_cast<int>(parse_ll(key, value));
        else if (key == "k_g")
            c.k_g = static_cast<int>(parse_ll(key, value));
        else if (key == "k_d")
            c.k_d = static_cast<int>(parse_ll(key, value));
        else if (key == "proposals")
            c.proposals = static_cast<int>(parse_ll(key, value));
        else if (key == "num_classes")
            c.num_classes = static_cast<int>(parse_ll(key, value));
        else if (key == "dim")
            c.dim = static_cast<int>(parse_ll(key, value));
        else if (key == "heads")
            c.heads = static_cast<int>(parse_ll(key, value));
        else if (key == "embed_dim")
            c.embed_dim = static_cast<int>(parse_ll(key, value));
        else if (key == "nms_threshold")
            c.nms_threshold = parse_d(key, value);
        else if (key == "seed")
            c.seed = static_cast<std::uint64_t>(parse_ll(key, value));
        else if (key == "input")
            o.input = value;
        else if (key == "synthetic")
            o.synthetic = value;
        else if (key == "out")
            o.out_dir = value;
        else
            throw UsageError("config key '" + key + "' is not recognized");
    }
}

struct SyntheticSpec {
    std::string name;
    int frames = 50;
};

SyntheticSpec parse_synthetic(const std::string& spec) {
    SyntheticSpec out;
    const auto colon = spec.find(':');
    out.name = spec.substr(0, colon);
    if (colon != std::string::npos) {
        const std::string rest = spec.substr(colon + 1);
        out.frames = static_cast<int>(parse_ll("synthetic frames", rest));
        if (out.frames < 1) throw UsageError("synthetic spec: frames must be >= 1");
    }
    if (out.name != "default" && out.name != "occlusion")
        throw UsageError("synthetic spec '" + spec + "': name must be default or occlusion");
    return out;
}

SceneModel make_scene(const Options& o) {
    const SyntheticSpec spec = parse_synthetic(o.synthetic);
    if (spec.name == "occlusion")
        return make_occlusion_scene(o.cfg.num_classes, o.cfg.dim, spec.frames, o.cfg.seed);
    return make_default_scene(o.cfg.num_classes, o.cfg.dim, spec.frames, o.cfg.seed);
}

json config_json(const PipelineConfig& c) {
    return {{"base_model", c.base_model}, {"online", c.online},     {"video_length", c.video_length},
            {"t_l", c.t_l},               {"tau", c.tau},           {"t_g", c.t_g},
            {"t_m", c.t_m},               {"n_g", c.n_g},           {"n_l", c.n_l},
            {"k_l", c.k_l},               {"k_g", c.k_g},           {"k_d", c.k_d},
            {"proposals", c.proposals},   {"num_classes", c.num_classes},
            {"dim", c.dim},               {"heads", c.heads},       {"embed_dim", c.embed_dim},
            {"nms_threshold", c.nms_threshold},                     {"seed", c.seed}};
}

json input_json(const Options& o) {
    if (!o.input.empty()) return {{"kind", "jsonl"}, {"path", o.input}};
    if (!o.synthetic.empty()) return {{"kind", "synthetic"}, {"spec", o.synthetic}};
    return {{"kind", "none"}};
}

std::string manifest_line(const Options& o, const json& outputs) {
    json m = {{"command", o.command}, {"config", config_json(o.cfg)}, {"input", input_json(o)},
              {"mode", o.mode},       {"outputs", outputs},           {"seed", o.cfg.seed}};
    return m.dump();
}

std::string out_file(const Options& o, const std::string& name) {
    std::filesystem::create_directories(o.out_dir);
    return (std::filesystem::path(o.out_dir) / name).string();
}

std::vector<FrameProposals> load_source(const Options& o) {
    if (!o.input.empty()) {
        log_info("reading proposals from " + o.input);
        return read_proposals_jsonl(o.input);
    }
    const SceneModel scene = make_scene(o);
    log_info("generating synthetic scene '" + o.synthetic + "' with " + std::to_string(scene.frames) + " frames");
    return synth_video(scene, o.cfg.proposals, o.cfg.seed);
}

int cmd_run(const Options& o) {
    const std::vector<FrameProposals> video = load_source(o);
    Rng rng(o.cfg.seed);
    ModelParams params(o.cfg, rng);
    if (!o.params_path.empty()) read_params(o.params_path, params);

    const RunResult result = run_video(video, params, o.cfg);

    const std::string det_path = out_file(o, "detections.jsonl");
    const std::string stats_path = out_file(o, "stats.csv");
    // Manifests carry output names, not paths, so that runs differing only in
    // --out stay byte-identical.
    const std::string manifest = manifest_line(o, {{"detections", "detections.jsonl"}, {"stats", "stats.csv"}});
    write_detections_jsonl(det_path, result.detections, manifest);
    write_stats_csv(stats_path, result.stats, manifest);

    long long total_dets = 0;
    for (const auto& frame : result.detections) total_dets += static_cast<long long>(frame.size());
    std::printf("processed %zu frames, %lld detections\n", result.detections.size(), total_dets);
    std::printf("wrote %s and %s\n", det_path.c_str(), stats_path.c_str());
    return 0;
}

int cmd_train(const Options& o) {
    if (o.steps < 0) throw UsageError("--steps must be >= 0");
    const SceneModel scene = make_scene(o);
    const std::vector<FrameProposals> video = synth_video(scene, o.cfg.proposals, o.cfg.seed);
    const std::vector<std::vector<GroundTruthBox>> truth = ground_truth(scene);
    const int frames = static_cast<int>(video.size());

    Rng init_rng(o.cfg.seed);
    ModelParams params(o.cfg, init_rng);
    if (!o.params_path.empty()) read_params(o.params_path, params);

    // The loss curve tracks a fixed probe instance so that lr=0 runs produce
    // a constant curve; training steps sample fresh instances each step.
    const int probe_key = (frames + 1) / 2;
    Rng probe_rng(o.cfg.seed);
    const TrainingInstance probe = sample_training_instance(video, truth, probe_key, o.cfg, probe_rng);
    const auto probe_loss = [&]() {
        const TrainingMemory mhat = build_training_memory(probe, params, o.cfg, nullptr);
        return training_loss(probe, mhat, params, o.cfg, nullptr).value.at(0, 0);
    };

    Rng train_rng(o.cfg.seed + 1);
    std::vector<double> losses;
    for (int s = 1; s <= o.steps; ++s) {
        const int key = static_cast<int>(train_rng.uniform_int(1, frames));
        const TrainingInstance inst = sample_training_instance(video, truth, key, o.cfg, train_rng);
        const double step_loss = train_step(inst, params, o.cfg, o.lr);
        const double eval_loss = probe_loss();
        losses.push_back(eval_loss);
        if (s == 1 || s % 25 == 0 || s == o.steps)
            log_info("step " + std::to_string(s) + " train " + std::to_string(step_loss) + " probe " +
                     std::to_string(eval_loss));
    }

    const std::string loss_path = out_file(o, "loss.csv");
    const std::string params_path = out_file(o, "params.json");
    const std::string manifest = manifest_line(o, {{"loss", "loss.csv"}, {"params", "params.json"}});
    write_loss_csv(loss_path, losses, manifest);
    write_params(params_path, params, manifest);
    std::printf("trained %d steps, wrote %s and %s\n", o.steps, loss_path.c_str(), params_path.c_str());
    return 0;
}

int cmd_gen(const Options& o) {
    const SceneModel scene = make_scene(o);
    const std::vector<FrameProposals> video = synth_video(scene, o.cfg.proposals, o.cfg.seed);
    const std::string path = out_file(o, "proposals.jsonl");
    write_proposals_jsonl(path, video, manifest_line(o, {{"proposals", "proposals.jsonl"}}));
    std::printf("wrote %zu frames to %s\n", video.size(), path.c_str());
    return 0;
}

int cmd_analyze(const Options& o) {
    bool ok = true;
    const auto gate = [&](bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            std::printf("MISMATCH: %s\n", what.c_str());
        }
    };

    std::printf("aggregation size (n_l, t_m, t_l, t_g) -> (local, global)\n");
    const auto row = [&](long long n_l, long long t_m, long long t_l, long long t_g) {
        const auto [local, global] = aggregation_size(n_l, t_m, t_l, t_g);
        std::printf("  (%lld,%lld,%lld,%lld) -> (%lld,%lld)\n", n_l, t_m, t_l, t_g, local, global);
        return std::pair{local, global};
    };
    gate(row(2, 3, 4, 4) == std::pair<long long, long long>{10, 10}, "aggregation_size(2,3,4,4) != (10,10)");
    gate(row(3, 25, 25, 10) == std::pair<long long, long long>{100, 85}, "aggregation_size(3,25,25,10) != (100,85)");
    row(o.cfg.n_l, o.cfg.t_m, o.cfg.t_l, o.cfg.t_g);

    std::printf("\nreceptive field: traced vs formula\n");
    std::printf("  n_l t_m t_l    T    k  local formula  slots formula\n");
    for (int n_l : {1, 2, 3})
        for (int t_m : {0, 2, 4})
            for (int t_l : {3, 5}) {
                PipelineConfig cfg;
                cfg.seed = o.cfg.seed;
                cfg.n_l = n_l;
                cfg.t_m = t_m;
                cfg.t_l = t_l;
                cfg.tau = (t_l - 1) / 2;
                cfg.t_g = 3;
                cfg.n_g = 1;
                const int T = 10 * (t_m + t_l);
                const int k = T - cfg.tau;
                const ReceptiveField field = trace_receptive_field(cfg, T, k);
                const auto [flocal, fglobal] = aggregation_size(n_l, t_m, t_l, cfg.t_g);
                std::printf("  %3d %3d %3d %4d %4d  %5zu %7lld  %5zu %7lld\n", n_l, t_m, t_l, T, k,
                            field.local_frames.size(), flocal, field.global_slots.size(), fglobal);
                gate(static_cast<long long>(field.local_frames.size()) == flocal,
                     "traced local count != formula at n_l=" + std::to_string(n_l) + " t_m=" + std::to_string(t_m) +
                         " t_l=" + std::to_string(t_l));
                gate(static_cast<long long>(field.global_slots.size()) == fglobal,
                     "traced global slots != formula at n_l=" + std::to_string(n_l) + " t_m=" + std::to_string(t_m) +
                         " t_l=" + std::to_string(t_l));
            }

    std::printf("\ncost model vs instrumented run (desk config, 30 frames)\n");
    {
        const PipelineConfig cfg = desk_config();
        const SceneModel scene = make_default_scene(cfg.num_classes, cfg.dim, 30, cfg.seed);
        const std::vector<FrameProposals> video = synth_video(scene, cfg.proposals, cfg.seed);
        Rng rng(cfg.seed);
        ModelParams params(cfg, rng);
        const RunResult run = run_video(video, params, cfg);
        const CostReport report = count_ops(cfg, 30);
        bool frames_match = report.totals == run.totals;
        for (int k = 0; k < 30 && frames_match; ++k)
            frames_match = report.per_frame[static_cast<std::size_t>(k)] == run.stats[static_cast<std::size_t>(k)].counters;
        std::printf("  per-frame counters match: %s\n", frames_match ? "yes" : "NO");
        gate(frames_match, "count_ops disagrees with the instrumented run");
    }

    std::printf("\ncost growth in t_m (steady state, full-scale defaults)\n");
    {
        const std::vector<long long> grid = {8, 16, 32, 64};
        std::vector<long long> pairs, wide_pairs;
        std::printf("  t_m  mega attn_pairs  enlarged-window attn_pairs\n");
        for (long long t_m : grid) {
            PipelineConfig cfg;
            cfg.t_m = static_cast<int>(t_m);
            PipelineConfig wide;
            wide.base_model = true;
            wide.t_l = wide.t_l + static_cast<int>(t_m);
            wide.tau = (wide.t_l - 1) / 2;
            pairs.push_back(count_ops(cfg, 2000).steady_state.attn_pairs);
            wide_pairs.push_back(count_ops(wide, 2000).steady_state.attn_pairs);
            std::printf("  %3lld %16lld %27lld\n", t_m, pairs.back(), wide_pairs.back());
        }
        for (std::size_t i = 0; i + 2 < grid.size(); ++i) {
            const long long mega_lhs = (pairs[i + 1] - pairs[i]) * (grid[i + 2] - grid[i + 1]);
            const long long mega_rhs = (pairs[i + 2] - pairs[i + 1]) * (grid[i + 1] - grid[i]);
            gate(mega_lhs == mega_rhs, "mega cost is not linear in t_m");
            const long long wide_lhs = (wide_pairs[i + 1] - wide_pairs[i]) * (grid[i + 2] - grid[i + 1]);
            const long long wide_rhs = (wide_pairs[i + 2] - wide_pairs[i + 1]) * (grid[i + 1] - grid[i]);
            gate(wide_lhs < wide_rhs, "enlarged-window cost is not superlinear in t_m");
        }
        std::printf("  mega second difference: 0 (linear); enlarged window: positive (quadratic)\n");
    }

    if (!ok) {
        std::fprintf(stderr, "analyze: oracle vs formula mismatch\n");
        return 3;
    }
    std::printf("\nall analysis oracles agree\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Memory-enhanced streaming video object detection"};
    app.require_subcommand(1);

    Options o;
    struct FlagRefs {
        CLI::Option* tau = nullptr;
        CLI::Option* input = nullptr;
        CLI::Option* synthetic = nullptr;
    };
    std::map<CLI::App*, FlagRefs> refs;

    const auto add_common = [&](CLI::App* sub) {
        FlagRefs r;
        sub->add_option("--config", o.config_path, "flat key=value config file; flags override");
        sub->add_option("--mode", o.mode, "base or mega")->check(CLI::IsMember({"base", "mega"}));
        sub->add_flag("--online", o.cfg.online, "trailing-window causal mode");
        sub->add_option("--t-l", o.cfg.t_l, "local window size");
        r.tau = sub->add_option("--tau", o.cfg.tau, "symmetric window half-width (offline only)");
        sub->add_option("--t-g", o.cfg.t_g, "global window size");
        sub->add_option("--t-m", o.cfg.t_m, "memory capacity in frames");
        sub->add_option("--n-g", o.cfg.n_g, "global stacks");
        sub->add_option("--n-l", o.cfg.n_l, "local stacks");
        sub->add_option("--k-l", o.cfg.k_l, "boxes kept per local reference frame");
        sub->add_option("--k-g", o.cfg.k_g, "boxes kept per global frame");
        sub->add_option("--k-d", o.cfg.k_d, "boxes kept per distilled frame");
        sub->add_option("--video-length", o.cfg.video_length, "declared stream length (0: derive)");
        sub->add_option("--proposals", o.cfg.proposals, "proposals per frame");
        sub->add_option("--num-classes", o.cfg.num_classes, "object classes");
        sub->add_option("--dim", o.cfg.dim, "feature dimension");
        sub->add_option("--heads", o.cfg.heads, "attention heads");
        sub->add_option("--embed-dim", o.cfg.embed_dim, "position embedding dimension");
        sub->add_option("--nms", o.cfg.nms_threshold, "nms iou threshold");
        sub->add_option("--seed", o.cfg.seed, "master seed");
        r.input = sub->add_option("--input", o.input, "proposals jsonl path");
        r.synthetic = sub->add_option("--synthetic", o.synthetic, "synthetic scene spec: default|occlusion[:frames]");
        sub->add_option("--out", o.out_dir, "output directory");
        sub->add_option("--params", o.params_path, "parameter file to load");
        refs[sub] = r;
        return sub;
    };

    CLI::App* run = add_common(app.add_subcommand("run", "detect over a stream"));
    CLI::App* train = add_common(app.add_subcommand("train", "temporal-dropout training on a synthetic scene"));
    train->add_option("--steps", o.steps, "sgd steps");
    train->add_option("--lr", o.lr, "learning rate");
    CLI::App* analyze = add_common(app.add_subcommand("analyze", "aggregation, receptive-field, and cost reports"));
    CLI::App* gen = add_common(app.add_subcommand("gen", "emit a synthetic proposals stream"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        o.command = sub->get_name();
        const FlagRefs& r = refs[sub];

        bool tau_explicit = r.tau->count() > 0;
        if (!o.config_path.empty()) {
            // Re-apply flag values on top of the file: remember them first.
            Options flag_values = o;
            o.cfg = PipelineConfig{};
            o.mode = "mega";
            o.input.clear();
            o.synthetic.clear();
            o.out_dir = ".";
            apply_config_file(o, tau_explicit);
            const auto keep = [](CLI::Option* opt) { return opt != nullptr && opt->count() > 0; };
            // Flags override file values field by field.
            if (sub->count("--mode")) o.mode = flag_values.mode;
            if (sub->count("--online")) o.cfg.online = flag_values.cfg.online;
            if (sub->count("--t-l")) o.cfg.t_l = flag_values.cfg.t_l;
            if (keep(r.tau)) o.cfg.tau = flag_values.cfg.tau;
            if (sub->count("--t-g")) o.cfg.t_g = flag_values.cfg.t_g;
            if (sub->count("--t-m")) o.cfg.t_m = flag_values.cfg.t_m;
            if (sub->count("--n-g")) o.cfg.n_g = flag_values.cfg.n_g;
            if (sub->count("--n-l")) o.cfg.n_l = flag_values.cfg.n_l;
            if (sub->count("--k-l")) o.cfg.k_l = flag_values.cfg.k_l;
            if (sub->count("--k-g")) o.cfg.k_g = flag_values.cfg.k_g;
            if (sub->count("--k-d")) o.cfg.k_d = flag_values.cfg.k_d;
            if (sub->count("--video-length")) o.cfg.video_length = flag_values.cfg.video_length;
            if (sub->count("--proposals")) o.cfg.proposals = flag_values.cfg.proposals;
            if (sub->count("--num-classes")) o.cfg.num_classes = flag_values.cfg.num_classes;
            if (sub->count("--dim")) o.cfg.dim = flag_values.cfg.dim;
            if (sub->count("--heads")) o.cfg.heads = flag_values.cfg.heads;
            if (sub->count("--embed-dim")) o.cfg.embed_dim = flag_values.cfg.embed_dim;
            if (sub->count("--nms")) o.cfg.nms_threshold = flag_values.cfg.nms_threshold;
            if (sub->count("--seed")) o.cfg.seed = flag_values.cfg.seed;
            if (keep(r.input)) o.input = flag_values.input;
            if (keep(r.synthetic)) o.synthetic = flag_values.synthetic;
            if (sub->count("--out")) o.out_dir = flag_values.out_dir;
            if (sub->count("--params")) o.params_path = flag_values.params_path;
        }

        if (o.cfg.online && tau_explicit)
            throw UsageError("--tau describes the symmetric offline window and cannot be combined with --online");
        if (!o.input.empty() && !o.synthetic.empty())
            throw UsageError("--input and --synthetic are mutually exclusive");

        // Mode resolution: base forces zero memory; mega without memory IS the
        // base model, and resolves to it so equivalent runs write identical
        // manifests.
        if (o.mode == "base") {
            o.cfg.base_model = true;
            o.cfg.t_m = 0;
        } else if (o.cfg.t_m == 0) {
            o.mode = "base";
            o.cfg.base_model = true;
        }
        validate_config(o.cfg);

        if (o.command == "run") {
            if (o.input.empty() && o.synthetic.empty()) throw UsageError("run needs --input or --synthetic");
            return cmd_run(o);
        }
        if (o.command == "train") {
            if (o.synthetic.empty())
                throw UsageError("train needs --synthetic (ground truth comes from the scene model)");
            return cmd_train(o);
        }
        if (o.command == "gen") {
            if (o.synthetic.empty()) throw UsageError("gen needs --synthetic");
            return cmd_gen(o);
        }
        (void)run;
        (void)train;
        (void)analyze;
        (void)gen;
        return cmd_analyze(o);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ContractViolation& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
