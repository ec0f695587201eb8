#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "json.hpp"
#include "mega/io.hpp"
#include "support/test_util.hpp"

using namespace mega;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("mega_io_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::vector<FrameProposals> sample_video(int frames, int boxes, int dim) {
    Rng rng(77);
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

void expect_data_error(const std::function<void()>& fn, const std::string& needle) {
    try {
        fn();
        FAIL("expected DataError mentioning ", needle);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
}

const std::string kManifest = R"({"mode":"test","seed":1})";

}  // namespace

TEST_CASE("proposals survive a write-read round trip bitwise") {
    TempDir dir;
    const std::string path = dir.file("video.jsonl");
    const std::vector<FrameProposals> video = sample_video(5, 4, 8);
    write_proposals_jsonl(path, video, kManifest);

    const std::vector<FrameProposals> back = read_proposals_jsonl(path);
    REQUIRE(back.size() == video.size());
    for (std::size_t f = 0; f < video.size(); ++f) {
        CHECK(back[f].frame_index == video[f].frame_index);
        REQUIRE(back[f].boxes.size() == video[f].boxes.size());
        for (std::size_t b = 0; b < video[f].boxes.size(); ++b) {
            const BoxFeature& x = video[f].boxes[b];
            const BoxFeature& y = back[f].boxes[b];
            CHECK(x.cx == y.cx);
            CHECK(x.cy == y.cy);
            CHECK(x.w == y.w);
            CHECK(x.h == y.h);
            CHECK(x.objectness == y.objectness);
            CHECK(x.semantic == y.semantic);
            CHECK(y.frame_index == back[f].frame_index);
        }
    }

    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(first.find("\"manifest\"") != std::string::npos);
    CHECK(first.find("\"test\"") != std::string::npos);
}

TEST_CASE("proposal reader rejects malformed input with line numbers") {
    TempDir dir;
    const std::string path = dir.file("bad.jsonl");

    expect_data_error([&] { read_proposals_jsonl(dir.file("missing.jsonl")); }, "missing.jsonl");

    write_text(path, R"({"frame": 1, "boxes": []})" "\n" "not json\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, ":2");

    write_text(path, R"({"boxes": []})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, "frame");

    write_text(path, R"({"frame": 1, "boxes": []})" "\n" R"({"frame": 3, "boxes": []})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, "out of order");

    write_text(path, R"({"frame": 1, "boxes": [{"cx":0.5,"cy":0.5,"w":0.1,"h":0.1,"feat":[1,2]}]})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, "objectness");

    write_text(path, R"({"frame": 1, "boxes": [{"cx":0.5,"cy":0.5,"w":0.1,"h":0.1,"objectness":0.5,"feat":[]}]})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, "feat");

    write_text(path,
               R"({"frame": 1, "boxes": [{"cx":0.5,"cy":0.5,"w":0.1,"h":0.1,"objectness":0.5,"feat":[1,2]}]})" "\n"
               R"({"frame": 2, "boxes": [{"cx":0.5,"cy":0.5,"w":0.1,"h":0.1,"objectness":0.5,"feat":[1,2,3]}]})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, ":2");

    write_text(path, R"({"frame": 1, "boxes": [{"cx":0.5,"cy":0.5,"w":-0.1,"h":0.1,"objectness":0.5,"feat":[1]}]})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, ":1");

    write_text(path, R"({"frame": 1, "boxes": []})" "\n" R"({"manifest": {}})" "\n");
    expect_data_error([&] { read_proposals_jsonl(path); }, "manifest");
}

TEST_CASE("proposal reader sorts boxes by objectness") {
    TempDir dir;
    const std::string path = dir.file("unsorted.jsonl");
    write_text(path,
               R"({"frame": 1, "boxes": [)"
               R"({"cx":0.3,"cy":0.3,"w":0.1,"h":0.1,"objectness":0.2,"feat":[1]},)"
               R"({"cx":0.7,"cy":0.7,"w":0.1,"h":0.1,"objectness":0.9,"feat":[2]}]})" "\n");
    const std::vector<FrameProposals> video = read_proposals_jsonl(path);
    REQUIRE(video.size() == 1);
    REQUIRE(video[0].boxes.size() == 2);
    CHECK(video[0].boxes[0].objectness == 0.9);
    CHECK(video[0].boxes[1].objectness == 0.2);
}

TEST_CASE("detection and stats writers embed the manifest") {
    TempDir dir;
    std::vector<std::vector<Detection>> dets(2);
    Detection d;
    d.frame_index = 2;
    d.class_id = 3;
    d.score = 0.75;
    d.box = BoxGeom{0.5, 0.25, 0.125, 0.0625};
    dets[1].push_back(d);

    const std::string dpath = dir.file("dets.jsonl");
    write_detections_jsonl(dpath, dets, kManifest);
    std::ifstream in(dpath);
    std::string line;
    std::getline(in, line);
    CHECK(line.find("\"manifest\"") != std::string::npos);
    std::getline(in, line);
    const nlohmann::json obj = nlohmann::json::parse(line);
    CHECK(obj["frame"] == 2);
    CHECK(obj["class"] == 3);
    CHECK(obj["score"] == 0.75);
    CHECK(obj["box"]["cx"] == 0.5);
    CHECK(obj["box"]["h"] == 0.0625);
    CHECK(!std::getline(in, line));

    std::vector<FrameStats> stats(2);
    stats[0].frame = 1;
    stats[0].local_rows = 10;
    stats[0].counters.attn_pairs = 40;
    stats[1].frame = 2;
    const std::string spath = dir.file("stats.csv");
    write_stats_csv(spath, stats, kManifest);
    std::ifstream sin(spath);
    std::getline(sin, line);
    CHECK(line.rfind("# manifest: ", 0) == 0);
    std::getline(sin, line);
    CHECK(line == "frame,local_rows,global_rows,memory_frames,memory_rows,detections,attn_pairs,value_mults,feature_updates");
    std::getline(sin, line);
    CHECK(line == "1,10,0,0,0,0,40,0,0");

    const std::string lpath = dir.file("loss.csv");
    write_loss_csv(lpath, {0.5, 0.25}, kManifest);
    std::ifstream lin(lpath);
    std::getline(lin, line);
    CHECK(line.rfind("# manifest: ", 0) == 0);
    std::getline(lin, line);
    CHECK(line == "step,loss");
    std::getline(lin, line);
    CHECK(line == "1,0.5");

    expect_data_error([&] { write_stats_csv(dir.file("x.csv"), stats, "not json"); }, "manifest");
}

TEST_CASE("identical inputs produce byte-identical output files") {
    TempDir dir;
    const std::vector<FrameProposals> video = sample_video(3, 3, 4);
    write_proposals_jsonl(dir.file("a.jsonl"), video, kManifest);
    write_proposals_jsonl(dir.file("b.jsonl"), video, kManifest);
    std::ifstream a(dir.file("a.jsonl")), b(dir.file("b.jsonl"));
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(!sa.str().empty());
}

TEST_CASE("parameters survive the file round trip bitwise") {
    TempDir dir;
    const std::string path = dir.file("params.json");
    const PipelineConfig cfg = desk_config();
    Rng rng(91);
    ModelParams params(cfg, rng);
    std::vector<Matrix> original;
    for (Param* p : params.param_list()) original.push_back(p->value);

    write_params(path, params, kManifest);
    for (Param* p : params.param_list()) p->value = Matrix(p->value.rows(), p->value.cols());
    read_params(path, params);

    const std::vector<Param*> plist = params.param_list();
    for (std::size_t i = 0; i < plist.size(); ++i) CHECK(bitwise_equal(original[i], plist[i]->value));
}

TEST_CASE("parameter reader rejects mismatched files") {
    TempDir dir;
    const std::string path = dir.file("params.json");
    const PipelineConfig cfg = desk_config();
    Rng rng(92);
    ModelParams params(cfg, rng);
    write_params(path, params, kManifest);

    PipelineConfig other = cfg;
    other.dim = 32;
    Rng rng2(93);
    ModelParams wrong(other, rng2);
    expect_data_error([&] { read_params(path, wrong); }, "shape");

    PipelineConfig fewer = cfg;
    fewer.n_l = 1;
    Rng rng3(94);
    ModelParams small(fewer, rng3);
    expect_data_error([&] { read_params(path, small); }, "tensors");

    write_text(path, R"({"format": "other", "params": []})");
    expect_data_error([&] { read_params(path, params); }, "format");

    write_text(path, "not json");
    expect_data_error([&] { read_params(path, params); }, "JSON");

    expect_data_error([&] { read_params(dir.file("absent.json"), params); }, "absent.json");
}

TEST_CASE("key-value config files parse with comments and precedence order") {
    TempDir dir;
    const std::string path = dir.file("run.cfg");
    write_text(path,
               "# comment line\n"
               "t_l = 7\n"
               "  tau=3   # trailing comment\n"
               "\n"
               "mode = mega\n"
               "t_l = 9\n");
    const auto pairs = read_key_values(path);
    REQUIRE(pairs.size() == 4);
    CHECK(pairs[0] == std::pair<std::string, std::string>{"t_l", "7"});
    CHECK(pairs[1] == std::pair<std::string, std::string>{"tau", "3"});
    CHECK(pairs[2] == std::pair<std::string, std::string>{"mode", "mega"});
    CHECK(pairs[3] == std::pair<std::string, std::string>{"t_l", "9"});

    write_text(path, "t_l 7\n");
    expect_data_error([&] { read_key_values(path); }, ":1");
    write_text(path, "= 7\n");
    expect_data_error([&] { read_key_values(path); }, "empty");
    expect_data_error([&] { read_key_values(dir.file("no.cfg")); }, "no.cfg");
}
