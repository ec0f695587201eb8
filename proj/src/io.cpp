#include "mega/io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mega {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, int line, const std::string& msg) {
    throw DataError(path + ":" + std::to_string(line) + ": " + msg);
}

json parse_manifest(const std::string& manifest_json) {
    json m = json::parse(manifest_json, nullptr, false);
    if (m.is_discarded() || !m.is_object()) throw DataError("manifest must be a JSON object");
    return m;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    return out;
}

double number_field(const json& obj, const char* key, const std::string& path, int line) {
    const auto it = obj.find(key);
    if (it == obj.end() || !it->is_number()) fail(path, line, std::string("box field '") + key + "' missing or not a number");
    return it->get<double>();
}

}  // namespace

std::vector<FrameProposals> read_proposals_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);

    std::vector<FrameProposals> video;
    std::string line;
    int line_no = 0;
    int feat_dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json obj = json::parse(line, nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) fail(path, line_no, "invalid JSON object");
        if (obj.contains("manifest")) {
            if (line_no == 1) continue;
            fail(path, line_no, "manifest line allowed only at the top of the file");
        }

        const auto frame_it = obj.find("frame");
        if (frame_it == obj.end() || !frame_it->is_number_integer())
            fail(path, line_no, "field 'frame' missing or not an integer");
        FrameProposals frame;
        frame.frame_index = frame_it->get<int>();
        const int expected = static_cast<int>(video.size()) + 1;
        if (frame.frame_index != expected)
            fail(path, line_no, "frame " + std::to_string(frame.frame_index) + " out of order, expected " +
                                    std::to_string(expected));

        const auto boxes_it = obj.find("boxes");
        if (boxes_it == obj.end() || !boxes_it->is_array()) fail(path, line_no, "field 'boxes' missing or not an array");
        for (const json& b : *boxes_it) {
            if (!b.is_object()) fail(path, line_no, "box entry is not an object");
            BoxFeature box;
            box.frame_index = frame.frame_index;
            box.cx = number_field(b, "cx", path, line_no);
            box.cy = number_field(b, "cy", path, line_no);
            box.w = number_field(b, "w", path, line_no);
            box.h = number_field(b, "h", path, line_no);
            box.objectness = number_field(b, "objectness", path, line_no);
            const auto feat_it = b.find("feat");
            if (feat_it == b.end() || !feat_it->is_array() || feat_it->empty())
                fail(path, line_no, "box field 'feat' missing or not a nonempty array");
            for (const json& x : *feat_it) {
                if (!x.is_number()) fail(path, line_no, "box field 'feat' holds a non-number");
                box.semantic.push_back(x.get<double>());
            }
            if (feat_dim == 0) feat_dim = static_cast<int>(box.semantic.size());
            if (static_cast<int>(box.semantic.size()) != feat_dim)
                fail(path, line_no, "feat dimension " + std::to_string(box.semantic.size()) +
                                        " differs from earlier dimension " + std::to_string(feat_dim));
            try {
                validate_box(box);
            } catch (const ContractViolation& e) {
                fail(path, line_no, e.what());
            }
            frame.boxes.push_back(std::move(box));
        }
        normalize_frame(frame);
        video.push_back(std::move(frame));
    }
    return video;
}

void write_proposals_jsonl(const std::string& path, const std::vector<FrameProposals>& video,
                           const std::string& manifest_json) {
    std::ofstream out = open_out(path);
    out << json{{"manifest", parse_manifest(manifest_json)}}.dump() << '\n';
    for (const FrameProposals& frame : video) {
        json boxes = json::array();
        for (const BoxFeature& b : frame.boxes)
            boxes.push_back({{"cx", b.cx},
                             {"cy", b.cy},
                             {"w", b.w},
                             {"h", b.h},
                             {"objectness", b.objectness},
                             {"feat", b.semantic}});
        out << json{{"frame", frame.frame_index}, {"boxes", std::move(boxes)}}.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path);
}

void write_detections_jsonl(const std::string& path, const std::vector<std::vector<Detection>>& detections,
                            const std::string& manifest_json) {
    std::ofstream out = open_out(path);
    out << json{{"manifest", parse_manifest(manifest_json)}}.dump() << '\n';
    for (const std::vector<Detection>& frame : detections)
        for (const Detection& d : frame)
            out << json{{"frame", d.frame_index},
                        {"class", d.class_id},
                        {"score", d.score},
                        {"box", {{"cx", d.box.cx}, {"cy", d.box.cy}, {"w", d.box.w}, {"h", d.box.h}}}}
                       .dump()
                << '\n';
    if (!out) throw DataError("write failed for " + path);
}

void write_stats_csv(const std::string& path, const std::vector<FrameStats>& stats,
                     const std::string& manifest_json) {
    std::ofstream out = open_out(path);
    out << "# manifest: " << parse_manifest(manifest_json).dump() << '\n';
    out << "frame,local_rows,global_rows,memory_frames,memory_rows,detections,attn_pairs,value_mults,feature_updates\n";
    for (const FrameStats& s : stats)
        out << s.frame << ',' << s.local_rows << ',' << s.global_rows << ',' << s.memory_frames << ','
            << s.memory_rows << ',' << s.detections << ',' << s.counters.attn_pairs << ',' << s.counters.value_mults
            << ',' << s.counters.feature_updates << '\n';
    if (!out) throw DataError("write failed for " + path);
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses, const std::string& manifest_json) {
    std::ofstream out = open_out(path);
    out << "# manifest: " << parse_manifest(manifest_json).dump() << '\n';
    out << "step,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << json(losses[i]).dump() << '\n';
    if (!out) throw DataError("write failed for " + path);
}

void write_params(const std::string& path, ModelParams& params, const std::string& manifest_json) {
    json list = json::array();
    for (const Param* p : params.param_list()) {
        const std::span<const double> data = p->value.data();
        list.push_back({{"name", p->name},
                        {"rows", p->value.rows()},
                        {"cols", p->value.cols()},
                        {"data", std::vector<double>(data.begin(), data.end())}});
    }
    std::ofstream out = open_out(path);
    out << json{{"format", "mega-params-v1"}, {"manifest", parse_manifest(manifest_json)}, {"params", std::move(list)}}
               .dump()
        << '\n';
    if (!out) throw DataError("write failed for " + path);
}

void read_params(const std::string& path, ModelParams& params) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json doc = json::parse(buf.str(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw DataError(path + ": not a JSON object");
    if (doc.value("format", "") != std::string("mega-params-v1"))
        throw DataError(path + ": unsupported format tag '" + doc.value("format", "") + "'");
    const auto list_it = doc.find("params");
    if (list_it == doc.end() || !list_it->is_array()) throw DataError(path + ": field 'params' missing");

    const std::vector<Param*> dest = params.param_list();
    if (list_it->size() != dest.size())
        throw DataError(path + ": file holds " + std::to_string(list_it->size()) + " tensors, model needs " +
                        std::to_string(dest.size()));
    for (std::size_t i = 0; i < dest.size(); ++i) {
        const json& entry = (*list_it)[i];
        Param* p = dest[i];
        if (!entry.is_object() || entry.value("name", "") != p->name)
            throw DataError(path + ": tensor " + std::to_string(i) + " name '" + entry.value("name", "") +
                            "' does not match model parameter '" + p->name + "'");
        if (entry.value("rows", -1) != p->value.rows() || entry.value("cols", -1) != p->value.cols())
            throw DataError(path + ": tensor '" + p->name + "' shape mismatch");
        const auto data_it = entry.find("data");
        if (data_it == entry.end() || !data_it->is_array() || data_it->size() != p->value.size())
            throw DataError(path + ": tensor '" + p->name + "' data length mismatch");
        for (std::size_t j = 0; j < p->value.size(); ++j) {
            const json& x = (*data_it)[j];
            if (!x.is_number()) throw DataError(path + ": tensor '" + p->name + "' holds a non-number");
            p->value[j] = x.get<double>();
        }
    }
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int line_no = 0;
    const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) fail(path, line_no, "expected 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) fail(path, line_no, "empty key or value");
        out.emplace_back(key, value);
    }
    return out;
}

}  // namespace mega
