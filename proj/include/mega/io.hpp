#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mega/pipeline.hpp"

namespace mega {

// Proposal stream format, one JSON object per line:
//   {"frame": t, "boxes": [{"cx","cy","w","h","objectness","feat":[d floats]}]}
// Frames must be contiguous starting at 1 (the pipeline addresses sources by
// position). A leading {"manifest": ...} line is skipped, so generated files
// can be fed straight back in. Boxes are normalized (objectness-sorted,
// invariants checked) on read. All failures throw DataError carrying the path
// and 1-based line number.
std::vector<FrameProposals> read_proposals_jsonl(const std::string& path);

// manifest_json must be a single-line JSON object; it is embedded as the
// first line / leading comment of every output file.
void write_proposals_jsonl(const std::string& path, const std::vector<FrameProposals>& video,
                           const std::string& manifest_json);

// One line per detection: {"frame", "class", "score", "box": {cx,cy,w,h}}.
void write_detections_jsonl(const std::string& path, const std::vector<std::vector<Detection>>& detections,
                            const std::string& manifest_json);

// Columns: frame, local_rows, global_rows, memory_frames, memory_rows,
// detections, attn_pairs, value_mults, feature_updates.
void write_stats_csv(const std::string& path, const std::vector<FrameStats>& stats,
                     const std::string& manifest_json);

// Columns: step, loss.
void write_loss_csv(const std::string& path, const std::vector<double>& losses, const std::string& manifest_json);

// Parameter file: a single JSON object
//   {"format": "mega-params-v1", "manifest": {...},
//    "params": [{"name", "rows", "cols", "data": [row-major floats]}, ...]}
// Doubles survive the text round trip bitwise. read_params requires the
// file's names and shapes to match params exactly, in order.
void write_params(const std::string& path, ModelParams& params, const std::string& manifest_json);
void read_params(const std::string& path, ModelParams& params);

// Flat key-value config text: one `key = value` per line, '#' comments,
// blank lines ignored. Returns pairs in file order; later occurrences of a
// key are kept (the consumer decides precedence).
std::vector<std::pair<std::string, std::string>> read_key_values(const std::string& path);

}  // namespace mega
