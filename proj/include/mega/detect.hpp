#pragma once

#include <vector>

#include "mega/numerics.hpp"
#include "mega/relation.hpp"

namespace mega {

struct BoxGeom {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
};

// Intersection over union of two axis-aligned center-format boxes.
double iou(const BoxGeom& a, const BoxGeom& b);

// Applies (dcx, dcy, dlog_w, dlog_h) regression deltas to a box.
BoxGeom apply_deltas(const BoxGeom& box, double dcx, double dcy, double dlog_w, double dlog_h);

struct Detection {
    int frame_index = 0;
    int class_id = 0;  // 1..num_classes; 0 (background) never appears in outputs
    double score = 0.0;
    BoxGeom box;
};

// Linear classification and box-regression head over aggregated box features.
struct HeadParams {
    Param cls_w;  // (num_classes + 1) x d, class 0 is background
    Param cls_b;  // 1 x (num_classes + 1)
    Param reg_w;  // 4 x d
    Param reg_b;  // 1 x 4

    HeadParams() = default;
    HeadParams(int dim, int num_classes, Rng& rng);
    std::vector<Param*> param_list();
};

struct HeadOutput {
    Var cls_logits;  // n x (num_classes + 1)
    Var deltas;      // n x 4
};
HeadOutput head_forward(const Var& features, HeadParams& params, Tape* tape);

// Turns head outputs into detections: softmax over classes, argmax label
// (background dropped), deltas applied to the proposal geometry.
std::vector<Detection> decode_detections(const Matrix& cls_logits, const Matrix& deltas,
                                         const std::vector<BoxFeature>& boxes, int num_classes);

// Greedy per-class suppression by descending score; ties keep the earlier
// list position.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

}  // namespace mega
