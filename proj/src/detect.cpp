#include "mega/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mega {

double iou(const BoxGeom& a, const BoxGeom& b) {
    const double ax0 = a.cx - a.w / 2.0, ax1 = a.cx + a.w / 2.0;
    const double ay0 = a.cy - a.h / 2.0, ay1 = a.cy + a.h / 2.0;
    const double bx0 = b.cx - b.w / 2.0, bx1 = b.cx + b.w / 2.0;
    const double by0 = b.cy - b.h / 2.0, by1 = b.cy + b.h / 2.0;
    const double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
    const double ih = std::min(ay1, by1) - std::max(ay0, by0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

BoxGeom apply_deltas(const BoxGeom& box, double dcx, double dcy, double dlog_w, double dlog_h) {
    BoxGeom out;
    out.cx = box.cx + dcx * box.w;
    out.cy = box.cy + dcy * box.h;
    out.w = box.w * std::exp(dlog_w);
    out.h = box.h * std::exp(dlog_h);
    return out;
}

HeadParams::HeadParams(int dim, int num_classes, Rng& rng) {
    if (dim <= 0 || num_classes < 1) throw ContractViolation("HeadParams: bad dimensions");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    auto init = [&](int rows, int cols) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
        return m;
    };
    cls_w = Param("head.cls_w", init(num_classes + 1, dim));
    cls_b = Param("head.cls_b", Matrix(1, num_classes + 1));
    reg_w = Param("head.reg_w", init(4, dim));
    reg_b = Param("head.reg_b", Matrix(1, 4));
}

std::vector<Param*> HeadParams::param_list() { return {&cls_w, &cls_b, &reg_w, &reg_b}; }

HeadOutput head_forward(const Var& features, HeadParams& params, Tape* tape) {
    HeadOutput out;
    out.cls_logits = linear(features, lift(tape, params.cls_w), lift(tape, params.cls_b), Activation::none);
    out.deltas = linear(features, lift(tape, params.reg_w), lift(tape, params.reg_b), Activation::none);
    return out;
}

std::vector<Detection> decode_detections(const Matrix& cls_logits, const Matrix& deltas,
                                         const std::vector<BoxFeature>& boxes, int num_classes) {
    if (cls_logits.rows() != static_cast<int>(boxes.size()) || deltas.rows() != cls_logits.rows())
        throw ContractViolation("decode_detections: row mismatch");
    if (cls_logits.cols() != num_classes + 1 || deltas.cols() != 4)
        throw ContractViolation("decode_detections: column mismatch");
    std::vector<Detection> out;
    for (int i = 0; i < cls_logits.rows(); ++i) {
        const std::vector<double> probs = softmax(cls_logits.row(i));
        int label = 0;
        for (int c = 1; c <= num_classes; ++c)
            if (probs[static_cast<std::size_t>(c)] > probs[static_cast<std::size_t>(label)]) label = c;
        if (label == 0) continue;
        Detection d;
        d.frame_index = boxes[static_cast<std::size_t>(i)].frame_index;
        d.class_id = label;
        d.score = probs[static_cast<std::size_t>(label)];
        const BoxGeom src{boxes[static_cast<std::size_t>(i)].cx, boxes[static_cast<std::size_t>(i)].cy,
                          boxes[static_cast<std::size_t>(i)].w, boxes[static_cast<std::size_t>(i)].h};
        d.box = apply_deltas(src, deltas.at(i, 0), deltas.at(i, 1), deltas.at(i, 2), deltas.at(i, 3));
        out.push_back(d);
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[static_cast<std::size_t>(a)].score > dets[static_cast<std::size_t>(b)].score;
    });
    std::vector<char> suppressed(dets.size(), 0);
    std::vector<Detection> out;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        const int i = order[oi];
        if (suppressed[static_cast<std::size_t>(i)]) continue;
        out.push_back(dets[static_cast<std::size_t>(i)]);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            const int j = order[oj];
            if (suppressed[static_cast<std::size_t>(j)]) continue;
            if (dets[static_cast<std::size_t>(j)].class_id != dets[static_cast<std::size_t>(i)].class_id) continue;
            if (iou(dets[static_cast<std::size_t>(i)].box, dets[static_cast<std::size_t>(j)].box) > iou_threshold)
                suppressed[static_cast<std::size_t>(j)] = 1;
        }
    }
    return out;
}

}  // namespace mega
