#include "mega/eval.hpp"

#include <algorithm>
#include <numeric>

namespace mega {

double average_precision(const std::vector<std::vector<Detection>>& detections,
                         const std::vector<std::vector<GroundTruthBox>>& truth, int class_id, double iou_threshold) {
    if (detections.size() != truth.size())
        throw ContractViolation("average_precision: detections cover " + std::to_string(detections.size()) +
                                " frames, truth " + std::to_string(truth.size()));

    struct Ranked {
        double score;
        int frame;  // 0-based
        BoxGeom box;
    };
    std::vector<Ranked> ranked;
    int total_truth = 0;
    for (std::size_t f = 0; f < truth.size(); ++f) {
        for (const GroundTruthBox& g : truth[f])
            if (g.class_id == class_id) ++total_truth;
        for (const Detection& d : detections[f])
            if (d.class_id == class_id) ranked.push_back(Ranked{d.score, static_cast<int>(f), d.box});
    }
    if (total_truth == 0) return -1.0;
    if (ranked.empty()) return 0.0;

    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

    std::vector<std::vector<char>> used(truth.size());
    for (std::size_t f = 0; f < truth.size(); ++f) used[f].assign(truth[f].size(), 0);

    std::vector<char> is_tp;
    is_tp.reserve(ranked.size());
    for (const Ranked& r : ranked) {
        const std::vector<GroundTruthBox>& gts = truth[static_cast<std::size_t>(r.frame)];
        int best = -1;
        double best_v = -1.0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].class_id != class_id || used[static_cast<std::size_t>(r.frame)][g]) continue;
            const double v = iou(r.box, gts[g].box);
            if (v > best_v) {
                best = static_cast<int>(g);
                best_v = v;
            }
        }
        if (best >= 0 && best_v >= iou_threshold) {
            used[static_cast<std::size_t>(r.frame)][static_cast<std::size_t>(best)] = 1;
            is_tp.push_back(1);
        } else {
            is_tp.push_back(0);
        }
    }

    // Precision at each rank, then the all-points interpolated area.
    std::vector<double> precision(is_tp.size());
    std::vector<double> recall(is_tp.size());
    int tp = 0;
    for (std::size_t i = 0; i < is_tp.size(); ++i) {
        tp += is_tp[i];
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / total_truth;
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

double mean_average_precision(const std::vector<std::vector<Detection>>& detections,
                              const std::vector<std::vector<GroundTruthBox>>& truth, int num_classes,
                              double iou_threshold) {
    double sum = 0.0;
    int counted = 0;
    for (int c = 1; c <= num_classes; ++c) {
        const double ap = average_precision(detections, truth, c, iou_threshold);
        if (ap >= 0.0) {
            sum += ap;
            ++counted;
        }
    }
    if (counted == 0) throw ContractViolation("mean_average_precision: no class has ground truth");
    return sum / counted;
}

}  // namespace mega
