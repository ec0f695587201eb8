#pragma once

#include <vector>

#include "mega/detect.hpp"

namespace mega {

struct GroundTruthBox {
    int class_id = 0;  // 1..num_classes
    BoxGeom box;
};

// Average precision for one class over a whole video: detections ranked by
// descending score, greedily matched to the highest-IoU unmatched ground
// truth in their frame (match requires IoU >= iou_threshold), all-points
// interpolated area under the precision-recall curve. Returns -1 when the
// class has no ground truth anywhere.
double average_precision(const std::vector<std::vector<Detection>>& detections,
                         const std::vector<std::vector<GroundTruthBox>>& truth, int class_id, double iou_threshold);

// Mean of average_precision over the classes that have ground truth.
double mean_average_precision(const std::vector<std::vector<Detection>>& detections,
                              const std::vector<std::vector<GroundTruthBox>>& truth, int num_classes,
                              double iou_threshold);

}  // namespace mega
