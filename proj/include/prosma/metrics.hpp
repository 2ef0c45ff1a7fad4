#pragma once

#include <string>
#include <vector>

#include "prosma/tensor.hpp"

namespace prosma {

struct ImageMetrics {
    std::string id;
    double iou = 0.0;
    double f1 = 0.0;
};

/// Per-image overlap metrics at a fixed threshold. For every image
/// F1 == 2*IoU/(1+IoU); both are 1 when prediction and mask are both empty.
struct MetricsReport {
    double mean_iou = 0.0;
    double mean_f1 = 0.0;
    double threshold = 0.5;
    std::vector<ImageMetrics> per_image;
};

/// prob and mask are [N,1,H,W]; prob entries in [0,1], mask binary.
/// ids (optional) label per_image entries; defaults to the image index.
MetricsReport compute_metrics(const Tensor& prob, const Tensor& mask,
                              const std::vector<std::string>& ids = {}, double threshold = 0.5);

std::string metrics_to_json(const MetricsReport& r);

}  // namespace prosma
