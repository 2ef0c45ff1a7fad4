#include "prosma/metrics.hpp"

#include <json.hpp>

namespace prosma {

MetricsReport compute_metrics(const Tensor& prob, const Tensor& mask,
                              const std::vector<std::string>& ids, double threshold) {
    if (prob.rank() != 4 || prob.dims() != mask.dims()) {
        throw ShapeError("compute_metrics: prob and mask must be matching [N,1,H,W]");
    }
    int64_t n = prob.dim(0);
    int64_t per = prob.size() / n;
    if (!ids.empty() && static_cast<int64_t>(ids.size()) != n) {
        throw ContractError("compute_metrics: ids count does not match batch");
    }

    MetricsReport r;
    r.threshold = threshold;
    const double* pv = prob.data();
    const double* mv = mask.data();
    for (int64_t s = 0; s < n; ++s) {
        int64_t tp = 0, fp = 0, fn = 0;
        const double* p = pv + s * per;
        const double* m = mv + s * per;
        for (int64_t i = 0; i < per; ++i) {
            bool pred = p[i] > threshold;
            bool truth = m[i] != 0.0;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
        }
        ImageMetrics im;
        im.id = ids.empty() ? std::to_string(s) : ids[static_cast<size_t>(s)];
        if (tp + fp + fn == 0) {
            im.iou = im.f1 = 1.0;  // both empty
        } else {
            im.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            im.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        }
        r.mean_iou += im.iou;
        r.mean_f1 += im.f1;
        r.per_image.push_back(std::move(im));
    }
    if (n > 0) {
        r.mean_iou /= static_cast<double>(n);
        r.mean_f1 /= static_cast<double>(n);
    }
    return r;
}

std::string metrics_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["mean_iou"] = r.mean_iou;
    j["mean_f1"] = r.mean_f1;
    j["threshold"] = r.threshold;
    j["per_image"] = nlohmann::json::array();
    for (const ImageMetrics& im : r.per_image) {
        j["per_image"].push_back({{"id", im.id}, {"iou", im.iou}, {"f1", im.f1}});
    }
    return j.dump(2) + "\n";
}

}  // namespace prosma
