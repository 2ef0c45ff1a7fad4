#include "prosma/train.hpp"

#include <algorithm>
#include <cstring>

#include "prosma/loss.hpp"
#include "prosma/ops.hpp"
#include "prosma/rng.hpp"

namespace prosma {

void stack_batch(const Dataset& data, const std::vector<int>& indices, size_t first, size_t count,
                 Tensor& images, Tensor& masks) {
    const Sample& s0 = data.samples[static_cast<size_t>(indices[first])];
    int64_t h = s0.image.dim(1), w = s0.image.dim(2);
    images = Tensor::zeros({static_cast<int64_t>(count), 1, h, w});
    masks = Tensor::zeros({static_cast<int64_t>(count), 1, h, w});
    for (size_t b = 0; b < count; ++b) {
        const Sample& s = data.samples[static_cast<size_t>(indices[first + b])];
        if (s.image.dim(1) != h || s.image.dim(2) != w) {
            throw ContractError("stack_batch: corpus images have mixed sizes");
        }
        std::memcpy(images.data() + static_cast<int64_t>(b) * h * w, s.image.data(),
                    sizeof(double) * static_cast<size_t>(h * w));
        std::memcpy(masks.data() + static_cast<int64_t>(b) * h * w, s.mask.data(),
                    sizeof(double) * static_cast<size_t>(h * w));
    }
}

MetricsReport evaluate(const Model& model, const Dataset& data, const std::vector<int>& indices,
                       double threshold, int batch_size) {
    NoGradGuard no_grad;
    MetricsReport total;
    total.threshold = threshold;
    for (size_t first = 0; first < indices.size(); first += static_cast<size_t>(batch_size)) {
        size_t count = std::min(static_cast<size_t>(batch_size), indices.size() - first);
        Tensor images, masks;
        stack_batch(data, indices, first, count, images, masks);
        Tensor probs = sigmoid(forward(model, images).logits);
        std::vector<std::string> ids;
        for (size_t b = 0; b < count; ++b) {
            ids.push_back(data.samples[static_cast<size_t>(indices[first + b])].id);
        }
        MetricsReport part = compute_metrics(probs, masks, ids, threshold);
        total.per_image.insert(total.per_image.end(), part.per_image.begin(),
                               part.per_image.end());
    }
    for (const ImageMetrics& im : total.per_image) {
        total.mean_iou += im.iou;
        total.mean_f1 += im.f1;
    }
    if (!total.per_image.empty()) {
        total.mean_iou /= static_cast<double>(total.per_image.size());
        total.mean_f1 /= static_cast<double>(total.per_image.size());
    }
    return total;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg) {
    if (data.train.empty() || data.val.empty()) {
        throw ContractError("train: dataset needs non-empty train and val splits");
    }
    if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
        throw ContractError("train: epochs/batch_size must be >= 1 and lr > 0");
    }

    AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
    AdamState adam = adam_init(model.named);
    Rng shuffle_rng(cfg.seed);

    TrainResult result;
    result.best_val_f1 = -1.0;
    std::vector<int> order = data.train;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t first = 0; first < order.size(); first += static_cast<size_t>(cfg.batch_size)) {
            size_t count = std::min(static_cast<size_t>(cfg.batch_size), order.size() - first);
            Tensor images, masks;
            stack_batch(data, order, first, count, images, masks);

            Tape::active().reset();
            for (auto& [name, p] : model.named) {
                p.zero_grad();
            }
            Tensor loss = dice_bce_loss(forward(model, images).logits, masks, cfg.bce_weight,
                                        cfg.dice_weight);
            Tape::active().backward(loss);
            adam_step(model.named, adam, adam_cfg);
            epoch_loss += loss.item() * static_cast<double>(count);
            Tape::active().reset();
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));

        MetricsReport val = evaluate(model, data, data.val);
        if (val.mean_f1 > result.best_val_f1) {
            result.best_val_f1 = val.mean_f1;
            result.best_epoch = epoch;
            result.best_model = clone_model(model);
        }
        result.val_reports.push_back(std::move(val));
    }
    return result;
}

}  // namespace prosma
