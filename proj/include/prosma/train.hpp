#pragma once

#include <cstdint>
#include <vector>

#include "prosma/metrics.hpp"
#include "prosma/model.hpp"
#include "prosma/optim.hpp"
#include "prosma/synth.hpp"

namespace prosma {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 4;
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double bce_weight = 0.5, dice_weight = 0.5;
    uint64_t seed = 1;  // drives the per-epoch shuffles
};

struct TrainResult {
    Model best_model;                        // parameters at the best-val-F1 epoch
    int best_epoch = -1;                     // 0-based
    double best_val_f1 = 0.0;
    std::vector<double> loss_curve;          // mean train loss per epoch
    std::vector<MetricsReport> val_reports;  // one per epoch
};

/// Deterministic mini-batch training. The model is updated in place; the
/// returned best_model is a snapshot of the best validation-F1 epoch
/// (earliest epoch wins ties).
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg);

/// Forward + sigmoid + metrics over the given sample indices (no recording).
MetricsReport evaluate(const Model& model, const Dataset& data, const std::vector<int>& indices,
                       double threshold = 0.5, int batch_size = 8);

/// Stacks dataset samples into [B,1,H,W] image/mask tensors.
void stack_batch(const Dataset& data, const std::vector<int>& indices, size_t first, size_t count,
                 Tensor& images, Tensor& masks);

}  // namespace prosma
