#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prosma/tensor.hpp"

namespace prosma {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second-moment buffers, one pair per parameter, in parameter order.
struct AdamState {
    std::vector<std::vector<double>> m, v;
    int64_t t = 0;
};

AdamState adam_init(const std::vector<std::pair<std::string, Tensor>>& params);

/// Standard bias-corrected Adam update, reading each parameter's grad buffer.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const AdamConfig& cfg);

}  // namespace prosma
