#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prosma/tensor.hpp"

namespace prosma {

struct FdOptions {
    double step = 1e-5;
    double kink_band = 1e-4;          // trials whose forward pass gets this close
                                      // to a kink/tie are skipped, not judged
    int64_t max_coords_per_leaf = 0;  // 0 = every coordinate
    uint64_t coord_seed = 0;          // sampling seed when capped
};

struct FdOutcome {
    bool skipped = false;
    double max_rel_err = 0.0;
    int64_t coords = 0;
};

/// Central-difference check of one probe at the leaves' current values.
/// probe must be a pure function of the leaf values. Relative error is
/// |analytic - fd| / max(1, |fd|) per coordinate.
FdOutcome fd_check_once(const std::vector<Tensor>& leaves, const std::function<Tensor()>& probe,
                        const FdOptions& opt = {});

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int64_t coords = 0;
    int trials = 0;
    int skipped = 0;
};

/// Every registered op at random points, small shapes.
std::vector<GradCheckResult> gradcheck_ops(uint64_t seed, int trials = 3);

/// The composed gate (full variant) including theta/threshold gradients.
GradCheckResult gradcheck_gate(uint64_t seed, int trials = 4);

/// End-to-end network + loss on a tiny config ({4,8,16,32,64} channels,
/// 16x16 input), sampled coordinates across every parameter tensor.
GradCheckResult gradcheck_model(uint64_t seed);

}  // namespace prosma
