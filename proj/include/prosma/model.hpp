#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prosma/gate.hpp"
#include "prosma/nn_ops.hpp"
#include "prosma/tensor.hpp"

namespace prosma {

double softplus_inverse(double y);

/// Encoder-decoder segmentation network with gated skips: `levels` resolution
/// stages (max-pool down, bilinear+conv up), residual blocks throughout, and
/// one logit channel out. Channel widths double per level from base_channels.
struct ModelConfig {
    int in_channels = 1;
    int levels = 5;
    int base_channels = 16;
    GateVariant gate_variant = GateVariant::Full;
    std::vector<int> dilations = {1, 2, 4};
    int latent_min = 8;      // gate latent width Ca = max(Cx/2, latent_min)
    int mlp_reduction = 4;   // channel-gate hidden width = max(Cg/4, 4)
    double theta_init = softplus_inverse(0.05);

    int64_t channels_at(int level) const;  // level 0 = full resolution
    int64_t downsample_factor() const;     // 2^(levels-1)
};

/// Structured parameters plus a stable name map. Decoder-side arrays are
/// ordered deepest stage first (index 0 gates the lowest-resolution skip).
struct Model {
    ModelConfig config;
    std::vector<ResBlockParams> encoder;
    ResBlockParams bottleneck;
    std::vector<Conv2dParams> up;
    std::vector<GateParams> gate;
    std::vector<ResBlockParams> decoder;
    Conv2dParams head;

    /// Every learnable tensor exactly once, in declaration order.
    std::vector<std::pair<std::string, Tensor>> named;

    int64_t parameter_count() const;
    Tensor find(const std::string& name) const;  // throws if absent
};

/// Allocates the parameter set, zero-filled (used by the checkpoint loader).
Model build_model(const ModelConfig& config);

/// He-uniform fan-in init of weights, zero biases, theta = theta_init.
/// Fully determined by (config, seed).
Model init_model(const ModelConfig& config, uint64_t seed);

/// Deep copy (values only; gradients are not copied).
Model clone_model(const Model& m);

/// Copies values between models of identical structure.
void copy_params(const Model& src, Model& dst);

struct ForwardResult {
    Tensor logits;                  // [N,1,H,W], raw scores (sigmoid is applied by callers)
    std::vector<GateTrace> traces;  // one per decoder stage, deepest first
};

/// image [N,in_channels,H,W]; H and W must be divisible by 2^(levels-1).
ForwardResult forward(const Model& m, const Tensor& image);

}  // namespace prosma
