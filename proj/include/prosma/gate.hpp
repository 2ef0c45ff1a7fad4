#pragma once

#include <string>
#include <vector>

#include "prosma/nn_ops.hpp"
#include "prosma/tensor.hpp"

namespace prosma {

/// Skip-gating variants. Full = spatial sparse mask + channel gate;
/// Dense = attention-gate-style sigmoid mask (no sparsification);
/// Plain = the skip passes through untouched.
enum class GateVariant { Full, SpatialOnly, ChannelOnly, Plain, Dense };

GateVariant parse_variant(const std::string& name);  // full|ss-only|cg-only|plain|dense
std::string variant_name(GateVariant v);

/// Learnable pieces of one gate. Which tensors are defined depends on the
/// variant; undefined tensors are simply absent from the model's name map.
struct GateParams {
    Tensor wx;                   // [Ca,Cx,1,1], no bias
    Tensor wg;                   // [Ca,Cg,1,1], no bias
    std::vector<Tensor> dw;      // per dilation: [Ca,1,3,3], no bias
    std::vector<int> dilations;
    Tensor fuse;                 // [Ca, m*Ca, 1, 1], no bias
    Tensor theta;                // [Ca]; per-channel threshold = softplus(theta)
    Tensor psi_w;                // [1,Ca,1,1]
    Tensor psi_b;                // [1]
    Tensor mlp_w1, mlp_b1;       // [hidden,Cg], [hidden]
    Tensor mlp_w2, mlp_b2;       // [Cx,hidden], [Cx]
};

/// Intermediates of one gate application. Undefined tensors mean the variant
/// does not compute that quantity; plain/cg-only report an all-ones psi_mask
/// and plain/ss-only an all-ones channel_gate.
struct GateTrace {
    Tensor q, k, v, u;
    Tensor lambda;                                // [Ca]
    Tensor z_star;
    Tensor psi_mask;                              // [N,1,H,W]
    Tensor channel_gate;                          // [N,Cx]
    std::vector<double> zero_fraction_per_channel;  // from z_star; empty if no prox ran
    Tensor output;
};

/// Per-channel soft-thresholding z = sign(u) * max(|u| - lambda_c, 0).
/// Entries at or below the threshold come out as literal 0.0.
/// lambda is [C] matched to dim 1 of u, or a single element applied uniformly;
/// entries must be >= 0. Subgradients at |u| = lambda are 0 for both inputs.
Tensor soft_threshold(const Tensor& u, const Tensor& lambda);

/// u = fuse(concat_i dw_i(relu(wx*x + wg*g))), the multi-scale compatibility
/// field. Fills q/k/v/u on the trace when given.
Tensor compatibility_field(const Tensor& x, const Tensor& g, const GateParams& p,
                           GateTrace* trace = nullptr);

/// psi = sigmoid(psi_conv(z_star)), one channel, entries in (0,1).
Tensor spatial_mask(const Tensor& z_star, const GateParams& p);

/// c = sigmoid(mlp(gap(g))), entries in (0,1), dims [N,Cx].
Tensor channel_gate(const Tensor& g, const GateParams& p);

/// The full skip operator: variant-dependent combination of x with the
/// spatial mask and channel gate. x and g must be spatially aligned.
Tensor prosma_gate(const Tensor& x, const Tensor& g, const GateParams& p, GateVariant variant,
                   GateTrace* trace = nullptr);

/// Fraction of exactly-zero entries per channel of z_star.
std::vector<double> zero_fraction_per_channel(const Tensor& z_star);

}  // namespace prosma
