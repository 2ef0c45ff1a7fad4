#pragma once

#include "prosma/ops.hpp"
#include "prosma/tensor.hpp"

namespace prosma {

/// Stride-1 cross-correlation with zero padding.
/// weight [C_out, C_in/groups, kH, kW], bias [C_out] or undefined.
struct Conv2dParams {
    Tensor weight;
    Tensor bias;
    int dilation = 1;
    int padding = 0;
    int groups = 1;
};

/// x [N,C_in,H,W] -> [N,C_out,H',W'] with H' = H + 2p - d*(kH-1).
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

/// Per-channel 3x3 convolution, padding = dilation (spatial size preserved).
/// kernel [C,1,3,3].
Tensor depthwise_dilated_conv(const Tensor& x, const Tensor& kernel, int dilation);

/// 2x2 window max, stride 2; gradient routes to the first argmax in
/// row-major window order. H and W must be even.
Tensor maxpool2(const Tensor& x);

/// x2 bilinear upsampling, half-pixel centers: src = (dst + 0.5)/2 - 0.5,
/// clamped to [0, H-1]. Linear, exact transpose backward.
Tensor bilinear_up2(const Tensor& x);

/// Global average pool, [N,C,H,W] -> [N,C].
Tensor gap(const Tensor& x);

/// Channel concatenation, a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// y = relu(conv3x3(relu(conv3x3(x))) + shortcut(x)); shortcut is identity
/// when channel counts match, otherwise the 1x1 proj. No normalization.
struct ResBlockParams {
    Conv2dParams conv1;
    Conv2dParams conv2;
    Conv2dParams proj;  // weight undefined => identity shortcut
};

Tensor res_block(const Tensor& x, const ResBlockParams& p);

}  // namespace prosma
