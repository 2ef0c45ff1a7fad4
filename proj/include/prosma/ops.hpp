#pragma once

#include "prosma/tensor.hpp"

namespace prosma {

// Elementwise binary ops. Either operand may broadcast against an
// [N,C,H,W] partner in one of the three layouts the network uses:
// [C] (per channel), [N,C] (per sample-channel), [N,1,H,W] (per pixel).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// Elementwise unary ops. Subgradients at the relu/abs/max kinks are 0.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sign(const Tensor& x);  // derivative 0 a.e.; output carries no grad path
Tensor abs(const Tensor& x);
Tensor max_scalar(const Tensor& x, double s);

/// [M,K] x [K,P] -> [M,P].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x:[N,Fin], w:[Fout,Fin], b:[Fout] (or undefined) -> [N,Fout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Full reduction to a one-element tensor.
Tensor sum(const Tensor& x);

double stable_sigmoid(double t);
double stable_softplus(double t);

/// Tracks proximity to non-smooth points (relu/abs/max kinks, pool ties,
/// soft-threshold boundaries) during a forward pass, for the finite-difference
/// harness's kink-exclusion rule. Off by default and free when off.
namespace kink {
void arm();
double disarm();  // returns the smallest margin seen since arm()
bool armed();
void note(double margin);
}  // namespace kink

}  // namespace prosma
