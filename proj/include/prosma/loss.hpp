#pragma once

#include "prosma/tensor.hpp"

namespace prosma {

/// Binary cross entropy with logits, mean over every element, computed in
/// the log-sum-exp form so it stays finite for any finite logit.
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target);

/// Smoothed Dice loss: per sample 1 - (2*sum(p*y)+1)/(sum(p)+sum(y)+1),
/// averaged over the batch. probs are probabilities in [0,1].
Tensor dice_loss_mean(const Tensor& probs, const Tensor& target);

/// 0.5 * BCE + 0.5 * Dice(sigmoid(logits)). target must be binary.
Tensor dice_bce_loss(const Tensor& logits, const Tensor& mask, double bce_weight = 0.5,
                     double dice_weight = 0.5);

}  // namespace prosma
