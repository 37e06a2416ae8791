#pragma once

#include <torch/torch.h>

namespace tcsa::losses {

inline constexpr double kLogClamp = 1e-12;
inline constexpr double kDiceSmooth = 1e-5;

/// Mean over all pixels of -log P[y], log clamped at 1e-12.
/// probs: B x C x H x W (normalized over C), labels: B x H x W. Throws ConfigError on bad labels.
torch::Tensor ce_loss(const torch::Tensor& probs, const torch::Tensor& labels);

/// Soft Dice loss averaged over all C classes (background included), sums pooled over the batch.
torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& labels);

/// ce_loss + dice_loss.
torch::Tensor seg_loss(const torch::Tensor& probs, const torch::Tensor& labels);

}  // namespace tcsa::losses
