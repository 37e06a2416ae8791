#pragma once

#include <string>

#include <torch/torch.h>

#include "tcsa/model.hpp"

namespace tcsa::gradcam {

/// Class activation heatmap for one image.
///
/// The class score is the sum of class-c logits over pixels predicted as c (all pixels when none
/// is). Channel weights are the spatially averaged gradients of that score at `layer`; the map is
/// ReLU(sum_k w_k A_k), bilinearly upsampled to H x W and divided by its maximum. A map without
/// positive evidence is returned as all zeros.
///
/// image: 1 x H x W or 1 x 1 x H x W. layer: one of model->gradcam_layers(); anything else throws
/// ConfigError listing the options.
torch::Tensor heatmap(SegmentationModel& model, const torch::Tensor& image, const torch::Tensor& text_embeddings,
                      int64_t target_class, const std::string& layer);

/// Fraction of heatmap mass inside `region` (H x W bool); -1 when the map has no mass.
double mass_fraction(const torch::Tensor& heatmap, const torch::Tensor& region);

/// Binary dilation with a (2r+1) x (2r+1) square structuring element.
torch::Tensor dilate(const torch::Tensor& mask, int64_t radius);

}  // namespace tcsa::gradcam
