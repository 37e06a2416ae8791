#pragma once

#include <vector>

#include <torch/torch.h>

namespace tcsa {

/// Per-class means of a feature map under a label map.
struct ClassMeans {
  torch::Tensor means;           // K x D, one row per present class, ascending class order
  std::vector<int64_t> present;  // the K class indices
  torch::Tensor counts;          // K pixel counts
};

/// features: B x D x h x w, labels: B x h x w with values in [0, num_classes).
/// Classes with no pixel are omitted. Differentiable w.r.t. features.
ClassMeans masked_class_means(const torch::Tensor& features, const torch::Tensor& labels, int64_t num_classes);

}  // namespace tcsa
