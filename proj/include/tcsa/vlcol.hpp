#pragma once

#include <vector>

#include <torch/torch.h>

#include "tcsa/feature_pooling.hpp"

namespace tcsa::vlcol {

/// Per-class running averages of F_sem class features (detached history).
struct ClassFeatureMemory {
  torch::Tensor features;   // C x D
  std::vector<bool> flags;  // row c has been observed at least once

  ClassFeatureMemory() = default;
  ClassFeatureMemory(int64_t num_classes, int64_t dim, torch::Dtype dtype = torch::kFloat32);
  int64_t num_classes() const { return static_cast<int64_t>(flags.size()); }
};

/// f^c for every class present in labels_down: mean of F_sem over class pixels, pooled over the batch.
ClassMeans class_pixel_features(const torch::Tensor& f_sem, const torch::Tensor& labels_down, int64_t num_classes);

/// The rows that Sigma_p is built from this step:
/// lambda * stopgrad(memory[c]) + (1 - lambda) * f^c for previously observed classes, f^c otherwise.
/// Gradient flows only through f^c.
torch::Tensor blended_rows(const ClassFeatureMemory& mem, const ClassMeans& batch, double lambda);

/// Applies f_new = lambda * f_current + (1 - lambda) * f^c to present rows (detached); first
/// observations initialize the row. Throws ConfigError when lambda is outside [0, 1].
void memory_update(ClassFeatureMemory& mem, const ClassMeans& batch, double lambda);

/// Sample covariance between rows over the feature axis: (1/(D-1)) * Xc Xc^T, K x K.
/// Requires K >= 1 and D >= 2 (callers skip K < 2).
torch::Tensor covariance_matrix(const torch::Tensor& rows);

struct LossResult {
  torch::Tensor value;  // scalar; exactly 0 (no graph) when skipped
  bool skipped = false;
};

/// 1 - <a, b>_F / (|a|_F |b|_F); skipped (0) when either norm is zero.
LossResult covariance_cosine_loss(const torch::Tensor& sigma_p, const torch::Tensor& sigma_t);

/// Full VLCoL: Sigma_p from `pixel_rows` (K x D), Sigma_t from the t_class rows of `present`.
/// Skipped when K < 2.
LossResult vlcol_loss(const torch::Tensor& pixel_rows, const torch::Tensor& t_class, const std::vector<int64_t>& present);

}  // namespace tcsa::vlcol
