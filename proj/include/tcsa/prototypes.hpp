#pragma once

#include <vector>

#include <torch/torch.h>

#include "tcsa/feature_pooling.hpp"

namespace tcsa::proto {

enum class Domain { Source, Target };

/// Per-pixel argmax over classes; ties go to the lowest class index.
/// With threshold > 0, pixels whose max probability is below it get `ignore_index`.
torch::Tensor pseudo_labels(const torch::Tensor& probs, double threshold = 0.0, int64_t ignore_index = -1);

/// Per-class mean of F_high pixel embeddings over Omega_c (labels nearest-downsampled to h x w).
/// Pixels labelled outside [0, num_classes) are ignored.
ClassMeans batch_prototypes(const torch::Tensor& f_high, const torch::Tensor& labels_down, int64_t num_classes);

/// Source and target EMA prototypes (detached history).
struct PrototypeState {
  torch::Tensor source;  // C x D
  torch::Tensor target;  // C x D
  std::vector<bool> source_init;
  std::vector<bool> target_init;

  PrototypeState() = default;
  PrototypeState(int64_t num_classes, int64_t dim, torch::Dtype dtype = torch::kFloat32);
  int64_t num_classes() const { return static_cast<int64_t>(source_init.size()); }

  torch::Tensor& rows(Domain d) { return d == Domain::Source ? source : target; }
  const torch::Tensor& rows(Domain d) const { return d == Domain::Source ? source : target; }
  std::vector<bool>& init(Domain d) { return d == Domain::Source ? source_init : target_init; }
  const std::vector<bool>& init(Domain d) const { return d == Domain::Source ? source_init : target_init; }
};

/// Weight multiplying the old prototype. Literal convention: z <- beta z + (1 - beta) p.
/// `swap_momentum` flips to z <- (1 - beta) z + beta p.
double history_weight(double beta, bool swap_momentum);

/// The per-class prototypes this step, C x D: EMA-blended for present classes (gradient through the
/// batch term only), first observations taken directly, stored rows for absent classes (constant).
torch::Tensor current_prototypes(const PrototypeState& state, Domain domain, const ClassMeans& batch, double beta,
                                 bool swap_momentum = false);

/// Returns which classes `current_prototypes` treats as initialized after this batch.
std::vector<bool> initialized_after(const PrototypeState& state, Domain domain, const ClassMeans& batch);

/// Stores the EMA update (detached). Throws ConfigError if beta is outside [0, 1].
void ema_update(PrototypeState& state, Domain domain, const ClassMeans& batch, double beta,
                bool swap_momentum = false);

struct ProtoLoss {
  torch::Tensor value;
  bool skipped = false;
  int64_t common_classes = 0;
};

/// Sum over classes initialized in both domains of |z_s - z_t|^2. Skipped (0) if none.
ProtoLoss proto_loss(const torch::Tensor& source, const std::vector<bool>& source_init, const torch::Tensor& target,
                     const std::vector<bool>& target_init);

inline ProtoLoss proto_loss(const PrototypeState& s) {
  return proto_loss(s.source, s.source_init, s.target, s.target_init);
}

}  // namespace tcsa::proto
