#pragma once

#include <torch/torch.h>

namespace tcsa::adv {

/// Channel-wise self-information -P_c log P_c / log C (log clamped at 1e-12).
/// A uniform pixel maps to 1/C in every channel; one-hot pixels map to 0.
torch::Tensor self_information_map(const torch::Tensor& probs);

/// PatchGAN discriminator: four 4x4 stride-2 convs (C -> 64 -> 128 -> 256 -> 512, leaky ReLU 0.2)
/// and a 4x4 stride-2 classifier to one logit per patch. Output stride 32.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(int64_t num_classes, int64_t base_width = 64);
  torch::Tensor forward(const torch::Tensor& self_info);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(Discriminator);

/// BCE(D(src), 1) + BCE(D(tgt), 0), each a mean over patch logits. 2 ln 2 at D = 0.5 everywhere.
torch::Tensor d_loss(const torch::Tensor& src_logits, const torch::Tensor& tgt_logits);

/// BCE(D_main(tgt), 1) + aux_weight * BCE(D_aux(tgt), 1).
torch::Tensor g_adv_loss(const torch::Tensor& tgt_logits_main, const torch::Tensor& tgt_logits_aux,
                         double aux_weight = 0.5);

/// Mean BCE of logits against a constant label in {0, 1}.
torch::Tensor bce_with_logits(const torch::Tensor& logits, double target);

}  // namespace tcsa::adv
