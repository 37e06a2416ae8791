#include "tcsa/adversarial.hpp"

#include <cmath>

#include "tcsa/losses.hpp"

namespace tcsa::adv {

namespace nn = torch::nn;

torch::Tensor self_information_map(const torch::Tensor& probs) {
  const double log_c = std::log(static_cast<double>(probs.size(1)));
  return -probs * torch::log(probs.clamp_min(losses::kLogClamp)) / log_c;
}

DiscriminatorImpl::DiscriminatorImpl(int64_t num_classes, int64_t base_width) {
  auto conv = [](int64_t in, int64_t out) { return nn::Conv2d(nn::Conv2dOptions(in, out, 4).stride(2).padding(1)); };
  auto leaky = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  const int64_t w = base_width;
  body = register_module("body", nn::Sequential(conv(num_classes, w), leaky(), conv(w, 2 * w), leaky(),
                                                conv(2 * w, 4 * w), leaky(), conv(4 * w, 8 * w), leaky(),
                                                conv(8 * w, 1)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& self_info) { return body->forward(self_info); }

torch::Tensor bce_with_logits(const torch::Tensor& logits, double target) {
  return torch::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
}

torch::Tensor d_loss(const torch::Tensor& src_logits, const torch::Tensor& tgt_logits) {
  return bce_with_logits(src_logits, 1.0) + bce_with_logits(tgt_logits, 0.0);
}

torch::Tensor g_adv_loss(const torch::Tensor& tgt_logits_main, const torch::Tensor& tgt_logits_aux, double aux_weight) {
  return bce_with_logits(tgt_logits_main, 1.0) + aux_weight * bce_with_logits(tgt_logits_aux, 1.0);
}

}  // namespace tcsa::adv
