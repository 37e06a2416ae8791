#include "tcsa/losses.hpp"

#include "tcsa/common.hpp"

namespace tcsa::losses {

namespace {

void check_inputs(const torch::Tensor& probs, const torch::Tensor& labels) {
  if (probs.dim() != 4 || labels.dim() != 3 || probs.size(0) != labels.size(0) || probs.size(2) != labels.size(1) ||
      probs.size(3) != labels.size(2)) {
    throw ConfigError("loss expects probs B x C x H x W and labels B x H x W");
  }
  const auto classes = probs.size(1);
  if (labels.numel() > 0 && (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= classes)) {
    throw ConfigError("label out of range [0, " + std::to_string(classes - 1) + "]");
  }
}

}  // namespace

torch::Tensor ce_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  check_inputs(probs, labels);
  auto picked = probs.gather(1, labels.to(torch::kLong).unsqueeze(1));
  return -torch::log(picked.clamp_min(kLogClamp)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  check_inputs(probs, labels);
  const auto classes = probs.size(1);
  auto onehot = torch::one_hot(labels.to(torch::kLong), classes).permute({0, 3, 1, 2}).to(probs.dtype());
  const std::vector<int64_t> dims{0, 2, 3};
  auto inter = (probs * onehot).sum(dims);
  auto denom = probs.sum(dims) + onehot.sum(dims);
  auto dice = (2.0 * inter + kDiceSmooth) / (denom + kDiceSmooth);
  return 1.0 - dice.mean();
}

torch::Tensor seg_loss(const torch::Tensor& probs, const torch::Tensor& labels) {
  return ce_loss(probs, labels) + dice_loss(probs, labels);
}

}  // namespace tcsa::losses
