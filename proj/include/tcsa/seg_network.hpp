#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "tcsa/text_semantics.hpp"

namespace tcsa::seg {

/// B x 1 x H x W intensities plus the modality they were acquired with.
struct ImageBatch {
  torch::Tensor values;
  text::Modality modality = text::Modality::CT;

  /// Throws ConfigError unless values is a finite B x 1 x H x W tensor with B >= 1.
  void validate() const;
};

/// B x H x W class indices in [0, C-1], 0 = background.
struct LabelBatch {
  torch::Tensor values;

  void validate(int64_t num_classes) const;
};

struct BackboneConfig {
  /// "tiny", "resnet50" or "resnet101".
  std::string name = "resnet101";
  int64_t output_stride = 8;
  /// Base width of the tiny backbone's first stage.
  int64_t tiny_width = 16;
};

/// Channel-wise affine with frozen statistics, the usual stand-in for BatchNorm in DeepLab-style
/// ResNets trained with small batches.
struct FrozenBatchNormImpl : torch::nn::Module {
  explicit FrozenBatchNormImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight, bias, running_mean, running_var;
};
TORCH_MODULE(FrozenBatchNorm);

struct BottleneckImpl : torch::nn::Module {
  BottleneckImpl(int64_t in_ch, int64_t planes, int64_t stride, int64_t dilation, bool downsample);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  FrozenBatchNorm bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  torch::nn::Sequential shortcut{nullptr};
};
TORCH_MODULE(Bottleneck);

/// Image encoder producing F_high (B x 2048 x ceil(H/s) x ceil(W/s)).
///
/// Organized as named stages so GradCAM can tap intermediate activations.
struct EncoderImpl : torch::nn::Module {
  explicit EncoderImpl(BackboneConfig cfg);

  /// If `taps` is non-null, receives the output of every stage in stage_names() order.
  torch::Tensor forward(const torch::Tensor& images, std::vector<torch::Tensor>* taps = nullptr);

  const std::vector<std::string>& stage_names() const { return names_; }
  const BackboneConfig& config() const { return cfg_; }

 private:
  void add_stage(const std::string& name, torch::nn::Sequential stage);

  BackboneConfig cfg_;
  std::vector<std::string> names_;
  std::vector<torch::nn::Sequential> stages_;
};
TORCH_MODULE(Encoder);

/// 2048 -> 1024 -> 512 -> 256 refinement producing F_sem.
struct SemanticNeckImpl : torch::nn::Module {
  explicit SemanticNeckImpl(int64_t kernel_size = 1);
  torch::Tensor forward(const torch::Tensor& f_high);
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(SemanticNeck);

/// Atrous classifier: parallel 3x3 branches with dilations {6, 12, 18, 24}, summed.
struct AuxClassifierImpl : torch::nn::Module {
  AuxClassifierImpl(int64_t in_channels, int64_t num_classes,
                    std::vector<int64_t> dilations = {6, 12, 18, 24});
  torch::Tensor forward(const torch::Tensor& f_sem);
  size_t branch_count() const { return branches.size(); }

  std::vector<torch::nn::Conv2d> branches;
};
TORCH_MODULE(AuxClassifier);

/// GroupNorm with a group count that divides `channels`.
torch::nn::GroupNorm group_norm(int64_t channels);

/// Nearest-neighbour resize of B x H x W labels to B x h x w (int64 result).
torch::Tensor downsample_labels(const torch::Tensor& labels, int64_t h, int64_t w);

/// Bilinear resize of B x C x h x w logits to size (align_corners = false).
torch::Tensor upsample_logits(const torch::Tensor& logits, int64_t height, int64_t width);

}  // namespace tcsa::seg
