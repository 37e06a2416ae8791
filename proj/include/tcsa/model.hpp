#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "tcsa/fusion_head.hpp"
#include "tcsa/seg_network.hpp"
#include "tcsa/text_semantics.hpp"

namespace tcsa {

struct NetworkConfig {
  seg::BackboneConfig backbone;
  int64_t num_classes = 5;
  int64_t neck_kernel = 1;
  int64_t text_dim = 512;
  int64_t heads = 4;
  bool fusion_residual = true;
};

/// Every intermediate of one generator forward pass.
struct SegForward {
  torch::Tensor f_high;  // B x 2048 x h x w
  torch::Tensor f_sem;   // B x 256 x h x w
  torch::Tensor f_aux;   // B x C x h x w
  torch::Tensor t_class;  // C x 256
  fusion::FusedQuery fused;
  fusion::DynamicParams dynamic;
  torch::Tensor f_conv;      // B x 128 x h x w
  torch::Tensor logits;      // B x C x H x W
  torch::Tensor aux_logits;  // F_aux upsampled to B x C x H x W
  std::vector<torch::Tensor> encoder_taps;

  torch::Tensor probs() const { return torch::softmax(logits, 1); }
  torch::Tensor aux_probs() const { return torch::softmax(aux_logits, 1); }
};

/// The segmentation network G: encoder, semantic neck, atrous auxiliary classifier, text projection,
/// text/vision fusion, dynamic-convolution controller and segmentation head.
struct SegmentationModelImpl : torch::nn::Module {
  explicit SegmentationModelImpl(NetworkConfig cfg);

  /// images: B x 1 x H x W; text_embeddings: C x d bank rows of the images' modality.
  SegForward forward(const torch::Tensor& images, const torch::Tensor& text_embeddings, bool keep_taps = false);

  /// Parameters trained by SGD: encoder, neck, auxiliary classifier, segmentation head.
  std::vector<torch::Tensor> segmentation_parameters();
  /// Parameters trained by Adam: text projection, fusion module, controller.
  std::vector<torch::Tensor> fusion_parameters();

  /// Layers GradCAM can attach to: encoder stages, "neck", "dynconv".
  std::vector<std::string> gradcam_layers() const;

  const NetworkConfig& config() const { return cfg_; }

  text::TextProjection projection{nullptr};
  seg::Encoder encoder{nullptr};
  seg::SemanticNeck neck{nullptr};
  seg::AuxClassifier aux{nullptr};
  fusion::TextVisionFusion fusion{nullptr};
  fusion::Controller controller{nullptr};
  fusion::SegHead head{nullptr};

 private:
  NetworkConfig cfg_;
};
TORCH_MODULE(SegmentationModel);

/// Toggles requires_grad on every parameter of a module.
void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace tcsa
