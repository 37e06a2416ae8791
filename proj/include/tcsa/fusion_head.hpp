#pragma once

#include <torch/torch.h>

namespace tcsa::fusion {

inline constexpr int64_t kFusionDim = 256;
inline constexpr int64_t kDynamicOut = 128;
/// Width of theta_k: a 1x1 conv 256 -> 128 plus its bias.
inline constexpr int64_t kDynamicParamCount = kFusionDim * kDynamicOut + kDynamicOut;

/// GAP -> GroupNorm -> 1x1 conv (2048 -> 256) -> B x 1 x 256.
struct GlobalVisualImpl : torch::nn::Module {
  explicit GlobalVisualImpl(int64_t in_channels = 2048);
  torch::Tensor forward(const torch::Tensor& f_high);

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(GlobalVisual);

/// ReLU(Linear([repeat(f_g, C) || t_class])) : B x C x 256.
struct FuseQueryImpl : torch::nn::Module {
  FuseQueryImpl();
  /// f_g: B x 1 x 256, t_class: C x 256. Throws ConfigError on width mismatch.
  torch::Tensor forward(const torch::Tensor& f_g, const torch::Tensor& t_class);

  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(FuseQuery);

struct AttentionOutput {
  torch::Tensor output;   // B x Lq x 256
  torch::Tensor weights;  // B x heads x Lq x Lk
};

/// Multi-head attention with learned q/k/v/out projections.
struct MultiHeadAttentionImpl : torch::nn::Module {
  MultiHeadAttentionImpl(int64_t dim = kFusionDim, int64_t heads = 4);
  AttentionOutput forward(const torch::Tensor& query, const torch::Tensor& key, const torch::Tensor& value);

  int64_t heads;
  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

struct FusedQuery {
  torch::Tensor f_g;        // B x 1 x 256
  torch::Tensor q_fused;    // B x C x 256
  torch::Tensor attended;   // B x C x 256, raw MHA output
  torch::Tensor attention;  // B x heads x C x 1
  torch::Tensor f_fused;    // B x C x 256
};

/// Text/vision fusion: F_fused = MLP(MHA(Q_fused, f_g, f_g)).
///
/// With `residual` set the MLP input is Q_fused + MHA(...). Attending over the single pooled
/// token gives every query weight 1, so without the residual F_fused cannot depend on t_class.
struct TextVisionFusionImpl : torch::nn::Module {
  TextVisionFusionImpl(int64_t heads = 4, bool residual = true);
  FusedQuery forward(const torch::Tensor& f_high, const torch::Tensor& t_class);

  bool residual;
  GlobalVisual global_visual{nullptr};
  FuseQuery fuse_query{nullptr};
  MultiHeadAttention attention{nullptr};
  torch::nn::Sequential refine{nullptr};
};
TORCH_MODULE(TextVisionFusion);

struct DynamicParams {
  torch::Tensor theta;   // B x 32896
  torch::Tensor weight;  // B x 128 x 256 x 1 x 1
  torch::Tensor bias;    // B x 128
};

/// Splits theta (B x 32896) into W (first 32768, row-major 128 x 256) and b (last 128).
DynamicParams split_dynamic_params(const torch::Tensor& theta);

/// theta_k = MLP(mean(F_fused, dim=1)).
struct ControllerImpl : torch::nn::Module {
  ControllerImpl();
  DynamicParams forward(const torch::Tensor& f_fused);

  torch::nn::Sequential mlp{nullptr};
};
TORCH_MODULE(Controller);

/// Per-sample 1x1 convolution: out[i] = W[i] * F_sem[i] + b[i]; B x 128 x h x w.
torch::Tensor dynamic_conv(const torch::Tensor& f_sem, const DynamicParams& params);

/// 1x1 conv 128 -> C followed by bilinear upsampling to the input resolution.
struct SegHeadImpl : torch::nn::Module {
  explicit SegHeadImpl(int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& f_conv, int64_t height, int64_t width);

  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SegHead);

}  // namespace tcsa::fusion
