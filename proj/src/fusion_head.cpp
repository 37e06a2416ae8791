#include "tcsa/fusion_head.hpp"

#include <cmath>

#include "tcsa/common.hpp"
#include "tcsa/seg_network.hpp"

namespace tcsa::fusion {

namespace nn = torch::nn;

GlobalVisualImpl::GlobalVisualImpl(int64_t in_channels) {
  norm = register_module("norm", seg::group_norm(in_channels));
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, kFusionDim, 1)));
}

torch::Tensor GlobalVisualImpl::forward(const torch::Tensor& f_high) {
  auto pooled = torch::adaptive_avg_pool2d(f_high, {1, 1});
  auto gap = conv->forward(norm->forward(pooled));  // F_GAP: B x 256 x 1 x 1
  return gap.flatten(1).unsqueeze(1);
}

FuseQueryImpl::FuseQueryImpl() { linear = register_module("linear", nn::Linear(2 * kFusionDim, kFusionDim)); }

torch::Tensor FuseQueryImpl::forward(const torch::Tensor& f_g, const torch::Tensor& t_class) {
  if (f_g.dim() != 3 || f_g.size(1) != 1 || f_g.size(2) != kFusionDim) {
    throw ConfigError("global visual vector must be B x 1 x 256");
  }
  if (t_class.dim() != 2 || t_class.size(1) != kFusionDim) {
    throw ConfigError("t_class must be C x 256, got width " + std::to_string(t_class.size(-1)));
  }
  const auto batch = f_g.size(0);
  const auto classes = t_class.size(0);
  auto f_rep = f_g.expand({batch, classes, kFusionDim});
  auto text = t_class.to(f_g.dtype()).unsqueeze(0).expand({batch, classes, kFusionDim});
  return torch::relu(linear->forward(torch::cat({f_rep, text}, 2)));
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads_) : heads(heads_) {
  if (dim % heads != 0) throw ConfigError("attention width must be divisible by head count");
  q_proj = register_module("q_proj", nn::Linear(dim, dim));
  k_proj = register_module("k_proj", nn::Linear(dim, dim));
  v_proj = register_module("v_proj", nn::Linear(dim, dim));
  out_proj = register_module("out_proj", nn::Linear(dim, dim));
}

AttentionOutput MultiHeadAttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key,
                                                const torch::Tensor& value) {
  const auto batch = query.size(0);
  const auto lq = query.size(1);
  const auto lk = key.size(1);
  const auto dim = query.size(2);
  const auto head_dim = dim / heads;
  auto split = [&](const torch::Tensor& t, int64_t len) {
    return t.view({batch, len, heads, head_dim}).transpose(1, 2);  // B x h x L x hd
  };
  auto q = split(q_proj->forward(query), lq);
  auto k = split(k_proj->forward(key), lk);
  auto v = split(v_proj->forward(value), lk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  auto weights = torch::softmax(scores, -1);
  auto ctx = torch::matmul(weights, v).transpose(1, 2).reshape({batch, lq, dim});
  return {out_proj->forward(ctx), weights};
}

TextVisionFusionImpl::TextVisionFusionImpl(int64_t heads, bool residual_) : residual(residual_) {
  global_visual = register_module("global_visual", GlobalVisual());
  fuse_query = register_module("fuse_query", FuseQuery());
  attention = register_module("attention", MultiHeadAttention(kFusionDim, heads));
  refine = register_module("refine", nn::Sequential(nn::Linear(kFusionDim, kFusionDim), nn::ReLU(),
                                                    nn::Linear(kFusionDim, kFusionDim)));
}

FusedQuery TextVisionFusionImpl::forward(const torch::Tensor& f_high, const torch::Tensor& t_class) {
  FusedQuery out;
  out.f_g = global_visual->forward(f_high);
  out.q_fused = fuse_query->forward(out.f_g, t_class);
  auto attn = attention->forward(out.q_fused, out.f_g, out.f_g);
  out.attended = attn.output;
  out.attention = attn.weights;
  out.f_fused = refine->forward(residual ? out.q_fused + out.attended : out.attended);
  return out;
}

DynamicParams split_dynamic_params(const torch::Tensor& theta) {
  if (theta.dim() != 2 || theta.size(1) != kDynamicParamCount) {
    throw ConfigError("theta must be B x " + std::to_string(kDynamicParamCount));
  }
  const auto batch = theta.size(0);
  const int64_t n_weight = kFusionDim * kDynamicOut;
  DynamicParams p;
  p.theta = theta;
  p.weight = theta.narrow(1, 0, n_weight).reshape({batch, kDynamicOut, kFusionDim, 1, 1});
  p.bias = theta.narrow(1, n_weight, kDynamicOut);
  return p;
}

ControllerImpl::ControllerImpl() {
  mlp = register_module("mlp", nn::Sequential(nn::Linear(kFusionDim, kFusionDim), nn::ReLU(),
                                              nn::Linear(kFusionDim, kDynamicParamCount)));
}

DynamicParams ControllerImpl::forward(const torch::Tensor& f_fused) {
  return split_dynamic_params(mlp->forward(f_fused.mean(1)));
}

torch::Tensor dynamic_conv(const torch::Tensor& f_sem, const DynamicParams& params) {
  if (f_sem.dim() != 4 || f_sem.size(1) != kFusionDim) throw ConfigError("F_sem must be B x 256 x h x w");
  const auto batch = f_sem.size(0);
  const auto h = f_sem.size(2);
  const auto w = f_sem.size(3);
  if (params.weight.size(0) != batch) throw ConfigError("dynamic parameters batch differs from F_sem batch");
  auto weight = params.weight.reshape({batch, kDynamicOut, kFusionDim});
  auto out = torch::baddbmm(params.bias.unsqueeze(2), weight, f_sem.reshape({batch, kFusionDim, h * w}));
  return out.view({batch, kDynamicOut, h, w});
}

SegHeadImpl::SegHeadImpl(int64_t num_classes) {
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(kDynamicOut, num_classes, 1)));
}

torch::Tensor SegHeadImpl::forward(const torch::Tensor& f_conv, int64_t height, int64_t width) {
  return seg::upsample_logits(conv->forward(f_conv), height, width);
}

}  // namespace tcsa::fusion
