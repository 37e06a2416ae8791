#include "tcsa/seg_network.hpp"

#include <numeric>

#include "tcsa/common.hpp"

namespace tcsa::seg {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void ImageBatch::validate() const {
  if (!values.defined() || values.dim() != 4 || values.size(1) != 1 || values.size(0) < 1) {
    throw ConfigError("image batch must be B x 1 x H x W with B >= 1");
  }
  if (!torch::isfinite(values).all().item<bool>()) throw ConfigError("image batch contains non-finite values");
}

void LabelBatch::validate(int64_t num_classes) const {
  if (!values.defined() || values.dim() != 3) throw ConfigError("label batch must be B x H x W");
  if (values.numel() == 0) return;
  const auto lo = values.min().item<int64_t>();
  const auto hi = values.max().item<int64_t>();
  if (lo < 0 || hi >= num_classes) {
    throw ConfigError("label value out of range [0, " + std::to_string(num_classes - 1) + "]: found " +
                      std::to_string(lo < 0 ? lo : hi));
  }
}

nn::GroupNorm group_norm(int64_t channels) {
  int64_t groups = std::min<int64_t>(32, std::max<int64_t>(1, channels / 4));
  while (channels % groups != 0) --groups;
  return nn::GroupNorm(nn::GroupNormOptions(groups, channels));
}

torch::Tensor downsample_labels(const torch::Tensor& labels, int64_t h, int64_t w) {
  if (labels.size(1) == h && labels.size(2) == w) return labels.to(torch::kLong);
  auto as_float = labels.unsqueeze(1).to(torch::kFloat32);
  auto resized = F::interpolate(as_float, F::InterpolateFuncOptions()
                                              .size(std::vector<int64_t>{h, w})
                                              .mode(torch::kNearest));
  return resized.squeeze(1).round().to(torch::kLong);
}

torch::Tensor upsample_logits(const torch::Tensor& logits, int64_t height, int64_t width) {
  if (logits.size(2) == height && logits.size(3) == width) return logits;
  return F::interpolate(logits, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{height, width})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
}

// ---------------------------------------------------------------------------------------------

FrozenBatchNormImpl::FrozenBatchNormImpl(int64_t channels) {
  weight = register_buffer("weight", torch::ones({channels}));
  bias = register_buffer("bias", torch::zeros({channels}));
  running_mean = register_buffer("running_mean", torch::zeros({channels}));
  running_var = register_buffer("running_var", torch::ones({channels}));
}

torch::Tensor FrozenBatchNormImpl::forward(const torch::Tensor& x) {
  auto scale = weight * (running_var + 1e-5).rsqrt();
  auto shift = bias - running_mean * scale;
  return x * scale.view({1, -1, 1, 1}) + shift.view({1, -1, 1, 1});
}

BottleneckImpl::BottleneckImpl(int64_t in_ch, int64_t planes, int64_t stride, int64_t dilation, bool downsample) {
  const int64_t out_ch = planes * 4;
  // Caffe-style DeepLab: stride sits on the first 1x1 conv.
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_ch, planes, 1).stride(stride).bias(false)));
  bn1 = register_module("bn1", FrozenBatchNorm(planes));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(planes, planes, 3)
                                                  .padding(dilation)
                                                  .dilation(dilation)
                                                  .bias(false)));
  bn2 = register_module("bn2", FrozenBatchNorm(planes));
  conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(planes, out_ch, 1).bias(false)));
  bn3 = register_module("bn3", FrozenBatchNorm(out_ch));
  if (downsample) {
    shortcut = register_module(
        "downsample", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 1).stride(stride).bias(false)),
                                     FrozenBatchNorm(out_ch)));
  }
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto out = torch::relu(bn1(conv1(x)));
  out = torch::relu(bn2(conv2(out)));
  out = bn3(conv3(out));
  auto identity = shortcut ? shortcut->forward(x) : x;
  return torch::relu(out + identity);
}

namespace {

nn::Sequential conv_gn_relu(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t dilation = 1) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, kernel)
                                       .stride(stride)
                                       .padding(dilation * (kernel / 2))
                                       .dilation(dilation)
                                       .bias(false)),
                        group_norm(out), nn::ReLU());
}

/// Flattens conv-GN-ReLU blocks into one Sequential (Sequentials cannot nest).
nn::Sequential chain(std::initializer_list<nn::Sequential> blocks) {
  nn::Sequential out;
  for (const auto& block : blocks) {
    for (const auto& m : *block) out->push_back(m);
  }
  return out;
}

nn::Sequential resnet_layer(int64_t& in_ch, int64_t planes, int64_t blocks, int64_t stride, int64_t dilation) {
  nn::Sequential layer;
  const bool downsample = stride != 1 || in_ch != planes * 4;
  layer->push_back(Bottleneck(in_ch, planes, stride, dilation, downsample));
  in_ch = planes * 4;
  for (int64_t i = 1; i < blocks; ++i) layer->push_back(Bottleneck(in_ch, planes, 1, dilation, false));
  return layer;
}

}  // namespace

EncoderImpl::EncoderImpl(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.output_stride != 8 && cfg_.output_stride != 16) {
    throw ConfigError("output stride must be 8 or 16, got " + std::to_string(cfg_.output_stride));
  }
  const bool os16 = cfg_.output_stride == 16;
  if (cfg_.name == "tiny") {
    const int64_t w = cfg_.tiny_width;
    if (w < 4) throw ConfigError("tiny backbone width must be >= 4");
    add_stage("stage1", chain({conv_gn_relu(1, w, 3, 2), conv_gn_relu(w, w, 3)}));
    add_stage("stage2", chain({conv_gn_relu(w, 2 * w, 3, 2), conv_gn_relu(2 * w, 2 * w, 3)}));
    add_stage("stage3", chain({conv_gn_relu(2 * w, 4 * w, 3, 2), conv_gn_relu(4 * w, 4 * w, 3)}));
    add_stage("stage4", conv_gn_relu(4 * w, 8 * w, 3, os16 ? 2 : 1, os16 ? 1 : 2));
    // Channel lift so F_high has the 2048 channels downstream heads expect.
    add_stage("lift", conv_gn_relu(8 * w, 2048, 1));
  } else if (cfg_.name == "resnet101" || cfg_.name == "resnet50") {
    const int64_t mid_blocks = cfg_.name == "resnet101" ? 23 : 6;
    add_stage("stem", nn::Sequential(nn::Conv2d(nn::Conv2dOptions(1, 64, 7).stride(2).padding(3).bias(false)),
                                     FrozenBatchNorm(64), nn::ReLU(),
                                     nn::MaxPool2d(nn::MaxPool2dOptions(3).stride(2).padding(1))));
    int64_t in_ch = 64;
    add_stage("layer1", resnet_layer(in_ch, 64, 3, 1, 1));
    add_stage("layer2", resnet_layer(in_ch, 128, 4, 2, 1));
    add_stage("layer3", resnet_layer(in_ch, 256, mid_blocks, os16 ? 2 : 1, os16 ? 1 : 2));
    add_stage("layer4", resnet_layer(in_ch, 512, 3, 1, os16 ? 2 : 4));
  } else {
    throw ConfigError("unknown backbone '" + cfg_.name + "' (expected tiny, resnet50 or resnet101)");
  }
}

void EncoderImpl::add_stage(const std::string& name, nn::Sequential stage) {
  names_.push_back(name);
  stages_.push_back(register_module(name, std::move(stage)));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images, std::vector<torch::Tensor>* taps) {
  auto x = images;
  if (taps) taps->clear();
  for (auto& stage : stages_) {
    x = stage->forward(x);
    if (taps) taps->push_back(x);
  }
  return x;
}

SemanticNeckImpl::SemanticNeckImpl(int64_t kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("neck kernel size must be odd and positive");
  body = register_module("body", chain({conv_gn_relu(2048, 1024, kernel_size), conv_gn_relu(1024, 512, kernel_size),
                                       conv_gn_relu(512, 256, kernel_size)}));
}

torch::Tensor SemanticNeckImpl::forward(const torch::Tensor& f_high) { return body->forward(f_high); }

AuxClassifierImpl::AuxClassifierImpl(int64_t in_channels, int64_t num_classes, std::vector<int64_t> dilations) {
  for (size_t i = 0; i < dilations.size(); ++i) {
    auto conv = nn::Conv2d(nn::Conv2dOptions(in_channels, num_classes, 3).padding(dilations[i]).dilation(dilations[i]));
    torch::NoGradGuard no_grad;
    conv->weight.normal_(0.0, 0.01);
    conv->bias.zero_();
    branches.push_back(register_module("branch" + std::to_string(i), conv));
  }
}

torch::Tensor AuxClassifierImpl::forward(const torch::Tensor& f_sem) {
  auto out = branches.front()->forward(f_sem);
  for (size_t i = 1; i < branches.size(); ++i) out = out + branches[i]->forward(f_sem);
  return out;
}

}  // namespace tcsa::seg
