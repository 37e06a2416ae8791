#include "tcsa/gradcam.hpp"

#include "tcsa/common.hpp"

namespace tcsa::gradcam {

namespace F = torch::nn::functional;

torch::Tensor heatmap(SegmentationModel& model, const torch::Tensor& image, const torch::Tensor& text_embeddings,
                      int64_t target_class, const std::string& layer) {
  const auto layers = model->gradcam_layers();
  const auto pos = std::find(layers.begin(), layers.end(), layer);
  if (pos == layers.end()) {
    std::string options;
    for (const auto& l : layers) options += (options.empty() ? "" : ", ") + l;
    throw ConfigError("unknown GradCAM layer '" + layer + "'; options: " + options);
  }
  const auto C = model->config().num_classes;
  if (target_class < 0 || target_class >= C) {
    throw ConfigError("GradCAM class " + std::to_string(target_class) + " outside [0, " + std::to_string(C) + ")");
  }
  auto x = image.dim() == 3 ? image.unsqueeze(0) : image;
  TORCH_CHECK(x.dim() == 4 && x.size(0) == 1 && x.size(1) == 1, "gradcam: expected a single 1 x H x W image");
  const auto H = x.size(2);
  const auto W = x.size(3);

  model->eval();
  torch::AutoGradMode enable(true);
  auto fwd = model->forward(x, text_embeddings, /*keep_taps=*/true);
  torch::Tensor activation;
  const auto idx = static_cast<size_t>(pos - layers.begin());
  if (idx < fwd.encoder_taps.size()) {
    activation = fwd.encoder_taps[idx];
  } else if (layer == "neck") {
    activation = fwd.f_sem;
  } else {
    activation = fwd.f_conv;
  }

  auto class_logits = fwd.logits.select(1, target_class);
  auto predicted = (fwd.logits.argmax(1) == target_class).to(class_logits.dtype()).detach();
  auto score = predicted.sum().item<double>() > 0 ? (class_logits * predicted).sum() : class_logits.sum();
  auto grads = torch::autograd::grad({score}, {activation}, {}, /*retain_graph=*/false, /*create_graph=*/false,
                                     /*allow_unused=*/true);
  torch::NoGradGuard no_grad;
  if (!grads[0].defined()) return torch::zeros({H, W}, torch::kFloat32);
  auto weights = grads[0].mean({2, 3}, /*keepdim=*/true);
  auto cam = torch::relu((weights * activation.detach()).sum(1, /*keepdim=*/true));
  cam = F::interpolate(cam, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{H, W})
                                .mode(torch::kBilinear)
                                .align_corners(false));
  cam = cam.squeeze(0).squeeze(0).clamp_min(0.0);
  const double peak = cam.max().item<double>();
  if (!(peak > 0.0)) return torch::zeros({H, W}, torch::kFloat32);
  return (cam / peak).clamp(0.0, 1.0).to(torch::kFloat32);
}

double mass_fraction(const torch::Tensor& heatmap, const torch::Tensor& region) {
  TORCH_CHECK(heatmap.sizes() == region.sizes(), "mass_fraction: shape mismatch");
  const double total = heatmap.sum().item<double>();
  if (!(total > 0.0)) return -1.0;
  return (heatmap * region.to(heatmap.dtype())).sum().item<double>() / total;
}

torch::Tensor dilate(const torch::Tensor& mask, int64_t radius) {
  if (radius <= 0) return mask.to(torch::kBool);
  auto m = mask.to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
  auto out = F::max_pool2d(m, F::MaxPool2dFuncOptions(2 * radius + 1).stride(1).padding(radius));
  return out.squeeze(0).squeeze(0) > 0.5;
}

}  // namespace tcsa::gradcam
