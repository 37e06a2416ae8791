#include "tcsa/model.hpp"

namespace tcsa {

SegmentationModelImpl::SegmentationModelImpl(NetworkConfig cfg) : cfg_(std::move(cfg)) {
  projection = register_module("projection", text::TextProjection(cfg_.text_dim, fusion::kFusionDim));
  encoder = register_module("encoder", seg::Encoder(cfg_.backbone));
  neck = register_module("neck", seg::SemanticNeck(cfg_.neck_kernel));
  aux = register_module("aux", seg::AuxClassifier(fusion::kFusionDim, cfg_.num_classes));
  fusion = register_module("fusion", fusion::TextVisionFusion(cfg_.heads, cfg_.fusion_residual));
  controller = register_module("controller", fusion::Controller());
  head = register_module("head", fusion::SegHead(cfg_.num_classes));
}

SegForward SegmentationModelImpl::forward(const torch::Tensor& images, const torch::Tensor& text_embeddings,
                                          bool keep_taps) {
  SegForward out;
  const auto height = images.size(2);
  const auto width = images.size(3);
  out.f_high = encoder->forward(images, keep_taps ? &out.encoder_taps : nullptr);
  out.f_sem = neck->forward(out.f_high);
  out.f_aux = aux->forward(out.f_sem);
  out.t_class = projection->forward(text_embeddings);
  out.fused = fusion->forward(out.f_high, out.t_class);
  out.dynamic = controller->forward(out.fused.f_fused);
  out.f_conv = fusion::dynamic_conv(out.f_sem, out.dynamic);
  out.logits = head->forward(out.f_conv, height, width);
  out.aux_logits = seg::upsample_logits(out.f_aux, height, width);
  return out;
}

namespace {

void append(std::vector<torch::Tensor>& dst, const torch::nn::Module& m) {
  for (const auto& p : m.parameters()) dst.push_back(p);
}

}  // namespace

std::vector<torch::Tensor> SegmentationModelImpl::segmentation_parameters() {
  std::vector<torch::Tensor> ps;
  append(ps, *encoder);
  append(ps, *neck);
  append(ps, *aux);
  append(ps, *head);
  return ps;
}

std::vector<torch::Tensor> SegmentationModelImpl::fusion_parameters() {
  std::vector<torch::Tensor> ps;
  append(ps, *projection);
  append(ps, *fusion);
  append(ps, *controller);
  return ps;
}

std::vector<std::string> SegmentationModelImpl::gradcam_layers() const {
  auto names = encoder->stage_names();
  names.push_back("neck");
  names.push_back("dynconv");
  return names;
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace tcsa
