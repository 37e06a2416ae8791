#include "tcsa/vlcol.hpp"

#include "tcsa/common.hpp"

namespace tcsa {

ClassMeans masked_class_means(const torch::Tensor& features, const torch::Tensor& labels, int64_t num_classes) {
  TORCH_CHECK(features.dim() == 4 && labels.dim() == 3, "masked_class_means: expected B x D x h x w and B x h x w");
  TORCH_CHECK(features.size(0) == labels.size(0) && features.size(2) == labels.size(1) &&
                  features.size(3) == labels.size(2),
              "masked_class_means: feature and label shapes disagree");
  const auto dim = features.size(1);
  auto flat = features.permute({0, 2, 3, 1}).reshape({-1, dim});              // N x D
  auto onehot = torch::one_hot(labels.reshape({-1}).to(torch::kLong), num_classes)  // N x C
                    .to(features.dtype());
  auto sums = onehot.t().mm(flat);  // C x D
  auto counts = onehot.sum(0);      // C

  ClassMeans out;
  auto counts_cpu = counts.to(torch::kCPU);
  for (int64_t c = 0; c < num_classes; ++c) {
    if (counts_cpu[c].item<double>() > 0) out.present.push_back(c);
  }
  auto idx = torch::tensor(out.present, torch::kLong);
  out.counts = counts.index_select(0, idx);
  out.means = sums.index_select(0, idx) / out.counts.unsqueeze(1);
  return out;
}

namespace vlcol {

ClassFeatureMemory::ClassFeatureMemory(int64_t num_classes, int64_t dim, torch::Dtype dtype)
    : features(torch::zeros({num_classes, dim}, dtype)), flags(static_cast<size_t>(num_classes), false) {}

ClassMeans class_pixel_features(const torch::Tensor& f_sem, const torch::Tensor& labels_down, int64_t num_classes) {
  return masked_class_means(f_sem, labels_down, num_classes);
}

torch::Tensor blended_rows(const ClassFeatureMemory& mem, const ClassMeans& batch, double lambda) {
  std::vector<torch::Tensor> rows;
  rows.reserve(batch.present.size());
  for (size_t k = 0; k < batch.present.size(); ++k) {
    const auto c = batch.present[k];
    auto fresh = batch.means[static_cast<int64_t>(k)];
    if (mem.flags[static_cast<size_t>(c)]) {
      auto history = mem.features[c].detach().to(fresh.dtype());
      rows.push_back(lambda * history + (1.0 - lambda) * fresh);
    } else {
      rows.push_back(fresh);
    }
  }
  if (rows.empty()) return torch::empty({0, batch.means.size(1)}, batch.means.options());
  return torch::stack(rows);
}

void memory_update(ClassFeatureMemory& mem, const ClassMeans& batch, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("memory decay lambda must lie in [0, 1]");
  torch::NoGradGuard no_grad;
  for (size_t k = 0; k < batch.present.size(); ++k) {
    const auto c = batch.present[k];
    auto fresh = batch.means[static_cast<int64_t>(k)].detach().to(mem.features.dtype());
    if (mem.flags[static_cast<size_t>(c)]) {
      mem.features[c].copy_(lambda * mem.features[c] + (1.0 - lambda) * fresh);
    } else {
      mem.features[c].copy_(fresh);
      mem.flags[static_cast<size_t>(c)] = true;
    }
  }
}

torch::Tensor covariance_matrix(const torch::Tensor& rows) {
  TORCH_CHECK(rows.dim() == 2 && rows.size(1) >= 2, "covariance_matrix: rows must be K x D with D >= 2");
  auto centered = rows - rows.mean(1, /*keepdim=*/true);
  return centered.mm(centered.t()) / static_cast<double>(rows.size(1) - 1);
}

LossResult covariance_cosine_loss(const torch::Tensor& sigma_p, const torch::Tensor& sigma_t) {
  auto t = sigma_t.to(sigma_p.dtype());
  auto norm_p = sigma_p.norm();
  auto norm_t = t.norm();
  if (norm_p.item<double>() == 0.0 || norm_t.item<double>() == 0.0) {
    return {torch::zeros({}, sigma_p.options()), true};
  }
  return {1.0 - (sigma_p * t).sum() / (norm_p * norm_t), false};
}

LossResult vlcol_loss(const torch::Tensor& pixel_rows, const torch::Tensor& t_class, const std::vector<int64_t>& present) {
  TORCH_CHECK(pixel_rows.size(0) == static_cast<int64_t>(present.size()), "vlcol_loss: one row per present class");
  if (present.size() < 2) return {torch::zeros({}, pixel_rows.options()), true};
  auto idx = torch::tensor(present, torch::kLong).to(t_class.device());
  auto text_rows = t_class.index_select(0, idx);
  return covariance_cosine_loss(covariance_matrix(pixel_rows), covariance_matrix(text_rows));
}

}  // namespace vlcol
}  // namespace tcsa
