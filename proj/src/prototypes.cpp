#include "tcsa/prototypes.hpp"

#include "tcsa/common.hpp"

namespace tcsa::proto {

torch::Tensor pseudo_labels(const torch::Tensor& probs, double threshold, int64_t ignore_index) {
  // argmax returns the first maximal index, i.e. the lowest class on ties.
  auto labels = probs.argmax(1);
  if (threshold > 0.0) {
    auto maxval = std::get<0>(probs.max(1));
    labels = torch::where(maxval < threshold, torch::full_like(labels, ignore_index), labels);
  }
  return labels;
}

ClassMeans batch_prototypes(const torch::Tensor& f_high, const torch::Tensor& labels_down, int64_t num_classes) {
  auto labels = labels_down.to(torch::kLong);
  auto valid = (labels >= 0) & (labels < num_classes);
  if (valid.all().item<bool>()) return masked_class_means(f_high, labels, num_classes);
  // Route ignored pixels to an extra bucket that is dropped afterwards.
  auto routed = torch::where(valid, labels, torch::full_like(labels, num_classes));
  auto means = masked_class_means(f_high, routed, num_classes + 1);
  if (!means.present.empty() && means.present.back() == num_classes) {
    const auto k = static_cast<int64_t>(means.present.size()) - 1;
    means.present.pop_back();
    means.means = means.means.narrow(0, 0, k);
    means.counts = means.counts.narrow(0, 0, k);
  }
  return means;
}

PrototypeState::PrototypeState(int64_t num_classes, int64_t dim, torch::Dtype dtype)
    : source(torch::zeros({num_classes, dim}, dtype)),
      target(torch::zeros({num_classes, dim}, dtype)),
      source_init(static_cast<size_t>(num_classes), false),
      target_init(static_cast<size_t>(num_classes), false) {}

double history_weight(double beta, bool swap_momentum) { return swap_momentum ? 1.0 - beta : beta; }

torch::Tensor current_prototypes(const PrototypeState& state, Domain domain, const ClassMeans& batch, double beta,
                                 bool swap_momentum) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("prototype momentum beta must lie in [0, 1]");
  const double keep = history_weight(beta, swap_momentum);
  const auto& stored = state.rows(domain);
  const auto& init = state.init(domain);
  std::vector<torch::Tensor> rows;
  const auto dtype = batch.means.defined() && batch.means.numel() > 0 ? batch.means.scalar_type() : stored.scalar_type();
  size_t k = 0;
  for (int64_t c = 0; c < state.num_classes(); ++c) {
    auto old = stored[c].detach().to(dtype);
    if (k < batch.present.size() && batch.present[k] == c) {
      auto fresh = batch.means[static_cast<int64_t>(k)];
      rows.push_back(init[static_cast<size_t>(c)] ? keep * old + (1.0 - keep) * fresh : fresh);
      ++k;
    } else {
      rows.push_back(old);
    }
  }
  return torch::stack(rows);
}

std::vector<bool> initialized_after(const PrototypeState& state, Domain domain, const ClassMeans& batch) {
  auto init = state.init(domain);
  for (auto c : batch.present) init[static_cast<size_t>(c)] = true;
  return init;
}

void ema_update(PrototypeState& state, Domain domain, const ClassMeans& batch, double beta, bool swap_momentum) {
  auto next = current_prototypes(state, domain, batch, beta, swap_momentum).detach();
  torch::NoGradGuard no_grad;
  state.rows(domain).copy_(next.to(state.rows(domain).dtype()));
  state.init(domain) = initialized_after(state, domain, batch);
}

ProtoLoss proto_loss(const torch::Tensor& source, const std::vector<bool>& source_init, const torch::Tensor& target,
                     const std::vector<bool>& target_init) {
  std::vector<int64_t> common;
  for (size_t c = 0; c < source_init.size(); ++c) {
    if (source_init[c] && target_init[c]) common.push_back(static_cast<int64_t>(c));
  }
  ProtoLoss out;
  out.common_classes = static_cast<int64_t>(common.size());
  if (common.empty()) {
    out.value = torch::zeros({}, source.options().requires_grad(false));
    out.skipped = true;
    return out;
  }
  auto idx = torch::tensor(common, torch::kLong);
  auto diff = source.index_select(0, idx) - target.to(source.dtype()).index_select(0, idx);
  out.value = diff.pow(2).sum();
  return out;
}

}  // namespace tcsa::proto
