#include "tcsa/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "tcsa/common.hpp"
#include "tcsa/losses.hpp"

namespace tcsa::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "backbone", "output_stride", "tiny_width", "num_classes", "neck_kernel", "text_dim", "heads",
      "fusion_residual", "lambda_adv", "lambda_vlcol", "lambda_proto", "lambda_mem", "beta", "swap_momentum",
      "aux_adv_weight", "aux_supervised", "pseudo_label_threshold", "vlcol_text_grad", "batch_size", "iterations",
      "seg_lr", "seg_momentum", "seg_weight_decay", "poly_power", "aux_lr", "adam_beta1", "adam_beta2",
      "temperature", "balance_alpha", "lambda_epc", "seed", "augment", "backbone_weights", "source_data", "target_data",
      "source_embeddings", "target_embeddings", "output_dir", "dataset_name", "class_terms", "stub_dim",
      "stub_seed", "eval_every", "checkpoint_every", "eval_batch"};
  return keys;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

ckpt::NamedParams named(const std::string& prefix, torch::nn::Module& module,
                        const std::vector<std::string>& children) {
  ckpt::NamedParams out;
  for (const auto& child : module.named_children()) {
    if (std::find(children.begin(), children.end(), child.key()) == children.end()) continue;
    for (const auto& p : child.value()->named_parameters()) out.emplace_back(prefix + child.key() + "." + p.key(), p.value());
  }
  return out;
}

std::vector<torch::Tensor> tensors_of(const ckpt::NamedParams& params) {
  std::vector<torch::Tensor> out;
  out.reserve(params.size());
  for (const auto& [_, p] : params) out.push_back(p);
  return out;
}

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kDouble).item<double>(); }

/// Freezes a set of modules for its lifetime, restoring requires_grad even when a step throws.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::initializer_list<torch::nn::Module*> modules) : modules_(modules) {
    for (auto* m : modules_) set_requires_grad(*m, false);
  }
  ~FreezeGuard() {
    for (auto* m : modules_) set_requires_grad(*m, true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<torch::nn::Module*> modules_;
};

torch::Tensor flags_tensor(const std::vector<bool>& flags) {
  return torch::tensor(std::vector<int64_t>(flags.begin(), flags.end()), torch::kInt64).to(torch::kUInt8);
}

std::vector<bool> flags_from(const torch::Tensor& t) {
  auto c = t.to(torch::kInt64).contiguous();
  std::vector<bool> out;
  for (int64_t i = 0; i < c.numel(); ++i) out.push_back(c[i].item<int64_t>() != 0);
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().count(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  TrainConfig c;
  read_field(j, "backbone", c.network.backbone.name);
  read_field(j, "output_stride", c.network.backbone.output_stride);
  read_field(j, "tiny_width", c.network.backbone.tiny_width);
  read_field(j, "num_classes", c.network.num_classes);
  read_field(j, "neck_kernel", c.network.neck_kernel);
  read_field(j, "text_dim", c.network.text_dim);
  read_field(j, "heads", c.network.heads);
  read_field(j, "fusion_residual", c.network.fusion_residual);
  read_field(j, "lambda_adv", c.lambda_adv);
  read_field(j, "lambda_vlcol", c.lambda_vlcol);
  read_field(j, "lambda_proto", c.lambda_proto);
  read_field(j, "lambda_mem", c.lambda_mem);
  read_field(j, "beta", c.beta);
  read_field(j, "swap_momentum", c.swap_momentum);
  read_field(j, "aux_adv_weight", c.aux_adv_weight);
  read_field(j, "aux_supervised", c.aux_supervised);
  read_field(j, "pseudo_label_threshold", c.pseudo_label_threshold);
  read_field(j, "vlcol_text_grad", c.vlcol_text_grad);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "iterations", c.iterations);
  read_field(j, "seg_lr", c.seg_lr);
  read_field(j, "seg_momentum", c.seg_momentum);
  read_field(j, "seg_weight_decay", c.seg_weight_decay);
  read_field(j, "poly_power", c.poly_power);
  read_field(j, "aux_lr", c.aux_lr);
  read_field(j, "adam_beta1", c.adam_beta1);
  read_field(j, "adam_beta2", c.adam_beta2);
  read_field(j, "temperature", c.temperature);
  read_field(j, "balance_alpha", c.balance_alpha);
  read_field(j, "lambda_epc", c.lambda_epc);
  read_field(j, "seed", c.seed);
  read_field(j, "augment", c.augment);
  read_field(j, "backbone_weights", c.backbone_weights);
  read_field(j, "source_data", c.source_data);
  read_field(j, "target_data", c.target_data);
  read_field(j, "source_embeddings", c.source_embeddings);
  read_field(j, "target_embeddings", c.target_embeddings);
  read_field(j, "output_dir", c.output_dir);
  read_field(j, "dataset_name", c.dataset_name);
  read_field(j, "class_terms", c.class_terms);
  read_field(j, "stub_dim", c.stub_dim);
  read_field(j, "stub_seed", c.stub_seed);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "checkpoint_every", c.checkpoint_every);
  read_field(j, "eval_batch", c.eval_batch);
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return json{{"backbone", network.backbone.name},
              {"output_stride", network.backbone.output_stride},
              {"tiny_width", network.backbone.tiny_width},
              {"num_classes", network.num_classes},
              {"neck_kernel", network.neck_kernel},
              {"text_dim", network.text_dim},
              {"heads", network.heads},
              {"fusion_residual", network.fusion_residual},
              {"lambda_adv", lambda_adv},
              {"lambda_vlcol", lambda_vlcol},
              {"lambda_proto", lambda_proto},
              {"lambda_mem", lambda_mem},
              {"beta", beta},
              {"swap_momentum", swap_momentum},
              {"aux_adv_weight", aux_adv_weight},
              {"aux_supervised", aux_supervised},
              {"pseudo_label_threshold", pseudo_label_threshold},
              {"vlcol_text_grad", vlcol_text_grad},
              {"batch_size", batch_size},
              {"iterations", iterations},
              {"seg_lr", seg_lr},
              {"seg_momentum", seg_momentum},
              {"seg_weight_decay", seg_weight_decay},
              {"poly_power", poly_power},
              {"aux_lr", aux_lr},
              {"adam_beta1", adam_beta1},
              {"adam_beta2", adam_beta2},
              {"temperature", temperature},
              {"balance_alpha", balance_alpha},
              {"lambda_epc", lambda_epc},
              {"seed", seed},
              {"augment", augment},
              {"backbone_weights", backbone_weights},
              {"source_data", source_data},
              {"target_data", target_data},
              {"source_embeddings", source_embeddings},
              {"target_embeddings", target_embeddings},
              {"output_dir", output_dir},
              {"dataset_name", dataset_name},
              {"class_terms", class_terms},
              {"stub_dim", stub_dim},
              {"stub_seed", stub_seed},
              {"eval_every", eval_every},
              {"checkpoint_every", checkpoint_every},
              {"eval_batch", eval_batch}};
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  auto cfg = from_json(j);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  for (auto* p : {&cfg.source_data, &cfg.target_data, &cfg.source_embeddings, &cfg.target_embeddings,
                  &cfg.backbone_weights}) {
    if (!p->empty() && fs::path(*p).is_relative() && !base.empty()) *p = (base / *p).lexically_normal().string();
  }
  cfg.apply_env_overrides();
  return cfg;
}

void TrainConfig::apply_env_overrides() {
  auto env = [](const char* name, std::string& dst) {
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') dst = v;
  };
  env("TCSA_SOURCE_DATA", source_data);
  env("TCSA_TARGET_DATA", target_data);
  env("TCSA_SOURCE_EMBEDDINGS", source_embeddings);
  env("TCSA_TARGET_EMBEDDINGS", target_embeddings);
  env("TCSA_OUTPUT_DIR", output_dir);
}

void TrainConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be a finite value >= 0");
  };
  nonneg(lambda_adv, "lambda_adv");
  nonneg(lambda_vlcol, "lambda_vlcol");
  nonneg(lambda_proto, "lambda_proto");
  nonneg(aux_adv_weight, "aux_adv_weight");
  if (!(lambda_mem >= 0.0 && lambda_mem <= 1.0)) throw ConfigError("lambda_mem must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
  if (!(pseudo_label_threshold >= 0.0 && pseudo_label_threshold < 1.0)) {
    throw ConfigError("pseudo_label_threshold must lie in [0, 1)");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(seg_lr > 0.0) || !(aux_lr > 0.0)) throw ConfigError("learning rates must be > 0");
  nonneg(seg_momentum, "seg_momentum");
  nonneg(seg_weight_decay, "seg_weight_decay");
  nonneg(poly_power, "poly_power");
  if (network.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (network.text_dim < 1) throw ConfigError("text_dim must be >= 1");
  if (network.heads < 1 || fusion::kFusionDim % network.heads != 0) throw ConfigError("heads must divide 256");
  if (network.neck_kernel < 1 || network.neck_kernel % 2 == 0) throw ConfigError("neck_kernel must be odd");
  if (network.backbone.output_stride != 8 && network.backbone.output_stride != 16) {
    throw ConfigError("output_stride must be 8 or 16");
  }
  const auto& b = network.backbone.name;
  if (b != "tiny" && b != "resnet50" && b != "resnet101") {
    throw ConfigError("backbone must be one of tiny, resnet50, resnet101 (got '" + b + "')");
  }
  if (eval_every < 0 || checkpoint_every < 0 || eval_batch < 1) throw ConfigError("bad evaluation cadence");
}

uint64_t TrainConfig::architecture_hash() const {
  const json arch{{"backbone", network.backbone.name},   {"output_stride", network.backbone.output_stride},
                  {"tiny_width", network.backbone.tiny_width}, {"num_classes", network.num_classes},
                  {"neck_kernel", network.neck_kernel},  {"text_dim", network.text_dim},
                  {"heads", network.heads},              {"fusion_residual", network.fusion_residual}};
  return fnv1a(arch.dump());
}

json StepRecord::to_json() const {
  return json{{"iteration", iteration}, {"ce", ce},        {"dice", dice},
              {"seg", seg},             {"adv", adv},      {"vlcol", vlcol},
              {"proto", proto},         {"d_main", d_main}, {"d_aux", d_aux},
              {"total", total},         {"vlcol_skipped", vlcol_skipped},
              {"proto_skipped", proto_skipped}, {"seg_lr", seg_lr}};
}

std::pair<text::TextEmbeddingBank, text::TextEmbeddingBank> resolve_banks(const TrainConfig& cfg,
                                                                          const data::SliceDataset& source,
                                                                          const data::SliceDataset& target) {
  auto terms = cfg.class_terms.empty() ? source.class_names : cfg.class_terms;
  if (static_cast<int64_t>(terms.size()) != source.num_classes) {
    throw ConfigError("class_terms has " + std::to_string(terms.size()) + " entries, dataset has " +
                      std::to_string(source.num_classes) + " classes");
  }
  auto one = [&](const std::string& path, const data::SliceDataset& ds, uint64_t salt) {
    if (!path.empty()) {
      auto bank = text::load_embedding_bank(path, ds.num_classes);
      if (bank.modality != ds.modality) {
        throw ConfigError("embedding bank " + path + " is " + text::to_string(bank.modality) + " but the data is " +
                          text::to_string(ds.modality));
      }
      return bank;
    }
    text::PromptSpec spec{cfg.dataset_name, ds.modality, terms};
    return text::stub_bank(spec, cfg.stub_dim, mix_seed(cfg.stub_seed, salt));
  };
  // Both domains share the stub seed so shared words map to the same token vectors.
  return {one(cfg.source_embeddings, source, 0), one(cfg.target_embeddings, target, 0)};
}

ExperimentData load_experiment_data(const TrainConfig& cfg) {
  if (cfg.source_data.empty() || cfg.target_data.empty()) {
    throw ConfigError("source_data and target_data must be set (config or TCSA_SOURCE_DATA / TCSA_TARGET_DATA)");
  }
  ExperimentData d{data::load_manifest(cfg.source_data), data::load_manifest(cfg.target_data), {}, {}};
  if (!d.source.labeled()) throw ConfigError("source dataset " + cfg.source_data + " must be labeled");
  if (d.source.num_classes != d.target.num_classes) throw ConfigError("source and target class counts differ");
  auto [s, t] = resolve_banks(cfg, d.source, d.target);
  d.source_bank = std::move(s);
  d.target_bank = std::move(t);
  return d;
}

Trainer::Trainer(TrainConfig cfg, text::TextEmbeddingBank source_bank, text::TextEmbeddingBank target_bank)
    : cfg_(std::move(cfg)), source_bank_(std::move(source_bank)), target_bank_(std::move(target_bank)) {
  cfg_.validate();
  const auto C = cfg_.network.num_classes;
  for (const auto* bank : {&source_bank_, &target_bank_}) {
    if (bank->num_classes() != C) {
      throw ConfigError("embedding bank has C=" + std::to_string(bank->num_classes()) + ", network expects C=" +
                        std::to_string(C));
    }
    if (bank->dim() != cfg_.network.text_dim) {
      throw ConfigError("embedding bank has d=" + std::to_string(bank->dim()) + ", text_dim is " +
                        std::to_string(cfg_.network.text_dim));
    }
  }
  torch::manual_seed(cfg_.seed);
  model_ = SegmentationModel(cfg_.network);
  if (!cfg_.backbone_weights.empty()) {
    ckpt::load_module(ckpt::read_archive(cfg_.backbone_weights), "encoder", *model_->encoder);
  }
  d_main_ = adv::Discriminator(C);
  d_aux_ = adv::Discriminator(C);

  seg_params_ = named("G.", *model_, {"encoder", "neck", "aux", "head"});
  fusion_params_ = named("G.", *model_, {"projection", "fusion", "controller"});
  for (const auto& p : d_main_->named_parameters()) disc_params_.emplace_back("D_main." + p.key(), p.value());
  for (const auto& p : d_aux_->named_parameters()) disc_params_.emplace_back("D_aux." + p.key(), p.value());

  seg_opt_ = std::make_unique<torch::optim::SGD>(
      tensors_of(seg_params_),
      torch::optim::SGDOptions(cfg_.seg_lr).momentum(cfg_.seg_momentum).weight_decay(cfg_.seg_weight_decay));
  fusion_opt_ = std::make_unique<torch::optim::Adam>(
      tensors_of(fusion_params_),
      torch::optim::AdamOptions(cfg_.aux_lr).betas({cfg_.adam_beta1, cfg_.adam_beta2}));
  disc_opt_ = std::make_unique<torch::optim::Adam>(
      tensors_of(disc_params_), torch::optim::AdamOptions(cfg_.aux_lr).betas({cfg_.adam_beta1, cfg_.adam_beta2}));

  memory_ = vlcol::ClassFeatureMemory(C, fusion::kFusionDim);
  protos_ = proto::PrototypeState(C, 2048);
}

double Trainer::current_seg_lr() const {
  const double progress = static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations);
  return cfg_.seg_lr * std::pow(std::max(0.0, 1.0 - progress), cfg_.poly_power);
}

void Trainer::apply_lr_schedule() { set_lr(*seg_opt_, current_seg_lr()); }

void Trainer::check_finite(const StepRecord& rec) const {
  for (double v : {rec.ce, rec.dice, rec.seg, rec.adv, rec.vlcol, rec.proto, rec.d_main, rec.d_aux, rec.total}) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(rec.iteration) + ": " + rec.to_json().dump());
    }
  }
}

StepRecord Trainer::supervised_step(const data::Batch& source) {
  model_->train();
  auto rec = begin_step();

  auto fwd = model_->forward(source.images, source_bank_.embeddings);
  auto probs = fwd.probs();
  auto ce = losses::ce_loss(probs, source.labels);
  auto dice = losses::dice_loss(probs, source.labels);
  auto total = (ce + dice).to(torch::kDouble);
  rec.ce = scalar(ce);
  rec.dice = scalar(dice);
  rec.seg = scalar(ce + dice);
  rec.total = scalar(total);
  check_finite(rec);

  seg_opt_->zero_grad();
  fusion_opt_->zero_grad();
  total.backward();
  seg_opt_->step();
  fusion_opt_->step();
  ++iteration_;
  return rec;
}

StepRecord Trainer::begin_step() {
  apply_lr_schedule();
  StepRecord rec;
  rec.iteration = iteration_;
  rec.seg_lr = current_seg_lr();
  return rec;
}

StepRecord Trainer::train_step(const data::Batch& source, const data::Batch& target) {
  auto rec = begin_step();
  auto maps = generator_update(source, target, rec);
  discriminator_update(maps, rec);
  ++iteration_;
  return rec;
}

AdversarialMaps Trainer::generator_update(const data::Batch& source, const data::Batch& target, StepRecord& rec) {
  const auto C = cfg_.network.num_classes;
  model_->train();

  // (1) forward both domains.
  auto src = model_->forward(source.images, source_bank_.embeddings);
  auto tgt = model_->forward(target.images, target_bank_.embeddings);
  const auto h = src.f_high.size(2);
  const auto w = src.f_high.size(3);

  auto src_probs = src.probs();
  auto tgt_probs = tgt.probs();
  auto ce = losses::ce_loss(src_probs, source.labels);
  auto dice = losses::dice_loss(src_probs, source.labels);
  auto seg = ce + dice;
  if (cfg_.aux_supervised) seg = seg + 0.1 * losses::seg_loss(src.aux_probs(), source.labels);

  auto src_info_main = adv::self_information_map(src_probs);
  auto src_info_aux = adv::self_information_map(src.aux_probs());
  auto tgt_info_main = adv::self_information_map(tgt_probs);
  auto tgt_info_aux = adv::self_information_map(tgt.aux_probs());

  // (2) generator objective with discriminators frozen.
  FreezeGuard frozen{d_main_.get(), d_aux_.get()};
  torch::Tensor adv_term;
  {
    std::optional<torch::NoGradGuard> guard;
    if (cfg_.lambda_adv == 0.0) guard.emplace();
    adv_term = adv::g_adv_loss(d_main_->forward(tgt_info_main), d_aux_->forward(tgt_info_aux), cfg_.aux_adv_weight);
  }

  auto labels_down = seg::downsample_labels(source.labels, h, w);
  auto pixel_feats = vlcol::class_pixel_features(src.f_sem, labels_down, C);
  vlcol::LossResult vl;
  {
    std::optional<torch::NoGradGuard> guard;
    if (cfg_.lambda_vlcol == 0.0) guard.emplace();
    auto rows = vlcol::blended_rows(memory_, pixel_feats, cfg_.lambda_mem);
    auto t_class = cfg_.vlcol_text_grad ? src.t_class : src.t_class.detach();
    vl = vlcol::vlcol_loss(rows, t_class, pixel_feats.present);
  }

  auto src_proto_batch = proto::batch_prototypes(src.f_high, labels_down, C);
  auto tgt_pseudo = proto::pseudo_labels(tgt_probs.detach(), cfg_.pseudo_label_threshold);
  auto tgt_proto_batch = proto::batch_prototypes(tgt.f_high, seg::downsample_labels(tgt_pseudo, h, w), C);
  proto::ProtoLoss pl;
  {
    std::optional<torch::NoGradGuard> guard;
    if (cfg_.lambda_proto == 0.0) guard.emplace();
    auto zs = proto::current_prototypes(protos_, proto::Domain::Source, src_proto_batch, cfg_.beta, cfg_.swap_momentum);
    auto zt = proto::current_prototypes(protos_, proto::Domain::Target, tgt_proto_batch, cfg_.beta, cfg_.swap_momentum);
    pl = proto::proto_loss(zs, proto::initialized_after(protos_, proto::Domain::Source, src_proto_batch), zt,
                           proto::initialized_after(protos_, proto::Domain::Target, tgt_proto_batch));
  }

  // Accumulated in double so the recorded total equals the weighted sum of the recorded terms.
  // Zero-weight and skipped terms stay out of the graph.
  auto total = seg.to(torch::kDouble);
  if (cfg_.lambda_adv != 0.0) total = total + cfg_.lambda_adv * adv_term.to(torch::kDouble);
  if (cfg_.lambda_vlcol != 0.0 && !vl.skipped) total = total + cfg_.lambda_vlcol * vl.value.to(torch::kDouble);
  if (cfg_.lambda_proto != 0.0 && !pl.skipped) total = total + cfg_.lambda_proto * pl.value.to(torch::kDouble);

  rec.ce = scalar(ce);
  rec.dice = scalar(dice);
  rec.seg = scalar(seg);
  rec.adv = scalar(adv_term);
  rec.vlcol = scalar(vl.value);
  rec.vlcol_skipped = vl.skipped;
  rec.proto = scalar(pl.value);
  rec.proto_skipped = pl.skipped;
  rec.total = scalar(total);
  check_finite(rec);

  seg_opt_->zero_grad();
  fusion_opt_->zero_grad();
  total.backward();
  seg_opt_->step();
  fusion_opt_->step();

  // (3) EMA state.
  vlcol::memory_update(memory_, pixel_feats, cfg_.lambda_mem);
  proto::ema_update(protos_, proto::Domain::Source, src_proto_batch, cfg_.beta, cfg_.swap_momentum);
  proto::ema_update(protos_, proto::Domain::Target, tgt_proto_batch, cfg_.beta, cfg_.swap_momentum);

  return {src_info_main.detach(), src_info_aux.detach(), tgt_info_main.detach(), tgt_info_aux.detach()};
}

void Trainer::discriminator_update(const AdversarialMaps& maps, StepRecord& rec) {
  d_main_->train();
  d_aux_->train();
  // Source maps are labelled 1, target maps 0.
  auto d_main = adv::d_loss(d_main_->forward(maps.source_main), d_main_->forward(maps.target_main));
  auto d_aux = adv::d_loss(d_aux_->forward(maps.source_aux), d_aux_->forward(maps.target_aux));
  rec.d_main = scalar(d_main);
  rec.d_aux = scalar(d_aux);
  check_finite(rec);
  disc_opt_->zero_grad();
  (d_main + d_aux).backward();
  disc_opt_->step();
}

torch::Tensor Trainer::predict(const torch::Tensor& images, bool target_domain) {
  torch::NoGradGuard no_grad;
  model_->eval();
  auto fwd = model_->forward(images, bank(target_domain).embeddings);
  return fwd.logits.argmax(1);
}

metrics::EvalReport Trainer::evaluate(const data::SliceDataset& dataset, const std::vector<std::string>& subject_ids,
                                      bool target_domain) {
  if (!dataset.labeled()) throw ConfigError("evaluation needs a labeled dataset");
  std::vector<metrics::SubjectSlices> subjects;
  for (const auto& id : subject_ids) {
    const auto& subj = dataset.subject(id);
    metrics::SubjectSlices s;
    s.id = id;
    for (size_t start = 0; start < subj.slices.size(); start += static_cast<size_t>(cfg_.eval_batch)) {
      const auto end = std::min(subj.slices.size(), start + static_cast<size_t>(cfg_.eval_batch));
      std::vector<torch::Tensor> imgs;
      for (size_t i = start; i < end; ++i) imgs.push_back(subj.slices[i].image);
      auto pred = predict(torch::stack(imgs), target_domain);
      for (size_t i = start; i < end; ++i) {
        s.predictions.push_back(pred[static_cast<int64_t>(i - start)]);
        s.ground_truth.push_back(*subj.slices[i].label);
      }
    }
    subjects.push_back(std::move(s));
  }
  return metrics::evaluate_volume(subjects, cfg_.network.num_classes, dataset.spacing, dataset.class_names);
}

ckpt::Archive Trainer::to_archive() const {
  ckpt::Archive a;
  a.header["config"] = cfg_.to_json();
  a.header["architecture"] = hex64(cfg_.architecture_hash());
  a.header["iteration"] = iteration_;
  a.header["source_modality"] = text::to_string(source_bank_.modality);
  a.header["target_modality"] = text::to_string(target_bank_.modality);
  ckpt::save_module(a, "G", *model_);
  ckpt::save_module(a, "D_main", *d_main_);
  ckpt::save_module(a, "D_aux", *d_aux_);
  ckpt::save_sgd(a, "opt_seg", *seg_opt_, seg_params_);
  ckpt::save_adam(a, "opt_fusion", *fusion_opt_, fusion_params_);
  ckpt::save_adam(a, "opt_disc", *disc_opt_, disc_params_);
  a.put("memory/features", memory_.features);
  a.put("memory/flags", flags_tensor(memory_.flags));
  a.put("proto/source", protos_.source);
  a.put("proto/target", protos_.target);
  a.put("proto/source_init", flags_tensor(protos_.source_init));
  a.put("proto/target_init", flags_tensor(protos_.target_init));
  return a;
}

void Trainer::save(const fs::path& path) const { ckpt::write_archive(to_archive(), path); }

void Trainer::load(const fs::path& path) { load(ckpt::read_archive(path)); }

void Trainer::load(const ckpt::Archive& a) {
  const auto expected = hex64(cfg_.architecture_hash());
  const auto found = a.header.value("architecture", std::string());
  if (found != expected) {
    std::string detail;
    if (a.header.contains("config")) {
      try {
        const auto other = TrainConfig::from_json(a.header["config"]);
        detail = " (checkpoint: backbone=" + other.network.backbone.name +
                 " C=" + std::to_string(other.network.num_classes) +
                 " text_dim=" + std::to_string(other.network.text_dim) + ")";
      } catch (const Error&) {
      }
    }
    throw ConfigError("checkpoint architecture " + found + " does not match config " + expected + detail);
  }
  ckpt::load_module(a, "G", *model_);
  ckpt::load_module(a, "D_main", *d_main_);
  ckpt::load_module(a, "D_aux", *d_aux_);
  ckpt::load_sgd(a, "opt_seg", *seg_opt_, seg_params_);
  ckpt::load_adam(a, "opt_fusion", *fusion_opt_, fusion_params_);
  ckpt::load_adam(a, "opt_disc", *disc_opt_, disc_params_);
  {
    torch::NoGradGuard no_grad;
    memory_.features.copy_(a.get("memory/features"));
    memory_.flags = flags_from(a.get("memory/flags"));
    protos_.source.copy_(a.get("proto/source"));
    protos_.target.copy_(a.get("proto/target"));
    protos_.source_init = flags_from(a.get("proto/source_init"));
    protos_.target_init = flags_from(a.get("proto/target_init"));
  }
  iteration_ = a.header.at("iteration").get<int64_t>();
}

std::pair<data::Batch, data::Batch> draw_batches(const TrainConfig& cfg, const data::SliceSampler& source,
                                                 const data::SliceSampler& target, int64_t iteration) {
  const auto k = static_cast<uint64_t>(iteration);
  return {source.sample(cfg.batch_size, mix_seed(cfg.seed, 2 * k), true, cfg.augment),
          target.sample(cfg.batch_size, mix_seed(cfg.seed, 2 * k + 1), false, cfg.augment)};
}

TrainResult train(const TrainConfig& cfg, const ExperimentData& data, const TrainOptions& options) {
  if (data.source.num_classes != cfg.network.num_classes) {
    throw ConfigError("dataset has C=" + std::to_string(data.source.num_classes) + ", config num_classes=" +
                      std::to_string(cfg.network.num_classes));
  }
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  {
    std::ofstream cfg_out(out / "config.json");
    cfg_out << cfg.to_json().dump(2) << "\n";
  }

  Trainer trainer(cfg, data.source_bank, data.target_bank);
  TrainResult result;
  result.log_path = out / "metrics.jsonl";
  result.final_checkpoint = out / "final.ckpt";
  if (options.resume) {
    trainer.load(*options.resume);
    if (fs::exists(out / "best.json")) {
      std::ifstream in(out / "best.json");
      const auto j = json::parse(in);
      result.best_target_dice = j.at("mean_dice").get<double>();
      result.best_checkpoint = out / "best.ckpt";
    }
  }
  std::ofstream log(result.log_path, options.resume ? std::ios::app : std::ios::trunc);

  data::SliceSampler src_sampler(data.source, data.source.split.train);
  data::SliceSampler tgt_sampler(data.target, data.target.split.train);
  const int64_t stop = std::min(cfg.iterations, options.stop_at.value_or(cfg.iterations));

  while (trainer.iteration() < stop) {
    const auto k = trainer.iteration();
    auto [sb, tb] = draw_batches(cfg, src_sampler, tgt_sampler, k);
    auto rec = trainer.train_step(sb, tb);
    json line = rec.to_json();

    const bool last = trainer.iteration() == cfg.iterations;
    if (cfg.eval_every > 0 && (trainer.iteration() % cfg.eval_every == 0 || last) && data.target.labeled()) {
      auto report = trainer.evaluate(data.target, data.target.split.test, true);
      line["target_test_mean_dice"] = report.mean_dice;
      if (!result.best_target_dice || report.mean_dice > *result.best_target_dice) {
        result.best_target_dice = report.mean_dice;
        result.best_checkpoint = out / "best.ckpt";
        trainer.save(*result.best_checkpoint);
        std::ofstream best(out / "best.json");
        best << json{{"iteration", trainer.iteration()}, {"mean_dice", report.mean_dice}}.dump() << "\n";
      }
    }
    if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0) {
      trainer.save(out / ("iter_" + std::to_string(trainer.iteration()) + ".ckpt"));
    }
    log << line.dump() << "\n";
    log.flush();
    if (!options.quiet && (k % 50 == 0 || last)) {
      std::cerr << "iter " << trainer.iteration() << "/" << cfg.iterations << " seg=" << rec.seg
                << " adv=" << rec.adv << " vlcol=" << rec.vlcol << " proto=" << rec.proto
                << " d=" << rec.d_main + rec.d_aux << "\n";
    }
    result.history.push_back(rec);
  }
  trainer.save(result.final_checkpoint);
  return result;
}

metrics::EvalReport evaluate_checkpoint(const fs::path& checkpoint, const TrainConfig& cfg, const ExperimentData& data,
                                        const data::SliceDataset& dataset, const std::vector<std::string>& ids,
                                        bool target_domain) {
  Trainer trainer(cfg, data.source_bank, data.target_bank);
  trainer.load(checkpoint);
  return trainer.evaluate(dataset, ids, target_domain);
}

}  // namespace tcsa::train
