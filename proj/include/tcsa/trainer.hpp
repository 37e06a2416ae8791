#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

#include "tcsa/adversarial.hpp"
#include "tcsa/checkpoint.hpp"
#include "tcsa/data.hpp"
#include "tcsa/metrics.hpp"
#include "tcsa/model.hpp"
#include "tcsa/prototypes.hpp"
#include "tcsa/text_semantics.hpp"
#include "tcsa/vlcol.hpp"

namespace tcsa::train {

/// Every knob of a training run. Defaults: SGD 2.5e-4 / momentum 0.9 / weight decay 5e-4 / poly 0.9
/// for the segmentation network, Adam 1e-4 for the fusion path and the discriminators, batch 4.
struct TrainConfig {
  NetworkConfig network;

  double lambda_adv = 0.003;
  double lambda_vlcol = 1.0;
  double lambda_proto = 0.1;
  /// Memory-bank decay for class pixel features.
  double lambda_mem = 0.9;
  /// Prototype momentum, multiplying the old prototype.
  double beta = 0.01;
  bool swap_momentum = false;
  double aux_adv_weight = 0.5;
  bool aux_supervised = false;
  /// 0 disables pseudo-label confidence filtering.
  double pseudo_label_threshold = 0.0;
  /// Let VLCoL gradients reach the text projection through Sigma_t.
  bool vlcol_text_grad = false;

  int64_t batch_size = 4;
  int64_t iterations = 20000;
  double seg_lr = 2.5e-4;
  double seg_momentum = 0.9;
  double seg_weight_decay = 5e-4;
  double poly_power = 0.9;
  double aux_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;

  /// Accepted for completeness; not used by any loss.
  double temperature = 0.05;
  double balance_alpha = 0.2;
  /// Alternative "feature alignment weight" knob; not used by any loss.
  double lambda_epc = 0.1;

  uint64_t seed = 0;
  bool augment = true;

  /// Optional checkpoint archive with encoder weights stored under "encoder/..." (e.g. converted
  /// ImageNet ResNet weights); loaded after initialization.
  std::string backbone_weights;
  std::string source_data;
  std::string target_data;
  std::string source_embeddings;
  std::string target_embeddings;
  std::string output_dir = "runs/default";
  std::string dataset_name = "cardiac";
  /// Class terms for prompts; empty means use the source manifest's class names.
  std::vector<std::string> class_terms;
  int64_t stub_dim = 512;
  uint64_t stub_seed = 0;

  int64_t eval_every = 0;
  int64_t checkpoint_every = 0;
  int64_t eval_batch = 16;

  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Reads a JSON file and applies TCSA_* environment overrides for paths.
  static TrainConfig load(const std::filesystem::path& path);
  void apply_env_overrides();
  /// Throws ConfigError on invalid values.
  void validate() const;
  /// Hash of the fields that determine the network layout.
  uint64_t architecture_hash() const;
};

/// Loss terms of one step, before weighting.
struct StepRecord {
  int64_t iteration = 0;
  double ce = 0, dice = 0, seg = 0, adv = 0, vlcol = 0, proto = 0;
  double d_main = 0, d_aux = 0;
  double total = 0;
  bool vlcol_skipped = false, proto_skipped = false;
  double seg_lr = 0;

  nlohmann::json to_json() const;
};

struct ExperimentData {
  data::SliceDataset source;
  data::SliceDataset target;
  text::TextEmbeddingBank source_bank;
  text::TextEmbeddingBank target_bank;
};

/// Loads manifests and embedding banks named by the config (stub banks when no path is given).
ExperimentData load_experiment_data(const TrainConfig& cfg);

/// Embedding banks for the two domains: files when configured, otherwise deterministic stubs.
std::pair<text::TextEmbeddingBank, text::TextEmbeddingBank> resolve_banks(const TrainConfig& cfg,
                                                                          const data::SliceDataset& source,
                                                                          const data::SliceDataset& target);

/// Detached self-information maps handed from the generator phase to the discriminator phase.
struct AdversarialMaps {
  torch::Tensor source_main, source_aux, target_main, target_aux;
};

/// Generator, two discriminators, optimizers and EMA state of one training run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, text::TextEmbeddingBank source_bank, text::TextEmbeddingBank target_bank);

  /// One alternating update: generator on the full objective (discriminators frozen), memory and
  /// prototype EMA updates, then both discriminators on detached self-information maps.
  StepRecord train_step(const data::Batch& source, const data::Batch& target);

  /// Generator half of train_step, including the EMA updates; fills the generator terms of `rec`
  /// and returns the maps D needs.
  AdversarialMaps generator_update(const data::Batch& source, const data::Batch& target, StepRecord& rec);
  /// Discriminator half of train_step: one Adam step on both discriminators; fills d_main and d_aux.
  void discriminator_update(const AdversarialMaps& maps, StepRecord& rec);

  /// Plain supervised step on source data (L_seg only); reference for the degenerate-weight case.
  StepRecord supervised_step(const data::Batch& source);

  /// Argmax label maps for B x 1 x H x W images of the given domain.
  torch::Tensor predict(const torch::Tensor& images, bool target_domain);

  /// Per-subject evaluation of one domain's subjects.
  metrics::EvalReport evaluate(const data::SliceDataset& dataset, const std::vector<std::string>& subject_ids,
                               bool target_domain);

  ckpt::Archive to_archive() const;
  void save(const std::filesystem::path& path) const;
  /// Restores a checkpoint; throws ConfigError when it was written for a different architecture.
  void load(const std::filesystem::path& path);
  void load(const ckpt::Archive& archive);

  SegmentationModel& model() { return model_; }
  adv::Discriminator& d_main() { return d_main_; }
  adv::Discriminator& d_aux() { return d_aux_; }
  const vlcol::ClassFeatureMemory& memory() const { return memory_; }
  const proto::PrototypeState& prototypes() const { return protos_; }
  const TrainConfig& config() const { return cfg_; }
  const text::TextEmbeddingBank& bank(bool target_domain) const { return target_domain ? target_bank_ : source_bank_; }
  int64_t iteration() const { return iteration_; }
  double current_seg_lr() const;

  const torch::optim::SGD& segmentation_optimizer() const { return *seg_opt_; }
  const torch::optim::Adam& fusion_optimizer() const { return *fusion_opt_; }
  const torch::optim::Adam& discriminator_optimizer() const { return *disc_opt_; }

 private:
  void apply_lr_schedule();
  StepRecord begin_step();
  void check_finite(const StepRecord& rec) const;

  TrainConfig cfg_;
  text::TextEmbeddingBank source_bank_;
  text::TextEmbeddingBank target_bank_;
  SegmentationModel model_{nullptr};
  adv::Discriminator d_main_{nullptr};
  adv::Discriminator d_aux_{nullptr};
  ckpt::NamedParams seg_params_, fusion_params_, disc_params_;
  std::unique_ptr<torch::optim::SGD> seg_opt_;
  std::unique_ptr<torch::optim::Adam> fusion_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
  vlcol::ClassFeatureMemory memory_;
  proto::PrototypeState protos_;
  int64_t iteration_ = 0;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  std::filesystem::path log_path;
  std::optional<double> best_target_dice;
  std::vector<StepRecord> history;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  /// Stop early after this many total iterations (the lr schedule still uses cfg.iterations).
  std::optional<int64_t> stop_at;
  bool quiet = true;
};

/// Runs the configured number of iterations with periodic target-test evaluation, best-Dice
/// checkpoint retention and a JSON-lines log (one record per iteration).
TrainResult train(const TrainConfig& cfg, const ExperimentData& data, const TrainOptions& options = {});

/// Source and target batches drawn for iteration k; a pure function of (config, k).
std::pair<data::Batch, data::Batch> draw_batches(const TrainConfig& cfg, const data::SliceSampler& source,
                                                 const data::SliceSampler& target, int64_t iteration);

/// Loads a checkpoint and evaluates the main branch on `ids` of `dataset`.
metrics::EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const TrainConfig& cfg,
                                        const ExperimentData& data, const data::SliceDataset& dataset,
                                        const std::vector<std::string>& ids, bool target_domain);

}  // namespace tcsa::train
