#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "tcsa/metrics.hpp"
#include "tcsa/text_semantics.hpp"

namespace tcsa::data {

struct Slice {
  torch::Tensor image;                // 1 x H x W float32 in [-1, 1]
  std::optional<torch::Tensor> label;  // H x W int64
};

struct Subject {
  std::string id;
  std::vector<Slice> slices;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Preprocessed 2D slices grouped by subject. Immutable once built.
struct SliceDataset {
  text::Modality modality = text::Modality::CT;
  metrics::Spacing spacing;
  int64_t num_classes = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<std::string> class_names;
  std::vector<Subject> subjects;
  Split split;

  bool labeled() const;
  int64_t slice_count() const;
  const Subject& subject(const std::string& id) const;
};

/// Subject-level train/test partition: ids shuffled with `seed`, first round(fraction * n) train.
Split subject_split(std::vector<std::string> ids, uint64_t seed = 42, double train_fraction = 0.8);

/// Percentile (1st/99th) clipping followed by min-max scaling to [-1, 1].
torch::Tensor normalize_intensity(const torch::Tensor& image);

/// Reads `dir/manifest.json` and its payloads (raw or gzip). Throws IngestError naming the culprit.
SliceDataset load_manifest(const std::filesystem::path& dir);

/// Writes a manifest plus per-slice payloads under `dir` (".bin.gz" when gzip is set).
void write_manifest(const SliceDataset& dataset, const std::filesystem::path& dir, bool gzip = false);

/// Synthetic cross-modality phantoms: an organ-like blob with a cavity, a surrounding wall and an
/// adjacent vessel-like structure on background (C = 5).
struct PhantomConfig {
  uint64_t seed = 0;
  int64_t source_subjects = 10;
  int64_t target_subjects = 10;
  int64_t slices_per_subject = 8;
  int64_t size = 64;
  int64_t num_classes = 5;
  double size_jitter = 0.12;
  text::Modality source_modality = text::Modality::MRI;
  text::Modality target_modality = text::Modality::CT;
  double source_noise = 0.03;
  double target_noise = 0.05;
  double bias_field = 0.3;
  /// Per-class tissue response of each modality before noise (index = class).
  std::vector<double> source_lut{0.10, 0.45, 0.90, 0.30, 0.70};
  std::vector<double> target_lut{0.90, 0.55, 0.10, 0.70, 0.30};
};

std::vector<std::string> phantom_class_names();

/// Returns (source, target); both carry labels, target labels are meant for evaluation only.
std::pair<SliceDataset, SliceDataset> generate_phantoms(const PhantomConfig& cfg);

struct AugmentParams {
  double scale = 1.0;            // 0.8 - 1.2
  double angle_deg = 0.0;        // +-15
  double intensity_scale = 1.0;  // 0.9 - 1.1
  double intensity_shift = 0.0;  // +-0.1

  static AugmentParams sample(uint64_t seed);
};

/// Same geometric transform on image (bilinear) and label (nearest); intensity jitter on image only.
std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label,
                                                const AugmentParams& params);
std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label, uint64_t seed);

struct Batch {
  torch::Tensor images;  // B x 1 x H x W
  torch::Tensor labels;  // B x H x W (undefined for unlabeled draws)
};

/// Uniform random draws of 2D slices from a subset of subjects. Reentrant: sample() is const and
/// all randomness derives from the seed argument.
class SliceSampler {
 public:
  SliceSampler(const SliceDataset& dataset, const std::vector<std::string>& subject_ids);

  Batch sample(int64_t batch_size, uint64_t seed, bool with_labels, bool augment) const;
  size_t size() const { return index_.size(); }

 private:
  const SliceDataset* dataset_;
  std::vector<std::pair<size_t, size_t>> index_;  // (subject, slice)
};

}  // namespace tcsa::data
