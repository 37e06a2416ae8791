#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

namespace tcsa::metrics {

/// Physical pixel size in mm.
struct Spacing {
  double row = 1.0;
  double col = 1.0;
};

/// 100 * 2|A n B| / (|A| + |B|) on boolean masks of equal shape; 100 when both are empty.
double dice_score(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask);

/// Dice of class c between two label maps.
double dice_score(const torch::Tensor& pred_labels, const torch::Tensor& gt_labels, int64_t c);

/// Border pixels of a 2D mask: inside pixels with a 4-neighbour outside the mask or the image.
std::vector<std::pair<int64_t, int64_t>> surface_pixels(const torch::Tensor& mask);

/// Average symmetric surface distance in mm between two 2D masks:
/// 0.5 * (mean_{a in dA} d(a, dB) + mean_{b in dB} d(b, dA)). nullopt if either mask is empty.
std::optional<double> asd(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask, Spacing spacing = {});

/// Predictions and ground truth of one subject, slice by slice (H x W label maps).
struct SubjectSlices {
  std::string id;
  std::vector<torch::Tensor> predictions;
  std::vector<torch::Tensor> ground_truth;
};

struct SubjectReport {
  std::string id;
  std::vector<double> dice;                // per foreground class
  std::vector<std::optional<double>> asd;  // per foreground class; nullopt = undefined
};

struct EvalReport {
  std::vector<int64_t> classes;  // evaluated label values (foreground: 1..C-1)
  std::vector<std::string> class_names;
  std::vector<double> dice;                // per class, mean over subjects
  std::vector<std::optional<double>> asd;  // per class, mean over subjects with a defined value
  double mean_dice = 0.0;
  std::optional<double> mean_asd;
  int64_t undefined_asd = 0;  // (subject, class) pairs without any slice where ASD is defined
  Spacing spacing;
  std::vector<SubjectReport> subjects;

  nlohmann::json to_json() const;
  std::string to_table() const;
  std::string to_csv() const;
};

/// Volume-level Dice per subject (slices stacked), slice-wise ASD averaged per subject, then both
/// averaged over subjects. Background (class 0) is excluded. Throws ConfigError on shape mismatch.
EvalReport evaluate_volume(const std::vector<SubjectSlices>& subjects, int64_t num_classes, Spacing spacing,
                           std::vector<std::string> class_names = {});

/// Checks the report schema (field presence, ranges); returns a list of problems, empty if valid.
std::vector<std::string> validate_report_json(const nlohmann::json& report);

}  // namespace tcsa::metrics
