#include "tcsa/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "tcsa/common.hpp"

namespace tcsa::metrics {

using nlohmann::json;

double dice_score(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask) {
  if (pred_mask.sizes() != gt_mask.sizes()) throw ConfigError("dice_score: mask shapes differ");
  auto a = pred_mask.to(torch::kBool);
  auto b = gt_mask.to(torch::kBool);
  const auto na = a.sum().item<int64_t>();
  const auto nb = b.sum().item<int64_t>();
  if (na + nb == 0) return 100.0;
  const auto inter = (a & b).sum().item<int64_t>();
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double dice_score(const torch::Tensor& pred_labels, const torch::Tensor& gt_labels, int64_t c) {
  return dice_score(pred_labels == c, gt_labels == c);
}

std::vector<std::pair<int64_t, int64_t>> surface_pixels(const torch::Tensor& mask) {
  TORCH_CHECK(mask.dim() == 2, "surface_pixels expects a 2D mask");
  auto m = mask.to(torch::kBool).contiguous().to(torch::kCPU);
  const auto h = m.size(0);
  const auto w = m.size(1);
  auto acc = m.accessor<bool, 2>();
  auto inside = [&](int64_t r, int64_t c) { return r >= 0 && r < h && c >= 0 && c < w && acc[r][c]; };
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      if (!acc[r][c]) continue;
      if (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1)) out.emplace_back(r, c);
    }
  }
  return out;
}

namespace {

double mean_min_distance(const std::vector<std::pair<int64_t, int64_t>>& from,
                         const std::vector<std::pair<int64_t, int64_t>>& to, Spacing s) {
  double total = 0.0;
  for (const auto& [r, c] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [r2, c2] : to) {
      const double dr = static_cast<double>(r - r2) * s.row;
      const double dc = static_cast<double>(c - c2) * s.col;
      best = std::min(best, dr * dr + dc * dc);
    }
    total += std::sqrt(best);
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

std::optional<double> asd(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask, Spacing spacing) {
  if (pred_mask.sizes() != gt_mask.sizes()) throw ConfigError("asd: mask shapes differ");
  const auto sa = surface_pixels(pred_mask);
  const auto sb = surface_pixels(gt_mask);
  if (sa.empty() || sb.empty()) return std::nullopt;
  return 0.5 * (mean_min_distance(sa, sb, spacing) + mean_min_distance(sb, sa, spacing));
}

EvalReport evaluate_volume(const std::vector<SubjectSlices>& subjects, int64_t num_classes, Spacing spacing,
                           std::vector<std::string> class_names) {
  EvalReport report;
  report.spacing = spacing;
  for (int64_t c = 1; c < num_classes; ++c) {
    report.classes.push_back(c);
    report.class_names.push_back(static_cast<size_t>(c) < class_names.size() ? class_names[static_cast<size_t>(c)]
                                                                             : "class" + std::to_string(c));
  }
  const auto k = report.classes.size();
  std::vector<double> dice_sum(k, 0.0), asd_sum(k, 0.0);
  std::vector<int64_t> asd_n(k, 0);

  for (const auto& subj : subjects) {
    if (subj.predictions.size() != subj.ground_truth.size()) {
      throw ConfigError("subject " + subj.id + ": prediction and ground-truth slice counts differ");
    }
    if (subj.predictions.empty()) throw ConfigError("subject " + subj.id + " has no slices");
    for (size_t i = 0; i < subj.predictions.size(); ++i) {
      if (subj.predictions[i].sizes() != subj.ground_truth[i].sizes() || subj.predictions[i].dim() != 2) {
        throw ConfigError("subject " + subj.id + ": slice " + std::to_string(i) + " shape mismatch");
      }
    }
    auto pred = torch::stack(subj.predictions);
    auto gt = torch::stack(subj.ground_truth);
    SubjectReport sr;
    sr.id = subj.id;
    for (size_t j = 0; j < k; ++j) {
      const auto c = report.classes[j];
      sr.dice.push_back(dice_score(pred, gt, c));
      double slice_sum = 0.0;
      int64_t slice_n = 0;
      for (size_t i = 0; i < subj.predictions.size(); ++i) {
        auto a = subj.predictions[i] == c;
        auto b = subj.ground_truth[i] == c;
        if (!a.any().item<bool>() && !b.any().item<bool>()) continue;
        if (auto d = asd(a, b, spacing)) {
          slice_sum += *d;
          ++slice_n;
        }
      }
      if (slice_n > 0) {
        sr.asd.emplace_back(slice_sum / static_cast<double>(slice_n));
      } else {
        sr.asd.emplace_back(std::nullopt);
      }
      dice_sum[j] += sr.dice.back();
      if (sr.asd.back()) {
        asd_sum[j] += *sr.asd.back();
        ++asd_n[j];
      } else {
        ++report.undefined_asd;
      }
    }
    report.subjects.push_back(std::move(sr));
  }

  const auto n_subj = static_cast<double>(subjects.size());
  double asd_total = 0.0;
  int64_t asd_classes = 0;
  for (size_t j = 0; j < k; ++j) {
    report.dice.push_back(subjects.empty() ? 0.0 : dice_sum[j] / n_subj);
    if (asd_n[j] > 0) {
      report.asd.emplace_back(asd_sum[j] / static_cast<double>(asd_n[j]));
      asd_total += *report.asd.back();
      ++asd_classes;
    } else {
      report.asd.emplace_back(std::nullopt);
    }
  }
  double dsum = 0.0;
  for (double d : report.dice) dsum += d;
  report.mean_dice = k ? dsum / static_cast<double>(k) : 0.0;
  if (asd_classes > 0) report.mean_asd = asd_total / static_cast<double>(asd_classes);
  return report;
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

}  // namespace

json EvalReport::to_json() const {
  json per_class = json::array();
  for (size_t j = 0; j < classes.size(); ++j) {
    per_class.push_back({{"class", classes[j]}, {"name", class_names[j]}, {"dice", dice[j]}, {"asd_mm", optional_json(asd[j])}});
  }
  json subj = json::array();
  for (const auto& s : subjects) {
    json asd_list = json::array();
    for (const auto& a : s.asd) asd_list.push_back(optional_json(a));
    subj.push_back({{"id", s.id}, {"dice", s.dice}, {"asd_mm", asd_list}});
  }
  return {{"mean_dice", mean_dice},
          {"mean_asd_mm", optional_json(mean_asd)},
          {"undefined_asd", undefined_asd},
          {"spacing_mm", {spacing.row, spacing.col}},
          {"per_class", per_class},
          {"subjects", subj}};
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(24) << "class" << std::right << std::setw(10) << "Dice(%)" << std::setw(10) << "ASD(mm)"
     << "\n";
  for (size_t j = 0; j < classes.size(); ++j) {
    os << std::left << std::setw(24) << class_names[j] << std::right << std::setw(10) << fmt(dice[j]) << std::setw(10)
       << fmt(asd[j]) << "\n";
  }
  os << std::left << std::setw(24) << "mean" << std::right << std::setw(10) << fmt(mean_dice) << std::setw(10)
     << fmt(mean_asd) << "\n";
  if (undefined_asd > 0) os << "note: ASD undefined for " << undefined_asd << " subject/class pairs (empty mask)\n";
  return os.str();
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "subject,class,name,dice,asd_mm\n";
  for (const auto& s : subjects) {
    for (size_t j = 0; j < classes.size(); ++j) {
      os << s.id << "," << classes[j] << "," << class_names[j] << "," << fmt(s.dice[j], 4) << ","
         << (s.asd[j] ? fmt(*s.asd[j], 4) : "") << "\n";
    }
  }
  return os.str();
}

std::vector<std::string> validate_report_json(const json& r) {
  std::vector<std::string> problems;
  auto need = [&](const char* key) {
    if (!r.contains(key)) problems.push_back(std::string("missing field '") + key + "'");
    return r.contains(key);
  };
  if (need("mean_dice") && (!r["mean_dice"].is_number() || r["mean_dice"] < 0 || r["mean_dice"] > 100)) {
    problems.push_back("mean_dice outside [0, 100]");
  }
  if (need("mean_asd_mm") && !(r["mean_asd_mm"].is_null() || (r["mean_asd_mm"].is_number() && r["mean_asd_mm"] >= 0))) {
    problems.push_back("mean_asd_mm must be null or >= 0");
  }
  need("undefined_asd");
  need("spacing_mm");
  if (need("per_class")) {
    for (const auto& c : r["per_class"]) {
      if (!c.contains("class") || !c.contains("dice") || !c.contains("asd_mm")) {
        problems.push_back("per_class entry missing class/dice/asd_mm");
      } else if (c["dice"] < 0 || c["dice"] > 100) {
        problems.push_back("per_class dice outside [0, 100]");
      }
    }
  }
  if (need("subjects")) {
    for (const auto& s : r["subjects"]) {
      if (!s.contains("id") || !s.contains("dice") || !s.contains("asd_mm")) problems.push_back("subject entry incomplete");
    }
  }
  return problems;
}

}  // namespace tcsa::metrics
