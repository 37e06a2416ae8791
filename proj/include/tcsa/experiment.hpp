#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcsa/data.hpp"
#include "tcsa/trainer.hpp"

namespace tcsa::experiment {

/// Loss-weight setting of one training run.
struct Variant {
  std::string name;
  double lambda_adv = 0.0;
  double lambda_vlcol = 0.0;
  double lambda_proto = 0.0;

  void apply(train::TrainConfig& cfg) const;
};

/// All weights zero.
Variant source_only();
/// The four ablation rows, in order: seg+adv, seg+adv+proto, seg+adv+vlcol, all terms.
/// Enabled terms take their weights from `base`.
std::vector<Variant> ablation_variants(const train::TrainConfig& base);
/// All terms at the weights of `base`.
Variant full_method(const train::TrainConfig& base);

/// Desk-scale training budget. "tiny" is the calibrated toy setting, "smoke" a few iterations for
/// plumbing checks.
struct Budget {
  std::string name;
  int64_t iterations = 0;
  double seg_lr = 0.0;
  int64_t eval_every = 0;
};
Budget budget_by_name(const std::string& name);
void apply_budget(const Budget& budget, train::TrainConfig& cfg);

/// Base configuration of the toy adaptation experiment (tiny backbone, C = 5, 64 x 64 phantoms).
train::TrainConfig toy_config();
/// Phantom settings used by the toy experiment.
data::PhantomConfig toy_phantoms();
/// Phantoms plus stub text banks for `cfg`.
train::ExperimentData toy_data(const train::TrainConfig& cfg, const data::PhantomConfig& phantoms);

struct RunSummary {
  std::string variant;
  uint64_t seed = 0;
  double source_test_dice = 0.0;
  double target_test_dice = 0.0;
  std::optional<double> target_test_asd;
  std::filesystem::path checkpoint;

  nlohmann::json to_json() const;
};

/// Trains `variant` with `seed` under `out_dir/<variant>/seed<k>` and evaluates the final
/// checkpoint on the source and target test subjects.
RunSummary run_variant(const train::TrainConfig& base, const Variant& variant, uint64_t seed,
                       const train::ExperimentData& data, const std::filesystem::path& out_dir, bool quiet = true);

struct Aggregate {
  std::string variant;
  std::vector<RunSummary> runs;
  double mean_target_dice = 0.0;
  double std_target_dice = 0.0;
  double mean_source_dice = 0.0;
  double std_source_dice = 0.0;
};

/// Mean and (population) standard deviation of per-seed results.
Aggregate aggregate(const std::string& variant, std::vector<RunSummary> runs);

/// Runs every variant over every seed.
std::vector<Aggregate> sweep(const train::TrainConfig& base, const std::vector<Variant>& variants,
                             const std::vector<uint64_t>& seeds, const train::ExperimentData& data,
                             const std::filesystem::path& out_dir, bool quiet = true);

/// Fixed-width text table: variant, mean target Dice +- std, mean source Dice, seeds.
std::string format_table(const std::vector<Aggregate>& rows);
nlohmann::json to_json(const std::vector<Aggregate>& rows);

/// Checks the ablation ordering seg+adv < +proto <= +vlcol <= all with `tolerance` Dice points of
/// slack on each comparison. Expects the four rows in ablation_variants() order.
bool ordering_holds(const std::vector<Aggregate>& ablation, double tolerance, std::string* why = nullptr);

}  // namespace tcsa::experiment
