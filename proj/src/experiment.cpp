#include "tcsa/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tcsa/common.hpp"

namespace tcsa::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

void Variant::apply(train::TrainConfig& cfg) const {
  cfg.lambda_adv = lambda_adv;
  cfg.lambda_vlcol = lambda_vlcol;
  cfg.lambda_proto = lambda_proto;
}

Variant source_only() { return {"source-only", 0.0, 0.0, 0.0}; }

std::vector<Variant> ablation_variants(const train::TrainConfig& base) {
  return {{"seg+adv", base.lambda_adv, 0.0, 0.0},
          {"seg+adv+proto", base.lambda_adv, 0.0, base.lambda_proto},
          {"seg+adv+vlcol", base.lambda_adv, base.lambda_vlcol, 0.0},
          {"all", base.lambda_adv, base.lambda_vlcol, base.lambda_proto}};
}

Variant full_method(const train::TrainConfig& base) { return ablation_variants(base).back(); }

Budget budget_by_name(const std::string& name) {
  if (name == "tiny") return {"tiny", 1000, 2.5e-3, 0};
  if (name == "smoke") return {"smoke", 10, 2.5e-3, 0};
  throw ConfigError("unknown budget '" + name + "' (expected tiny or smoke)");
}

void apply_budget(const Budget& budget, train::TrainConfig& cfg) {
  cfg.iterations = budget.iterations;
  cfg.seg_lr = budget.seg_lr;
  cfg.eval_every = budget.eval_every;
}

train::TrainConfig toy_config() {
  train::TrainConfig cfg;
  cfg.network.backbone.name = "tiny";
  cfg.network.num_classes = 5;
  cfg.network.text_dim = 512;
  cfg.stub_dim = 512;
  cfg.dataset_name = "phantom";
  cfg.class_terms = data::phantom_class_names();
  apply_budget(budget_by_name("tiny"), cfg);
  return cfg;
}

data::PhantomConfig toy_phantoms() { return data::PhantomConfig{}; }

train::ExperimentData toy_data(const train::TrainConfig& cfg, const data::PhantomConfig& phantoms) {
  auto [source, target] = data::generate_phantoms(phantoms);
  auto [sb, tb] = train::resolve_banks(cfg, source, target);
  return {std::move(source), std::move(target), std::move(sb), std::move(tb)};
}

json RunSummary::to_json() const {
  json j{{"variant", variant},
         {"seed", seed},
         {"source_test_dice", source_test_dice},
         {"target_test_dice", target_test_dice},
         {"checkpoint", checkpoint.string()}};
  j["target_test_asd"] = target_test_asd ? json(*target_test_asd) : json(nullptr);
  return j;
}

RunSummary run_variant(const train::TrainConfig& base, const Variant& variant, uint64_t seed,
                       const train::ExperimentData& data, const fs::path& out_dir, bool quiet) {
  auto cfg = base;
  variant.apply(cfg);
  cfg.seed = seed;
  cfg.output_dir = (out_dir / variant.name / ("seed" + std::to_string(seed))).string();
  train::TrainOptions opts;
  opts.quiet = quiet;
  auto result = train::train(cfg, data, opts);

  train::Trainer trainer(cfg, data.source_bank, data.target_bank);
  trainer.load(result.final_checkpoint);
  RunSummary s;
  s.variant = variant.name;
  s.seed = seed;
  s.checkpoint = result.final_checkpoint;
  s.source_test_dice = trainer.evaluate(data.source, data.source.split.test, false).mean_dice;
  auto target_report = trainer.evaluate(data.target, data.target.split.test, true);
  s.target_test_dice = target_report.mean_dice;
  s.target_test_asd = target_report.mean_asd;
  std::ofstream(fs::path(cfg.output_dir) / "summary.json") << s.to_json().dump(2) << "\n";
  return s;
}

Aggregate aggregate(const std::string& variant, std::vector<RunSummary> runs) {
  Aggregate a;
  a.variant = variant;
  a.runs = std::move(runs);
  const double n = static_cast<double>(a.runs.size());
  if (a.runs.empty()) return a;
  for (const auto& r : a.runs) {
    a.mean_target_dice += r.target_test_dice / n;
    a.mean_source_dice += r.source_test_dice / n;
  }
  for (const auto& r : a.runs) {
    a.std_target_dice += std::pow(r.target_test_dice - a.mean_target_dice, 2) / n;
    a.std_source_dice += std::pow(r.source_test_dice - a.mean_source_dice, 2) / n;
  }
  a.std_target_dice = std::sqrt(a.std_target_dice);
  a.std_source_dice = std::sqrt(a.std_source_dice);
  return a;
}

std::vector<Aggregate> sweep(const train::TrainConfig& base, const std::vector<Variant>& variants,
                             const std::vector<uint64_t>& seeds, const train::ExperimentData& data,
                             const fs::path& out_dir, bool quiet) {
  std::vector<Aggregate> rows;
  for (const auto& v : variants) {
    std::vector<RunSummary> runs;
    for (auto seed : seeds) runs.push_back(run_variant(base, v, seed, data, out_dir, quiet));
    rows.push_back(aggregate(v.name, std::move(runs)));
  }
  return rows;
}

std::string format_table(const std::vector<Aggregate>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-16s %20s %20s %6s\n", "variant", "target dice", "source dice", "seeds");
  os << line;
  for (const auto& r : rows) {
    char tgt[32], src[32];
    std::snprintf(tgt, sizeof(tgt), "%.2f +- %.2f", r.mean_target_dice, r.std_target_dice);
    std::snprintf(src, sizeof(src), "%.2f +- %.2f", r.mean_source_dice, r.std_source_dice);
    std::snprintf(line, sizeof(line), "%-16s %20s %20s %6zu\n", r.variant.c_str(), tgt, src, r.runs.size());
    os << line;
  }
  return os.str();
}

json to_json(const std::vector<Aggregate>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json runs = json::array();
    for (const auto& s : r.runs) runs.push_back(s.to_json());
    out.push_back({{"variant", r.variant},
                   {"mean_target_dice", r.mean_target_dice},
                   {"std_target_dice", r.std_target_dice},
                   {"mean_source_dice", r.mean_source_dice},
                   {"std_source_dice", r.std_source_dice},
                   {"runs", runs}});
  }
  return out;
}

bool ordering_holds(const std::vector<Aggregate>& ablation, double tolerance, std::string* why) {
  if (ablation.size() != 4) {
    if (why) *why = "expected 4 ablation rows";
    return false;
  }
  const double a = ablation[0].mean_target_dice, b = ablation[1].mean_target_dice;
  const double c = ablation[2].mean_target_dice, d = ablation[3].mean_target_dice;
  std::ostringstream os;
  bool ok = true;
  auto check = [&](double lo, double hi, const std::string& lo_name, const std::string& hi_name) {
    if (lo > hi + tolerance) {
      ok = false;
      os << lo_name << " (" << lo << ") exceeds " << hi_name << " (" << hi << ") by more than " << tolerance << "; ";
    }
  };
  check(a, b, ablation[0].variant, ablation[1].variant);
  check(b, c, ablation[1].variant, ablation[2].variant);
  check(c, d, ablation[2].variant, ablation[3].variant);
  if (why) *why = os.str();
  return ok;
}

}  // namespace tcsa::experiment
