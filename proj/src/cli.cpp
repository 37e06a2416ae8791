#include "tcsa/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "tcsa/common.hpp"
#include "tcsa/experiment.hpp"
#include "tcsa/gradcam.hpp"
#include "tcsa/image_io.hpp"
#include "tcsa/trainer.hpp"

namespace tcsa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthArgs {
  uint64_t seed = 0;
  std::string out;
  int64_t size = 64;
  int64_t subjects = 10;
  int64_t slices = 8;
  bool gzip = false;
};

struct TrainArgs {
  std::string config;
  int64_t iters = 0;
  std::string out;
  std::string resume;
  int64_t seed = -1;
  bool verbose = false;
};

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string domain = "target";
  std::string split = "test";
  std::string format = "json";
  std::string out;
};

struct GradcamArgs {
  std::string config;
  std::string checkpoint;
  std::string domain = "target";
  std::string subject;
  int64_t slice = 0;
  std::vector<int64_t> classes;
  std::string layer = "neck";
  std::string out;
  double alpha = 0.5;
};

struct SweepArgs {
  std::string config;
  std::string budget = "tiny";
  std::vector<uint64_t> seeds{0};
  std::string out = "runs/ablation";
  bool source_only = false;
  bool verbose = false;
};

train::TrainConfig load_config(const std::string& path) { return train::TrainConfig::load(path); }

std::vector<std::string> split_ids(const data::SliceDataset& ds, const std::string& split) {
  if (split == "test") return ds.split.test;
  if (split == "train") return ds.split.train;
  std::vector<std::string> all;
  for (const auto& s : ds.subjects) all.push_back(s.id);
  return all;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

int do_synth(const SynthArgs& a) {
  data::PhantomConfig pc = experiment::toy_phantoms();
  pc.seed = a.seed;
  pc.size = a.size;
  pc.source_subjects = pc.target_subjects = a.subjects;
  pc.slices_per_subject = a.slices;
  auto [source, target] = data::generate_phantoms(pc);
  const fs::path out(a.out);
  data::write_manifest(source, out / "source", a.gzip);
  data::write_manifest(target, out / "target", a.gzip);

  auto cfg = experiment::toy_config();
  cfg.source_data = "source";
  cfg.target_data = "target";
  cfg.output_dir = (out / "run").string();
  write_text((out / "config.json").string(), cfg.to_json().dump(2) + "\n");
  std::cout << "wrote " << source.slice_count() << " source and " << target.slice_count() << " target slices to "
            << out.string() << "\n";
  return 0;
}

int do_train(const TrainArgs& a) {
  auto cfg = load_config(a.config);
  if (a.iters > 0) cfg.iterations = a.iters;
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  cfg.validate();
  auto data = train::load_experiment_data(cfg);
  train::TrainOptions opts;
  opts.quiet = !a.verbose;
  if (!a.resume.empty()) opts.resume = a.resume;
  auto result = train::train(cfg, data, opts);
  std::cout << "final checkpoint: " << result.final_checkpoint.string() << "\n"
            << "metrics log: " << result.log_path.string() << "\n";
  if (result.best_target_dice) {
    std::cout << "best target dice: " << *result.best_target_dice << " (" << result.best_checkpoint->string() << ")\n";
  }
  return 0;
}

int do_eval(const EvalArgs& a) {
  auto cfg = load_config(a.config);
  auto data = train::load_experiment_data(cfg);
  const bool target = a.domain == "target";
  const auto& ds = target ? data.target : data.source;
  auto report = train::evaluate_checkpoint(a.checkpoint, cfg, data, ds, split_ids(ds, a.split), target);
  if (a.format == "table") {
    write_text(a.out, report.to_table());
  } else if (a.format == "csv") {
    write_text(a.out, report.to_csv());
  } else {
    write_text(a.out, report.to_json().dump(2) + "\n");
  }
  return 0;
}

int do_gradcam(const GradcamArgs& a) {
  auto cfg = load_config(a.config);
  auto data = train::load_experiment_data(cfg);
  const bool target = a.domain == "target";
  const auto& ds = target ? data.target : data.source;
  const auto& subj = ds.subject(a.subject.empty() ? split_ids(ds, "test").front() : a.subject);
  if (a.slice < 0 || a.slice >= static_cast<int64_t>(subj.slices.size())) {
    throw ConfigError("subject " + subj.id + " has " + std::to_string(subj.slices.size()) + " slices");
  }
  train::Trainer trainer(cfg, data.source_bank, data.target_bank);
  trainer.load(a.checkpoint);
  const auto& image = subj.slices[static_cast<size_t>(a.slice)].image;
  std::vector<int64_t> classes = a.classes;
  if (classes.empty()) {
    for (int64_t c = 1; c < cfg.network.num_classes; ++c) classes.push_back(c);
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  for (auto c : classes) {
    auto map = gradcam::heatmap(trainer.model(), image, trainer.bank(target).embeddings, c, a.layer);
    const auto path = out / (subj.id + "_s" + std::to_string(a.slice) + "_c" + std::to_string(c) + "_" + a.layer + ".png");
    image_io::write_png(path, image_io::heatmap_overlay(image.squeeze(0), map, a.alpha));
    std::cout << path.string() << "\n";
  }
  return 0;
}

train::TrainConfig sweep_base(const SweepArgs& a, train::ExperimentData& data) {
  train::TrainConfig cfg;
  if (!a.config.empty()) {
    cfg = load_config(a.config);
    if (a.budget != "config") experiment::apply_budget(experiment::budget_by_name(a.budget), cfg);
    data = train::load_experiment_data(cfg);
  } else {
    if (a.budget == "config") throw ConfigError("--budget config needs --config");
    cfg = experiment::toy_config();
    experiment::apply_budget(experiment::budget_by_name(a.budget), cfg);
    data = experiment::toy_data(cfg, experiment::toy_phantoms());
  }
  return cfg;
}

int do_ablate(const SweepArgs& a) {
  train::ExperimentData data;
  auto cfg = sweep_base(a, data);
  auto variants = experiment::ablation_variants(cfg);
  if (a.source_only) variants.insert(variants.begin(), experiment::source_only());
  auto rows = experiment::sweep(cfg, variants, a.seeds, data, a.out, !a.verbose);
  const std::string table = experiment::format_table(rows);
  std::cout << table;
  write_text((fs::path(a.out) / "ablation.txt").string(), table);
  write_text((fs::path(a.out) / "ablation.json").string(), experiment::to_json(rows).dump(2) + "\n");
  std::vector<experiment::Aggregate> four(rows.end() - 4, rows.end());
  std::string why;
  const bool ok = experiment::ordering_holds(four, 1.0, &why);
  std::cout << "ordering seg+adv < +proto <= +vlcol <= all (1 point slack): " << (ok ? "holds" : "violated: " + why)
            << "\n";
  return 0;
}

int do_seed_sweep(const SweepArgs& a) {
  train::ExperimentData data;
  auto cfg = sweep_base(a, data);
  experiment::Variant as_configured{"configured", cfg.lambda_adv, cfg.lambda_vlcol, cfg.lambda_proto};
  auto rows = experiment::sweep(cfg, {as_configured}, a.seeds, data, a.out, !a.verbose);
  const auto& r = rows.front();
  std::cout << experiment::format_table(rows);
  std::printf("target mean dice: %.2f +- %.2f over %zu seeds\n", r.mean_target_dice, r.std_target_dice, r.runs.size());
  write_text((fs::path(a.out) / "seed_sweep.json").string(), experiment::to_json(rows).dump(2) + "\n");
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Text-conditioned cross-modality segmentation with unsupervised domain adaptation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Write synthetic source/target phantom datasets and a starter config");
  s->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--size", synth.size, "Image height and width")->capture_default_str()->check(CLI::Range(16, 1024));
  s->add_option("--subjects", synth.subjects, "Subjects per domain")->capture_default_str()->check(CLI::Range(2, 10000));
  s->add_option("--slices", synth.slices, "Slices per subject")->capture_default_str()->check(CLI::Range(1, 10000));
  s->add_flag("--gzip", synth.gzip, "Gzip slice payloads");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train with the full objective");
  t->add_option("--config", tr.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--iters", tr.iters, "Override the iteration count (0 = use config)")->capture_default_str();
  t->add_option("--out", tr.out, "Override the output directory");
  t->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  t->add_option("--seed", tr.seed, "Override the seed (-1 = use config)")->capture_default_str();
  t->add_flag("--verbose", tr.verbose, "Print progress to stderr");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint (Dice and ASD per class)");
  e->add_option("--config", ev.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--domain", ev.domain, "Dataset to evaluate")->capture_default_str()->check(CLI::IsMember({"source", "target"}));
  e->add_option("--split", ev.split, "Subject split")->capture_default_str()->check(CLI::IsMember({"test", "train", "all"}));
  e->add_option("--format", ev.format, "Report format")->capture_default_str()->check(CLI::IsMember({"json", "table", "csv"}));
  e->add_option("--out", ev.out, "Report path (default stdout)");

  GradcamArgs gc;
  auto* g = app.add_subcommand("gradcam", "Write GradCAM heatmap overlays as PNG");
  g->add_option("--config", gc.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  g->add_option("--checkpoint", gc.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  g->add_option("--domain", gc.domain, "Dataset to draw the slice from")->capture_default_str()->check(CLI::IsMember({"source", "target"}));
  g->add_option("--subject", gc.subject, "Subject id (default: first test subject)");
  g->add_option("--slice", gc.slice, "Slice index within the subject")->capture_default_str();
  g->add_option("--class", gc.classes, "Target class (repeatable; default: all foreground classes)");
  g->add_option("--layer", gc.layer, "Layer tag: encoder stage, neck or dynconv")->capture_default_str();
  g->add_option("--alpha", gc.alpha, "Overlay opacity")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  g->add_option("--out", gc.out, "Output directory")->required();

  SweepArgs ab;
  auto* a = app.add_subcommand("ablate", "Train the four loss ablations and print a comparison table");
  a->add_option("--config", ab.config, "Base config (default: built-in phantom experiment)")->check(CLI::ExistingFile);
  a->add_option("--budget", ab.budget, "tiny, smoke, or config (use the config's iterations)")
      ->capture_default_str()
      ->check(CLI::IsMember({"tiny", "smoke", "config"}));
  a->add_option("--seeds", ab.seeds, "Comma-separated seeds")->delimiter(',')->capture_default_str();
  a->add_option("--out", ab.out, "Output directory")->capture_default_str();
  a->add_flag("--source-only", ab.source_only, "Also train the source-only baseline");
  a->add_flag("--verbose", ab.verbose, "Print progress to stderr");

  SweepArgs sw;
  sw.budget = "config";
  sw.seeds = {0, 1, 2};
  sw.out = "runs/seed_sweep";
  auto* w = app.add_subcommand("seed-sweep", "Repeat training and evaluation over seeds; report mean +- std");
  w->add_option("--config", sw.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  w->add_option("--budget", sw.budget, "config, tiny or smoke")->capture_default_str()->check(CLI::IsMember({"tiny", "smoke", "config"}));
  w->add_option("--seeds", sw.seeds, "Comma-separated seeds")->delimiter(',')->capture_default_str();
  w->add_option("--out", sw.out, "Output directory")->capture_default_str();
  w->add_flag("--verbose", sw.verbose, "Print progress to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (s->parsed()) return do_synth(synth);
    if (t->parsed()) return do_train(tr);
    if (e->parsed()) return do_eval(ev);
    if (g->parsed()) return do_gradcam(gc);
    if (a->parsed()) return do_ablate(ab);
    if (w->parsed()) return do_seed_sweep(sw);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const json::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  } catch (const c10::Error& err) {
    std::cerr << "error: " << err.what_without_backtrace() << "\n";
    return 1;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("tcsa");
  for (const auto& s : args) argv.push_back(s.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace tcsa::cli
