#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "tcsa/checkpoint.hpp"
#include "tcsa/common.hpp"
#include "tcsa/experiment.hpp"
#include "tcsa/trainer.hpp"
#include "test_util.hpp"

using namespace tcsa;
using namespace tcsa::train;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  TrainConfig cfg = testutil::tiny_config();
  ExperimentData data;
  std::unique_ptr<data::SliceSampler> src, tgt;

  explicit Fixture(TrainConfig c = testutil::tiny_config()) : cfg(std::move(c)) {
    data = experiment::toy_data(cfg, testutil::tiny_phantoms());
    src = std::make_unique<data::SliceSampler>(data.source, data.source.split.train);
    tgt = std::make_unique<data::SliceSampler>(data.target, data.target.split.train);
  }
  std::pair<data::Batch, data::Batch> batches(int64_t k) const { return draw_batches(cfg, *src, *tgt, k); }
  Trainer trainer() const { return Trainer(cfg, data.source_bank, data.target_bank); }
};

void expect_archives_equal(const ckpt::Archive& a, const ckpt::Archive& b) {
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    ASSERT_TRUE(b.has(name)) << name;
    EXPECT_TRUE(torch::equal(t, b.get(name))) << name;
  }
}

size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  std::string line;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

}  // namespace

TEST(TrainConfig, JsonRoundTrip) {
  auto cfg = testutil::tiny_config();
  cfg.lambda_adv = 0.01;
  cfg.swap_momentum = true;
  cfg.class_terms = {"a", "b", "c", "d", "e"};
  auto j = cfg.to_json();
  auto back = TrainConfig::from_json(j);
  EXPECT_EQ(back.to_json(), j);
  EXPECT_EQ(back.architecture_hash(), cfg.architecture_hash());
}

TEST(TrainConfig, DefaultValues) {
  TrainConfig cfg;
  EXPECT_EQ(cfg.lambda_adv, 0.003);
  EXPECT_EQ(cfg.lambda_vlcol, 1.0);
  EXPECT_EQ(cfg.lambda_proto, 0.1);
  EXPECT_EQ(cfg.beta, 0.01);
  EXPECT_EQ(cfg.batch_size, 4);
  EXPECT_EQ(cfg.iterations, 20000);
  EXPECT_EQ(cfg.seg_lr, 2.5e-4);
  EXPECT_EQ(cfg.seg_momentum, 0.9);
  EXPECT_EQ(cfg.seg_weight_decay, 5e-4);
  EXPECT_EQ(cfg.aux_lr, 1e-4);
  EXPECT_EQ(cfg.network.backbone.name, "resnet101");
  EXPECT_NO_THROW(cfg.validate());
}

TEST(TrainConfig, UnknownKeyAndBadValuesRejected) {
  EXPECT_THROW(TrainConfig::from_json({{"lamda_adv", 0.1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"lambda_adv", -1.0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"beta", 1.5}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"batch_size", 0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"backbone", "vgg16"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"heads", 3}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"iterations", "many"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json::array()), ConfigError);
}

TEST(TrainConfig, LoadResolvesRelativePathsAndEnvOverrides) {
  testutil::TempDir dir;
  fs::create_directories(dir.path() / "cfg");
  std::ofstream(dir.path() / "cfg" / "c.json") << R"({"source_data": "../src", "target_data": "/abs/tgt", "backbone": "tiny"})";
  ::unsetenv("TCSA_OUTPUT_DIR");
  auto cfg = TrainConfig::load(dir.path() / "cfg" / "c.json");
  EXPECT_EQ(fs::path(cfg.source_data), (dir.path() / "src").lexically_normal());
  EXPECT_EQ(cfg.target_data, "/abs/tgt");
  ::setenv("TCSA_OUTPUT_DIR", "/tmp/elsewhere", 1);
  ::setenv("TCSA_TARGET_DATA", "/tmp/t2", 1);
  cfg = TrainConfig::load(dir.path() / "cfg" / "c.json");
  ::unsetenv("TCSA_OUTPUT_DIR");
  ::unsetenv("TCSA_TARGET_DATA");
  EXPECT_EQ(cfg.output_dir, "/tmp/elsewhere");
  EXPECT_EQ(cfg.target_data, "/tmp/t2");
  EXPECT_THROW(TrainConfig::load(dir.path() / "missing.json"), ConfigError);
}

TEST(Banks, StubBanksShareVocabularyAcrossDomains) {
  Fixture f;
  EXPECT_EQ(f.data.source_bank.modality, text::Modality::MRI);
  EXPECT_EQ(f.data.target_bank.modality, text::Modality::CT);
  EXPECT_EQ(f.data.source_bank.num_classes(), 5);
  EXPECT_EQ(f.data.source_bank.dim(), 32);
  auto cos = (f.data.source_bank.embeddings * f.data.target_bank.embeddings).sum(1);
  EXPECT_GT(cos.min().item<float>(), 0.3f);
  EXPECT_LT(cos.max().item<float>(), 1.0f - 1e-4f);
}

TEST(Banks, FileBankWithWrongModalityRejected) {
  Fixture f;
  testutil::TempDir dir;
  text::save_embedding_bank(f.data.target_bank, dir.path());  // CT bank
  auto cfg = f.cfg;
  cfg.source_embeddings = dir.path().string();                // source data is MRI
  EXPECT_THROW(resolve_banks(cfg, f.data.source, f.data.target), ConfigError);
  cfg.source_embeddings.clear();
  cfg.target_embeddings = dir.path().string();
  auto [s, t] = resolve_banks(cfg, f.data.source, f.data.target);
  EXPECT_TRUE(torch::equal(t.embeddings, f.data.target_bank.embeddings));
}

TEST(Trainer, BankShapeMismatchRejected) {
  Fixture f;
  auto bad = f.data.source_bank;
  bad.embeddings = bad.embeddings.narrow(0, 0, 4);
  bad.classes.pop_back();
  EXPECT_THROW(Trainer(f.cfg, bad, f.data.target_bank), ConfigError);
  auto wide = f.data.source_bank;
  wide.embeddings = torch::zeros({5, 64});
  EXPECT_THROW(Trainer(f.cfg, wide, f.data.target_bank), ConfigError);
}

TEST(Trainer, ZeroWeightsMatchSupervisedStepBitwise) {
  auto cfg = testutil::tiny_config();
  experiment::source_only().apply(cfg);
  Fixture f(cfg);
  auto a = f.trainer();
  auto b = f.trainer();
  ASSERT_TRUE(testutil::same_parameters(*a.model(), *b.model()));
  for (int64_t k = 0; k < 3; ++k) {
    auto [sb, tb] = f.batches(k);
    auto ra = a.train_step(sb, tb);
    auto rb = b.supervised_step(sb);
    EXPECT_EQ(ra.total, rb.total) << k;
    EXPECT_EQ(ra.seg, rb.seg) << k;
  }
  EXPECT_TRUE(testutil::same_parameters(*a.model(), *b.model()));
}

TEST(Trainer, GeneratorPhaseLeavesDiscriminatorsUntouchedAndViceVersa) {
  Fixture f;
  auto t = f.trainer();
  for (int64_t k = 0; k < 2; ++k) {
    auto [sb, tb] = f.batches(k);
    StepRecord rec;
    const auto d_main = ckpt::parameter_hash(*t.d_main());
    const auto d_aux = ckpt::parameter_hash(*t.d_aux());
    const auto g = ckpt::parameter_hash(*t.model());
    auto maps = t.generator_update(sb, tb, rec);
    EXPECT_EQ(ckpt::parameter_hash(*t.d_main()), d_main);
    EXPECT_EQ(ckpt::parameter_hash(*t.d_aux()), d_aux);
    const auto g_after = ckpt::parameter_hash(*t.model());
    EXPECT_NE(g_after, g);
    t.discriminator_update(maps, rec);
    EXPECT_EQ(ckpt::parameter_hash(*t.model()), g_after);
    EXPECT_NE(ckpt::parameter_hash(*t.d_main()), d_main);
    EXPECT_NE(ckpt::parameter_hash(*t.d_aux()), d_aux);
  }
}

TEST(Trainer, EveryGeneratorParameterReceivesGradient) {
  Fixture f;
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  StepRecord rec;
  t.generator_update(sb, tb, rec);
  for (const auto& p : t.model()->named_parameters()) {
    // A single key makes the attention weights identically 1, so q and k never see a gradient.
    if (p.key().find("q_proj") != std::string::npos || p.key().find("k_proj") != std::string::npos) continue;
    ASSERT_TRUE(p.value().grad().defined()) << p.key();
    EXPECT_GT(p.value().grad().abs().sum().item<double>(), 0.0) << p.key();
  }
  for (const auto& p : t.d_main()->named_parameters()) {
    EXPECT_FALSE(p.value().grad().defined() && p.value().grad().abs().sum().item<double>() > 0) << p.key();
  }
}

TEST(Trainer, AuxClassifierOnlyLearnsFromAdversarialTerm) {
  auto cfg = testutil::tiny_config();
  experiment::source_only().apply(cfg);
  Fixture f(cfg);
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  StepRecord rec;
  t.generator_update(sb, tb, rec);
  for (const auto& p : t.model()->aux->parameters()) {
    EXPECT_TRUE(!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0);
  }
  for (const auto& p : t.model()->neck->parameters()) EXPECT_GT(p.grad().abs().sum().item<double>(), 0.0);
}

TEST(Trainer, TotalIsWeightedSumOfRecordedTerms) {
  auto cfg = testutil::tiny_config();
  cfg.lambda_adv = 0.05;
  cfg.lambda_vlcol = 0.7;
  cfg.lambda_proto = 0.002;
  Fixture f(cfg);
  auto t = f.trainer();
  for (int64_t k = 0; k < 4; ++k) {
    auto [sb, tb] = f.batches(k);
    auto rec = t.train_step(sb, tb);
    double expected = rec.seg + cfg.lambda_adv * rec.adv;
    if (!rec.vlcol_skipped) expected += cfg.lambda_vlcol * rec.vlcol;
    if (!rec.proto_skipped) expected += cfg.lambda_proto * rec.proto;
    EXPECT_NEAR(rec.total, expected, 1e-6 * std::max(1.0, std::abs(expected))) << k;
    EXPECT_NEAR(rec.seg, rec.ce + rec.dice, 1e-6);
    EXPECT_TRUE(std::isfinite(rec.d_main) && std::isfinite(rec.d_aux));
  }
}

TEST(Trainer, VlcolSkippedWhenOnlyBackgroundPresent) {
  Fixture f;
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  sb.labels.zero_();
  auto rec = t.train_step(sb, tb);
  EXPECT_TRUE(rec.vlcol_skipped);
  EXPECT_EQ(rec.vlcol, 0.0);
  EXPECT_TRUE(std::isfinite(rec.total));
}

TEST(Trainer, NonFiniteLossRaisesBeforeUpdating) {
  Fixture f;
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  sb.images[0][0][3][3] = std::numeric_limits<float>::quiet_NaN();
  const auto g = ckpt::parameter_hash(*t.model());
  try {
    t.train_step(sb, tb);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at iteration 0"), std::string::npos) << e.what();
  }
  EXPECT_EQ(ckpt::parameter_hash(*t.model()), g);
  for (const auto& p : t.d_main()->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(Trainer, PolyLearningRate) {
  auto cfg = testutil::tiny_config();
  cfg.iterations = 10;
  cfg.seg_lr = 0.01;
  Fixture f(cfg);
  auto t = f.trainer();
  for (int64_t k = 0; k < 3; ++k) {
    auto [sb, tb] = f.batches(k);
    auto rec = t.train_step(sb, tb);
    EXPECT_NEAR(rec.seg_lr, 0.01 * std::pow(1.0 - k / 10.0, 0.9), 1e-15);
    auto& group = t.segmentation_optimizer().param_groups()[0];
    EXPECT_NEAR(static_cast<const torch::optim::SGDOptions&>(group.options()).lr(), rec.seg_lr, 1e-15);
  }
  EXPECT_EQ(t.iteration(), 3);
  EXPECT_NEAR(t.current_seg_lr(), 0.01 * std::pow(0.7, 0.9), 1e-15);
}

TEST(Trainer, StateEvolvesAcrossSteps) {
  Fixture f;
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  t.train_step(sb, tb);
  EXPECT_TRUE(std::any_of(t.memory().flags.begin(), t.memory().flags.end(), [](bool b) { return b; }));
  EXPECT_TRUE(t.prototypes().source_init[0]);
  EXPECT_GT(t.prototypes().source.abs().sum().item<double>(), 0.0);
}

TEST(Trainer, CheckpointRoundTripAndArchitectureGuard) {
  Fixture f;
  auto t = f.trainer();
  auto [sb, tb] = f.batches(0);
  t.train_step(sb, tb);
  testutil::TempDir dir;
  t.save(dir.path() / "a.ckpt");
  auto u = f.trainer();
  u.load(dir.path() / "a.ckpt");
  EXPECT_EQ(u.iteration(), 1);
  expect_archives_equal(t.to_archive(), u.to_archive());

  auto other = f.cfg;
  other.network.backbone.tiny_width = 4;
  Trainer w(other, f.data.source_bank, f.data.target_bank);
  try {
    w.load(dir.path() / "a.ckpt");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("does not match"), std::string::npos) << e.what();
  }
}

TEST(Train, WritesLogCheckpointsAndBest) {
  auto cfg = testutil::tiny_config();
  cfg.iterations = 10;
  cfg.eval_every = 5;
  cfg.checkpoint_every = 5;
  testutil::TempDir dir;
  cfg.output_dir = (dir.path() / "run").string();
  Fixture f(cfg);
  auto result = train::train(cfg, f.data);
  EXPECT_EQ(result.history.size(), 10u);
  EXPECT_EQ(count_lines(result.log_path), 10u);
  std::ifstream in(result.log_path);
  std::string line;
  int evals = 0;
  for (int i = 0; std::getline(in, line); ++i) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["iteration"], i);
    for (const char* key : {"ce", "dice", "seg", "adv", "vlcol", "proto", "d_main", "d_aux", "total", "seg_lr"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    evals += j.contains("target_test_mean_dice") ? 1 : 0;
  }
  EXPECT_EQ(evals, 2);
  for (const char* name : {"config.json", "final.ckpt", "iter_5.ckpt", "iter_10.ckpt", "best.ckpt", "best.json"}) {
    EXPECT_TRUE(fs::exists(dir.path() / "run" / name)) << name;
  }
  ASSERT_TRUE(result.best_target_dice.has_value());
  auto saved = TrainConfig::load(dir.path() / "run" / "config.json");
  EXPECT_EQ(saved.architecture_hash(), cfg.architecture_hash());
}

TEST(Train, ResumeIsBitwiseIdentical) {
  auto cfg = testutil::tiny_config();
  cfg.iterations = 6;
  testutil::TempDir dir;
  Fixture f(cfg);

  auto full_cfg = cfg;
  full_cfg.output_dir = (dir.path() / "full").string();
  auto full = train::train(full_cfg, f.data);

  auto part_cfg = cfg;
  part_cfg.output_dir = (dir.path() / "part").string();
  TrainOptions first;
  first.stop_at = 3;
  auto half = train::train(part_cfg, f.data, first);
  EXPECT_EQ(half.history.size(), 3u);
  TrainOptions second;
  second.resume = half.final_checkpoint;
  auto rest = train::train(part_cfg, f.data, second);
  EXPECT_EQ(rest.history.size(), 3u);
  EXPECT_EQ(count_lines(rest.log_path), 6u);

  for (size_t i = 0; i < 3; ++i) EXPECT_EQ(full.history[3 + i].total, rest.history[i].total) << i;
  expect_archives_equal(ckpt::read_archive(full.final_checkpoint), ckpt::read_archive(rest.final_checkpoint));
}

TEST(Evaluate, DeterministicAndWellFormed) {
  Fixture f;
  auto t = f.trainer();
  auto a = t.evaluate(f.data.target, f.data.target.split.test, true);
  auto b = t.evaluate(f.data.target, f.data.target.split.test, true);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_TRUE(metrics::validate_report_json(a.to_json()).empty());
  EXPECT_EQ(a.subjects.size(), f.data.target.split.test.size());
  EXPECT_EQ(a.classes.size(), 4u);
  auto pred = t.predict(f.data.target.subjects[0].slices[0].image.unsqueeze(0), true);
  EXPECT_EQ(pred.sizes(), (std::vector<int64_t>{1, 32, 32}));
}

TEST(Evaluate, CheckpointHelperMatchesTrainer) {
  auto cfg = testutil::tiny_config();
  cfg.iterations = 2;
  testutil::TempDir dir;
  cfg.output_dir = dir.path().string();
  Fixture f(cfg);
  auto result = train::train(cfg, f.data);
  auto report = evaluate_checkpoint(result.final_checkpoint, cfg, f.data, f.data.source, f.data.source.split.test, false);
  auto t = f.trainer();
  t.load(result.final_checkpoint);
  EXPECT_EQ(report.to_json(), t.evaluate(f.data.source, f.data.source.split.test, false).to_json());
}
