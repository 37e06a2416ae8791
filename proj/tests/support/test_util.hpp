#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include <torch/torch.h>

#include "tcsa/data.hpp"
#include "tcsa/experiment.hpp"
#include "tcsa/trainer.hpp"

namespace testutil {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tcsa_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Tiny-backbone configuration for fast tests.
inline tcsa::train::TrainConfig tiny_config() {
  auto cfg = tcsa::experiment::toy_config();
  cfg.network.backbone.tiny_width = 8;
  cfg.stub_dim = 32;
  cfg.network.text_dim = 32;
  cfg.batch_size = 2;
  cfg.iterations = 20;
  return cfg;
}

/// Small phantoms (32 x 32, 4 subjects per domain, 3 slices).
inline tcsa::data::PhantomConfig tiny_phantoms(uint64_t seed = 0) {
  tcsa::data::PhantomConfig pc;
  pc.seed = seed;
  pc.size = 32;
  pc.source_subjects = 4;
  pc.target_subjects = 4;
  pc.slices_per_subject = 3;
  return pc;
}

inline bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i].value(), pb[i].value())) return false;
  }
  return true;
}

}  // namespace testutil
