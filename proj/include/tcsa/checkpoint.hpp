#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include <json.hpp>

namespace tcsa::ckpt {

/// Checkpoint container: "TCSACKPT", u32 version, u64 header length, a JSON header, then the raw
/// little-endian payloads of every named tensor. The header indexes tensors by name with dtype,
/// shape, byte offset and size.
struct Archive {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  void put(const std::string& name, const torch::Tensor& t);
  const torch::Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

/// Writes atomically (temporary file + rename).
void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

/// Stores every parameter and buffer of `module` under "prefix/name".
void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);
/// Restores parameters and buffers; throws IngestError on missing entries or shape mismatch.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

/// Named parameters handed to an optimizer, in the order it was constructed with.
using NamedParams = std::vector<std::pair<std::string, torch::Tensor>>;

void save_sgd(Archive& archive, const std::string& prefix, const torch::optim::SGD& opt, const NamedParams& params);
void load_sgd(const Archive& archive, const std::string& prefix, torch::optim::SGD& opt, const NamedParams& params);
void save_adam(Archive& archive, const std::string& prefix, const torch::optim::Adam& opt, const NamedParams& params);
void load_adam(const Archive& archive, const std::string& prefix, torch::optim::Adam& opt, const NamedParams& params);

/// FNV-1a over parameter bytes; used to check that a step left a module untouched.
uint64_t parameter_hash(const torch::nn::Module& module);

}  // namespace tcsa::ckpt
