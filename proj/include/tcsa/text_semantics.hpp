#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace tcsa::text {

enum class Modality { CT, MRI, FLAIR, T2 };

std::string to_string(Modality m);
/// Accepts "CT", "MRI", "FLAIR", "T2" (case-insensitive); throws ConfigError otherwise.
Modality parse_modality(std::string_view name);

/// Inputs to the prompt template. class_terms[i] names label integer i (0 = background).
struct PromptSpec {
  std::string dataset_name;
  Modality modality = Modality::CT;
  std::vector<std::string> class_terms;
};

/// "A {dataset} {modality} imaging of a {class term}", one prompt per class in label order.
std::vector<std::string> build_prompts(const PromptSpec& spec);

/// Class-level text embeddings of one modality, C x d, float32, one row per label.
struct TextEmbeddingBank {
  Modality modality = Modality::CT;
  std::vector<std::string> classes;
  torch::Tensor embeddings;

  int64_t num_classes() const { return embeddings.size(0); }
  int64_t dim() const { return embeddings.size(1); }
};

/// Reads `manifest.json` + `embeddings.bin` from `dir`.
/// Throws IngestError if the file is malformed or the class count differs from expected_classes.
TextEmbeddingBank load_embedding_bank(const std::filesystem::path& dir, int64_t expected_classes);

void save_embedding_bank(const TextEmbeddingBank& bank, const std::filesystem::path& dir);

/// Deterministic stand-in for a pretrained text encoder.
///
/// Each prompt is tokenized on whitespace; every token maps to a seeded Gaussian vector and the
/// prompt embedding is the IDF-weighted sum of its token vectors plus a small whole-prompt term,
/// normalized to unit length. Prompts sharing words (e.g. the same class under CT and MRI) end up
/// correlated the way real sentence embeddings are, while distinct prompts never coincide.
TextEmbeddingBank stub_embeddings(const std::vector<std::string>& prompts, int64_t dim, uint64_t seed);

/// Convenience: build_prompts + stub_embeddings, with modality and class names filled in.
TextEmbeddingBank stub_bank(const PromptSpec& spec, int64_t dim, uint64_t seed);

/// Learnable affine map d -> 256 producing t_class.
struct TextProjectionImpl : torch::nn::Module {
  TextProjectionImpl(int64_t in_dim, int64_t out_dim = 256);

  /// Sets weight to the identity and bias to zero; requires in_dim == out_dim.
  void reset_to_identity();

  torch::Tensor forward(const torch::Tensor& embeddings);

  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(TextProjection);

}  // namespace tcsa::text
