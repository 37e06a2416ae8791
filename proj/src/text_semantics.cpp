#include "tcsa/text_semantics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "tcsa/common.hpp"

namespace tcsa::text {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::CT: return "CT";
    case Modality::MRI: return "MRI";
    case Modality::FLAIR: return "FLAIR";
    case Modality::T2: return "T2";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  if (up == "CT") return Modality::CT;
  if (up == "MRI" || up == "MR") return Modality::MRI;
  if (up == "FLAIR") return Modality::FLAIR;
  if (up == "T2") return Modality::T2;
  throw ConfigError("unknown modality '" + std::string(name) + "' (expected CT, MRI, FLAIR or T2)");
}

std::vector<std::string> build_prompts(const PromptSpec& spec) {
  if (spec.class_terms.empty()) throw InvalidSpec("prompt spec has no class terms");
  std::vector<std::string> prompts;
  prompts.reserve(spec.class_terms.size());
  for (const auto& term : spec.class_terms) {
    prompts.push_back("A " + spec.dataset_name + " " + to_string(spec.modality) + " imaging of a " + term);
  }
  return prompts;
}

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kPayload = "embeddings.bin";

std::vector<std::string> tokenize(const std::string& prompt) {
  std::vector<std::string> tokens;
  std::istringstream in(prompt);
  std::string tok;
  while (in >> tok) {
    std::transform(tok.begin(), tok.end(), tok.begin(), [](unsigned char c) { return std::tolower(c); });
    tokens.push_back(tok);
  }
  return tokens;
}

std::vector<double> gaussian_vector(uint64_t seed, std::string_view key, int64_t dim) {
  std::mt19937_64 rng(mix_seed(seed, fnv1a(key)));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(dim));
  for (auto& x : v) x = normal(rng);
  return v;
}

}  // namespace

TextEmbeddingBank load_embedding_bank(const fs::path& dir, int64_t expected_classes) {
  const fs::path manifest_path = dir / kManifest;
  std::ifstream mf(manifest_path);
  if (!mf) throw IngestError("cannot open embedding manifest " + manifest_path.string());
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw IngestError("malformed embedding manifest " + manifest_path.string() + ": " + e.what());
  }
  TextEmbeddingBank bank;
  int64_t dim = 0;
  try {
    bank.modality = parse_modality(manifest.at("modality").get<std::string>());
    bank.classes = manifest.at("classes").get<std::vector<std::string>>();
    dim = manifest.at("dim").get<int64_t>();
  } catch (const json::exception& e) {
    throw IngestError("embedding manifest " + manifest_path.string() + " missing field: " + e.what());
  }
  const auto count = static_cast<int64_t>(bank.classes.size());
  if (count != expected_classes) {
    throw IngestError("embedding bank " + dir.string() + ": expected C=" + std::to_string(expected_classes) +
                      " classes, found C=" + std::to_string(count));
  }
  if (dim <= 0) throw IngestError("embedding bank " + dir.string() + ": non-positive dim");

  const fs::path payload = dir / kPayload;
  std::ifstream bin(payload, std::ios::binary);
  if (!bin) throw IngestError("cannot open embedding payload " + payload.string());
  const auto n = static_cast<size_t>(count * dim);
  std::vector<float> values(n);
  bin.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<size_t>(bin.gcount()) != n * sizeof(float) || bin.peek() != std::char_traits<char>::eof()) {
    throw IngestError("embedding payload " + payload.string() + " does not hold exactly C*d=" + std::to_string(n) +
                      " float32 values");
  }
  bank.embeddings = torch::from_blob(values.data(), {count, dim}, torch::kFloat32).clone();
  if (!torch::isfinite(bank.embeddings).all().item<bool>()) {
    throw IngestError("embedding payload " + payload.string() + " contains non-finite values");
  }
  return bank;
}

void save_embedding_bank(const TextEmbeddingBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest = {{"modality", to_string(bank.modality)}, {"classes", bank.classes}, {"dim", bank.dim()}};
  std::ofstream(dir / kManifest) << manifest.dump(2) << "\n";
  auto values = bank.embeddings.to(torch::kFloat32).contiguous();
  std::ofstream bin(dir / kPayload, std::ios::binary);
  bin.write(reinterpret_cast<const char*>(values.data_ptr<float>()),
            static_cast<std::streamsize>(values.numel() * sizeof(float)));
  if (!bin) throw IngestError("failed writing embedding payload in " + dir.string());
}

TextEmbeddingBank stub_embeddings(const std::vector<std::string>& prompts, int64_t dim, uint64_t seed) {
  if (dim < 8) throw ConfigError("stub embedding dim must be >= 8");
  const auto count = static_cast<int64_t>(prompts.size());

  std::vector<std::vector<std::string>> tokens;
  std::map<std::string, int> doc_freq;
  for (const auto& p : prompts) {
    tokens.push_back(tokenize(p));
    std::vector<std::string> uniq = tokens.back();
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (const auto& t : uniq) ++doc_freq[t];
  }

  auto out = torch::zeros({count, dim}, torch::kFloat64);
  auto acc = out.accessor<double, 2>();
  for (int64_t i = 0; i < count; ++i) {
    std::vector<double> row(static_cast<size_t>(dim), 0.0);
    for (const auto& tok : tokens[static_cast<size_t>(i)]) {
      const double idf = 1.0 + std::log(static_cast<double>(count) / doc_freq[tok]);
      const auto g = gaussian_vector(seed, "tok:" + tok, dim);
      for (int64_t k = 0; k < dim; ++k) row[static_cast<size_t>(k)] += idf * g[static_cast<size_t>(k)];
    }
    // Whole-prompt component keeps reordered or duplicated-word prompts apart.
    const auto whole = gaussian_vector(seed, "prompt:" + prompts[static_cast<size_t>(i)], dim);
    for (int64_t k = 0; k < dim; ++k) row[static_cast<size_t>(k)] += 0.25 * whole[static_cast<size_t>(k)];
    double norm = 0.0;
    for (double x : row) norm += x * x;
    norm = std::sqrt(norm);
    for (int64_t k = 0; k < dim; ++k) acc[i][k] = row[static_cast<size_t>(k)] / norm;
  }

  TextEmbeddingBank bank;
  bank.classes = prompts;
  bank.embeddings = out.to(torch::kFloat32);
  return bank;
}

TextEmbeddingBank stub_bank(const PromptSpec& spec, int64_t dim, uint64_t seed) {
  auto bank = stub_embeddings(build_prompts(spec), dim, seed);
  bank.modality = spec.modality;
  bank.classes = spec.class_terms;
  return bank;
}

TextProjectionImpl::TextProjectionImpl(int64_t in_dim, int64_t out_dim) {
  linear = register_module("linear", torch::nn::Linear(in_dim, out_dim));
}

void TextProjectionImpl::reset_to_identity() {
  const auto& w = linear->weight;
  TORCH_CHECK(w.size(0) == w.size(1), "identity projection requires a square map");
  torch::NoGradGuard no_grad;
  w.copy_(torch::eye(w.size(0), w.options()));
  linear->bias.zero_();
}

torch::Tensor TextProjectionImpl::forward(const torch::Tensor& embeddings) {
  return linear->forward(embeddings.to(linear->weight.dtype()));
}

}  // namespace tcsa::text
