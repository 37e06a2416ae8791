#include "tcsa/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "tcsa/common.hpp"

namespace tcsa::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'T', 'C', 'S', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kUInt8: return "uint8";
    case torch::kBool: return "bool";
    default: throw ConfigError(std::string("checkpoint: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  if (s == "uint8") return torch::kUInt8;
  if (s == "bool") return torch::kBool;
  throw IngestError("checkpoint: unknown dtype '" + s + "'");
}

}  // namespace

void Archive::put(const std::string& name, const torch::Tensor& t) {
  tensors[name] = t.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& Archive::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IngestError("checkpoint is missing tensor '" + name + "'");
  return it->second;
}

void write_archive(const Archive& archive, const fs::path& path) {
  json header = archive.header;
  json index = json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    const auto nbytes = static_cast<uint64_t>(t.numel() * t.element_size());
    index.push_back({{"name", name}, {"dtype", dtype_name(t.scalar_type())}, {"shape", t.sizes().vec()},
                     {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["tensors"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IngestError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const uint64_t hlen = text.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.tensors) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw IngestError("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Archive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open checkpoint " + path.string());
  char magic[8];
  uint32_t version = 0;
  uint64_t hlen = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IngestError(path.string() + " is not a checkpoint");
  if (version != kVersion) throw IngestError("unsupported checkpoint version " + std::to_string(version));
  std::string text(hlen, '\0');
  in.read(text.data(), static_cast<std::streamsize>(hlen));
  Archive archive;
  try {
    archive.header = json::parse(text);
  } catch (const json::exception& e) {
    throw IngestError("corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  const auto data_start = in.tellg();
  for (const auto& entry : archive.header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(entry.at("dtype").get<std::string>())));
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(t.numel() * t.element_size())) {
      throw IngestError("checkpoint entry " + entry.at("name").get<std::string>() + " has inconsistent size");
    }
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw IngestError("checkpoint " + path.string() + " is truncated");
    archive.tensors[entry.at("name").get<std::string>()] = t;
  }
  archive.header.erase("tensors");
  return archive;
}

void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters()) archive.put(prefix + "/" + item.key(), item.value());
  for (const auto& item : module.named_buffers()) archive.put(prefix + "/" + item.key(), item.value());
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& key, torch::Tensor& dst) {
    const auto& src = archive.get(prefix + "/" + key);
    if (src.sizes() != dst.sizes()) {
      throw IngestError("checkpoint tensor " + prefix + "/" + key + " has shape " + c10::str(src.sizes()) +
                        ", model expects " + c10::str(dst.sizes()));
    }
    dst.copy_(src.to(dst.dtype()));
  };
  for (auto& item : module.named_parameters()) restore(item.key(), item.value());
  for (auto& item : module.named_buffers()) restore(item.key(), item.value());
}

void save_sgd(Archive& archive, const std::string& prefix, const torch::optim::SGD& opt, const NamedParams& params) {
  const auto& state = opt.state();
  for (const auto& [name, p] : params) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::SGDParamState&>(*it->second);
    if (s.momentum_buffer().defined()) archive.put(prefix + "/" + name + "/momentum", s.momentum_buffer());
  }
}

void load_sgd(const Archive& archive, const std::string& prefix, torch::optim::SGD& opt, const NamedParams& params) {
  auto& state = opt.state();
  for (const auto& [name, p] : params) {
    const auto key = prefix + "/" + name + "/momentum";
    if (!archive.has(key)) continue;
    auto s = std::make_unique<torch::optim::SGDParamState>();
    s->momentum_buffer(archive.get(key).to(p.dtype()).clone());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

void save_adam(Archive& archive, const std::string& prefix, const torch::optim::Adam& opt, const NamedParams& params) {
  const auto& state = opt.state();
  for (const auto& [name, p] : params) {
    auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const auto base = prefix + "/" + name;
    archive.put(base + "/step", torch::tensor(s.step(), torch::kInt64));
    archive.put(base + "/exp_avg", s.exp_avg());
    archive.put(base + "/exp_avg_sq", s.exp_avg_sq());
    if (s.max_exp_avg_sq().defined()) archive.put(base + "/max_exp_avg_sq", s.max_exp_avg_sq());
  }
}

void load_adam(const Archive& archive, const std::string& prefix, torch::optim::Adam& opt, const NamedParams& params) {
  auto& state = opt.state();
  for (const auto& [name, p] : params) {
    const auto base = prefix + "/" + name;
    if (!archive.has(base + "/step")) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(archive.get(base + "/step").item<int64_t>());
    s->exp_avg(archive.get(base + "/exp_avg").to(p.dtype()).clone());
    s->exp_avg_sq(archive.get(base + "/exp_avg_sq").to(p.dtype()).clone());
    if (archive.has(base + "/max_exp_avg_sq")) s->max_exp_avg_sq(archive.get(base + "/max_exp_avg_sq").to(p.dtype()).clone());
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

uint64_t parameter_hash(const torch::nn::Module& module) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& item : module.named_parameters()) {
    auto t = item.value().detach().contiguous().to(torch::kCPU);
    h = fnv1a(item.key(), h);
    h = fnv1a(std::string_view(static_cast<const char*>(t.data_ptr()), static_cast<size_t>(t.numel() * t.element_size())), h);
  }
  return h;
}

}  // namespace tcsa::ckpt
