#include "tcsa/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "tcsa/common.hpp"

namespace tcsa::data {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using nlohmann::json;

bool SliceDataset::labeled() const {
  for (const auto& s : subjects) {
    for (const auto& sl : s.slices) {
      if (!sl.label) return false;
    }
  }
  return !subjects.empty();
}

int64_t SliceDataset::slice_count() const {
  int64_t n = 0;
  for (const auto& s : subjects) n += static_cast<int64_t>(s.slices.size());
  return n;
}

const Subject& SliceDataset::subject(const std::string& id) const {
  for (const auto& s : subjects) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown subject '" + id + "'");
}

Split subject_split(std::vector<std::string> ids, uint64_t seed, double train_fraction) {
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the partition does not depend on the library's shuffle.
  for (size_t i = ids.size(); i > 1; --i) {
    const auto j = static_cast<size_t>(rng() % i);
    std::swap(ids[i - 1], ids[j]);
  }
  const auto n_train = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  Split split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return split;
}

torch::Tensor normalize_intensity(const torch::Tensor& image) {
  auto flat = image.to(torch::kFloat64).flatten();
  const double lo = torch::quantile(flat, 0.01).item<double>();
  const double hi = torch::quantile(flat, 0.99).item<double>();
  if (hi - lo < 1e-12) return torch::zeros_like(image, torch::kFloat32);
  auto clipped = image.to(torch::kFloat64).clamp(lo, hi);
  return (2.0 * (clipped - lo) / (hi - lo) - 1.0).to(torch::kFloat32);
}

// --------------------------------------------------------------------------------------------
// Payload IO

namespace {

std::vector<char> read_payload(const fs::path& path, size_t expected_bytes) {
  if (!fs::exists(path)) throw IngestError("missing slice file " + path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IngestError("cannot open slice file " + path.string());
  std::vector<char> buf(expected_bytes + 1);
  const int got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (got < 0 || (err != Z_OK && err != Z_STREAM_END)) {
    throw IngestError("corrupt slice file " + path.string() + ": " + (msg ? msg : "read error"));
  }
  if (static_cast<size_t>(got) != expected_bytes) {
    throw IngestError("slice file " + path.string() + " holds " + std::to_string(got) + " bytes, expected " +
                      std::to_string(expected_bytes));
  }
  buf.resize(expected_bytes);
  return buf;
}

void write_payload(const fs::path& path, const void* data, size_t bytes, bool gzip) {
  fs::create_directories(path.parent_path());
  if (gzip) {
    gzFile f = gzopen(path.string().c_str(), "wb9");
    if (!f || gzwrite(f, data, static_cast<unsigned>(bytes)) != static_cast<int>(bytes)) {
      if (f) gzclose(f);
      throw IngestError("failed writing " + path.string());
    }
    gzclose(f);
  } else {
    std::ofstream out(path, std::ios::binary);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) throw IngestError("failed writing " + path.string());
  }
}

}  // namespace

SliceDataset load_manifest(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IngestError("cannot open manifest " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw IngestError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  SliceDataset ds;
  try {
    ds.modality = text::parse_modality(m.at("modality").get<std::string>());
    const auto& sp = m.at("spacing");
    if (sp.is_array()) {
      ds.spacing = {sp.at(0).get<double>(), sp.at(1).get<double>()};
    } else {
      ds.spacing = {sp.get<double>(), sp.get<double>()};
    }
    const auto& dims = m.at("dims");
    ds.height = dims.at(0).get<int64_t>();
    ds.width = dims.at(1).get<int64_t>();
    ds.num_classes = m.at("num_classes").get<int64_t>();
    if (m.contains("class_names")) ds.class_names = m["class_names"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IngestError("manifest " + manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IngestError("manifest " + manifest_path.string() + ": " + e.what());
  }
  if (ds.height <= 0 || ds.width <= 0 || ds.num_classes < 2) {
    throw IngestError("manifest " + manifest_path.string() + ": invalid dims or num_classes");
  }

  const auto h = ds.height;
  const auto w = ds.width;
  const auto pixels = static_cast<size_t>(h * w);
  try {
    for (const auto& js : m.at("subjects")) {
      Subject subj;
      subj.id = js.at("id").get<std::string>();
      for (const auto& sl : js.at("slices")) {
        Slice slice;
        const auto img_path = dir / sl.at("image").get<std::string>();
        auto raw = read_payload(img_path, pixels * sizeof(float));
        auto img = torch::from_blob(raw.data(), {1, h, w}, torch::kFloat32).clone();
        if (!torch::isfinite(img).all().item<bool>()) throw IngestError("non-finite intensities in " + img_path.string());
        if (img.min().item<float>() < -1.0f - 1e-4f || img.max().item<float>() > 1.0f + 1e-4f) {
          img = normalize_intensity(img);
        }
        slice.image = img;
        if (sl.contains("label") && !sl["label"].is_null()) {
          const auto lbl_path = dir / sl["label"].get<std::string>();
          auto lraw = read_payload(lbl_path, pixels);
          auto lbl = torch::from_blob(lraw.data(), {h, w}, torch::kUInt8).to(torch::kLong);
          const auto hi = lbl.max().item<int64_t>();
          if (hi >= ds.num_classes) {
            throw IngestError("label file " + lbl_path.string() + " contains class index " + std::to_string(hi) +
                              " >= num_classes " + std::to_string(ds.num_classes));
          }
          slice.label = lbl;
        }
        subj.slices.push_back(std::move(slice));
      }
      ds.subjects.push_back(std::move(subj));
    }
  } catch (const json::exception& e) {
    throw IngestError("manifest " + manifest_path.string() + ": " + e.what());
  }

  std::vector<std::string> ids;
  for (const auto& s : ds.subjects) ids.push_back(s.id);
  if (m.contains("split")) {
    ds.split.train = m["split"].at("train").get<std::vector<std::string>>();
    ds.split.test = m["split"].at("test").get<std::vector<std::string>>();
    for (const auto& id : ds.split.train) {
      if (std::find(ds.split.test.begin(), ds.split.test.end(), id) != ds.split.test.end()) {
        throw IngestError("manifest " + manifest_path.string() + ": subject " + id + " in both train and test");
      }
      ds.subject(id);
    }
  } else {
    ds.split = subject_split(ids, 42, 0.8);
  }
  return ds;
}

void write_manifest(const SliceDataset& ds, const fs::path& dir, bool gzip) {
  fs::create_directories(dir);
  const std::string ext = gzip ? ".bin.gz" : ".bin";
  json subjects = json::array();
  for (const auto& s : ds.subjects) {
    json slices = json::array();
    for (size_t i = 0; i < s.slices.size(); ++i) {
      const auto& sl = s.slices[i];
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%03zu", i);
      const std::string img_rel = s.id + "/" + stem + "_image" + ext;
      auto img = sl.image.to(torch::kFloat32).contiguous();
      write_payload(dir / img_rel, img.data_ptr<float>(), static_cast<size_t>(img.numel()) * sizeof(float), gzip);
      json entry = {{"image", img_rel}, {"label", nullptr}};
      if (sl.label) {
        const std::string lbl_rel = s.id + "/" + stem + "_label" + ext;
        auto lbl = sl.label->to(torch::kUInt8).contiguous();
        write_payload(dir / lbl_rel, lbl.data_ptr<uint8_t>(), static_cast<size_t>(lbl.numel()), gzip);
        entry["label"] = lbl_rel;
      }
      slices.push_back(entry);
    }
    subjects.push_back({{"id", s.id}, {"slices", slices}});
  }
  json m = {{"modality", text::to_string(ds.modality)},
            {"spacing", {ds.spacing.row, ds.spacing.col}},
            {"dims", {ds.height, ds.width}},
            {"num_classes", ds.num_classes},
            {"class_names", ds.class_names},
            {"subjects", subjects},
            {"split", {{"train", ds.split.train}, {"test", ds.split.test}}}};
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

// --------------------------------------------------------------------------------------------
// Phantoms

std::vector<std::string> phantom_class_names() {
  return {"background tissue", "organ parenchyma", "organ cavity", "cavity wall", "adjacent vessel"};
}

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a;
    const double v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }
};

struct Anatomy {
  Ellipse organ;
  double wall_offset, wall_outer, wall_aspect, cavity_ratio;
  double vessel_angle, vessel_radius;
  std::vector<double> tissue_offset;
};

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal() { return normal_(eng_); }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

Anatomy sample_anatomy(Rng& rng, int64_t size, int64_t classes, double jitter) {
  const double s = static_cast<double>(size);
  Anatomy an;
  an.organ = {s / 2 + rng.uniform(-0.06, 0.06) * s, s / 2 + rng.uniform(-0.06, 0.06) * s,
              0.30 * s * (1 + rng.uniform(-jitter, jitter)), 0.24 * s * (1 + rng.uniform(-jitter, jitter)),
              rng.uniform(-0.45, 0.45)};
  an.wall_offset = rng.uniform(0.0, 0.07) * s;
  an.wall_outer = 0.15 * s * (1 + rng.uniform(-jitter, jitter));
  an.wall_aspect = rng.uniform(1.0, 1.2);
  an.cavity_ratio = rng.uniform(0.55, 0.7);
  an.vessel_angle = an.organ.theta + std::numbers::pi / 2 + rng.uniform(-0.4, 0.4);
  an.vessel_radius = 0.075 * s * (1 + rng.uniform(-jitter, jitter));
  for (int64_t c = 0; c < classes; ++c) an.tissue_offset.push_back(rng.uniform(-0.04, 0.04));
  return an;
}

torch::Tensor render_labels(const Anatomy& an, double z, Rng& rng, int64_t size) {
  const double grow = std::sqrt(std::max(0.2, 1.0 - 0.6 * z * z));
  const double wall_grow = std::sqrt(std::max(0.1, 1.0 - 0.9 * z * z));
  const double jx = rng.uniform(-1.0, 1.0), jy = rng.uniform(-1.0, 1.0);
  Ellipse organ = an.organ;
  organ.cx += jx;
  organ.cy += jy;
  organ.a *= grow;
  organ.b *= grow;
  const double ct = std::cos(organ.theta), st = std::sin(organ.theta);
  Ellipse wall{organ.cx + an.wall_offset * ct, organ.cy + an.wall_offset * st, an.wall_outer * wall_grow * an.wall_aspect,
               an.wall_outer * wall_grow, organ.theta};
  Ellipse cavity = wall;
  cavity.a *= an.cavity_ratio;
  cavity.b *= an.cavity_ratio;
  const double dist = organ.b * 1.05;
  Ellipse vessel{organ.cx + dist * std::cos(an.vessel_angle), organ.cy + dist * std::sin(an.vessel_angle),
                 an.vessel_radius, an.vessel_radius, 0.0};
  const bool vessel_present = z < 0.55;

  auto labels = torch::zeros({size, size}, torch::kLong);
  auto acc = labels.accessor<int64_t, 2>();
  for (int64_t r = 0; r < size; ++r) {
    for (int64_t c = 0; c < size; ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      int64_t lab = 0;
      if (organ.contains(x, y)) lab = 1;
      if (vessel_present && vessel.contains(x, y)) lab = 4;
      if (wall.a > 1.5 && wall.contains(x, y)) lab = 3;
      if (cavity.a > 1.0 && cavity.contains(x, y)) lab = 2;
      acc[r][c] = lab;
    }
  }
  return labels;
}

torch::Tensor gaussian_blur(const torch::Tensor& img, double sigma) {
  const int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3 * sigma)));
  auto xs = torch::arange(-radius, radius + 1, torch::kFloat64);
  auto k1 = torch::exp(-xs * xs / (2 * sigma * sigma));
  k1 = k1 / k1.sum();
  auto x = img.to(torch::kFloat64).view({1, 1, img.size(-2), img.size(-1)});
  x = F::pad(x, F::PadFuncOptions({radius, radius, radius, radius}).mode(torch::kReflect));
  x = F::conv2d(x, k1.view({1, 1, 1, -1}));
  x = F::conv2d(x, k1.view({1, 1, -1, 1}));
  return x.view({img.size(-2), img.size(-1)});
}

torch::Tensor white_noise(Rng& rng, int64_t size) {
  auto t = torch::empty({size, size}, torch::kFloat64);
  auto a = t.accessor<double, 2>();
  for (int64_t r = 0; r < size; ++r) {
    for (int64_t c = 0; c < size; ++c) a[r][c] = rng.normal();
  }
  return t;
}

torch::Tensor render_image(const torch::Tensor& labels, const Anatomy& an, const std::vector<double>& lut,
                           double noise, double bias, Rng& rng) {
  const auto size = labels.size(0);
  std::vector<double> tissue(lut.size());
  for (size_t c = 0; c < lut.size(); ++c) tissue[c] = lut[c] + an.tissue_offset[c];
  auto lut_t = torch::tensor(tissue, torch::kFloat64);
  auto img = lut_t.index_select(0, labels.flatten()).view({size, size});
  // Tissue texture, then partial-volume smoothing at boundaries.
  img = img + 0.03 * gaussian_blur(white_noise(rng, size), 2.0) * 3.0;
  img = gaussian_blur(img, 0.6);
  if (bias > 0) {
    auto coords = torch::linspace(-1.0, 1.0, size, torch::kFloat64);
    auto yy = coords.view({-1, 1}).expand({size, size});
    auto xx = coords.view({1, -1}).expand({size, size});
    const double a1 = rng.uniform(-1, 1), a2 = rng.uniform(-1, 1), a3 = rng.uniform(-1, 1);
    auto field = a1 * xx + a2 * yy + a3 * xx * yy;
    field = field / (field.abs().max() + 1e-9);
    img = img * (1.0 + bias * field);
  }
  img = img + noise * white_noise(rng, size);
  return normalize_intensity(img.unsqueeze(0));
}

SliceDataset make_domain(const PhantomConfig& cfg, bool source) {
  SliceDataset ds;
  ds.modality = source ? cfg.source_modality : cfg.target_modality;
  ds.spacing = {1.0, 1.0};
  ds.num_classes = cfg.num_classes;
  ds.height = ds.width = cfg.size;
  ds.class_names = phantom_class_names();
  const auto& lut = source ? cfg.source_lut : cfg.target_lut;
  const auto n_subj = source ? cfg.source_subjects : cfg.target_subjects;
  const std::string prefix = source ? "src" : "tgt";
  for (int64_t i = 0; i < n_subj; ++i) {
    Rng rng(mix_seed(mix_seed(cfg.seed, source ? 0x5eed5 : 0x7a6e7), static_cast<uint64_t>(i)));
    const auto an = sample_anatomy(rng, cfg.size, cfg.num_classes, cfg.size_jitter);
    Subject subj;
    char id[32];
    std::snprintf(id, sizeof(id), "%s%03lld", prefix.c_str(), static_cast<long long>(i));
    subj.id = id;
    for (int64_t k = 0; k < cfg.slices_per_subject; ++k) {
      const double z =
          cfg.slices_per_subject > 1 ? -0.8 + 1.6 * static_cast<double>(k) / static_cast<double>(cfg.slices_per_subject - 1) : 0.0;
      auto labels = render_labels(an, z, rng, cfg.size);
      auto image = render_image(labels, an, lut, source ? cfg.source_noise : cfg.target_noise,
                                source ? 0.0 : cfg.bias_field, rng);
      subj.slices.push_back({image, labels});
    }
    ds.subjects.push_back(std::move(subj));
  }
  std::vector<std::string> ids;
  for (const auto& s : ds.subjects) ids.push_back(s.id);
  ds.split = subject_split(ids, 42, 0.8);
  return ds;
}

}  // namespace

std::pair<SliceDataset, SliceDataset> generate_phantoms(const PhantomConfig& cfg) {
  if (cfg.num_classes != 5) throw ConfigError("phantom generator supports exactly 5 classes");
  if (cfg.size < 16) throw ConfigError("phantom size must be >= 16");
  if (static_cast<int64_t>(cfg.source_lut.size()) != cfg.num_classes ||
      static_cast<int64_t>(cfg.target_lut.size()) != cfg.num_classes) {
    throw ConfigError("phantom intensity tables need one entry per class");
  }
  return {make_domain(cfg, true), make_domain(cfg, false)};
}

// --------------------------------------------------------------------------------------------
// Augmentation and sampling

AugmentParams AugmentParams::sample(uint64_t seed) {
  Rng rng(mix_seed(seed, 0xa46));
  AugmentParams p;
  p.scale = rng.uniform(0.8, 1.2);
  p.angle_deg = rng.uniform(-15.0, 15.0);
  p.intensity_scale = rng.uniform(0.9, 1.1);
  p.intensity_shift = rng.uniform(-0.1, 0.1);
  return p;
}

std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label,
                                                const AugmentParams& p) {
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  const double a = p.angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(a) / p.scale, s = std::sin(a) / p.scale;
  const double hw = static_cast<double>(h) / static_cast<double>(w);
  auto theta = torch::tensor({c, s * hw, 0.0, -s / hw, c, 0.0}, torch::kFloat32).view({1, 2, 3});
  auto grid = F::affine_grid(theta, {1, 1, h, w}, /*align_corners=*/false);
  auto img = F::grid_sample(image.to(torch::kFloat32).view({1, 1, h, w}), grid,
                            F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false));
  auto lbl = F::grid_sample(label.to(torch::kFloat32).view({1, 1, h, w}), grid,
                            F::GridSampleFuncOptions().mode(torch::kNearest).padding_mode(torch::kZeros).align_corners(false));
  img = img * p.intensity_scale + p.intensity_shift;
  return {img.view({1, h, w}), lbl.view({h, w}).round().to(torch::kLong)};
}

std::pair<torch::Tensor, torch::Tensor> augment(const torch::Tensor& image, const torch::Tensor& label, uint64_t seed) {
  return augment(image, label, AugmentParams::sample(seed));
}

SliceSampler::SliceSampler(const SliceDataset& dataset, const std::vector<std::string>& subject_ids)
    : dataset_(&dataset) {
  for (const auto& id : subject_ids) {
    for (size_t si = 0; si < dataset.subjects.size(); ++si) {
      if (dataset.subjects[si].id != id) continue;
      for (size_t k = 0; k < dataset.subjects[si].slices.size(); ++k) index_.emplace_back(si, k);
    }
  }
  if (index_.empty()) throw ConfigError("slice sampler has no slices to draw from");
}

Batch SliceSampler::sample(int64_t batch_size, uint64_t seed, bool with_labels, bool do_augment) const {
  std::mt19937_64 rng(seed);
  std::vector<torch::Tensor> images, labels;
  for (int64_t b = 0; b < batch_size; ++b) {
    const auto [si, k] = index_[static_cast<size_t>(rng() % index_.size())];
    const auto& slice = dataset_->subjects[si].slices[k];
    if (with_labels && !slice.label) throw ConfigError("labeled draw from an unlabeled slice");
    auto img = slice.image;
    auto lbl = slice.label ? *slice.label : torch::zeros({dataset_->height, dataset_->width}, torch::kLong);
    if (do_augment) std::tie(img, lbl) = augment(img, lbl, mix_seed(seed, static_cast<uint64_t>(b)));
    images.push_back(img);
    labels.push_back(lbl);
  }
  Batch batch;
  batch.images = torch::stack(images);
  if (with_labels) batch.labels = torch::stack(labels);
  return batch;
}

}  // namespace tcsa::data
