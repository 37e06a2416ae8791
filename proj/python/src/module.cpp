// Python bindings: NumPy arrays in, NumPy arrays or floats out.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tcsa/adversarial.hpp"
#include "tcsa/cli.hpp"
#include "tcsa/common.hpp"
#include "tcsa/data.hpp"
#include "tcsa/fusion_head.hpp"
#include "tcsa/losses.hpp"
#include "tcsa/metrics.hpp"
#include "tcsa/text_semantics.hpp"
#include "tcsa/vlcol.hpp"

namespace py = pybind11;
using namespace tcsa;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LongArray = py::array_t<int64_t, py::array::c_style | py::array::forcecast>;
using BoolArray = py::array_t<bool, py::array::c_style | py::array::forcecast>;

template <typename T>
torch::Tensor to_tensor(const py::array_t<T, py::array::c_style | py::array::forcecast>& a, torch::Dtype dtype) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<T*>(a.data()), shape, dtype).clone();
}

torch::Tensor doubles(const DoubleArray& a) { return to_tensor(a, torch::kDouble); }
torch::Tensor longs(const LongArray& a) { return to_tensor(a, torch::kLong); }
torch::Tensor bools(const BoolArray& a) { return to_tensor(a, torch::kBool); }

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  py::array_t<T> out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), sizeof(T) * static_cast<size_t>(c.numel()));
  return out;
}

py::array_t<double> numpy_double(const torch::Tensor& t) { return to_numpy<double>(t.to(torch::kDouble)); }

py::dict dataset_dict(const data::SliceDataset& ds) {
  std::vector<torch::Tensor> images, labels;
  std::vector<std::string> subjects;
  for (const auto& s : ds.subjects) {
    for (const auto& sl : s.slices) {
      images.push_back(sl.image[0]);
      if (sl.label) labels.push_back(*sl.label);
      subjects.push_back(s.id);
    }
  }
  py::dict d;
  d["modality"] = text::to_string(ds.modality);
  d["class_names"] = ds.class_names;
  d["subjects"] = subjects;
  d["images"] = to_numpy<float>(torch::stack(images).to(torch::kFloat32));
  if (!labels.empty()) d["labels"] = to_numpy<int64_t>(torch::stack(labels));
  d["train"] = ds.split.train;
  d["test"] = ds.split.test;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tcsa, m) {
  m.doc() = "Cross-modality segmentation losses, metrics and tools";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IngestError>(m, "IngestError", base.ptr());
  py::register_exception<InvalidSpec>(m, "InvalidSpec", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def("ce_loss", [](const DoubleArray& p, const LongArray& y) { return losses::ce_loss(doubles(p), longs(y)).item<double>(); },
        py::arg("probs"), py::arg("labels"), "Pixel-mean cross entropy of B x C x H x W probabilities.");
  m.def("dice_loss", [](const DoubleArray& p, const LongArray& y) { return losses::dice_loss(doubles(p), longs(y)).item<double>(); },
        py::arg("probs"), py::arg("labels"));
  m.def("seg_loss", [](const DoubleArray& p, const LongArray& y) { return losses::seg_loss(doubles(p), longs(y)).item<double>(); },
        py::arg("probs"), py::arg("labels"));
  m.def("self_information", [](const DoubleArray& p) { return numpy_double(adv::self_information_map(doubles(p))); },
        py::arg("probs"), "Normalized -P log P map, same shape as the input.");

  m.def("covariance", [](const DoubleArray& rows) { return numpy_double(vlcol::covariance_matrix(doubles(rows))); },
        py::arg("rows"), "K x K covariance of K row vectors.");
  m.def(
      "vlcol_loss",
      [](const DoubleArray& rows, const DoubleArray& text, const std::vector<int64_t>& present) -> py::object {
        auto r = vlcol::vlcol_loss(doubles(rows), doubles(text), present);
        if (r.skipped) return py::none();
        return py::float_(r.value.item<double>());
      },
      py::arg("pixel_rows"), py::arg("text"), py::arg("present"), "Covariance cosine distance, or None when skipped.");

  m.def(
      "dynamic_conv",
      [](const DoubleArray& f_sem, const DoubleArray& theta) {
        return numpy_double(fusion::dynamic_conv(doubles(f_sem), fusion::split_dynamic_params(doubles(theta))));
      },
      py::arg("f_sem"), py::arg("theta"), "Per-sample 1x1 convolution 256 -> 128 from flat parameters.");
  m.attr("DYNAMIC_PARAM_COUNT") = fusion::kDynamicParamCount;

  m.def("dice_score", [](const BoolArray& a, const BoolArray& b) { return metrics::dice_score(bools(a), bools(b)); },
        py::arg("pred"), py::arg("gt"), "Dice in percent; 100 when both masks are empty.");
  m.def(
      "asd",
      [](const BoolArray& a, const BoolArray& b, double row, double col) {
        return metrics::asd(bools(a), bools(b), metrics::Spacing{row, col});
      },
      py::arg("pred"), py::arg("gt"), py::arg("row_spacing") = 1.0, py::arg("col_spacing") = 1.0,
      "Average symmetric surface distance, or None when either mask is empty.");

  m.def(
      "build_prompts",
      [](const std::string& dataset, const std::string& modality, const std::vector<std::string>& terms) {
        return text::build_prompts({dataset, text::parse_modality(modality), terms});
      },
      py::arg("dataset"), py::arg("modality"), py::arg("class_terms"));
  m.def(
      "stub_embeddings",
      [](const std::vector<std::string>& prompts, int64_t dim, uint64_t seed) {
        return numpy_double(text::stub_embeddings(prompts, dim, seed).embeddings);
      },
      py::arg("prompts"), py::arg("dim") = 512, py::arg("seed") = 0);

  m.def(
      "phantoms",
      [](uint64_t seed, int64_t subjects, int64_t slices, int64_t size) {
        data::PhantomConfig cfg;
        cfg.seed = seed;
        cfg.source_subjects = cfg.target_subjects = subjects;
        cfg.slices_per_subject = slices;
        cfg.size = size;
        auto [src, tgt] = data::generate_phantoms(cfg);
        return py::make_tuple(dataset_dict(src), dataset_dict(tgt));
      },
      py::arg("seed") = 0, py::arg("subjects") = 10, py::arg("slices") = 8, py::arg("size") = 64,
      "Synthetic (source, target) datasets as dicts of arrays.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::run(args);
      },
      py::arg("args"), "Runs the command-line tool in-process; returns its exit code.");
}
