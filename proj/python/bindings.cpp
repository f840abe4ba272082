#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "amcl/config.hpp"
#include "amcl/contrastive.hpp"
#include "amcl/datasets.hpp"
#include "amcl/errors.hpp"
#include "amcl/evalkit.hpp"
#include "amcl/masking.hpp"

namespace py = pybind11;
using namespace amcl;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

void require_square(const py::buffer_info& info, const char* what) {
  if (info.ndim != 2 || info.shape[0] != kImageSide || info.shape[1] != kImageSide) {
    throw ContractViolation(std::string(what) + " must be a 64x64 array");
  }
}

torch::Tensor matrix_tensor(const DoubleArray& a) {
  const auto info = a.request();
  if (info.ndim != 2) throw ContractViolation("expected a 2-D array");
  return torch::from_blob(info.ptr, {info.shape[0], info.shape[1]}, torch::kFloat64).clone();
}

py::array_t<float> stack_images(const std::vector<Image>& images) {
  py::array_t<float> out({static_cast<py::ssize_t>(images.size()), py::ssize_t{kImageSide}, py::ssize_t{kImageSide}});
  auto* dst = out.mutable_data();
  for (const auto& im : images) {
    std::memcpy(dst, im.pixels.data(), sizeof(float) * kImagePixels);
    dst += kImagePixels;
  }
  return out;
}

std::vector<int> labels(const std::vector<Image>& images) {
  std::vector<int> out;
  for (const auto& im : images) out.push_back(im.class_id);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Masking, contrastive loss and verification metrics";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "sample_masks",
      [](std::size_t count, int patch_size, double ratio_min, double ratio_max, std::uint64_t seed) {
        MaskSamplerConfig cfg;
        cfg.patch_size = patch_size;
        cfg.ratio_min = ratio_min;
        cfg.ratio_max = ratio_max;
        cfg.corpus_size = std::max<std::size_t>(count, 1);
        cfg.validate();
        std::mt19937_64 rng(seed);
        py::array_t<std::uint8_t> out(
            {static_cast<py::ssize_t>(count), py::ssize_t{kImageSide}, py::ssize_t{kImageSide}});
        auto* dst = out.mutable_data();
        for (std::size_t i = 0; i < count; ++i) {
          const Mask mask = sample_mask(cfg, rng);
          std::copy(mask.grid.begin(), mask.grid.end(), dst);
          dst += kImagePixels;
        }
        return out;
      },
      py::arg("count"), py::arg("patch_size") = 16, py::arg("ratio_min") = 0.2, py::arg("ratio_max") = 0.8,
      py::arg("seed") = 0, "Binary keep-masks [count, 64, 64], 1 keeps and 0 occludes.");

  m.def(
      "apply_mask",
      [](const FloatArray& image, const ByteArray& mask) {
        const auto ii = image.request();
        const auto mi = mask.request();
        require_square(ii, "image");
        require_square(mi, "mask");
        Image im;
        std::memcpy(im.pixels.data(), ii.ptr, sizeof(float) * kImagePixels);
        Mask mk;
        std::memcpy(mk.grid.data(), mi.ptr, kImagePixels);
        const Image out = apply_mask(im, mk);
        py::array_t<float> result({py::ssize_t{kImageSide}, py::ssize_t{kImageSide}});
        std::memcpy(result.mutable_data(), out.pixels.data(), sizeof(float) * kImagePixels);
        return result;
      },
      py::arg("image"), py::arg("mask"));

  m.def(
      "cosine_similarity",
      [](const std::vector<double>& u, const std::vector<double>& v) { return cosine_similarity(u, v); },
      py::arg("u"), py::arg("v"));

  m.def(
      "contrastive_loss",
      [](const DoubleArray& anchors, const DoubleArray& positives, double temperature, bool include_positive) {
        return contrastive_loss(matrix_tensor(anchors), matrix_tensor(positives), {temperature, include_positive})
            .item<double>();
      },
      py::arg("anchors"), py::arg("positives"), py::arg("temperature") = 1.0,
      py::arg("include_positive_in_denominator") = false);

  m.def(
      "compute_eer",
      [](const std::vector<double>& genuine, const std::vector<double>& impostor, bool accept_low) {
        const auto r = compute_eer(genuine, impostor, accept_low ? DecisionRule::AcceptLow : DecisionRule::AcceptHigh);
        return py::make_tuple(r.eer, r.threshold);
      },
      py::arg("genuine"), py::arg("impostor"), py::arg("accept_low") = false, "Returns (eer, threshold).");

  m.def(
      "compute_roc",
      [](const std::vector<double>& genuine, const std::vector<double>& impostor, bool accept_low) {
        std::vector<std::pair<double, double>> out;
        for (const auto& p :
             compute_roc(genuine, impostor, accept_low ? DecisionRule::AcceptLow : DecisionRule::AcceptHigh)) {
          out.emplace_back(p.far, p.gar);
        }
        return out;
      },
      py::arg("genuine"), py::arg("impostor"), py::arg("accept_low") = false, "List of (far, gar).");

  m.def(
      "synthetic_dataset",
      [](int num_classes, int images_per_class_per_session, std::uint64_t seed) {
        SyntheticVeinConfig cfg;
        cfg.num_classes = num_classes;
        cfg.images_per_class_per_session = images_per_class_per_session;
        cfg.seed = seed;
        const auto split = generate_synthetic_dataset(cfg);
        py::dict d;
        d["train_images"] = stack_images(split.train);
        d["train_labels"] = labels(split.train);
        d["test_images"] = stack_images(split.test);
        d["test_labels"] = labels(split.test);
        d["num_classes"] = split.num_classes;
        return d;
      },
      py::arg("num_classes") = 20, py::arg("images_per_class_per_session") = 5, py::arg("seed") = 42);

  m.def(
      "config_hash",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return parse_experiment_config(text, overrides).config_hash();
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{});
}
