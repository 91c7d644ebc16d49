// numpy-facing wrappers around the C++ core. Arrays cross the boundary as
// float64 (or uint8 for images) copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iagn/cli.hpp"
#include "iagn/data.hpp"
#include "iagn/errors.hpp"
#include "iagn/ia_block.hpp"
#include "iagn/model.hpp"
#include "iagn/patch_shuffle.hpp"
#include "iagn/training.hpp"

namespace py = pybind11;
using namespace iagn;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor from_numpy(const F64Array& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<T>(), static_cast<std::size_t>(c.numel()) * sizeof(T));
  return out;
}

py::dict pair_to_dict(const shuffle::PermutationPair& p) {
  py::dict d;
  d["row_perms"] = p.row_perms;
  d["col_perms"] = p.col_perms;
  return d;
}

shuffle::PermutationPair pair_from_lists(std::vector<shuffle::Permutation> rows, std::vector<shuffle::Permutation> cols) {
  return {std::move(rows), std::move(cols)};
}

py::tuple shuffle_array(const py::array& image, int grid, int range, uint64_t seed) {
  Rng rng(seed);
  const shuffle::ShuffleSpec spec{grid, range};
  if (py::isinstance<py::array_t<uint8_t>>(image)) {
    auto a = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>::ensure(image);
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    auto t = torch::from_blob(const_cast<uint8_t*>(a.data()), shape, torch::kUInt8).clone();
    auto r = shuffle::shuffle_image(t, spec, rng);
    return py::make_tuple(to_numpy<uint8_t>(r.image), pair_to_dict(r.pair));
  }
  auto r = shuffle::shuffle_image(from_numpy(F64Array::ensure(image)), spec, rng);
  return py::make_tuple(to_numpy<double>(r.image), pair_to_dict(r.pair));
}

py::dict manifest_to_dict(const data::DatasetManifest& m) {
  auto samples = [](const std::vector<data::Sample>& v) {
    py::list out;
    for (const auto& s : v) out.append(py::make_tuple(s.path.string(), s.label));
    return out;
  };
  py::dict d;
  d["root"] = m.root.string();
  d["classes"] = m.classes;
  d["train"] = samples(m.train);
  d["test"] = samples(m.test);
  d["skipped"] = m.skipped;
  return d;
}

}  // namespace

PYBIND11_MODULE(_iagn, m) {
  m.doc() = "Patch shuffling, gradient attention, losses and dataset tools";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_RuntimeError);

  m.def(
      "make_permutation",
      [](int n, int k, uint64_t seed) {
        Rng rng(seed);
        return shuffle::make_permutation(n, k, rng);
      },
      py::arg("n"), py::arg("k"), py::arg("seed") = 0);
  m.def("permutation_from_displacements", [](const std::vector<double>& d) {
    return shuffle::permutation_from_displacements(d);
  });
  m.def(
      "make_pair",
      [](int grid, int range, uint64_t seed) {
        Rng rng(seed);
        return pair_to_dict(shuffle::make_pair({grid, range}, rng));
      },
      py::arg("grid"), py::arg("range"), py::arg("seed") = 0);
  m.def(
      "verify_pair",
      [](std::vector<shuffle::Permutation> rows, std::vector<shuffle::Permutation> cols, int k) {
        return shuffle::verify_pair(pair_from_lists(std::move(rows), std::move(cols)), k);
      },
      py::arg("row_perms"), py::arg("col_perms"), py::arg("k"));
  m.def(
      "patch_sources",
      [](std::vector<shuffle::Permutation> rows, std::vector<shuffle::Permutation> cols) {
        std::vector<std::pair<int, int>> out;
        for (const auto& p : shuffle::patch_sources(pair_from_lists(std::move(rows), std::move(cols)))) {
          out.emplace_back(p.row, p.col);
        }
        return out;
      },
      py::arg("row_perms"), py::arg("col_perms"));
  m.def("shuffle_image", &shuffle_array, py::arg("image"), py::arg("grid"), py::arg("range"), py::arg("seed") = 0,
        "Shuffle an (..., H, W) array. Returns (shuffled, {row_perms, col_perms}).");

  m.def("channel_importance", [](const F64Array& grad) {
    return to_numpy<double>(ia::channel_importance(from_numpy(grad)));
  });
  m.def(
      "attention_map",
      [](const F64Array& importance, const F64Array& features, bool rectify) {
        return to_numpy<double>(ia::attention_map(from_numpy(importance), from_numpy(features), {.rectify = rectify}));
      },
      py::arg("importance"), py::arg("features"), py::arg("rectify") = false);
  m.def(
      "attention_enhance",
      [](const F64Array& features, const F64Array& attention, const F64Array& importance, bool residual) {
        return to_numpy<double>(ia::attention_enhance(from_numpy(features), from_numpy(attention),
                                                      from_numpy(importance), {.residual = residual}));
      },
      py::arg("features"), py::arg("attention"), py::arg("importance"), py::arg("residual") = false);

  m.def(
      "cross_entropy", [](const std::vector<double>& probs, int64_t label) {
        return training::cross_entropy(probs, label);
      },
      py::arg("probs"), py::arg("label"));
  m.def(
      "kd_loss",
      [](const std::vector<double>& student, const std::vector<double>& teacher, double temperature) {
        return training::kd_loss(student, teacher, temperature);
      },
      py::arg("student_logits"), py::arg("teacher_logits"), py::arg("temperature") = 4.0);
  m.def(
      "combined_prediction",
      [](const F64Array& head_logits, bool use_probabilities) {
        auto t = from_numpy(head_logits);
        if (t.dim() != 3 || t.size(0) != 4) throw DimensionError("expected (4, B, num_classes) head logits");
        model::StageOutputs out;
        for (int64_t h = 0; h < 4; ++h) out.logits[static_cast<std::size_t>(h)] = t[h];
        return to_numpy<double>(model::combined_prediction(out, use_probabilities));
      },
      py::arg("head_logits"), py::arg("use_probabilities") = false,
      "Sum of the s3, s4, s5 and concat head scores; input shape (4, B, num_classes).");

  m.def(
      "generate_synthetic",
      [](const std::filesystem::path& out, int num_classes, int image_size, int motif_size, int train_per_class,
         int test_per_class, int noise, uint64_t seed) {
        data::SyntheticSpec spec{num_classes, image_size, motif_size, train_per_class, test_per_class, noise, seed};
        return manifest_to_dict(data::generate_synthetic(spec, out).manifest);
      },
      py::arg("out"), py::arg("num_classes") = 4, py::arg("image_size") = 64, py::arg("motif_size") = 8,
      py::arg("train_per_class") = 100, py::arg("test_per_class") = 50, py::arg("noise") = 8, py::arg("seed") = 7);
  m.def("load_manifest", [](const std::filesystem::path& root) { return manifest_to_dict(data::load_manifest(root)); });

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::run(args);
      },
      py::arg("args"), "Run a command-line subcommand in-process; returns the exit code.");
}
