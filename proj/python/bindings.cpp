#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "commands.hpp"
#include "vamp/data.hpp"
#include "vamp/pipeline.hpp"
#include "vamp/variational.hpp"

namespace py = pybind11;

namespace {

vamp::Tensor row(const std::vector<double>& v) { return vamp::Tensor({1, v.size()}, v); }

}  // namespace

PYBIND11_MODULE(_vamp, m) {
  m.doc() = "Variational multi-modal prompt learning core";

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = vamp::cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one CLI command; returns (exit_code, stdout, stderr).");

  m.def("harmonic_mean", &vamp::harmonic_mean, py::arg("base"), py::arg("novel"));

  m.def(
      "kl_diag_gaussians",
      [](const std::vector<double>& mu_q, const std::vector<double>& log_var_q, const std::vector<double>& mu_p,
         const std::vector<double>& log_var_p) {
        const vamp::DiagGaussian q{row(mu_q), row(log_var_q)};
        const vamp::DiagGaussian p{row(mu_p), row(log_var_p)};
        return vamp::kl_diag_gaussians(nullptr, q, p).item();
      },
      py::arg("mu_q"), py::arg("log_var_q"), py::arg("mu_p"), py::arg("log_var_p"));

  m.def(
      "dataset_sizes",
      [](std::size_t base_classes, std::size_t novel_classes, std::size_t shots, std::size_t test_per_class,
         std::uint64_t seed) {
        vamp::SyntheticSpec spec;
        spec.base_classes = base_classes;
        spec.novel_classes = novel_classes;
        spec.shots = shots;
        spec.test_per_class = test_per_class;
        spec.seed = seed;
        const vamp::Dataset d = vamp::make_dataset(spec);
        py::dict r;
        r["base_train"] = d.base_train.size();
        r["base_test"] = d.base_test.size();
        r["novel_test"] = d.novel_test.size();
        return r;
      },
      py::arg("base_classes") = 6, py::arg("novel_classes") = 4, py::arg("shots") = 16,
      py::arg("test_per_class") = 25, py::arg("seed") = 7);
}
