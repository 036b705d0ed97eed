#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "capbound/analysis.hpp"
#include "capbound/capacity.hpp"
#include "capbound/checkpoint.hpp"
#include "capbound/cli.hpp"
#include "capbound/convop.hpp"
#include "capbound/covercalc.hpp"
#include "capbound/errors.hpp"
#include "capbound/lipschitz.hpp"
#include "capbound/project.hpp"
#include "capbound/tensors.hpp"
#include "capbound/train.hpp"

namespace py = pybind11;
using namespace capbound;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

KernelTensor to_kernel(const Array& a) {
  if (a.ndim() != 4) throw UsageError("kernel must be a 4-axis array");
  std::array<std::size_t, 4> shape{};
  for (int i = 0; i < 4; ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
  return KernelTensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_kernel(const KernelTensor& k) {
  Array out({k.c_out(), k.c_in(), k.kh(), k.kw()});
  std::copy(k.values().begin(), k.values().end(), out.mutable_data());
  return out;
}

Sample to_sample(const Array& a) {
  if (a.ndim() != 3) throw UsageError("sample must be a 3-axis array");
  return Sample({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                 static_cast<std::size_t>(a.shape(2))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_sample(const Sample& s) {
  Array out({s.channels(), s.height(), s.width()});
  std::copy(s.values().begin(), s.values().end(), out.mutable_data());
  return out;
}

DataBatch to_batch(const Array& a) {
  if (a.ndim() != 4) throw UsageError("batch must be a 4-axis array (n, c, h, w)");
  std::vector<Sample> samples;
  const std::size_t per = static_cast<std::size_t>(a.shape(1) * a.shape(2) * a.shape(3));
  for (py::ssize_t i = 0; i < a.shape(0); ++i)
    samples.emplace_back(std::array<std::size_t, 3>{static_cast<std::size_t>(a.shape(1)),
                                                    static_cast<std::size_t>(a.shape(2)),
                                                    static_cast<std::size_t>(a.shape(3))},
                         std::vector<double>(a.data() + i * per, a.data() + (i + 1) * per));
  return DataBatch(std::move(samples));
}

ConvSpec spec_for(const Array& k, std::size_t h, std::size_t w, std::size_t stride, const std::string& padding) {
  return make_spec(to_kernel(k), h, w, stride, parse_padding(padding));
}

}  // namespace

PYBIND11_MODULE(_capbound, m) {
  m.doc() = "Capacity bounds, projections and constrained training for small convolutional networks";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ResourceError>(m, "ResourceError", PyExc_MemoryError);

  // tensors
  m.def("group_norm_21", [](const Array& k) { return group_norm_21(to_kernel(k)); });
  m.def("slice_norms", [](const Array& k, const std::string& kind) {
    return slice_norms(to_kernel(k), parse_slice_norm(kind));
  });
  m.def("data_norm", [](const Array& x) { return to_batch(x).norm(); });
  m.def(
      "max_patch_norm",
      [](const Array& x, std::size_t k, std::size_t stride, const std::string& padding) {
        return max_patch_norm(to_batch(x), PatchGeometry{k, k, stride, stride, parse_padding(padding)});
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = "zero_same");

  // convop
  m.def(
      "conv_forward",
      [](const Array& k, const Array& x, std::size_t stride, const std::string& padding) {
        Sample s = to_sample(x);
        return from_sample(conv_forward(to_kernel(k), spec_for(k, s.height(), s.width(), stride, padding), s));
      },
      py::arg("kernel"), py::arg("x"), py::arg("stride") = 1, py::arg("padding") = "circular");
  m.def(
      "materialize",
      [](const Array& k, std::size_t h, std::size_t w, std::size_t stride, const std::string& padding) {
        return materialize(to_kernel(k), spec_for(k, h, w, stride, padding));
      },
      py::arg("kernel"), py::arg("h"), py::arg("w"), py::arg("stride") = 1, py::arg("padding") = "circular");

  // lipschitz
  m.def(
      "fft_exact_spectrum",
      [](const Array& k, std::size_t h, std::size_t w) { return fft_exact_spectrum(to_kernel(k), spec_for(k, h, w, 1, "circular")).values; },
      py::arg("kernel"), py::arg("h"), py::arg("w"));
  m.def(
      "power_iteration",
      [](const Array& k, std::size_t h, std::size_t w, std::size_t stride, const std::string& padding, double tol,
         int max_iters, std::uint64_t seed) {
        return power_iteration(to_kernel(k), spec_for(k, h, w, stride, padding), {tol, max_iters, seed}).value;
      },
      py::arg("kernel"), py::arg("h"), py::arg("w"), py::arg("stride") = 1, py::arg("padding") = "circular",
      py::arg("tol") = 1e-6, py::arg("max_iters") = 1000, py::arg("seed") = 0);
  m.def("dense_spectral_norm", [](const DenseMatrix& a) { return dense_spectral_norm(a); });

  // project
  m.def("project_l21_ball", [](const Array& k, const Array& center, double b) {
    return from_kernel(project_l21_ball(to_kernel(k), to_kernel(center), b));
  });
  m.def(
      "project_spectral",
      [](const Array& k, std::size_t h, std::size_t w, double s) {
        return from_kernel(project_spectral(to_kernel(k), spec_for(k, h, w, 1, "circular"), s));
      },
      py::arg("kernel"), py::arg("h"), py::arg("w"), py::arg("s"));
  auto joint = [](const std::string& scheme) {
    return [scheme](const Array& k, const Array& ref, std::size_t h, std::size_t w, double s, double b, int rounds) {
      ConstraintSet c;
      c.reference = to_kernel(ref);
      c.lipschitz_bound = s;
      c.distance_bound = b;
      c.spec = spec_for(k, h, w, 1, "circular");
      ProjectionResult r = scheme == "alternating" ? alternating_projections(to_kernel(k), c, rounds)
                                                   : dykstra(to_kernel(k), c, rounds);
      return py::make_tuple(from_kernel(r.kernel), r.report.final.relative());
    };
  };
  m.def("alternating_projections", joint("alternating"), py::arg("kernel"), py::arg("reference"), py::arg("h"),
        py::arg("w"), py::arg("s"), py::arg("b"), py::arg("rounds") = 15);
  m.def("dykstra", joint("dykstra"), py::arg("kernel"), py::arg("reference"), py::arg("h"), py::arg("w"),
        py::arg("s"), py::arg("b"), py::arg("iterations") = 100);

  // capacity
  py::enum_<ShortcutKind>(m, "ShortcutKind")
      .value("zero", ShortcutKind::zero)
      .value("identity", ShortcutKind::identity)
      .value("fixed", ShortcutKind::fixed);
  py::class_<LayerRecord>(m, "LayerRecord")
      .def(py::init<>())
      .def_readwrite("name", &LayerRecord::name)
      .def_readwrite("lipschitz", &LayerRecord::lipschitz)
      .def_readwrite("distance", &LayerRecord::distance)
      .def_readwrite("rho", &LayerRecord::rho)
      .def_readwrite("param_count", &LayerRecord::param_count);
  py::class_<BlockRecord>(m, "BlockRecord")
      .def(py::init<>())
      .def_readwrite("layers", &BlockRecord::layers)
      .def_readwrite("shortcut", &BlockRecord::shortcut)
      .def_readwrite("shortcut_lip", &BlockRecord::shortcut_lip)
      .def_readwrite("rho", &BlockRecord::rho)
      .def("lipschitz", &BlockRecord::lipschitz);
  py::class_<CapacityInput>(m, "CapacityInput")
      .def(py::init<>())
      .def_readwrite("blocks", &CapacityInput::blocks)
      .def_readwrite("n", &CapacityInput::n)
      .def_readwrite("data_norm", &CapacityInput::data_norm)
      .def_readwrite("gamma", &CapacityInput::gamma);
  m.def("rademacher_clubs", &rademacher_clubs);
  m.def("rademacher_spades", &rademacher_spades, py::arg("input"), py::arg("appendix_constant") = false);
  m.def("whole_network_cover_bound", [](const CapacityInput& in, double eps, const std::string& v) {
    return whole_network_cover_bound(in, eps, parse_cover_variant(v));
  });
  m.def("single_layer_cover_bound", [](double w, double x, double b, double eps, const std::string& v) {
    return single_layer_cover_bound(w, x, b, eps, parse_cover_variant(v));
  });
  m.def("harmonic_number", &harmonic_number);
  m.def("hurwitz_zeta", &hurwitz_zeta, py::arg("s"), py::arg("q"), py::arg("tol") = 1e-12);
  m.def("psi", &psi);
  m.def("binomial", [](std::uint64_t n, std::uint64_t k) { return to_string_u128(binomial(n, k)); });
  m.def("margin_operator", &margin_operator);
  m.def("ramp_loss", &ramp_loss);
  m.def("ramp_risk", &ramp_risk);
  m.def("margin_for_equal_ramp_loss", &margin_for_equal_ramp_loss, py::arg("logits_ref"), py::arg("labels_ref"),
        py::arg("logits_new"), py::arg("labels_new"), py::arg("classes"), py::arg("gamma_ref"),
        py::arg("gamma_max") = 1e6, py::arg("tol") = 1e-6);

  // covercalc
  m.def("evaluate_residual_tree", [](const CapacityInput& in, double eps, const std::string& v) {
    auto t = evaluate_tree(residual_tree(in), eps, DataSummary{in.n, in.data_norm}, parse_cover_variant(v),
                           AllocationScheme::norm_weighted);
    return py::make_tuple(t.log_cover, t.allocated_log_cover, t.allocated_radius);
  });

  // traindemo
  m.def(
      "synth_data",
      [](const std::string& task, std::size_t n, std::uint64_t seed) {
        LabeledData d = synth_data(parse_synth_task(task), n, seed);
        Array x({d.x.size(), std::size_t{1}, std::size_t{8}, std::size_t{8}});
        double* p = x.mutable_data();
        for (const auto& s : d.x.samples()) p = std::copy(s.values().begin(), s.values().end(), p);
        return py::make_tuple(x, d.labels);
      },
      py::arg("task"), py::arg("n"), py::arg("seed"));
  m.def("simplex_classifier", &simplex_classifier);

  // cli
  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"capbound"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
