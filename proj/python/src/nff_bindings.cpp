#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include "nff/errors.hpp"
#include "nff/experiment.hpp"
#include "nff/gp_oracle.hpp"
#include "nff/reference_field.hpp"

namespace py = pybind11;
using nff::ad::Tensor;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// 1-D arrays become columns.
Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) return Tensor::column(std::vector<double>(a.data(), a.data() + a.shape(0)));
  if (a.ndim() != 2) throw nff::ShapeError("expected a 1-D or 2-D array");
  Tensor t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

py::array_t<double> to_array(const Tensor& t) {
  return py::array_t<double>({static_cast<py::ssize_t>(t.rows()), static_cast<py::ssize_t>(t.cols())},
                             t.data().data());
}

py::array_t<double> to_array(const std::vector<double>& v) {
  return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

nff::Field parse_field(const std::string& s) {
  if (s == "k") return nff::Field::K;
  if (s == "f") return nff::Field::F;
  if (s == "u") return nff::Field::U;
  throw nff::ConfigError("unknown field '" + s + "' (expected k, f or u)");
}

nff::Experiment make_experiment(const std::string& path, const std::map<std::string, std::string>& overrides) {
  nff::Config c = nff::Config::load(path);
  for (const auto& [k, v] : overrides) c.set(k, v);
  return nff::Experiment(c);
}

}  // namespace

PYBIND11_MODULE(_nff, m) {
  m.doc() = "Normalizing field flows and physics-informed stochastic elliptic solvers";

  py::register_exception<nff::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<nff::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<nff::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<nff::DataMismatchError>(m, "DataMismatchError", PyExc_ValueError);

  py::class_<nff::Experiment>(m, "Experiment")
      .def(py::init(&make_experiment), py::arg("path"), py::arg("overrides") = std::map<std::string, std::string>{})
      .def_property_readonly("kind", [](const nff::Experiment& e) { return std::string(nff::kind_name(e.kind())); })
      .def_property_readonly("seed", &nff::Experiment::seed)
      .def_property_readonly("data_hash", &nff::Experiment::data_hash)
      .def_property_readonly("model_hash", &nff::Experiment::model_hash)
      .def_property_readonly("eval_grid", [](const nff::Experiment& e) { return to_array(e.eval_grid()); });

  m.def("generate", &nff::run_generate, py::arg("experiment"), py::arg("out"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "train",
      [](const nff::Experiment& e, const std::string& data, const std::string& out, const std::string& resume) {
        return nff::run_train(e, data, out, resume);
      },
      py::arg("experiment"), py::arg("data"), py::arg("out"), py::arg("resume") = "",
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "_evaluate_json",
      [](const nff::Experiment& e, const std::string& checkpoint, const std::string& out_dir, bool oracle_self) {
        return nff::run_evaluate(e, checkpoint, out_dir, oracle_self).dump();
      },
      py::arg("experiment"), py::arg("checkpoint"), py::arg("out_dir"), py::arg("oracle_self") = false);
  m.def(
      "infer",
      [](const nff::Experiment& e, const std::string& checkpoint, const std::string& observations,
         std::size_t draws, const std::string& out, const std::string& field) {
        nff::run_infer(e, checkpoint, observations, draws, out, parse_field(field));
      },
      py::arg("experiment"), py::arg("checkpoint"), py::arg("observations"), py::arg("draws"), py::arg("out"),
      py::arg("field") = "k");

  m.def(
      "lowrank_logpdf",
      [](const Array& mean, const Array& factor, const Array& scale, const Array& z) {
        nff::ad::Graph g;
        const nff::SnapshotStats s{g.constant(to_tensor(mean)), g.constant(to_tensor(factor)),
                                   g.constant(to_tensor(scale))};
        return nff::lowrank_logpdf(s, g.constant(to_tensor(z))).item();
      },
      py::arg("mean"), py::arg("factor"), py::arg("scale"), py::arg("z"),
      "log N(z | mean, factor factor^T + diag(scale)^2) for stacked 1-D vectors.");
  m.def(
      "posterior_xi",
      [](const Array& mean, const Array& factor, const Array& scale, const Array& z) {
        const Tensor f = to_tensor(factor);
        const auto post = nff::posterior_xi(to_tensor(mean), f, to_tensor(scale), to_tensor(z), f.cols());
        return py::make_tuple(to_array(std::vector<double>(post.mean.data().begin(), post.mean.data().end())),
                              to_array(post.cov));
      },
      py::arg("mean"), py::arg("factor"), py::arg("scale"), py::arg("z"));

  m.def(
      "gp_sample",
      [](const Array& points, std::size_t n, std::uint64_t seed, double sigma, double length, double mean) {
        nff::Rng rng(seed);
        Tensor pts = to_tensor(points);
        return to_array(nff::gp_sample(nff::Kernel::squared_exponential(sigma, length, mean), pts, n, rng));
      },
      py::arg("points"), py::arg("n"), py::arg("seed"), py::arg("sigma") = 1.0, py::arg("length") = 1.0,
      py::arg("mean") = 0.0);
  m.def(
      "solve_elliptic_1d",
      [](const Array& k, const Array& f, const Array& nodes) {
        return to_array(nff::solve_elliptic_1d(to_vector(k), to_vector(f), to_vector(nodes)));
      },
      py::arg("k"), py::arg("f"), py::arg("nodes"));
  m.def(
      "solve_elliptic_2d",
      [](const Array& k, const Array& f, std::size_t n, double spacing) {
        return to_array(nff::solve_elliptic_2d(to_vector(k), to_vector(f), n, spacing));
      },
      py::arg("k"), py::arg("f"), py::arg("n"), py::arg("spacing"));
}
