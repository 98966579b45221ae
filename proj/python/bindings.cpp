#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "nasaudit/dataset.hpp"
#include "nasaudit/defense_suite.hpp"
#include "nasaudit/manifest.hpp"
#include "nasaudit/poison_forge.hpp"
#include "nasaudit/proxy_metrics.hpp"
#include "nasaudit/rng.hpp"
#include "nasaudit/search_space.hpp"
#include "nasaudit/sha256.hpp"
#include "nasaudit/stat_engine.hpp"

namespace py = pybind11;
using namespace nasaudit;

namespace {

Tensor tensor_from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ConfigError("need at least one row");
  const std::size_t d = rows.front().size();
  Tensor t = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw ConfigError("ragged rows");
    for (std::size_t j = 0; j < d; ++j) t.at(i, j) = rows[i][j];
  }
  return t;
}

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out[i][j] = t.at(i, j);
  return out;
}

}  // namespace

PYBIND11_MODULE(_nasaudit, m) {
  m.doc() = "Poisoning audit for architecture search: core operations";
  m.attr("__version__") = kToolVersion;

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("n", &Dataset::n)
      .def_property_readonly("dim", &Dataset::dim)
      .def_readonly("class_count", &Dataset::class_count)
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("name", &Dataset::name)
      .def_property_readonly("poison_count", &Dataset::poison_count)
      .def_property_readonly("features", [](const Dataset& d) { return rows_of(d.features); })
      .def_property_readonly("poison_mask", [](const Dataset& d) {
        std::vector<bool> mask(d.poison_mask.begin(), d.poison_mask.end());
        return mask;
      });

  m.def(
      "synthetic",
      [](const std::string& kind, std::size_t n, std::size_t dim, std::size_t classes,
         std::uint64_t seed, double noise, std::size_t modes) {
        return generate_synthetic(synthetic_kind_from(kind), n, dim, classes, seed, noise, modes);
      },
      py::arg("kind"), py::arg("n"), py::arg("dim") = 2, py::arg("classes") = 2,
      py::arg("seed") = 7, py::arg("noise") = 1.0, py::arg("modes") = 1);

  m.def(
      "rlf",
      [](const Dataset& d, double p, std::uint64_t seed) {
        Rng rng(seed);
        return rlf(d, p, rng);
      },
      py::arg("dataset"), py::arg("p"), py::arg("seed"));
  m.def(
      "gaussian_noise",
      [](const Dataset& d, double p, double sigma, double epsilon, std::uint64_t seed) {
        Rng rng(seed);
        return gaussian_noise(d, p, sigma, epsilon, rng);
      },
      py::arg("dataset"), py::arg("p"), py::arg("sigma") = 16.0, py::arg("epsilon") = 16.0,
      py::arg("seed") = 0);

  m.def(
      "random_genotype",
      [](std::uint64_t seed) {
        Rng rng(seed);
        return render_genotype(random_genotype(rng));
      },
      py::arg("seed"));
  m.def(
      "genotype_dot",
      [](const std::string& text, const std::string& title) {
        return genotype_dot(parse_genotype(text), title);
      },
      py::arg("genotype"), py::arg("title") = "genotype");

  m.def(
      "kmeans",
      [](const std::vector<std::vector<double>>& points, std::size_t k, std::uint64_t seed) {
        KmeansConfig cfg;
        cfg.seed = seed;
        const KmeansResult r = kmeans(tensor_from_rows(points), k, cfg);
        py::dict out;
        out["assignments"] = r.assignments;
        out["centroids"] = rows_of(r.centroids);
        out["inertia"] = r.inertia;
        out["iterations"] = r.iterations;
        return out;
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0);

  m.def(
      "welch_one_sided",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const TestOutcome o = welch_one_sided(a, b);
        py::dict out;
        out["t"] = o.t;
        out["df"] = o.df;
        out["p"] = o.p;
        out["degenerate"] = o.degenerate;
        return out;
      },
      py::arg("a"), py::arg("b"));
  m.def("bh_fdr", &bh_fdr, py::arg("p_values"), py::arg("alpha") = 0.05);
  m.def("delta_imp", &delta_imp, py::arg("condition_mean"), py::arg("baseline_mean"));
  m.def("incomplete_beta", &incomplete_beta, py::arg("a"), py::arg("b"), py::arg("x"));

  m.def("metric_names", []() {
    return std::vector<std::string>(kMetricNames, kMetricNames + kMetricCount);
  });
  m.def("sha256_hex", [](const std::string& s) { return sha256_hex(s); }, py::arg("text"));
  m.def(
      "manifest_hash",
      [](const std::string& json_text) { return manifest_hash(json_text); },
      py::arg("json_text"));
}
