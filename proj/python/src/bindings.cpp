#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tge/annotation.hpp"
#include "tge/error.hpp"
#include "tge/mesh.hpp"
#include "tge/metrics.hpp"
#include "tge/model.hpp"
#include "tge/primitives.hpp"
#include "tge/stats.hpp"

namespace py = pybind11;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<tge::Vec3>& v) {
  Array out({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i) {
    m(i, 0) = v[i].x;
    m(i, 1) = v[i].y;
    m(i, 2) = v[i].z;
  }
  return out;
}

std::vector<tge::Vec3> from_array(const Array& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error(std::string(what) + " must have shape (n, 3)");
  auto r = a.unchecked<2>();
  std::vector<tge::Vec3> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2)};
  return out;
}

IndexArray faces_to_array(const std::vector<tge::Face>& f) {
  IndexArray out({static_cast<py::ssize_t>(f.size()), py::ssize_t{3}});
  auto m = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < f.size(); ++i) {
    for (int k = 0; k < 3; ++k) m(i, k) = f[i][k];
  }
  return out;
}

std::vector<tge::Face> faces_from_array(const IndexArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("faces must have shape (m, 3)");
  auto r = a.unchecked<2>();
  std::vector<tge::Face> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      if (r(i, k) < 0) throw py::value_error("face indices must be non-negative");
      out[i][k] = static_cast<std::uint32_t>(r(i, k));
    }
  }
  return out;
}

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw py::value_error("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

py::object json_to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json py_to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Colored mesh fidelity: metrics, learned scorer and annotation statistics";

  // Translators run newest-first, so the subclass is registered last.
  auto base_error = py::register_exception<tge::Error>(m, "TgeError", PyExc_RuntimeError);
  py::register_exception<tge::FingerprintError>(m, "FingerprintError", base_error);

  py::class_<tge::ColoredMesh>(m, "Mesh")
      .def(py::init([](const Array& vertices, const Array& colors, const IndexArray& faces, std::string name) {
             tge::ColoredMesh mesh;
             mesh.vertices = from_array(vertices, "vertices");
             mesh.colors = from_array(colors, "colors");
             mesh.faces = faces_from_array(faces);
             mesh.name = std::move(name);
             mesh.validate();
             return mesh;
           }),
           py::arg("vertices"), py::arg("colors"), py::arg("faces"), py::arg("name") = "")
      .def_property_readonly("vertices", [](const tge::ColoredMesh& mesh) { return to_array(mesh.vertices); })
      .def_property_readonly("colors", [](const tge::ColoredMesh& mesh) { return to_array(mesh.colors); })
      .def_property_readonly("faces", [](const tge::ColoredMesh& mesh) { return faces_to_array(mesh.faces); })
      .def_readwrite("name", &tge::ColoredMesh::name)
      .def("surface_area", &tge::ColoredMesh::surface_area)
      .def("__repr__", [](const tge::ColoredMesh& mesh) {
        return "<Mesh '" + mesh.name + "' " + std::to_string(mesh.vertices.size()) + " vertices, " +
               std::to_string(mesh.faces.size()) + " faces>";
      });

  m.def(
      "load_mesh", [](const std::filesystem::path& p) { return tge::load_mesh(p); }, py::arg("path"));
  m.def(
      "save_mesh", [](const tge::ColoredMesh& mesh, const std::filesystem::path& p) { tge::save_mesh(mesh, p); },
      py::arg("mesh"), py::arg("path"));
  m.def(
      "make_primitive",
      [](const std::string& kind, int resolution, std::uint64_t color_seed) {
        auto mesh = tge::make_primitive(tge::primitive_from_name(kind), resolution, color_seed);
        mesh.name = kind;
        return mesh;
      },
      py::arg("kind"), py::arg("resolution") = 16, py::arg("color_seed") = 0);
  m.def(
      "sample_points",
      [](const tge::ColoredMesh& mesh, std::size_t n, std::uint64_t seed) {
        const auto pc = tge::sample_points(mesh, n, seed);
        return py::make_tuple(to_array(pc.points), to_array(pc.colors));
      },
      py::arg("mesh"), py::arg("n"), py::arg("seed") = 0, "Area-weighted surface samples as (points, colors).");

  m.def("metric_names", &tge::metric_names);
  m.def(
      "metrics",
      [](const tge::ColoredMesh& input, const tge::ColoredMesh& reference, std::vector<std::string> names,
         std::size_t points, std::uint64_t seed, int iou_resolution) {
        tge::MetricConfig cfg;
        cfg.metrics = std::move(names);
        cfg.points = points;
        cfg.seed = seed;
        cfg.iou_resolution = iou_resolution;
        py::dict out;
        for (const auto& r : tge::run_all(input, reference, cfg)) out[py::str(r.name)] = r.value;
        return out;
      },
      py::arg("input"), py::arg("reference"), py::arg("names") = std::vector<std::string>{},
      py::arg("points") = 4096, py::arg("seed") = 0, py::arg("iou_resolution") = 64);

  m.def(
      "plcc", [](const Array& x, const Array& y) { return tge::plcc(to_vector(x), to_vector(y)); }, py::arg("x"),
      py::arg("y"));
  m.def(
      "srocc", [](const Array& x, const Array& y) { return tge::srocc(to_vector(x), to_vector(y)); }, py::arg("x"),
      py::arg("y"));
  m.def(
      "krocc", [](const Array& x, const Array& y) { return tge::krocc(to_vector(x), to_vector(y)); }, py::arg("x"),
      py::arg("y"));

  m.def(
      "model_config",
      [](const std::string& name, std::size_t n_points) {
        const auto cfg = name == "toy" ? tge::TgeConfig::toy_config(n_points == 0 ? 128 : n_points)
                                       : tge::TgeConfig::default_config();
        return json_to_py(cfg.to_json());
      },
      py::arg("name") = "default", py::arg("n_points") = 0, "Architecture config ('toy' or 'default') as a dict.");
  m.def(
      "estimate_flops",
      [](const py::object& config, std::size_t n_points) {
        return json_to_py(tge::estimate_flops(tge::TgeConfig::from_json(py_to_json(config)), n_points).to_json());
      },
      py::arg("config"), py::arg("n_points"));

  py::class_<tge::TgeParams>(m, "Model")
      .def_static(
          "init",
          [](const py::object& config, std::uint64_t seed) {
            const auto cfg = tge::TgeConfig::from_json(py_to_json(config));
            cfg.validate();
            return tge::init_params(cfg, seed);
          },
          py::arg("config"), py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return tge::load_model(p); }, py::arg("path"))
      .def(
          "save", [](const tge::TgeParams& p, const std::filesystem::path& path) { tge::save_model(path, p); },
          py::arg("path"))
      .def_property_readonly("fingerprint", &tge::TgeParams::fingerprint)
      .def_property_readonly("config", [](const tge::TgeParams& p) { return json_to_py(p.config.to_json()); })
      .def(
          "predict",
          [](const tge::TgeParams& p, const tge::ColoredMesh& input, const tge::ColoredMesh& reference) {
            py::gil_scoped_release release;
            return tge::predict(input, reference, p);
          },
          py::arg("input"), py::arg("reference"));

  m.def(
      "remove_outliers",
      [](const std::vector<double>& scores) {
        const auto r = tge::remove_outliers(scores);
        py::dict out;
        out["kept"] = r.kept;
        out["removed"] = r.removed;
        out["q1"] = r.q1;
        out["q3"] = r.q3;
        out["lower_fence"] = r.lower_fence;
        out["upper_fence"] = r.upper_fence;
        return out;
      },
      py::arg("scores"));
  m.def(
      "confidence_interval", [](const std::vector<double>& s, double z) { return tge::confidence_interval(s, z); },
      py::arg("scores"), py::arg("z") = tge::kZ95);
}
