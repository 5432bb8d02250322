/******************************************************************************
 * Copyright 2026 The mapfuse Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mapfuse/baseline.hpp"
#include "mapfuse/bundle.hpp"
#include "mapfuse/cli.hpp"
#include "mapfuse/compress.hpp"
#include "mapfuse/error.hpp"
#include "mapfuse/io.hpp"
#include "mapfuse/merge.hpp"
#include "mapfuse/simlab.hpp"
#include "mapfuse/stats.hpp"

namespace py = pybind11;
using namespace mapfuse;

namespace {

std::vector<Vec3> rows(const Eigen::MatrixX3d& m) {
  std::vector<Vec3> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

py::dict report_dict(const BundleReport& r) {
  py::dict d;
  d["squared_residual"] = r.squared_residual;
  d["gradient_norm"] = r.gradient_norm;
  d["iterations"] = r.iterations;
  d["converged"] = r.converged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Compressed map merging";

  static py::exception<Error> error(m, "MapfuseError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def("project", [](const Mat3& rotation, const Vec3& translation, const Vec3& x) {
    return project(CameraPose{rotation, translation}, x);
  });

  m.def(
      "bundle",
      [](const std::string& map_json, int max_iterations, double tolerance) {
        BundleOptions o;
        o.max_iterations = max_iterations;
        o.gradient_norm_tolerance = tolerance;
        const BundleResult r = bundle_adjust(parse_map(map_json), o);
        return py::make_tuple(dump_map(r.map), report_dict(r.report));
      },
      py::arg("map_json"), py::arg("max_iterations") = 100, py::arg("tolerance") = 1e-8,
      "Bundle-adjust a map given as JSON text. Returns (map_json, report).");

  m.def(
      "compress",
      [](const std::string& map_json, const std::vector<TrackId>& anchors, bool with_recovery) {
        CompressOptions o;
        o.with_recovery = with_recovery;
        return dump_footprint(compress_map(parse_map(map_json), anchors, o));
      },
      py::arg("map_json"), py::arg("anchors"), py::arg("with_recovery") = false);

  m.def(
      "footprint_arrays",
      [](const std::string& footprint_json) {
        const CompressedMap c = parse_footprint(footprint_json);
        py::dict d;
        d["anchor_ids"] = c.anchor_ids;
        d["q0"] = c.q0;
        d["a"] = c.a;
        d["r"] = c.r;
        d["eta_res"] = c.eta_res;
        d["d_dof"] = c.d_dof;
        return d;
      },
      py::arg("footprint_json"));

  m.def(
      "merge",
      [](const std::vector<std::string>& footprints, std::optional<double> sigma, double level) {
        std::vector<CompressedMap> cmaps;
        for (const auto& f : footprints) cmaps.push_back(parse_footprint(f));
        const Correspondences corr = Correspondences::from_track_ids(cmaps);
        const MergeSolution sol = merge_bundle(cmaps, corr);
        py::dict d;
        d["global_ids"] = sol.global_ids;
        d["q"] = Eigen::MatrixXd(sol.q.reshaped(3, sol.q.size() / 3).transpose());
        d["a_tilde"] = merge_a_tilde(cmaps, sol);
        d["dof_delta"] = dof_delta(corr);
        d["report"] = report_dict(sol.report);
        const double s = sigma ? *sigma : estimate_sigma(cmaps);
        const ChangeTestResult t = change_test(merge_a_tilde(cmaps, sol), gamma_params(s, dof_delta(corr)), level);
        d["p_value"] = t.p_value;
        d["threshold"] = t.threshold;
        d["rejected"] = t.rejected;
        return d;
      },
      py::arg("footprints"), py::arg("sigma") = py::none(), py::arg("level") = 0.99);

  m.def("gamma_params", [](double sigma, long dof) {
    const GammaParams p = gamma_params(sigma, dof);
    return py::make_tuple(p.alpha, p.nu);
  });
  m.def("gamma_cdf", [](double alpha, double nu, double x) { return gamma_cdf(GammaParams{alpha, nu}, x); });
  m.def("gamma_quantile", [](double alpha, double nu, double level) { return gamma_quantile(GammaParams{alpha, nu}, level); });

  m.def(
      "procrustes_align",
      [](const Eigen::MatrixX3d& source, const Eigen::MatrixX3d& target) {
        const auto s = rows(source);
        const auto t = rows(target);
        const AlignmentResult r = procrustes_align(s, t);
        return py::make_tuple(r.transform.scale, r.transform.rotation, r.transform.translation, r.rmse);
      },
      py::arg("source"), py::arg("target"), "Similarity (scale, R, t, rmse) with target ~ s R source + t.");

  m.def(
      "box_scene",
      [](int n_points, int n_cameras, int n_maps, double sigma, std::uint64_t seed) {
        BoxSceneSpec s;
        s.n_points = n_points;
        s.n_cameras = n_cameras;
        s.n_maps = n_maps;
        s.sigma = sigma;
        s.seed = seed;
        std::vector<std::string> out;
        for (const auto& map : gen_box_scene(s).maps) out.push_back(dump_map(map));
        return out;
      },
      py::arg("n_points") = 100, py::arg("n_cameras") = 10, py::arg("n_maps") = 3, py::arg("sigma") = 0.05,
      py::arg("seed") = 1, "Simulated box-scene maps as JSON text.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process. Returns (exit_code, stdout, stderr).");
}
