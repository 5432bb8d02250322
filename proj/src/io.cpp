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

#include "mapfuse/io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

using nlohmann::json;

template <typename Derived>
json to_array(const Eigen::MatrixBase<Derived>& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> fixed_vector(const json& j, const char* what) {
  if (!j.is_array() || j.size() != N) {
    throw Error(ErrorKind::kParse, std::string(what) + " needs " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v(i) = j.at(i).get<double>();
  return v;
}

Eigen::VectorXd dynamic_vector(const json& j, const char* what) {
  if (!j.is_array()) throw Error(ErrorKind::kParse, std::string(what) + " must be an array");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j.at(i).get<double>();
  return v;
}

json camera_json(const CameraPose& c) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
  }
  return {{"rotation", rot}, {"translation", to_array(c.translation)}};
}

CameraPose camera_from(const json& j) {
  const auto rot = fixed_vector<9>(j.at("rotation"), "rotation");
  CameraPose c;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot(3 * r + k);
  }
  c.translation = fixed_vector<3>(j.at("translation"), "translation");
  return c;
}

json points_json(const std::vector<Point3>& points) {
  json out = json::array();
  for (const auto& p : points) out.push_back({{"id", p.track_id}, {"xyz", to_array(p.xyz)}});
  return out;
}

std::vector<Point3> points_from(const json& j) {
  std::vector<Point3> out;
  for (const auto& p : j) out.push_back({fixed_vector<3>(p.at("xyz"), "xyz"), p.at("id").get<TrackId>()});
  return out;
}

void check_version(const json& j) {
  const int v = j.at("format_version").get<int>();
  if (v != kFormatVersion) throw Error(ErrorKind::kParse, "unsupported format_version " + std::to_string(v));
}

template <typename F>
auto parse_with(std::string_view text, F&& build) {
  try {
    return build(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, e.what());
  }
}

}  // namespace

std::string dump_map(const SceneMap& map) {
  json cams = json::array();
  for (const auto& c : map.cameras) cams.push_back(camera_json(c));
  json obs = json::array();
  for (const auto& o : map.observations) {
    obs.push_back({{"cam", o.camera_index}, {"point", o.point_index}, {"uv", to_array(o.image_point)}});
  }
  const json doc{{"format_version", kFormatVersion},
                 {"cameras", cams},
                 {"points", points_json(map.points)},
                 {"observations", obs}};
  return doc.dump(1) + "\n";
}

SceneMap parse_map(std::string_view text) {
  SceneMap map = parse_with(text, [](const json& j) {
    check_version(j);
    SceneMap m;
    for (const auto& c : j.at("cameras")) m.cameras.push_back(camera_from(c));
    m.points = points_from(j.at("points"));
    for (const auto& o : j.at("observations")) {
      m.observations.push_back({o.at("cam").get<int>(), o.at("point").get<int>(), fixed_vector<2>(o.at("uv"), "uv")});
    }
    return m;
  });
  try {
    map.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kParse, e.what());
  }
  return map;
}

std::string dump_footprint(const CompressedMap& cmap) {
  json tri = json::array();
  for (int i = 0; i < cmap.r.rows(); ++i) {
    for (int k = i; k < cmap.r.cols(); ++k) tri.push_back(cmap.r(i, k));
  }
  json doc{{"format_version", kFormatVersion},
           {"anchor_ids", cmap.anchor_ids},
           {"q0", to_array(cmap.q0)},
           {"a", cmap.a},
           {"R", tri},
           {"eta_res", cmap.eta_res},
           {"d_dof", cmap.d_dof}};
  if (cmap.recovery) {
    const RecoveryData& rec = *cmap.recovery;
    json cams = json::array();
    for (const auto& c : rec.cameras) cams.push_back(camera_json(c));
    json data = json::array();
    for (int i = 0; i < rec.dsdq.rows(); ++i) {
      for (int k = 0; k < rec.dsdq.cols(); ++k) data.push_back(rec.dsdq(i, k));
    }
    doc["recovery"] = {{"cameras", cams},
                       {"points", points_json(rec.points)},
                       {"aux_point_indices", rec.aux_point_indices},
                       {"dsdq", {{"rows", rec.dsdq.rows()}, {"cols", rec.dsdq.cols()}, {"data", data}}}};
  }
  return doc.dump(1) + "\n";
}

CompressedMap parse_footprint(std::string_view text) {
  CompressedMap cmap = parse_with(text, [](const json& j) {
    check_version(j);
    CompressedMap c;
    c.anchor_ids = j.at("anchor_ids").get<std::vector<TrackId>>();
    c.q0 = dynamic_vector(j.at("q0"), "q0");
    c.a = j.at("a").get<double>();
    c.eta_res = j.at("eta_res").get<long>();
    c.d_dof = j.at("d_dof").get<long>();
    const int n = 3 * c.num_anchors();
    const json& tri = j.at("R");
    if (!tri.is_array() || tri.size() != static_cast<std::size_t>(n) * (n + 1) / 2) {
      throw Error(ErrorKind::kParse, "R must hold 3|q|(3|q|+1)/2 numbers");
    }
    c.r = Eigen::MatrixXd::Zero(n, n);
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i) {
      for (int k = i; k < n; ++k) c.r(i, k) = tri.at(idx++).get<double>();
    }
    if (j.contains("recovery")) {
      const json& r = j.at("recovery");
      RecoveryData rec;
      for (const auto& cam : r.at("cameras")) rec.cameras.push_back(camera_from(cam));
      rec.points = points_from(r.at("points"));
      rec.aux_point_indices = r.at("aux_point_indices").get<std::vector<int>>();
      const json& d = r.at("dsdq");
      const auto rows = d.at("rows").get<Eigen::Index>();
      const auto cols = d.at("cols").get<Eigen::Index>();
      const json& data = d.at("data");
      if (rows < 0 || cols != n || data.size() != static_cast<std::size_t>(rows * cols) ||
          rows != 6 * static_cast<Eigen::Index>(rec.cameras.size()) + 3 * static_cast<Eigen::Index>(rec.aux_point_indices.size())) {
        throw Error(ErrorKind::kParse, "dsdq shape does not match the recovery block");
      }
      rec.dsdq.resize(rows, cols);
      idx = 0;
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index k = 0; k < cols; ++k) rec.dsdq(i, k) = data.at(idx++).get<double>();
      }
      for (int p : rec.aux_point_indices) {
        if (p < 0 || p >= static_cast<int>(rec.points.size())) {
          throw Error(ErrorKind::kParse, "aux_point_indices out of range");
        }
      }
      c.recovery = std::move(rec);
    }
    return c;
  });
  try {
    cmap.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kParse, e.what());
  }
  return cmap;
}

std::string dump_correspondences(const Correspondences& corr) {
  const json doc{{"format_version", kFormatVersion}, {"global_ids", corr.global_ids}, {"maps", corr.to_global}};
  return doc.dump(1) + "\n";
}

Correspondences parse_correspondences(std::string_view text) {
  return parse_with(text, [](const json& j) {
    check_version(j);
    Correspondences c;
    c.global_ids = j.at("global_ids").get<std::vector<TrackId>>();
    c.to_global = j.at("maps").get<std::vector<std::vector<int>>>();
    return c;
  });
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::kIo, "cannot read " + path);
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
}

SceneMap load_map(const std::string& path) { return parse_map(read_text(path)); }
void save_map(const std::string& path, const SceneMap& map) { write_text(path, dump_map(map)); }
CompressedMap load_footprint(const std::string& path) { return parse_footprint(read_text(path)); }
void save_footprint(const std::string& path, const CompressedMap& cmap) { write_text(path, dump_footprint(cmap)); }
Correspondences load_correspondences(const std::string& path) { return parse_correspondences(read_text(path)); }
void save_correspondences(const std::string& path, const Correspondences& corr) {
  write_text(path, dump_correspondences(corr));
}

}  // namespace mapfuse
