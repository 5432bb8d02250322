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

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mapfuse/bundle.hpp"
#include "mapfuse/compress.hpp"
#include "mapfuse/geometry.hpp"
#include "mapfuse/simlab.hpp"

namespace mapfuse::testing {

inline Vec3 random_vec3(std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  return {n(rng), n(rng), n(rng)};
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  return so3_exp(random_vec3(rng, 1.5));
}

inline SimilarityTransform random_similarity(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  return {u(rng), random_rotation(rng), random_vec3(rng, 3.0)};
}

/// Central differences of f at x, column by column.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x, xm = x;
    xp(c) += h;
    xm(c) -= h;
    j.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

inline double rel_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

/// Small box scene: n_maps maps of the same points, each bundled to a tight optimum.
struct OptimizedScene {
  SimScene scene;
  std::vector<SceneMap> maps;
};

inline OptimizedScene optimized_box(const BoxSceneSpec& spec) {
  OptimizedScene out{gen_box_scene(spec), {}};
  BundleOptions opts;
  opts.gradient_norm_tolerance = 1e-10;
  opts.max_iterations = 200;
  for (const auto& m : out.scene.maps) out.maps.push_back(bundle_adjust(m, opts).map);
  return out;
}

inline BoxSceneSpec small_box(std::uint64_t seed, int points = 30, int cameras = 6, int maps = 3) {
  BoxSceneSpec s;
  s.n_points = points;
  s.n_cameras = cameras;
  s.n_maps = maps;
  s.sigma = 0.01;
  s.seed = seed;
  return s;
}

inline std::vector<TrackId> first_ids(int n) {
  std::vector<TrackId> ids;
  for (int i = 0; i < n; ++i) ids.push_back(i);
  return ids;
}

}  // namespace mapfuse::testing
