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

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mapfuse/geometry.hpp"

namespace mapfuse {

struct BundleOptions {
  int max_iterations = 100;
  /// Stop once ||2 J^T r|| drops to this value.
  double gradient_norm_tolerance = 1e-8;
  /// Marquardt damping: lambda * diag(J^T J), lambda starts here.
  double initial_damping = 1e-3;
  double damping_up_factor = 10.0;
  double damping_down_factor = 10.0;
  /// Points held at their current position. Their columns take no part in the solve.
  std::vector<TrackId> frozen_track_ids;

  void validate() const;
};

struct BundleReport {
  double squared_residual = 0.0;  // a^2 at exit
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct BundleResult {
  SceneMap map;
  BundleReport report;
};

/// Column offsets of the local parametrization: cameras (6 each) first, then points (3 each).
inline int camera_column(int camera) { return 6 * camera; }
inline int point_column(int point, int num_cameras) { return 6 * num_cameras + 3 * point; }

/// d(residual)/d(camera update) and d(residual)/d(point) for one observation.
void observation_jacobian(const CameraPose& pose, const Vec3& point,
                          Eigen::Matrix<double, 2, 6>& d_camera, Eigen::Matrix<double, 2, 3>& d_point);

/// Stacked reprojection residuals in observation order (length 2 * #observations).
Eigen::VectorXd assemble_residuals(const SceneMap& map);

/// J = dr/dz, shape (2 * #obs) x (6m + 3n), columns cameras-then-points.
Eigen::SparseMatrix<double> assemble_jacobian(const SceneMap& map);

/// ||2 J^T r||_2 over every camera and point parameter.
double gradient_norm(const SceneMap& map);

/// Levenberg-Marquardt over the full map; the point block is eliminated by a Schur complement.
/// The 7-dim gauge is left free and regularized by the damping term.
BundleResult bundle_adjust(const SceneMap& map, const BundleOptions& opts = {});

}  // namespace mapfuse
