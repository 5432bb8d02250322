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

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "mapfuse/geometry.hpp"

namespace mapfuse {

/// Everything needed to push an anchor update back onto the cameras and auxiliary points.
struct RecoveryData {
  std::vector<CameraPose> cameras;
  /// All points of the source map, in source order, at the optimum.
  std::vector<Point3> points;
  /// Source indices of the auxiliary points, in the row order of dsdq after the camera block.
  std::vector<int> aux_point_indices;
  /// ds/dq, shape (6m + 3 * #aux) x 3|q|.
  Eigen::MatrixXd dsdq;
};

/// Low-memory footprint (q0, a, R) of an optimized map. The squared residual near the optimum
/// is approximated by a^2 + (q - q0)^T R^T R (q - q0).
struct CompressedMap {
  std::vector<TrackId> anchor_ids;
  Eigen::VectorXd q0;  // 3 * |anchor_ids|, xyz per anchor
  double a = 0.0;
  Eigen::MatrixXd r;   // upper triangular, gauge-filled
  long eta_res = 0;    // number of residuals
  long d_dof = 0;      // effective degrees of freedom
  std::optional<RecoveryData> recovery;

  int num_anchors() const { return static_cast<int>(anchor_ids.size()); }
  Vec3 anchor(int i) const { return q0.segment<3>(3 * i); }
  /// Throws kInvalidArgument when shapes or invariants are broken.
  void validate() const;
};

struct CompressOptions {
  bool with_recovery = false;
  /// Refuse maps whose gradient norm exceeds optimum_tolerance * (1 + a).
  bool require_optimum = true;
  double optimum_tolerance = 1e-6;
};

/// J split into anchor-point columns (ja) and camera + auxiliary-point columns (jb).
struct JacobianPartition {
  Eigen::SparseMatrix<double> ja;
  Eigen::SparseMatrix<double> jb;
  std::vector<int> anchor_indices;     // source point index per anchor
  std::vector<int> aux_point_indices;  // source point index per auxiliary point
};

JacobianPartition partition_jacobian(const SceneMap& map, std::span<const TrackId> anchor_ids);

/// ds/dq = -(jb^T jb)^{-1} (ja^T jb)^T. Throws kSingularAuxiliary when jb^T jb is singular or its
/// estimated condition number exceeds 1e12.
Eigen::MatrixXd aux_sensitivity(const Eigen::SparseMatrix<double>& ja, const Eigen::SparseMatrix<double>& jb);
Eigen::MatrixXd aux_sensitivity(const Eigen::MatrixXd& ja, const Eigen::MatrixXd& jb);

/// J_q = ja + jb * dsdq.
Eigen::MatrixXd reduced_jacobian(const Eigen::SparseMatrix<double>& ja, const Eigen::SparseMatrix<double>& jb,
                                 const Eigen::MatrixXd& dsdq);
Eigen::MatrixXd reduced_jacobian(const Eigen::MatrixXd& ja, const Eigen::MatrixXd& jb, const Eigen::MatrixXd& dsdq);

/// Tangent of the similarity orbit at q0: rows are x/y/z translation, rotation about x/y/z and
/// scale, before orthonormalization.
Eigen::MatrixXd gauge_generators_raw(const Eigen::VectorXd& q0);
/// Orthonormalized rows of gauge_generators_raw. Throws kDegenerateAnchors if their rank is below 7.
Eigen::MatrixXd gauge_generators(const Eigen::VectorXd& q0);

/// Square upper-triangular factor of a Householder QR (no pivoting), rows sign-normalized so the
/// diagonal is non-negative.
Eigen::MatrixXd triangular_factor(const Eigen::MatrixXd& j);

struct GaugeFill {
  Eigen::MatrixXd r;
  double mu = 0.0;
};

/// Drops the seven smallest rows of r_raw, appends mu * (gauge generators orthogonalized against
/// the remaining row space) with mu the median |diagonal| of the kept rows, and re-triangularizes.
GaugeFill gauge_fill(const Eigen::MatrixXd& r_raw, const Eigen::VectorXd& q0);

CompressedMap compress_map(const SceneMap& map, std::span<const TrackId> anchor_ids,
                           const CompressOptions& opts = {});

struct CompressedResidual {
  Eigen::VectorXd residual;  // [a; R (q - q0)]
  double squared = 0.0;
};

CompressedResidual eval_compressed(const CompressedMap& cmap, const Eigen::VectorXd& q);

/// Applies s = s0 + ds/dq (q_new - q0) through the camera and point charts. The returned map has
/// the source cameras and points (anchors moved to q_new) and no observations.
SceneMap recover_aux(const CompressedMap& cmap, const Eigen::VectorXd& q_new);

/// Anchor candidates per map: every track id that occurs in at least two of the maps.
std::vector<std::vector<TrackId>> default_anchor_ids(std::span<const SceneMap> maps);

}  // namespace mapfuse
