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

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace mapfuse {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec7 = Eigen::Matrix<double, 7, 1>;

using TrackId = std::int64_t;

/// Calibrated camera P = [R t]; a world point X maps to R*X + t in the camera frame.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 to_camera(const Vec3& x) const { return rotation * x + translation; }
  /// Camera centre in world coordinates.
  Vec3 centre() const { return -rotation.transpose() * translation; }
};

struct Point3 {
  Vec3 xyz = Vec3::Zero();
  TrackId track_id = 0;
};

/// image_point is in normalized (intrinsics-free) coordinates.
struct Observation {
  int camera_index = 0;
  int point_index = 0;
  Vec2 image_point = Vec2::Zero();
};

/// X -> scale * rotation * X + translation.
struct SimilarityTransform {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
  static SimilarityTransform identity() { return {}; }
};

struct SceneMap {
  std::vector<CameraPose> cameras;
  std::vector<Point3> points;
  std::vector<Observation> observations;

  /// Index of the point with this track id, or -1.
  int find_point(TrackId id) const;
  /// Throws kInvalidArgument on dangling indices or duplicate track ids.
  void validate() const;
};

Mat3 skew(const Vec3& v);
/// Rodrigues exponential of an axis-angle vector.
Mat3 so3_exp(const Vec3& omega);
/// Closest rotation in Frobenius norm (det +1).
Mat3 nearest_rotation(const Mat3& m);
/// Re-projects onto SO(3) only when orthonormality has drifted past 1e-12.
Mat3 reorthonormalize(const Mat3& r);

/// (X/Z, Y/Z) of the point in the camera frame. Throws kChirality when Z <= 1e-12.
Vec2 project(const CameraPose& pose, const Vec3& point);
Vec2 project(const CameraPose& pose, const Point3& point);

/// project(pose, point) - obs.image_point.
Vec2 reprojection_residual(const CameraPose& pose, const Point3& point, const Observation& obs);

/// delta = (rotation axis-angle, translation). Rotation is left-incremented.
CameraPose apply_camera_update(const CameraPose& pose, const Vec6& delta);

/// delta = (rotation axis-angle, translation, log-scale).
SimilarityTransform apply_sim3_update(const SimilarityTransform& t, const Vec7& delta);

std::vector<Vec3> sim3_apply(const SimilarityTransform& t, std::span<const Vec3> points);

/// compose(a, b) applies b first, then a.
SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b);
SimilarityTransform invert(const SimilarityTransform& t);

/// Expresses a pose in the frame Y = S(X); projections of transformed points are unchanged.
CameraPose transform_pose(const CameraPose& pose, const SimilarityTransform& s);
/// Moves every camera and point of a map into the frame Y = S(X).
SceneMap transform_map(const SceneMap& map, const SimilarityTransform& s);

}  // namespace mapfuse
