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

#include "mapfuse/geometry.hpp"

#include <cmath>
#include <string>
#include <unordered_set>

#include <Eigen/Dense>

#include "mapfuse/error.hpp"

namespace mapfuse {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kChirality: return "chirality";
    case ErrorKind::kNotEnoughObservations: return "not_enough_observations";
    case ErrorKind::kNumericalFailure: return "numerical_failure";
    case ErrorKind::kSingularAuxiliary: return "singular_auxiliary";
    case ErrorKind::kDegenerateAnchors: return "degenerate_anchors";
    case ErrorKind::kNotConverged: return "not_converged";
    case ErrorKind::kNoRecoveryData: return "no_recovery_data";
    case ErrorKind::kInsufficientOverlap: return "insufficient_overlap";
    case ErrorKind::kDegenerateCorrespondences: return "degenerate_correspondences";
    case ErrorKind::kDegenerateConfiguration: return "degenerate_configuration";
    case ErrorKind::kInvalidDof: return "invalid_dof";
    case ErrorKind::kNonPositiveDof: return "non_positive_dof";
    case ErrorKind::kUnknownAnchor: return "unknown_anchor";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kParse: return "parse";
  }
  return "unknown";
}

int SceneMap::find_point(TrackId id) const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].track_id == id) return static_cast<int>(i);
  }
  return -1;
}

void SceneMap::validate() const {
  std::unordered_set<TrackId> seen;
  for (const auto& p : points) {
    if (!seen.insert(p.track_id).second) {
      throw Error(ErrorKind::kInvalidArgument, "duplicate track id " + std::to_string(p.track_id));
    }
  }
  const int m = static_cast<int>(cameras.size());
  const int n = static_cast<int>(points.size());
  for (std::size_t k = 0; k < observations.size(); ++k) {
    const auto& o = observations[k];
    if (o.camera_index < 0 || o.camera_index >= m || o.point_index < 0 || o.point_index >= n) {
      throw Error(ErrorKind::kInvalidArgument,
                  "observation " + std::to_string(k) + " references a missing camera or point");
    }
  }
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) {
    // second-order series; the truncation error is below double precision here
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Mat3 reorthonormalize(const Mat3& r) {
  const double drift = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return drift > 1e-12 ? nearest_rotation(r) : r;
}

Vec2 project(const CameraPose& pose, const Vec3& point) {
  const Vec3 xc = pose.to_camera(point);
  if (!(xc.z() > 1e-12)) {
    throw Error(ErrorKind::kChirality, "point behind camera (depth " + std::to_string(xc.z()) + ")");
  }
  return {xc.x() / xc.z(), xc.y() / xc.z()};
}

Vec2 project(const CameraPose& pose, const Point3& point) { return project(pose, point.xyz); }

Vec2 reprojection_residual(const CameraPose& pose, const Point3& point, const Observation& obs) {
  return project(pose, point.xyz) - obs.image_point;
}

CameraPose apply_camera_update(const CameraPose& pose, const Vec6& delta) {
  CameraPose out;
  out.rotation = reorthonormalize(so3_exp(delta.head<3>()) * pose.rotation);
  out.translation = pose.translation + delta.tail<3>();
  return out;
}

SimilarityTransform apply_sim3_update(const SimilarityTransform& t, const Vec7& delta) {
  SimilarityTransform out;
  out.rotation = reorthonormalize(so3_exp(delta.head<3>()) * t.rotation);
  out.translation = t.translation + delta.segment<3>(3);
  out.scale = t.scale * std::exp(delta(6));
  return out;
}

std::vector<Vec3> sim3_apply(const SimilarityTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b) {
  SimilarityTransform out;
  out.scale = a.scale * b.scale;
  out.rotation = reorthonormalize(a.rotation * b.rotation);
  out.translation = a.scale * (a.rotation * b.translation) + a.translation;
  return out;
}

SimilarityTransform invert(const SimilarityTransform& t) {
  SimilarityTransform out;
  out.scale = 1.0 / t.scale;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation) / t.scale;
  return out;
}

CameraPose transform_pose(const CameraPose& pose, const SimilarityTransform& s) {
  // R X + t with X = S^-1(Y) equals (R Q^T Y + s t - R Q^T c) / s; the common factor drops out.
  CameraPose out;
  out.rotation = reorthonormalize(pose.rotation * s.rotation.transpose());
  out.translation = s.scale * pose.translation - out.rotation * s.translation;
  return out;
}

SceneMap transform_map(const SceneMap& map, const SimilarityTransform& s) {
  SceneMap out = map;
  for (auto& c : out.cameras) c = transform_pose(c, s);
  for (auto& p : out.points) p.xyz = s.apply(p.xyz);
  return out;
}

}  // namespace mapfuse
