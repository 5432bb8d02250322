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

#include "mapfuse/baseline.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

struct Accumulator {
  Vec3 sum = Vec3::Zero();
  int count = 0;
  Vec3 mean() const { return sum / count; }
};

// Registers every set into the frame of set 0 in input order. Sets that do not yet share three
// points with the running union wait for a later pass. Returns set -> frame-0 transforms.
std::vector<SimilarityTransform> register_sequential(std::span<const PointSet> sets,
                                                     std::unordered_map<TrackId, Accumulator>& global,
                                                     std::vector<TrackId>& order) {
  std::vector<SimilarityTransform> transforms(sets.size());
  std::vector<bool> done(sets.size(), false);
  auto absorb = [&](std::size_t k) {
    for (std::size_t i = 0; i < sets[k].ids.size(); ++i) {
      auto [it, inserted] = global.try_emplace(sets[k].ids[i]);
      if (inserted) order.push_back(sets[k].ids[i]);
      it->second.sum += transforms[k].apply(sets[k].xyz[i]);
      ++it->second.count;
    }
    done[k] = true;
  };
  if (sets.empty()) return transforms;
  absorb(0);
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t k = 1; k < sets.size(); ++k) {
      if (done[k]) continue;
      std::vector<Vec3> src, dst;
      for (std::size_t i = 0; i < sets[k].ids.size(); ++i) {
        auto it = global.find(sets[k].ids[i]);
        if (it == global.end()) continue;
        src.push_back(sets[k].xyz[i]);
        dst.push_back(it->second.mean());
      }
      if (src.size() < 3) continue;
      transforms[k] = procrustes_align(src, dst).transform;
      absorb(k);
      progress = true;
      break;  // restart so that registration stays in input order
    }
  }
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (!done[k]) {
      throw Error(ErrorKind::kInsufficientOverlap,
                  "map " + std::to_string(k) + " shares fewer than three points with the others");
    }
  }
  return transforms;
}

}  // namespace

AlignmentResult procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw Error(ErrorKind::kInvalidArgument, "point lists differ in length");
  const int n = static_cast<int>(source.size());
  if (n < 3) throw Error(ErrorKind::kDegenerateConfiguration, "Procrustes needs at least three points");
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (int i = 0; i < n; ++i) {
    src.col(i) = source[i];
    dst.col(i) = target[i];
  }
  const Eigen::Matrix3Xd centred = src.colwise() - src.rowwise().mean();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3Xd>(centred).singularValues();
  if (!(sv(1) > 1e-9 * sv(0))) {
    throw Error(ErrorKind::kDegenerateConfiguration, "source points are collinear");
  }
  const Eigen::Matrix4d m = Eigen::umeyama(src, dst, true);
  AlignmentResult out;
  const Mat3 sr = m.topLeftCorner<3, 3>();
  out.transform.scale = std::cbrt(sr.determinant());
  out.transform.rotation = nearest_rotation(sr / out.transform.scale);
  out.transform.translation = m.topRightCorner<3, 1>();
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += (out.transform.apply(source[i]) - target[i]).squaredNorm();
  out.rmse = std::sqrt(sq / n);
  return out;
}

PointSet point_set(const SceneMap& map) {
  PointSet out;
  for (const auto& p : map.points) {
    out.ids.push_back(p.track_id);
    out.xyz.push_back(p.xyz);
  }
  return out;
}

PointSet average_merge(std::span<const PointSet> sets) {
  std::unordered_map<TrackId, Accumulator> global;
  std::vector<TrackId> order;
  register_sequential(sets, global, order);
  PointSet out;
  for (TrackId id : order) {
    out.ids.push_back(id);
    out.xyz.push_back(global.at(id).mean());
  }
  return out;
}

SceneMap concatenate_maps(std::span<const SceneMap> maps) {
  std::vector<PointSet> sets;
  for (const auto& m : maps) sets.push_back(point_set(m));
  std::unordered_map<TrackId, Accumulator> global;
  std::vector<TrackId> order;
  const auto transforms = register_sequential(sets, global, order);

  SceneMap out;
  std::unordered_map<TrackId, int> index;
  for (TrackId id : order) {
    index[id] = static_cast<int>(out.points.size());
    out.points.push_back({global.at(id).mean(), id});
  }
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const int offset = static_cast<int>(out.cameras.size());
    for (const auto& c : maps[k].cameras) out.cameras.push_back(transform_pose(c, transforms[k]));
    for (const auto& o : maps[k].observations) {
      out.observations.push_back(
          {o.camera_index + offset, index.at(maps[k].points[o.point_index].track_id), o.image_point});
    }
  }
  return out;
}

BundleResult full_bundle_merge(std::span<const SceneMap> maps, const BundleOptions& opts) {
  return bundle_adjust(concatenate_maps(maps), opts);
}

}  // namespace mapfuse
