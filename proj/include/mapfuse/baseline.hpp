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

#include <span>
#include <vector>

#include "mapfuse/bundle.hpp"
#include "mapfuse/geometry.hpp"

namespace mapfuse {

struct AlignmentResult {
  SimilarityTransform transform;  // maps source onto target
  double rmse = 0.0;
};

/// Closed-form similarity minimizing sum ||s R x_i + t - y_i||^2, reflections excluded.
/// Throws kDegenerateConfiguration for fewer than three points or (near-)collinear sources.
AlignmentResult procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target);

/// Points keyed by track id; ids shared between sets are correspondences.
struct PointSet {
  std::vector<TrackId> ids;
  std::vector<Vec3> xyz;
};

PointSet point_set(const SceneMap& map);

/// Register-and-average: each set in input order is Procrustes-aligned to the running global
/// set on its matched points, then every matched point becomes the mean of its copies.
/// The result lives in the frame of the first set.
PointSet average_merge(std::span<const PointSet> sets);

/// Gold standard: registers the raw maps into the first map's frame, unifies shared track ids
/// (initialized at the mean of their copies) and bundle-adjusts everything jointly.
BundleResult full_bundle_merge(std::span<const SceneMap> maps, const BundleOptions& opts = {});

/// Cameras and points of all maps in the first map's frame before the joint bundle.
SceneMap concatenate_maps(std::span<const SceneMap> maps);

}  // namespace mapfuse
