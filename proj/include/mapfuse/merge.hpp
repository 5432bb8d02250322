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

#include "mapfuse/bundle.hpp"
#include "mapfuse/compress.hpp"
#include "mapfuse/geometry.hpp"
#include "mapfuse/stats.hpp"

namespace mapfuse {

/// Links each footprint's anchors to the global point list. to_global[k][i] is the position in
/// global_ids of anchor i of map k, so p_k(q) keeps exactly those points in anchor order.
struct Correspondences {
  std::vector<TrackId> global_ids;
  std::vector<std::vector<int>> to_global;

  /// Matches anchors by track id; global ids appear in order of first occurrence.
  static Correspondences from_track_ids(std::span<const CompressedMap> cmaps);

  int num_maps() const { return static_cast<int>(to_global.size()); }
  int num_global() const { return static_cast<int>(global_ids.size()); }
  /// kappa[i] = number of global points present in exactly i maps, for i = 0..N.
  std::vector<int> kappa() const;
  /// Throws kInvalidArgument when the lists do not cover the footprints one-to-one.
  void validate(std::span<const CompressedMap> cmaps) const;
};

/// T_k maps global coordinates into map k's frame: T_k p_k(q) ~ q0^(k).
struct MergeInit {
  Eigen::VectorXd q;
  std::vector<SimilarityTransform> transforms;
};

struct MergeOptions {
  BundleOptions lm;
  /// Hold T_1 at identity. Otherwise all N transforms are free and the damping absorbs the
  /// global gauge.
  bool fix_first_transform = true;
};

struct MergeSolution {
  std::vector<TrackId> global_ids;
  Eigen::VectorXd q;
  std::vector<SimilarityTransform> transforms;
  double a_bar = 0.0;  // sqrt of the minimized r^T r
  BundleReport report;
};

/// Procrustes initialization: q from map 1, T_1 = I, other transforms chained along a spanning
/// tree of the overlap graph in index order.
MergeInit init_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr);

/// [a1; R1 (T1 p1(q) - q1); ...; aN; RN (TN pN(q) - qN)].
Eigen::VectorXd merge_residual(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms);

/// Jacobian of the non-constant rows of merge_residual (sum of 3|q_k| rows) with respect to
/// (dq, dT_first..dT_N). With include_first_transform = false the T_1 columns are left out.
Eigen::MatrixXd merge_jacobian(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms,
                               bool include_first_transform);

MergeSolution merge_bundle(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                           const MergeOptions& opts = {});

/// Same, starting from a caller-supplied point instead of init_merge.
MergeSolution merge_bundle_from(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                                const MergeInit& start, const MergeOptions& opts = {});

/// Footprint of a merge optimum: the transforms (and any global points not in keep_ids) become
/// auxiliary parameters and are eliminated as in compress_map.
CompressedMap recompress_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const MergeSolution& solution,
                               std::optional<std::vector<TrackId>> keep_ids = std::nullopt);

/// a_tilde = a_bar^2 - sum_k a_k^2.
double merge_a_tilde(std::span<const CompressedMap> cmaps, const MergeSolution& solution);

struct MergeStep {
  int map_index = 0;
  ChangeTestResult test;
};

struct RobustMergeResult {
  MergeSolution solution;  // over the accepted maps only
  std::vector<int> accepted;
  std::vector<int> flagged;
  std::vector<MergeStep> steps;
};

/// Adds maps one at a time in input order onto a recompressed running footprint and keeps a
/// map only if the step's a_tilde passes change_test at the given level.
RobustMergeResult robust_hierarchical_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                                            double sigma, double level, const MergeOptions& opts = {});

}  // namespace mapfuse
