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

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mapfuse/baseline.hpp"
#include "mapfuse/compress.hpp"
#include "mapfuse/geometry.hpp"
#include "mapfuse/merge.hpp"
#include "mapfuse/stats.hpp"

namespace mapfuse {

/// 64-bit seed of run `run` under `master`. Independent of the worker that executes the run.
std::uint64_t run_seed(std::uint64_t master, int run);

struct BoxSceneSpec {
  int n_points = 100;
  Vec3 box{10.0, 6.0, 2.0};
  int n_cameras = 10;
  int n_maps = 3;
  double sigma = 0.05;
  double visibility_fraction = 1.0;
  std::uint64_t seed = 1;
  /// Image noise stream; defaults to `seed`. Fixing `seed` and varying this re-draws only the noise.
  std::optional<std::uint64_t> noise_seed;

  void validate() const;
};

struct RoomSceneSpec {
  Vec3 room{5.0, 6.0, 2.0};
  int walls = 4;
  int points_per_wall = 200;
  double shared_fraction = 0.06;
  /// Shared points per corner (1-2, 2-3, 3-4, 4-1). When unset, round(shared_fraction * points_per_wall).
  std::optional<std::array<int, 4>> pair_counts;
  double sigma = 0.005;
  bool include_1_4_matches = true;
  int cameras_per_wall = 10;
  /// Cameras stand this far (range, m) in front of their wall.
  std::array<double, 2> camera_distance{1.5, 2.0};
  /// tan of the half field of view, horizontal and vertical.
  std::array<double, 2> half_fov_tan{1.6, 1.2};
  double corner_strip = 0.15;
  std::uint64_t seed = 1;

  void validate() const;
  std::array<int, 4> shared_counts() const;
};

/// One scene point moved between sessions: in maps with index >= from_map it sits at offset from its
/// clean position, measured in that map's own frame.
struct SceneChange {
  TrackId track_id = 0;
  Vec3 offset = Vec3::Zero();
  int from_map = 1;
};

struct GroundTruth {
  std::vector<TrackId> ids;
  std::vector<Vec3> xyz;
  /// World -> map k frame.
  std::vector<SimilarityTransform> frames;

  std::optional<Vec3> find(TrackId id) const;
};

struct SimScene {
  GroundTruth truth;
  /// Each map in its own frame, cameras and points at their true values (the bundle start).
  std::vector<SceneMap> maps;
};

SimScene gen_box_scene(const BoxSceneSpec& spec, std::span<const SceneChange> changes = {});

struct RoomScene : SimScene {
  /// Track ids shared by each corner pair (1-2, 2-3, 3-4, 4-1).
  std::array<std::vector<TrackId>, 4> pair_ids;
  bool include_1_4_matches = true;
};

RoomScene gen_room_scene(const RoomSceneSpec& spec);

/// Correspondences by track id, except that with include_1_4 = false the 4-1 corner points keep
/// separate global entries in maps 1 and 4.
Correspondences room_correspondences(std::span<const CompressedMap> cmaps, const RoomScene& scene,
                                     bool include_1_4);

/// RMSE between matched clouds after the best similarity alignment of map_points onto gt_points.
/// Throws kDegenerateConfiguration for fewer than three points.
double rmse_aligned(std::span<const Vec3> map_points, std::span<const Vec3> gt_points);

/// RMSE over the points of `ids` that have ground truth.
double rmse_to_truth(std::span<const TrackId> ids, std::span<const Vec3> xyz, const GroundTruth& truth);

/// Every point of a merge in the global frame: one entry per global point of q, then the non-anchor
/// points of each map through recover_aux and T_k^-1. Ids repeat when corr keeps copies apart.
/// Footprints need recovery data.
PointSet merged_point_cloud(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                            const MergeSolution& solution);

struct ExperimentRecord {
  int run = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  bool ok = true;
  std::string error;
  double threshold = 0.0;
  double a_tilde = 0.0;
  std::vector<double> map_a2;
  double expected_a2 = 0.0;
  double rmse_ours = 0.0;
  double rmse_ours_a = 0.0;  // loop closure without 1-4 matches
  double rmse_procrustes = 0.0;
  double rmse_full = 0.0;
  double rmse_individual = 0.0;
  bool success_ours = false;
  bool success_ours_a = false;
  bool success_procrustes = false;
  bool success_full = false;
  bool rejected = false;
  bool rejected_clean = false;
};

/// Executes fn(run, seed) for run = 0..runs-1 on `jobs` threads. Results are in run order and do
/// not depend on `jobs`.
std::vector<ExperimentRecord> run_parallel(int runs, int jobs, std::uint64_t master_seed,
                                           const std::function<ExperimentRecord(int, std::uint64_t)>& fn);

struct HistogramResult {
  std::vector<ExperimentRecord> records;
  std::vector<double> samples;  // a_tilde of the successful runs
  GammaParams params;
  long dof = 0;
  double empirical_mean = 0.0;
  double ks = 0.0;
  int failures = 0;
  /// Map bundles: mean a^2 and sigma^2 (eta_res - d_dof).
  double mean_a2 = 0.0;
  double expected_a2 = 0.0;
  /// Share of runs with a_tilde above the `level` quantile.
  double false_alarm_rate = 0.0;
};

struct HistogramOptions {
  int runs = 2000;
  int anchors = 10;
  int jobs = 1;
  double level = 0.99;
  std::uint64_t master_seed = 1;
};

/// Same cameras and points every run, fresh image noise per run.
HistogramResult run_histogram_experiment(const BoxSceneSpec& spec, const HistogramOptions& opts);

struct EarlyStopOptions {
  std::vector<double> thresholds;  // positive, descending
  int runs = 200;
  int jobs = 1;
  std::uint64_t master_seed = 1;
  /// World-unit perturbation of the bundle start: points, camera centres, camera rotation (rad).
  double point_jitter = 1.0;
  double centre_jitter = 1.5;
  double rotation_jitter = 0.08;
};

/// n log-spaced values from hi down to lo.
std::vector<double> log_grid(double hi, double lo, int n);

struct EarlyStopResult {
  std::vector<double> thresholds;
  std::vector<ExperimentRecord> records;  // run-major, one per threshold
  std::vector<double> mean_ours, mean_procrustes, mean_full, mean_individual;
  int failures = 0;
};

/// Runs the scene as given; the usual setting is sigma 0.005 with visibility_fraction 0.8.
EarlyStopResult run_early_stop_experiment(const BoxSceneSpec& spec, const EarlyStopOptions& opts);

struct LoopOptions {
  int runs = 300;
  int jobs = 1;
  std::uint64_t master_seed = 1;
  double success_rmse = 0.1;
};

struct LoopResult {
  std::vector<ExperimentRecord> records;
  double rate_full = 0.0, rate_ours_b = 0.0, rate_ours_a = 0.0, rate_procrustes = 0.0;
  double rate_b_beats_a = 0.0;
  double rate_b_halves_a = 0.0;
  double mean_rmse_b_success = 0.0;
  int failures = 0;
};

LoopResult run_loop_closure_experiment(const RoomSceneSpec& spec, const LoopOptions& opts);

struct ChangeOptions {
  int runs = 200;
  int jobs = 1;
  std::uint64_t master_seed = 1;
  double displacement_sigmas = 50.0;
  double level = 0.99;
  int anchors = 10;
};

struct ChangeResult {
  std::vector<ExperimentRecord> records;
  double detection_rate = 0.0;
  double false_alarm_rate = 0.0;
  int failures = 0;
};

/// Per run: a clean merge and one where anchor 0 of the last map moved by displacement_sigmas * sigma
/// in that map's frame. Both are tested at `level`.
ChangeResult run_change_experiment(const BoxSceneSpec& spec, const ChangeOptions& opts);

/// Pass bands of the Monte-Carlo checks, fixed before any run.
struct AcceptanceBands {
  double gamma_mean_rel = 0.05;
  double ks_max = 0.05;
  double a2_rel = 0.05;
  double false_alarm_target = 0.01;
  double false_alarm_tol = 0.007;
  double detection_min = 0.95;
  double early_full_rel = 0.10;
  double loop_ours_min = 0.70;
  double loop_full_min = 0.97;
  double loop_beats_min = 0.75;
};

struct BandCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<BandCheck> check_bands(const HistogramResult& r, const AcceptanceBands& b = {});
std::vector<BandCheck> check_bands(const EarlyStopResult& r, const AcceptanceBands& b = {});
std::vector<BandCheck> check_bands(const LoopResult& r, const AcceptanceBands& b = {});
std::vector<BandCheck> check_bands(const ChangeResult& r, const AcceptanceBands& b = {});

/// Stable FNV-1a hash (hex) of a textual configuration.
std::string config_hash(const std::string& text);

}  // namespace mapfuse
