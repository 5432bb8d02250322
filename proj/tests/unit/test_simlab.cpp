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

#include <algorithm>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "mapfuse/baseline.hpp"
#include "mapfuse/error.hpp"
#include "mapfuse/merge.hpp"
#include "mapfuse/simlab.hpp"
#include "test_support.hpp"

namespace mapfuse {
namespace {

using testing::random_similarity;
using testing::random_vec3;

bool same_map(const SceneMap& a, const SceneMap& b) {
  if (a.cameras.size() != b.cameras.size() || a.points.size() != b.points.size() ||
      a.observations.size() != b.observations.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.cameras.size(); ++i) {
    if (a.cameras[i].rotation != b.cameras[i].rotation || a.cameras[i].translation != b.cameras[i].translation) return false;
  }
  for (std::size_t j = 0; j < a.points.size(); ++j) {
    if (a.points[j].xyz != b.points[j].xyz || a.points[j].track_id != b.points[j].track_id) return false;
  }
  for (std::size_t o = 0; o < a.observations.size(); ++o) {
    const auto& x = a.observations[o];
    const auto& y = b.observations[o];
    if (x.camera_index != y.camera_index || x.point_index != y.point_index || x.image_point != y.image_point) return false;
  }
  return true;
}

TEST(BoxScene, DefaultsGiveFullVisibility) {
  const SimScene s = gen_box_scene(BoxSceneSpec{});
  ASSERT_EQ(s.maps.size(), 3u);
  ASSERT_EQ(s.truth.frames.size(), 3u);
  for (const auto& m : s.maps) {
    EXPECT_EQ(m.cameras.size(), 10u);
    EXPECT_EQ(m.points.size(), 100u);
    EXPECT_EQ(2 * m.observations.size(), 2000u);
    EXPECT_NO_THROW(m.validate());
  }
  for (const auto& x : s.truth.xyz) {
    EXPECT_LE(std::abs(x.x()), 5.0);
    EXPECT_LE(std::abs(x.y()), 3.0);
    EXPECT_LE(std::abs(x.z()), 1.0);
  }
}

TEST(BoxScene, MapsAreTruthInTheirOwnFrames) {
  const SimScene s = gen_box_scene(testing::small_box(3));
  for (std::size_t k = 0; k < s.maps.size(); ++k) {
    for (const auto& p : s.maps[k].points) {
      EXPECT_LT((s.truth.frames[k].apply(*s.truth.find(p.track_id)) - p.xyz).norm(), 1e-9);
    }
  }
}

TEST(BoxScene, NoiselessMapsBundleToZero) {
  BoxSceneSpec spec = testing::small_box(4, 30, 6, 2);
  spec.sigma = 0.0;
  for (const auto& m : gen_box_scene(spec).maps) EXPECT_LE(bundle_adjust(m).report.squared_residual, 1e-16);
}

TEST(BoxScene, Deterministic) {
  BoxSceneSpec spec = testing::small_box(5);
  spec.visibility_fraction = 0.8;
  const SimScene a = gen_box_scene(spec);
  const SimScene b = gen_box_scene(spec);
  for (std::size_t k = 0; k < a.maps.size(); ++k) EXPECT_TRUE(same_map(a.maps[k], b.maps[k]));
}

TEST(BoxScene, NoiseSeedRedrawsOnlyNoise) {
  BoxSceneSpec spec = testing::small_box(6);
  spec.visibility_fraction = 0.8;
  const SimScene a = gen_box_scene(spec);
  spec.noise_seed = 99;
  const SimScene b = gen_box_scene(spec);
  EXPECT_EQ(a.truth.xyz, b.truth.xyz);
  bool noise_differs = false;
  for (std::size_t k = 0; k < a.maps.size(); ++k) {
    ASSERT_EQ(a.maps[k].observations.size(), b.maps[k].observations.size());
    for (std::size_t i = 0; i < a.maps[k].cameras.size(); ++i) {
      EXPECT_EQ(a.maps[k].cameras[i].translation, b.maps[k].cameras[i].translation);
    }
    for (std::size_t o = 0; o < a.maps[k].observations.size(); ++o) {
      EXPECT_EQ(a.maps[k].observations[o].point_index, b.maps[k].observations[o].point_index);
      noise_differs |= a.maps[k].observations[o].image_point != b.maps[k].observations[o].image_point;
    }
  }
  EXPECT_TRUE(noise_differs);
}

TEST(BoxScene, PartialVisibilityKeepsTwoViews) {
  BoxSceneSpec spec;
  spec.visibility_fraction = 0.3;
  spec.seed = 7;
  for (const auto& m : gen_box_scene(spec).maps) {
    std::vector<int> views(m.points.size(), 0);
    for (const auto& o : m.observations) ++views[o.point_index];
    EXPECT_GE(*std::min_element(views.begin(), views.end()), 2);
    EXPECT_LT(m.observations.size(), 600u);
  }
}

TEST(BoxScene, SceneChangeMovesPointFromMap) {
  BoxSceneSpec spec = testing::small_box(8);
  spec.sigma = 0.0;
  const std::vector<SceneChange> change{{2, Vec3(1, 0, 0), 1}};
  const SimScene s = gen_box_scene(spec, change);
  for (std::size_t k = 0; k < s.maps.size(); ++k) {
    const Vec3 local = s.maps[k].points[s.maps[k].find_point(2)].xyz;
    const Vec3 expect = s.truth.frames[k].apply(*s.truth.find(2)) + (k >= 1 ? Vec3(1, 0, 0) : Vec3::Zero());
    EXPECT_LT((local - expect).norm(), 1e-9);
  }
  EXPECT_LT(assemble_residuals(s.maps[1]).norm(), 1e-9);
}

TEST(BoxScene, ValidateRejectsBadSpec) {
  BoxSceneSpec spec;
  spec.visibility_fraction = 0.0;
  EXPECT_THROW(spec.validate(), Error);
  spec = {};
  spec.box = Vec3(1, -1, 1);
  EXPECT_THROW(spec.validate(), Error);
  spec = {};
  spec.sigma = -0.1;
  EXPECT_THROW(spec.validate(), Error);
}

std::map<TrackId, int> map_counts(const SimScene& s) {
  std::map<TrackId, int> count;
  for (const auto& m : s.maps)
    for (const auto& p : m.points) ++count[p.track_id];
  return count;
}

TEST(RoomScene, SharedPointsFollowTheCornerCounts) {
  RoomSceneSpec spec;
  const RoomScene s = gen_room_scene(spec);
  ASSERT_EQ(s.maps.size(), 4u);
  EXPECT_EQ(spec.shared_counts(), (std::array<int, 4>{12, 12, 12, 12}));
  for (const auto& m : s.maps) {
    EXPECT_EQ(m.points.size(), 200u);
    EXPECT_NO_THROW(m.validate());
  }
  const auto count = map_counts(s);
  int shared = 0;
  for (const auto& [id, n] : count) {
    EXPECT_LE(n, 2);
    shared += n == 2;
  }
  EXPECT_EQ(shared, 48);
  for (int pair = 0; pair < 4; ++pair) {
    ASSERT_EQ(s.pair_ids[pair].size(), 12u);
    for (TrackId id : s.pair_ids[pair]) {
      EXPECT_GE(s.maps[pair].find_point(id), 0);
      EXPECT_GE(s.maps[(pair + 1) % 4].find_point(id), 0);
    }
  }
}

TEST(RoomScene, Deterministic) {
  RoomSceneSpec spec;
  spec.seed = 3;
  const RoomScene a = gen_room_scene(spec);
  const RoomScene b = gen_room_scene(spec);
  for (int k = 0; k < 4; ++k) EXPECT_TRUE(same_map(a.maps[k], b.maps[k]));
}

struct TableOne {
  RoomScene scene;
  std::vector<SceneMap> maps;
  std::vector<CompressedMap> cmaps;
};

TableOne table_one_room() {
  RoomSceneSpec spec;
  spec.pair_counts = std::array<int, 4>{4, 4, 7, 5};
  spec.seed = 11;
  TableOne t{gen_room_scene(spec), {}, {}};
  BundleOptions bo;
  bo.gradient_norm_tolerance = 1e-9;
  bo.max_iterations = 200;
  for (const auto& m : t.scene.maps) t.maps.push_back(bundle_adjust(m, bo).map);
  const auto anchors = default_anchor_ids(t.maps);
  for (std::size_t k = 0; k < t.maps.size(); ++k) t.cmaps.push_back(compress_map(t.maps[k], anchors[k]));
  return t;
}

TEST(RoomScene, TableOneShapes) {
  const TableOne t = table_one_room();
  const std::array<int, 4> anchors{9, 8, 11, 12};
  for (int k = 0; k < 4; ++k) {
    const Eigen::SparseMatrix<double> j = assemble_jacobian(t.maps[k]);
    EXPECT_EQ(j.cols(), 660);
    EXPECT_EQ(j.rows(), 2 * static_cast<Eigen::Index>(t.maps[k].observations.size()));
    // Rows of the order of 3 000.
    EXPECT_GT(j.rows(), 2000);
    EXPECT_LT(j.rows(), 4000);
    EXPECT_EQ(t.cmaps[k].num_anchors(), anchors[k]);
    EXPECT_EQ(t.cmaps[k].r.rows(), 3 * anchors[k]);
    EXPECT_EQ(t.cmaps[k].r.cols(), 3 * anchors[k]);
  }
  const Correspondences corr = room_correspondences(t.cmaps, t.scene, true);
  EXPECT_EQ(corr.num_global(), 20);
  const MergeSolution sol = merge_bundle(t.cmaps, corr);
  const Eigen::MatrixXd jw = merge_jacobian(t.cmaps, corr, sol.q, sol.transforms, false);
  EXPECT_EQ(jw.rows(), 120);
  EXPECT_EQ(jw.cols(), 3 * 20 + 7 * 3);
  EXPECT_EQ(merge_jacobian(t.cmaps, corr, sol.q, sol.transforms, true).cols(), 88);
  EXPECT_EQ(recompress_merge(t.cmaps, corr, sol).r.rows(), 60);
}

TEST(RoomScene, CorrespondenceVariants) {
  const TableOne t = table_one_room();
  const Correspondences b = room_correspondences(t.cmaps, t.scene, true);
  const Correspondences a = room_correspondences(t.cmaps, t.scene, false);
  EXPECT_EQ(b.kappa(), (std::vector<int>{0, 0, 20, 0, 0}));
  EXPECT_EQ(a.num_global(), 25);
  EXPECT_EQ(a.kappa(), (std::vector<int>{0, 10, 15, 0, 0}));
  EXPECT_NO_THROW(a.validate(t.cmaps));
  EXPECT_NO_THROW(b.validate(t.cmaps));
  EXPECT_EQ(dof_delta(b), 3 * 20 - 21);
  EXPECT_EQ(dof_delta(a), 3 * 15 - 21);
}

TEST(RmseAligned, ExactCases) {
  std::mt19937_64 rng(1);
  std::vector<Vec3> x;
  for (int i = 0; i < 10; ++i) x.push_back(random_vec3(rng, 3.0));
  EXPECT_NEAR(rmse_aligned(x, x), 0.0, 1e-12);
  EXPECT_NEAR(rmse_aligned(sim3_apply(random_similarity(rng), x), x), 0.0, 1e-9);
  const std::vector<Vec3> two{x[0], x[1]};
  EXPECT_THROW(rmse_aligned(two, two), Error);
}

TEST(RmseAligned, DofCorrectedNoiseExpectation) {
  std::mt19937_64 rng(2);
  const int n = 20;
  const double sp = 0.1;
  double mean = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::vector<Vec3> x, y;
    for (int i = 0; i < n; ++i) {
      x.push_back(random_vec3(rng, 3.0));
      y.push_back(x.back() + random_vec3(rng, sp));
    }
    mean += rmse_aligned(y, x) / 100;
  }
  EXPECT_NEAR(mean, sp * std::sqrt(3.0) * std::sqrt(1.0 - 7.0 / (3.0 * n)), 0.1 * sp * std::sqrt(3.0));
}

TEST(RmseToTruth, SkipsUnknownIds) {
  GroundTruth gt;
  gt.ids = {0, 1, 2, 3};
  gt.xyz = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  const std::vector<TrackId> ids{0, 1, 2, 3, 42};
  std::vector<Vec3> xyz = gt.xyz;
  xyz.push_back(Vec3(100, 100, 100));
  EXPECT_NEAR(rmse_to_truth(ids, xyz, gt), 0.0, 1e-12);
}

TEST(MergedPointCloud, CoversEveryMapPoint) {
  BoxSceneSpec spec = testing::small_box(12, 25, 6, 2);
  spec.sigma = 0.0;
  const auto opt = testing::optimized_box(spec);
  CompressOptions co;
  co.with_recovery = true;
  std::vector<CompressedMap> cmaps;
  for (const auto& m : opt.maps) cmaps.push_back(compress_map(m, testing::first_ids(6), co));
  const Correspondences corr = Correspondences::from_track_ids(cmaps);
  const PointSet cloud = merged_point_cloud(cmaps, corr, merge_bundle(cmaps, corr));
  EXPECT_EQ(cloud.ids.size(), 6u + 2u * 19u);
  EXPECT_LT(rmse_to_truth(cloud.ids, cloud.xyz, opt.scene.truth), 1e-6);
}

TEST(Seeds, RunSeedIsStableAndDistinct) {
  std::set<std::uint64_t> seen;
  for (int r = 0; r < 1000; ++r) seen.insert(run_seed(1, r));
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_EQ(run_seed(7, 3), run_seed(7, 3));
  EXPECT_NE(run_seed(7, 3), run_seed(8, 3));
  EXPECT_EQ(config_hash("abc"), config_hash("abc"));
  EXPECT_NE(config_hash("abc"), config_hash("abd"));
}

TEST(RunParallel, IndependentOfWorkerCount) {
  const auto fn = [](int run, std::uint64_t seed) {
    ExperimentRecord r;
    r.a_tilde = static_cast<double>(seed % 1000) + run;
    if (run == 5) throw Error(ErrorKind::kNumericalFailure, "boom");
    return r;
  };
  const auto one = run_parallel(12, 1, 9, fn);
  const auto four = run_parallel(12, 4, 9, fn);
  ASSERT_EQ(one.size(), 12u);
  for (int r = 0; r < 12; ++r) {
    EXPECT_EQ(one[r].run, r);
    EXPECT_EQ(one[r].seed, run_seed(9, r));
    EXPECT_EQ(one[r].a_tilde, four[r].a_tilde);
    EXPECT_EQ(one[r].ok, r != 5);
  }
  EXPECT_FALSE(one[5].error.empty());
}

TEST(LogGrid, EndpointsAndSpacing) {
  const auto g = log_grid(1e1, 1e-8, 10);
  ASSERT_EQ(g.size(), 10u);
  EXPECT_DOUBLE_EQ(g.front(), 10.0);
  EXPECT_NEAR(g.back(), 1e-8, 1e-22);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i - 1] / g[i], 10.0, 1e-9);
}

TEST(Histogram, SmallRunIsDeterministicAndScalesWithSigma) {
  BoxSceneSpec spec;
  spec.n_points = 40;
  spec.n_cameras = 8;
  HistogramOptions opts;
  opts.runs = 12;
  const HistogramResult a = run_histogram_experiment(spec, opts);
  opts.jobs = 3;
  const HistogramResult b = run_histogram_experiment(spec, opts);
  ASSERT_EQ(a.samples.size(), 12u);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.dof, 46);
  EXPECT_NEAR(a.params.alpha, 200.0, 1e-9);
  EXPECT_DOUBLE_EQ(a.params.nu, 23.0);
  spec.sigma /= 10.0;
  opts.jobs = 1;
  const HistogramResult c = run_histogram_experiment(spec, opts);
  EXPECT_NEAR(c.empirical_mean / a.empirical_mean, 0.01, 0.0005);
}

TEST(EarlyStop, SmallRunShapes) {
  BoxSceneSpec spec;
  spec.n_points = 40;
  spec.n_cameras = 8;
  spec.sigma = 0.005;
  spec.visibility_fraction = 0.8;
  EarlyStopOptions opts;
  opts.thresholds = {1.0, 1e-2, 1e-6};
  opts.runs = 2;
  const EarlyStopResult r = run_early_stop_experiment(spec, opts);
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_EQ(r.failures, 0);
  // The joint bundle ignores the stopping point of the sub-maps.
  EXPECT_NEAR(r.mean_full.front(), r.mean_full.back(), 0.05 * r.mean_full.back());
  EXPECT_LE(r.mean_ours.back(), r.mean_individual.back());
  opts.thresholds = {1.0, 2.0};
  EXPECT_THROW(run_early_stop_experiment(spec, opts), Error);
}

TEST(LoopClosure, SmallRunRecordsAllMethods) {
  LoopOptions opts;
  opts.runs = 2;
  const LoopResult r = run_loop_closure_experiment(RoomSceneSpec{}, opts);
  ASSERT_EQ(r.records.size(), 2u);
  for (const auto& rec : r.records) {
    EXPECT_TRUE(rec.ok) << rec.error;
    EXPECT_GT(rec.rmse_ours, 0.0);
    EXPECT_GT(rec.rmse_ours_a, 0.0);
    EXPECT_GT(rec.rmse_procrustes, 0.0);
    EXPECT_GT(rec.rmse_full, 0.0);
    EXPECT_EQ(rec.success_ours, rec.rmse_ours < 0.1);
  }
}

TEST(ChangeDetection, SmallRun) {
  BoxSceneSpec spec;
  spec.n_points = 40;
  spec.n_cameras = 8;
  ChangeOptions opts;
  opts.runs = 6;
  opts.displacement_sigmas = 200.0;
  const ChangeResult r = run_change_experiment(spec, opts);
  EXPECT_EQ(r.records.size(), 6u);
  EXPECT_DOUBLE_EQ(r.detection_rate, 1.0);
}

TEST(Bands, ChecksUsePreRegisteredValues) {
  HistogramResult h;
  h.params = {200.0, 23.0};
  h.empirical_mean = 0.115 * 1.04;
  h.ks = 0.04;
  h.mean_a2 = 4.0;
  h.expected_a2 = 4.1;
  h.false_alarm_rate = 0.012;
  for (const auto& c : check_bands(h)) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
  h.empirical_mean = 0.115 * 1.06;
  const auto checks = check_bands(h);
  EXPECT_TRUE(std::any_of(checks.begin(), checks.end(), [](const BandCheck& c) { return !c.pass; }));

  LoopResult l;
  l.rate_full = 0.99;
  l.rate_ours_b = 0.9;
  l.rate_ours_a = 0.4;
  l.rate_procrustes = 0.1;
  l.rate_b_beats_a = 0.9;
  for (const auto& c : check_bands(l)) EXPECT_TRUE(c.pass) << c.name << ": " << c.detail;
  l.rate_ours_b = l.rate_full;
  const auto tie = check_bands(l);
  EXPECT_TRUE(std::any_of(tie.begin(), tie.end(), [](const BandCheck& c) { return !c.pass; }));
}

}  // namespace
}  // namespace mapfuse
