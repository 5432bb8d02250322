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

#include "mapfuse/simlab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Geometry>

#include "mapfuse/baseline.hpp"
#include "mapfuse/bundle.hpp"
#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kNoiseSalt = 0x6E6F697365ULL;
constexpr std::uint64_t kStartSalt = 0x7374617274ULL;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double sd = 1.0) { return sd * std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  int index(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine_); }
  Vec3 normal3(double sd) {
    const double x = normal(sd);
    const double y = normal(sd);
    const double z = normal(sd);
    return {x, y, z};
  }
  Vec3 unit3() {
    Vec3 v = normal3(1.0);
    while (v.norm() < 1e-12) v = normal3(1.0);
    return v.normalized();
  }
  Mat3 rotation() {
    const double w = normal();
    const double x = normal();
    const double y = normal();
    const double z = normal();
    return Eigen::Quaterniond(w, x, y, z).normalized().toRotationMatrix();
  }
  // Random world -> map frame.
  SimilarityTransform frame() {
    SimilarityTransform s;
    s.scale = std::exp(uniform(std::log(0.5), std::log(2.0)));
    s.rotation = rotation();
    s.translation = normal3(5.0);
    return s;
  }

 private:
  std::mt19937_64 engine_;
};

CameraPose look_at(const Vec3& centre, const Vec3& target) {
  const Vec3 z = (target - centre).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitX());
  x.normalize();
  const Vec3 y = z.cross(x);
  CameraPose pose;
  pose.rotation.row(0) = x.transpose();
  pose.rotation.row(1) = y.transpose();
  pose.rotation.row(2) = z.transpose();
  pose.translation = -pose.rotation * centre;
  return pose;
}

// At least two cameras per point: missing views are filled with the cameras that see it most
// centrally.
void repair_visibility(std::vector<std::vector<bool>>& visible, const std::vector<CameraPose>& cameras,
                       const std::vector<Vec3>& points) {
  for (std::size_t j = 0; j < points.size(); ++j) {
    int seen = 0;
    for (std::size_t i = 0; i < cameras.size(); ++i) seen += visible[i][j] ? 1 : 0;
    if (seen >= 2) continue;
    std::vector<std::pair<double, int>> order;
    for (std::size_t i = 0; i < cameras.size(); ++i) {
      if (visible[i][j]) continue;
      const Vec3 xc = cameras[i].to_camera(points[j]);
      if (xc.z() <= 1e-3) continue;
      order.emplace_back(xc.head<2>().norm() / xc.z(), static_cast<int>(i));
    }
    std::sort(order.begin(), order.end());
    for (std::size_t k = 0; k < order.size() && seen < 2; ++k, ++seen) visible[order[k].second][j] = true;
  }
}

// Map k of a scene: true cameras and points observed with noise, expressed in `frame`.
SceneMap make_map(const std::vector<CameraPose>& cameras, const std::vector<TrackId>& ids,
                  const std::vector<Vec3>& points, const std::vector<std::vector<bool>>& visible, double sigma,
                  const SimilarityTransform& frame, Rng& noise) {
  SceneMap map;
  for (const auto& c : cameras) map.cameras.push_back(transform_pose(c, frame));
  std::vector<int> local(points.size(), -1);
  for (std::size_t j = 0; j < points.size(); ++j) {
    bool any = false;
    for (std::size_t i = 0; i < cameras.size(); ++i) any = any || visible[i][j];
    if (!any) continue;
    local[j] = static_cast<int>(map.points.size());
    map.points.push_back({frame.apply(points[j]), ids[j]});
  }
  for (std::size_t i = 0; i < cameras.size(); ++i) {
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (!visible[i][j]) continue;
      Vec2 u = project(cameras[i], points[j]);
      u.x() += noise.normal(sigma);
      u.y() += noise.normal(sigma);
      map.observations.push_back({static_cast<int>(i), local[j], u});
    }
  }
  return map;
}

std::string box_text(const BoxSceneSpec& s) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "box n=%d box=%.17g,%.17g,%.17g m=%d N=%d sigma=%.17g vis=%.17g seed=%llu", s.n_points,
                s.box.x(), s.box.y(), s.box.z(), s.n_cameras, s.n_maps, s.sigma, s.visibility_fraction,
                static_cast<unsigned long long>(s.seed));
  return buf;
}

std::string room_text(const RoomSceneSpec& s) {
  const auto c = s.shared_counts();
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "room %.17g,%.17g,%.17g walls=%d ppw=%d shared=%d,%d,%d,%d sigma=%.17g cams=%d dist=%.17g,%.17g "
                "fov=%.17g,%.17g strip=%.17g",
                s.room.x(), s.room.y(), s.room.z(), s.walls, s.points_per_wall, c[0], c[1], c[2], c[3], s.sigma,
                s.cameras_per_wall, s.camera_distance[0], s.camera_distance[1], s.half_fov_tan[0], s.half_fov_tan[1],
                s.corner_strip);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double cloud_rmse(const PointSet& set, const GroundTruth& truth) { return rmse_to_truth(set.ids, set.xyz, truth); }

double map_rmse(const SceneMap& map, const GroundTruth& truth) { return cloud_rmse(point_set(map), truth); }

std::vector<CompressedMap> compress_all(std::span<const SceneMap> maps, std::span<const std::vector<TrackId>> anchors,
                                        const CompressOptions& opts) {
  std::vector<CompressedMap> out;
  for (std::size_t k = 0; k < maps.size(); ++k) out.push_back(compress_map(maps[k], anchors[k], opts));
  return out;
}

void check_failures(int failures, int runs, const char* what) {
  if (runs > 0 && failures * 100 > runs) {
    throw Error(ErrorKind::kNumericalFailure, std::string(what) + ": " + std::to_string(failures) + " of " +
                                                  std::to_string(runs) + " runs failed");
  }
}

}  // namespace

std::uint64_t run_seed(std::uint64_t master, int run) {
  return splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(run) + 0x632BE59BD9B4E019ULL));
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void BoxSceneSpec::validate() const {
  if (n_points < 3 || n_cameras < 2 || n_maps < 1) {
    throw Error(ErrorKind::kInvalidArgument, "box scene needs >= 3 points, >= 2 cameras and >= 1 map");
  }
  if (!(box.minCoeff() > 0.0)) throw Error(ErrorKind::kInvalidArgument, "box extents must be positive");
  if (!(visibility_fraction > 0.0 && visibility_fraction <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "visibility_fraction must be in (0, 1]");
  }
  if (!(sigma >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "sigma must be non-negative");
}

void RoomSceneSpec::validate() const {
  if (walls != 4) throw Error(ErrorKind::kInvalidArgument, "the room has four walls");
  if (!(room.minCoeff() > 0.0)) throw Error(ErrorKind::kInvalidArgument, "room extents must be positive");
  if (cameras_per_wall < 2) throw Error(ErrorKind::kInvalidArgument, "each wall needs two or more cameras");
  if (!(sigma >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "sigma must be non-negative");
  if (!(camera_distance[0] > 0.0 && camera_distance[1] >= camera_distance[0])) {
    throw Error(ErrorKind::kInvalidArgument, "camera_distance must be a positive range");
  }
  if (!(half_fov_tan[0] > 0.0 && half_fov_tan[1] > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "half_fov_tan must be positive");
  }
  if (!(corner_strip > 0.0)) throw Error(ErrorKind::kInvalidArgument, "corner_strip must be positive");
  if (!(shared_fraction >= 0.0 && shared_fraction < 0.5)) {
    throw Error(ErrorKind::kInvalidArgument, "shared_fraction must be in [0, 0.5)");
  }
  const auto c = shared_counts();
  for (int k = 0; k < 4; ++k) {
    if (c[k] < 0) throw Error(ErrorKind::kInvalidArgument, "negative shared count");
    if (c[k] + c[(k + 3) % 4] + 3 > points_per_wall) {
      throw Error(ErrorKind::kInvalidArgument, "shared points leave too few points on a wall");
    }
  }
}

std::array<int, 4> RoomSceneSpec::shared_counts() const {
  if (pair_counts) return *pair_counts;
  const int n = static_cast<int>(std::lround(shared_fraction * points_per_wall));
  return {n, n, n, n};
}

std::optional<Vec3> GroundTruth::find(TrackId id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return xyz[i];
  }
  return std::nullopt;
}

SimScene gen_box_scene(const BoxSceneSpec& spec, std::span<const SceneChange> changes) {
  spec.validate();
  Rng geo(spec.seed);
  Rng noise(spec.noise_seed.value_or(spec.seed) ^ kNoiseSalt);
  SimScene scene;
  const Vec3 half = 0.5 * spec.box;
  for (int j = 0; j < spec.n_points; ++j) {
    scene.truth.ids.push_back(j);
    const double x = geo.uniform(-half.x(), half.x());
    const double y = geo.uniform(-half.y(), half.y());
    const double z = geo.uniform(-half.z(), half.z());
    scene.truth.xyz.push_back({x, y, z});
  }
  const double radius = 1.5 * spec.box.norm();
  for (int k = 0; k < spec.n_maps; ++k) {
    const double phase = geo.uniform(0.0, 2.0 * std::numbers::pi);
    std::vector<CameraPose> cameras;
    for (int i = 0; i < spec.n_cameras; ++i) {
      const double az = phase + 2.0 * std::numbers::pi * (i + geo.uniform(-0.3, 0.3)) / spec.n_cameras;
      const double el = geo.uniform(0.15, 0.45);
      const Vec3 centre(radius * std::cos(el) * std::cos(az), radius * std::cos(el) * std::sin(az),
                        radius * std::sin(el));
      cameras.push_back(look_at(centre, geo.normal3(0.3)));
    }
    std::vector<Vec3> points = scene.truth.xyz;
    std::vector<std::vector<bool>> visible(spec.n_cameras, std::vector<bool>(spec.n_points, true));
    if (spec.visibility_fraction < 1.0) {
      for (auto& row : visible) {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = geo.bernoulli(spec.visibility_fraction);
      }
      repair_visibility(visible, cameras, points);
    }
    const SimilarityTransform frame = geo.frame();
    for (const auto& c : changes) {
      if (k >= c.from_map && c.track_id >= 0 && c.track_id < spec.n_points) {
        points[c.track_id] += frame.rotation.transpose() * c.offset / frame.scale;
      }
    }
    scene.truth.frames.push_back(frame);
    scene.maps.push_back(make_map(cameras, scene.truth.ids, points, visible, spec.sigma, frame, noise));
  }
  return scene;
}

RoomScene gen_room_scene(const RoomSceneSpec& spec) {
  spec.validate();
  Rng geo(spec.seed);
  Rng noise(spec.seed ^ kNoiseSalt);
  RoomScene scene;
  scene.include_1_4_matches = spec.include_1_4_matches;
  const double lx = spec.room.x();
  const double ly = spec.room.y();
  const double hz = 0.5 * spec.room.z();
  const std::array<Vec3, 4> corner{Vec3(-lx / 2, -ly / 2, 0), Vec3(lx / 2, -ly / 2, 0), Vec3(lx / 2, ly / 2, 0),
                                   Vec3(-lx / 2, ly / 2, 0)};
  std::array<Vec3, 4> dir, inward;
  std::array<double, 4> length;
  for (int k = 0; k < 4; ++k) {
    const Vec3 d = corner[(k + 1) % 4] - corner[k];
    length[k] = d.norm();
    dir[k] = d / length[k];
    inward[k] = Vec3(-dir[k].y(), dir[k].x(), 0.0);
  }
  auto wall_point = [&](int k, double u) { return Vec3(corner[k] + u * dir[k] + Vec3(0, 0, geo.uniform(-hz, hz))); };

  TrackId next_id = 0;
  std::array<std::vector<int>, 4> members;  // indices into truth per wall
  auto add = [&](const Vec3& x) {
    scene.truth.ids.push_back(next_id++);
    scene.truth.xyz.push_back(x);
    return static_cast<int>(scene.truth.ids.size()) - 1;
  };
  const auto shared = spec.shared_counts();
  for (int p = 0; p < 4; ++p) {
    const int a = p;
    const int b = (p + 1) % 4;
    for (int i = 0; i < shared[p]; ++i) {
      const bool on_a = geo.bernoulli(0.5);
      const Vec3 x = on_a ? wall_point(a, length[a] - geo.uniform(0.0, spec.corner_strip))
                          : wall_point(b, geo.uniform(0.0, spec.corner_strip));
      const int idx = add(x);
      members[a].push_back(idx);
      members[b].push_back(idx);
      scene.pair_ids[p].push_back(scene.truth.ids[idx]);
    }
  }
  for (int k = 0; k < 4; ++k) {
    const int own = spec.points_per_wall - shared[k] - shared[(k + 3) % 4];
    for (int i = 0; i < own; ++i) members[k].push_back(add(wall_point(k, geo.uniform(0.0, length[k]))));
  }

  const double tan_h = spec.half_fov_tan[0];
  const double tan_v = spec.half_fov_tan[1];
  const int m = spec.cameras_per_wall;
  for (int k = 0; k < 4; ++k) {
    std::vector<CameraPose> cameras;
    for (int i = 0; i < m; ++i) {
      const double u = length[k] * (i + 0.5) / m + geo.uniform(-0.1, 0.1);
      const Vec3 centre = corner[k] + u * dir[k] + geo.uniform(spec.camera_distance[0], spec.camera_distance[1]) * inward[k] +
                          Vec3(0, 0, geo.uniform(-0.2, 0.4));
      const Vec3 target = corner[k] + (u + geo.uniform(-0.3, 0.3)) * dir[k] + Vec3(0, 0, geo.uniform(-0.2, 0.2));
      cameras.push_back(look_at(centre, target));
    }
    std::vector<TrackId> ids;
    std::vector<Vec3> points;
    for (int idx : members[k]) {
      ids.push_back(scene.truth.ids[idx]);
      points.push_back(scene.truth.xyz[idx]);
    }
    std::vector<std::vector<bool>> visible(m, std::vector<bool>(points.size(), false));
    for (int i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < points.size(); ++j) {
        const Vec3 xc = cameras[i].to_camera(points[j]);
        visible[i][j] = xc.z() > 0.1 && std::abs(xc.x() / xc.z()) < tan_h && std::abs(xc.y() / xc.z()) < tan_v;
      }
    }
    repair_visibility(visible, cameras, points);
    const SimilarityTransform frame = geo.frame();
    scene.truth.frames.push_back(frame);
    scene.maps.push_back(make_map(cameras, ids, points, visible, spec.sigma, frame, noise));
  }
  return scene;
}

Correspondences room_correspondences(std::span<const CompressedMap> cmaps, const RoomScene& scene, bool include_1_4) {
  if (include_1_4) return Correspondences::from_track_ids(cmaps);
  const std::unordered_set<TrackId> loop(scene.pair_ids[3].begin(), scene.pair_ids[3].end());
  const int last = static_cast<int>(cmaps.size()) - 1;
  Correspondences corr;
  std::unordered_map<TrackId, int> index, alias;
  for (int k = 0; k <= last; ++k) {
    std::vector<int> list;
    for (TrackId id : cmaps[k].anchor_ids) {
      auto& table = (k == last && loop.contains(id)) ? alias : index;
      auto [it, inserted] = table.try_emplace(id, static_cast<int>(corr.global_ids.size()));
      if (inserted) corr.global_ids.push_back(id);
      list.push_back(it->second);
    }
    corr.to_global.push_back(std::move(list));
  }
  return corr;
}

double rmse_aligned(std::span<const Vec3> map_points, std::span<const Vec3> gt_points) {
  return procrustes_align(map_points, gt_points).rmse;
}

double rmse_to_truth(std::span<const TrackId> ids, std::span<const Vec3> xyz, const GroundTruth& truth) {
  std::unordered_map<TrackId, int> index;
  for (std::size_t i = 0; i < truth.ids.size(); ++i) index[truth.ids[i]] = static_cast<int>(i);
  std::vector<Vec3> a, b;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = index.find(ids[i]);
    if (it == index.end()) continue;
    a.push_back(xyz[i]);
    b.push_back(truth.xyz[it->second]);
  }
  return rmse_aligned(a, b);
}

PointSet merged_point_cloud(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                            const MergeSolution& solution) {
  PointSet out;
  for (int g = 0; g < corr.num_global(); ++g) {
    out.ids.push_back(corr.global_ids[g]);
    out.xyz.push_back(solution.q.segment<3>(3 * g));
  }
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    const auto& c = cmaps[k];
    const SimilarityTransform& t = solution.transforms[k];
    Eigen::VectorXd local(3 * c.num_anchors());
    for (int i = 0; i < c.num_anchors(); ++i) {
      local.segment<3>(3 * i) = t.apply(solution.q.segment<3>(3 * corr.to_global[k][i]));
    }
    const std::unordered_set<TrackId> anchors(c.anchor_ids.begin(), c.anchor_ids.end());
    const SimilarityTransform back = invert(t);
    for (const auto& p : recover_aux(c, local).points) {
      if (anchors.contains(p.track_id)) continue;
      out.ids.push_back(p.track_id);
      out.xyz.push_back(back.apply(p.xyz));
    }
  }
  return out;
}

std::vector<ExperimentRecord> run_parallel(int runs, int jobs, std::uint64_t master_seed,
                                           const std::function<ExperimentRecord(int, std::uint64_t)>& fn) {
  std::vector<ExperimentRecord> records(std::max(runs, 0));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int run = next++; run < runs; run = next++) {
      const std::uint64_t seed = run_seed(master_seed, run);
      try {
        records[run] = fn(run, seed);
      } catch (const std::exception& e) {
        records[run] = ExperimentRecord{};
        records[run].ok = false;
        records[run].error = e.what();
      }
      records[run].run = run;
      records[run].seed = seed;
    }
  };
  const int n = std::clamp(jobs, 1, std::max(runs, 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return records;
}

HistogramResult run_histogram_experiment(const BoxSceneSpec& spec, const HistogramOptions& opts) {
  spec.validate();
  if (opts.anchors < 3 || opts.anchors > spec.n_points) {
    throw Error(ErrorKind::kInvalidArgument, "anchor count must be in [3, n_points]");
  }
  if (!(spec.sigma > 0.0)) throw Error(ErrorKind::kInvalidArgument, "the histogram experiment needs sigma > 0");
  const std::string hash = config_hash(box_text(spec) + " anchors=" + std::to_string(opts.anchors));
  std::vector<TrackId> anchor_ids;
  for (int j = 0; j < opts.anchors; ++j) anchor_ids.push_back(j);
  const std::vector<std::vector<TrackId>> anchors(spec.n_maps, anchor_ids);

  std::vector<long> dofs(std::max(opts.runs, 0), 0);
  HistogramResult out;
  out.records = run_parallel(opts.runs, opts.jobs, opts.master_seed, [&](int run, std::uint64_t seed) {
    BoxSceneSpec s = spec;
    s.noise_seed = seed;
    const SimScene scene = gen_box_scene(s);
    ExperimentRecord rec;
    rec.config_hash = hash;
    std::vector<SceneMap> maps;
    for (const auto& m : scene.maps) {
      BundleResult b = bundle_adjust(m);
      rec.map_a2.push_back(b.report.squared_residual);
      maps.push_back(std::move(b.map));
    }
    const auto cmaps = compress_all(maps, anchors, {});
    double expected = 0.0;
    for (const auto& c : cmaps) expected += spec.sigma * spec.sigma * static_cast<double>(c.eta_res - c.d_dof);
    rec.expected_a2 = expected / static_cast<double>(cmaps.size());
    const Correspondences corr = Correspondences::from_track_ids(cmaps);
    const MergeSolution sol = merge_bundle(cmaps, corr);
    rec.a_tilde = merge_a_tilde(cmaps, sol);
    dofs[run] = dof_delta(corr);
    rec.rejected = change_test(rec.a_tilde, gamma_params(spec.sigma, dofs[run]), opts.level).rejected;
    return rec;
  });

  std::vector<double> a2;
  double expected = 0.0;
  int rejected = 0;
  for (std::size_t r = 0; r < out.records.size(); ++r) {
    const auto& rec = out.records[r];
    if (!rec.ok) {
      ++out.failures;
      continue;
    }
    out.dof = dofs[r];
    out.samples.push_back(rec.a_tilde);
    a2.insert(a2.end(), rec.map_a2.begin(), rec.map_a2.end());
    expected += rec.expected_a2;
    rejected += rec.rejected ? 1 : 0;
  }
  check_failures(out.failures, opts.runs, "histogram experiment");
  if (out.samples.empty()) return out;
  out.params = gamma_params(spec.sigma, out.dof);
  out.empirical_mean = mean_of(out.samples);
  out.ks = ks_distance(out.samples, out.params);
  out.mean_a2 = mean_of(a2);
  out.expected_a2 = expected / static_cast<double>(out.samples.size());
  out.false_alarm_rate = static_cast<double>(rejected) / static_cast<double>(out.samples.size());
  return out;
}

std::vector<double> log_grid(double hi, double lo, int n) {
  if (!(hi > 0.0 && lo > 0.0) || n < 1) throw Error(ErrorKind::kInvalidArgument, "log grid needs positive bounds");
  std::vector<double> out;
  if (n == 1) return {hi};
  const double a = std::log10(hi);
  const double b = std::log10(lo);
  for (int i = 0; i < n; ++i) out.push_back(std::pow(10.0, a + (b - a) * i / (n - 1)));
  return out;
}

EarlyStopResult run_early_stop_experiment(const BoxSceneSpec& spec, const EarlyStopOptions& opts) {
  spec.validate();
  if (opts.thresholds.empty()) throw Error(ErrorKind::kInvalidArgument, "no thresholds");
  for (std::size_t i = 0; i < opts.thresholds.size(); ++i) {
    if (!(opts.thresholds[i] > 0.0) || (i > 0 && !(opts.thresholds[i] < opts.thresholds[i - 1]))) {
      throw Error(ErrorKind::kInvalidArgument, "thresholds must be positive and strictly descending");
    }
  }
  const std::string hash = config_hash(box_text(spec) + " earlystop");
  const std::size_t nt = opts.thresholds.size();
  std::vector<std::vector<ExperimentRecord>> per_run(std::max(opts.runs, 0));

  const auto summary = run_parallel(opts.runs, opts.jobs, opts.master_seed, [&](int run, std::uint64_t seed) {
    BoxSceneSpec s = spec;
    s.seed = seed;
    s.noise_seed.reset();
    const SimScene scene = gen_box_scene(s);
    Rng start(seed ^ kStartSalt);
    std::vector<SceneMap> current = scene.maps;
    for (std::size_t k = 0; k < current.size(); ++k) {
      const double scale = scene.truth.frames[k].scale;
      for (auto& c : current[k].cameras) {
        const Vec3 centre = c.centre() + start.normal3(opts.centre_jitter * scale);
        c.rotation = so3_exp(start.normal3(opts.rotation_jitter)) * c.rotation;
        c.translation = -c.rotation * centre;
      }
      for (auto& p : current[k].points) p.xyz += start.normal3(opts.point_jitter * scale);
    }
    std::vector<TrackId> all_ids = scene.truth.ids;
    const std::vector<std::vector<TrackId>> anchors(current.size(), all_ids);
    CompressOptions copts;
    copts.require_optimum = false;

    std::vector<ExperimentRecord> rows;
    for (double thr : opts.thresholds) {
      BundleOptions bopts;
      bopts.gradient_norm_tolerance = thr;
      bopts.max_iterations = 200;
      for (auto& m : current) m = bundle_adjust(m, bopts).map;
      ExperimentRecord rec;
      rec.config_hash = hash;
      rec.threshold = thr;
      const auto cmaps = compress_all(current, anchors, copts);
      const Correspondences corr = Correspondences::from_track_ids(cmaps);
      const MergeSolution sol = merge_bundle(cmaps, corr);
      std::vector<Vec3> q(sol.global_ids.size());
      for (std::size_t g = 0; g < q.size(); ++g) q[g] = sol.q.segment<3>(3 * g);
      rec.rmse_ours = rmse_to_truth(sol.global_ids, q, scene.truth);
      std::vector<PointSet> sets;
      for (const auto& m : current) sets.push_back(point_set(m));
      rec.rmse_procrustes = cloud_rmse(average_merge(sets), scene.truth);
      rec.rmse_full = map_rmse(full_bundle_merge(current).map, scene.truth);
      std::vector<double> ind;
      for (const auto& m : current) ind.push_back(map_rmse(m, scene.truth));
      rec.rmse_individual = mean_of(ind);
      rows.push_back(rec);
    }
    per_run[run] = std::move(rows);
    return ExperimentRecord{};
  });

  EarlyStopResult out;
  out.thresholds = opts.thresholds;
  out.mean_ours.assign(nt, 0.0);
  out.mean_procrustes.assign(nt, 0.0);
  out.mean_full.assign(nt, 0.0);
  out.mean_individual.assign(nt, 0.0);
  int good = 0;
  for (std::size_t r = 0; r < summary.size(); ++r) {
    if (!summary[r].ok) {
      ++out.failures;
      ExperimentRecord bad = summary[r];
      for (double thr : opts.thresholds) {
        bad.threshold = thr;
        out.records.push_back(bad);
      }
      continue;
    }
    ++good;
    for (std::size_t t = 0; t < nt; ++t) {
      ExperimentRecord rec = per_run[r][t];
      rec.run = summary[r].run;
      rec.seed = summary[r].seed;
      out.mean_ours[t] += rec.rmse_ours;
      out.mean_procrustes[t] += rec.rmse_procrustes;
      out.mean_full[t] += rec.rmse_full;
      out.mean_individual[t] += rec.rmse_individual;
      out.records.push_back(std::move(rec));
    }
  }
  check_failures(out.failures, opts.runs, "early-stop experiment");
  if (good > 0) {
    for (std::size_t t = 0; t < nt; ++t) {
      out.mean_ours[t] /= good;
      out.mean_procrustes[t] /= good;
      out.mean_full[t] /= good;
      out.mean_individual[t] /= good;
    }
  }
  return out;
}

LoopResult run_loop_closure_experiment(const RoomSceneSpec& spec, const LoopOptions& opts) {
  spec.validate();
  const std::string hash = config_hash(room_text(spec));
  LoopResult out;
  out.records = run_parallel(opts.runs, opts.jobs, opts.master_seed, [&](int, std::uint64_t seed) {
    RoomSceneSpec s = spec;
    s.seed = seed;
    const RoomScene scene = gen_room_scene(s);
    ExperimentRecord rec;
    rec.config_hash = hash;
    std::vector<SceneMap> maps;
    for (const auto& m : scene.maps) maps.push_back(bundle_adjust(m).map);
    CompressOptions copts;
    copts.with_recovery = true;
    const auto cmaps = compress_all(maps, default_anchor_ids(maps), copts);

    const Correspondences corr_b = room_correspondences(cmaps, scene, true);
    const MergeSolution sol_b = merge_bundle(cmaps, corr_b);
    rec.rmse_ours = cloud_rmse(merged_point_cloud(cmaps, corr_b, sol_b), scene.truth);
    const Correspondences corr_a = room_correspondences(cmaps, scene, false);
    const MergeSolution sol_a = merge_bundle(cmaps, corr_a);
    rec.rmse_ours_a = cloud_rmse(merged_point_cloud(cmaps, corr_a, sol_a), scene.truth);

    // The baseline gets the chain matches only: map 4's copies of the 4-1 corner are renamed.
    std::vector<PointSet> sets;
    for (const auto& m : maps) sets.push_back(point_set(m));
    std::unordered_map<TrackId, TrackId> alias;
    TrackId next = 1;
    for (TrackId id : scene.truth.ids) next = std::max(next, id + 1);
    for (TrackId id : scene.pair_ids[3]) alias[next++] = id;
    for (auto& [fresh, id] : alias) std::replace(sets.back().ids.begin(), sets.back().ids.end(), id, fresh);
    PointSet merged = average_merge(sets);
    for (auto& id : merged.ids) {
      if (auto it = alias.find(id); it != alias.end()) id = it->second;
    }
    rec.rmse_procrustes = cloud_rmse(merged, scene.truth);
    rec.rmse_full = map_rmse(full_bundle_merge(maps).map, scene.truth);
    std::vector<double> ind;
    for (const auto& m : maps) ind.push_back(map_rmse(m, scene.truth));
    rec.rmse_individual = mean_of(ind);

    rec.success_ours = rec.rmse_ours < opts.success_rmse;
    rec.success_ours_a = rec.rmse_ours_a < opts.success_rmse;
    rec.success_procrustes = rec.rmse_procrustes < opts.success_rmse;
    rec.success_full = rec.rmse_full < opts.success_rmse;
    return rec;
  });

  int n = 0, full = 0, b = 0, a = 0, pr = 0, beats = 0, halves = 0;
  double sum_b = 0.0;
  for (const auto& rec : out.records) {
    if (!rec.ok) {
      ++out.failures;
      continue;
    }
    ++n;
    full += rec.success_full;
    b += rec.success_ours;
    a += rec.success_ours_a;
    pr += rec.success_procrustes;
    beats += rec.rmse_ours < rec.rmse_ours_a;
    halves += rec.rmse_ours <= 0.5 * rec.rmse_ours_a;
    if (rec.success_ours) sum_b += rec.rmse_ours;
  }
  check_failures(out.failures, opts.runs, "loop-closure experiment");
  if (n > 0) {
    out.rate_full = static_cast<double>(full) / n;
    out.rate_ours_b = static_cast<double>(b) / n;
    out.rate_ours_a = static_cast<double>(a) / n;
    out.rate_procrustes = static_cast<double>(pr) / n;
    out.rate_b_beats_a = static_cast<double>(beats) / n;
    out.rate_b_halves_a = static_cast<double>(halves) / n;
  }
  if (b > 0) out.mean_rmse_b_success = sum_b / b;
  return out;
}

ChangeResult run_change_experiment(const BoxSceneSpec& spec, const ChangeOptions& opts) {
  spec.validate();
  if (!(spec.sigma > 0.0)) throw Error(ErrorKind::kInvalidArgument, "the change experiment needs sigma > 0");
  if (spec.n_maps < 2) throw Error(ErrorKind::kInvalidArgument, "the change experiment needs two or more maps");
  const std::string hash = config_hash(box_text(spec) + " change");
  std::vector<TrackId> anchor_ids;
  for (int j = 0; j < opts.anchors; ++j) anchor_ids.push_back(j);
  const std::vector<std::vector<TrackId>> anchors(spec.n_maps, anchor_ids);

  auto test_scene = [&](const SimScene& scene) {
    std::vector<SceneMap> maps;
    for (const auto& m : scene.maps) maps.push_back(bundle_adjust(m).map);
    const auto cmaps = compress_all(maps, anchors, {});
    const Correspondences corr = Correspondences::from_track_ids(cmaps);
    const MergeSolution sol = merge_bundle(cmaps, corr);
    const double a_tilde = merge_a_tilde(cmaps, sol);
    return std::pair{a_tilde, change_test(a_tilde, gamma_params(spec.sigma, dof_delta(corr)), opts.level).rejected};
  };

  ChangeResult out;
  out.records = run_parallel(opts.runs, opts.jobs, opts.master_seed, [&](int, std::uint64_t seed) {
    BoxSceneSpec s = spec;
    s.seed = seed;
    s.noise_seed.reset();
    ExperimentRecord rec;
    rec.config_hash = hash;
    rec.rejected_clean = test_scene(gen_box_scene(s)).second;
    Rng dir(seed ^ kStartSalt);
    const SceneChange change{0, dir.unit3() * (opts.displacement_sigmas * spec.sigma), spec.n_maps - 1};
    const auto [a_tilde, rejected] = test_scene(gen_box_scene(s, std::span(&change, 1)));
    rec.a_tilde = a_tilde;
    rec.rejected = rejected;
    return rec;
  });
  int n = 0, hit = 0, clean = 0;
  for (const auto& rec : out.records) {
    if (!rec.ok) {
      ++out.failures;
      continue;
    }
    ++n;
    hit += rec.rejected;
    clean += rec.rejected_clean;
  }
  check_failures(out.failures, opts.runs, "change experiment");
  if (n > 0) {
    out.detection_rate = static_cast<double>(hit) / n;
    out.false_alarm_rate = static_cast<double>(clean) / n;
  }
  return out;
}

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

std::vector<BandCheck> check_bands(const HistogramResult& r, const AcceptanceBands& b) {
  const double mean = r.params.mean();
  const double lo = b.false_alarm_target - b.false_alarm_tol;
  const double hi = b.false_alarm_target + b.false_alarm_tol;
  return {
      {"gamma_mean", std::abs(r.empirical_mean - mean) <= b.gamma_mean_rel * mean,
       fmt("mean %.6g vs nu/alpha %.6g", r.empirical_mean, mean)},
      {"ks_distance", r.ks < b.ks_max, fmt("KS %.4g < %.4g", r.ks, b.ks_max)},
      {"residual_expectation", std::abs(r.mean_a2 - r.expected_a2) <= b.a2_rel * r.expected_a2,
       fmt("mean a^2 %.6g vs %.6g", r.mean_a2, r.expected_a2)},
      {"clean_false_alarms", r.false_alarm_rate >= lo && r.false_alarm_rate <= hi,
       fmt("rate %.4g in [%.4g, %.4g]", r.false_alarm_rate, lo, hi)},
  };
}

std::vector<BandCheck> check_bands(const EarlyStopResult& r, const AcceptanceBands& b) {
  bool below = !r.thresholds.empty();
  std::string worst;
  for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
    if (r.mean_ours[t] > r.mean_procrustes[t]) {
      below = false;
      worst = fmt("ours %.5g > procrustes %.5g at %.3g", r.mean_ours[t], r.mean_procrustes[t], r.thresholds[t]);
    }
  }
  std::vector<BandCheck> out{{"ours_not_worse_than_procrustes", below, below ? "at every threshold" : worst}};
  if (!r.thresholds.empty()) {
    const double ours = r.mean_ours.back();
    const double full = r.mean_full.back();
    out.push_back({"ours_near_full_at_tightest", std::abs(ours - full) <= b.early_full_rel * full,
                   fmt("ours %.5g vs full %.5g", ours, full)});
  }
  return out;
}

std::vector<BandCheck> check_bands(const LoopResult& r, const AcceptanceBands& b) {
  const bool order = r.rate_full > r.rate_ours_b && r.rate_ours_b > r.rate_ours_a && r.rate_ours_a > r.rate_procrustes;
  char buf[256];
  std::snprintf(buf, sizeof buf, "full %.4g, with 1-4 %.4g, without 1-4 %.4g, procrustes %.4g", r.rate_full,
                r.rate_ours_b, r.rate_ours_a, r.rate_procrustes);
  return {
      {"success_ordering", order, buf},
      {"ours_with_1_4_rate", r.rate_ours_b >= b.loop_ours_min, fmt("%.4g >= %.4g", r.rate_ours_b, b.loop_ours_min)},
      {"full_bundle_rate", r.rate_full >= b.loop_full_min, fmt("%.4g >= %.4g", r.rate_full, b.loop_full_min)},
      {"with_beats_without", r.rate_b_beats_a >= b.loop_beats_min,
       fmt("%.4g >= %.4g", r.rate_b_beats_a, b.loop_beats_min)},
  };
}

std::vector<BandCheck> check_bands(const ChangeResult& r, const AcceptanceBands& b) {
  return {{"detection_rate", r.detection_rate >= b.detection_min,
           fmt("%.4g >= %.4g", r.detection_rate, b.detection_min)}};
}

}  // namespace mapfuse
