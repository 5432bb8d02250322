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

#include "mapfuse/bundle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include <Eigen/Dense>

#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat66 = Eigen::Matrix<double, 6, 6>;

constexpr double kMaxDamping = 1e16;
constexpr double kMinDamping = 1e-9;

Vec2 residual_checked(const SceneMap& map, std::size_t k) {
  const auto& o = map.observations[k];
  try {
    return reprojection_residual(map.cameras[o.camera_index], map.points[o.point_index], o);
  } catch (const Error& e) {
    throw Error(ErrorKind::kChirality, "observation " + std::to_string(k) + " (camera " +
                                           std::to_string(o.camera_index) + ", point " +
                                           std::to_string(o.point_index) + "): " + e.what());
  }
}

// Sum of squares in observation order; +inf if any point falls behind its camera.
double cost_or_inf(const SceneMap& map) {
  double cost = 0.0;
  for (const auto& o : map.observations) {
    const Vec3 xc = map.cameras[o.camera_index].to_camera(map.points[o.point_index].xyz);
    if (!(xc.z() > 1e-12)) return std::numeric_limits<double>::infinity();
    const Vec2 r = Vec2(xc.x() / xc.z(), xc.y() / xc.z()) - o.image_point;
    cost += r.squaredNorm();
  }
  return cost;
}

struct NormalEquations {
  Eigen::MatrixXd hcc;
  Eigen::VectorXd gc;
  std::vector<Eigen::Matrix3d> hpp;  // per free point
  std::vector<Vec3> gp;
  std::vector<Mat63> w;  // per observation, camera x point coupling
  double cost = 0.0;
};

class Problem {
 public:
  Problem(const SceneMap& map, const std::vector<TrackId>& frozen) : map_(map) {
    const int n = static_cast<int>(map.points.size());
    std::unordered_set<TrackId> frozen_set(frozen.begin(), frozen.end());
    free_index_.assign(n, -1);
    for (int j = 0; j < n; ++j) {
      if (!frozen_set.count(map.points[j].track_id)) free_index_[j] = num_free_++;
    }
    obs_of_point_.resize(num_free_);
    for (std::size_t k = 0; k < map.observations.size(); ++k) {
      const int f = free_index_[map.observations[k].point_index];
      if (f >= 0) obs_of_point_[f].push_back(static_cast<int>(k));
    }
  }

  int num_cameras() const { return static_cast<int>(map_.cameras.size()); }
  int num_free_points() const { return num_free_; }

  NormalEquations build(const SceneMap& map) const {
    const int m = num_cameras();
    NormalEquations ne;
    ne.hcc = Eigen::MatrixXd::Zero(6 * m, 6 * m);
    ne.gc = Eigen::VectorXd::Zero(6 * m);
    ne.hpp.assign(num_free_, Eigen::Matrix3d::Zero());
    ne.gp.assign(num_free_, Vec3::Zero());
    ne.w.assign(map.observations.size(), Mat63::Zero());
    Mat26 jc;
    Mat23 jp;
    for (std::size_t k = 0; k < map.observations.size(); ++k) {
      const auto& o = map.observations[k];
      const Vec2 r = residual_checked(map, k);
      ne.cost += r.squaredNorm();
      observation_jacobian(map.cameras[o.camera_index], map.points[o.point_index].xyz, jc, jp);
      const int c = 6 * o.camera_index;
      ne.hcc.block<6, 6>(c, c) += jc.transpose() * jc;
      ne.gc.segment<6>(c) += jc.transpose() * r;
      const int f = free_index_[o.point_index];
      if (f >= 0) {
        ne.hpp[f] += jp.transpose() * jp;
        ne.gp[f] += jp.transpose() * r;
        ne.w[k] = jc.transpose() * jp;
      }
    }
    return ne;
  }

  double gradient_norm(const NormalEquations& ne) const {
    double sq = ne.gc.squaredNorm();
    for (const auto& g : ne.gp) sq += g.squaredNorm();
    return 2.0 * std::sqrt(sq);
  }

  // Solves the damped system through the point-block Schur complement. Returns false if the
  // reduced camera matrix is not positive definite.
  bool solve(const NormalEquations& ne, double lambda, Eigen::VectorXd& dc, std::vector<Vec3>& dp) const {
    const int m = num_cameras();
    Eigen::MatrixXd s = ne.hcc;
    for (int i = 0; i < 6 * m; ++i) s(i, i) += lambda * std::max(ne.hcc(i, i), 1e-12);
    Eigen::VectorXd b = -ne.gc;

    std::vector<Eigen::Matrix3d> hinv(num_free_);
    for (int f = 0; f < num_free_; ++f) {
      Eigen::Matrix3d h = ne.hpp[f];
      for (int i = 0; i < 3; ++i) h(i, i) += lambda * std::max(ne.hpp[f](i, i), 1e-12);
      Eigen::LLT<Eigen::Matrix3d> llt(h);
      if (llt.info() != Eigen::Success) return false;
      hinv[f] = llt.solve(Eigen::Matrix3d::Identity());
      const auto& obs = obs_of_point_[f];
      for (int a : obs) {
        const int ca = 6 * map_.observations[a].camera_index;
        const Mat63 wh = ne.w[a] * hinv[f];
        b.segment<6>(ca) += wh * ne.gp[f];
        for (int bidx : obs) {
          const int cb = 6 * map_.observations[bidx].camera_index;
          s.block<6, 6>(ca, cb) -= wh * ne.w[bidx].transpose();
        }
      }
    }
    if (m > 0) {
      Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
      dc = ldlt.solve(b);
      if (!dc.allFinite()) return false;
    } else {
      dc.resize(0);
    }
    dp.assign(num_free_, Vec3::Zero());
    for (int f = 0; f < num_free_; ++f) {
      Vec3 rhs = -ne.gp[f];
      for (int a : obs_of_point_[f]) {
        rhs -= ne.w[a].transpose() * dc.segment<6>(6 * map_.observations[a].camera_index);
      }
      dp[f] = hinv[f] * rhs;
      if (!dp[f].allFinite()) return false;
    }
    return true;
  }

  SceneMap apply(const SceneMap& map, const Eigen::VectorXd& dc, const std::vector<Vec3>& dp) const {
    SceneMap out = map;
    for (int i = 0; i < num_cameras(); ++i) {
      out.cameras[i] = apply_camera_update(map.cameras[i], dc.segment<6>(6 * i));
    }
    for (std::size_t j = 0; j < map.points.size(); ++j) {
      const int f = free_index_[j];
      if (f >= 0) out.points[j].xyz += dp[f];
    }
    return out;
  }

 private:
  const SceneMap& map_;
  std::vector<int> free_index_;
  int num_free_ = 0;
  std::vector<std::vector<int>> obs_of_point_;
};

}  // namespace

void BundleOptions::validate() const {
  if (max_iterations < 0 || !(gradient_norm_tolerance >= 0.0) || !(initial_damping > 0.0) ||
      !(damping_up_factor > 1.0) || !(damping_down_factor > 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "invalid bundle options");
  }
}

void observation_jacobian(const CameraPose& pose, const Vec3& point, Mat26& d_camera, Mat23& d_point) {
  const Vec3 rx = pose.rotation * point;
  const Vec3 xc = rx + pose.translation;
  if (!(xc.z() > 1e-12)) throw Error(ErrorKind::kChirality, "point behind camera");
  const double iz = 1.0 / xc.z();
  Mat23 dproj;
  dproj << iz, 0.0, -xc.x() * iz * iz,
           0.0, iz, -xc.y() * iz * iz;
  d_camera.leftCols<3>() = -dproj * skew(rx);
  d_camera.rightCols<3>() = dproj;
  d_point = dproj * pose.rotation;
}

Eigen::VectorXd assemble_residuals(const SceneMap& map) {
  Eigen::VectorXd r(2 * map.observations.size());
  for (std::size_t k = 0; k < map.observations.size(); ++k) r.segment<2>(2 * k) = residual_checked(map, k);
  return r;
}

Eigen::SparseMatrix<double> assemble_jacobian(const SceneMap& map) {
  const int m = static_cast<int>(map.cameras.size());
  const int n = static_cast<int>(map.points.size());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(map.observations.size() * 18);
  Mat26 jc;
  Mat23 jp;
  for (std::size_t k = 0; k < map.observations.size(); ++k) {
    const auto& o = map.observations[k];
    residual_checked(map, k);
    observation_jacobian(map.cameras[o.camera_index], map.points[o.point_index].xyz, jc, jp);
    const int row = 2 * static_cast<int>(k);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 6; ++b) triplets.emplace_back(row + a, camera_column(o.camera_index) + b, jc(a, b));
      for (int b = 0; b < 3; ++b) triplets.emplace_back(row + a, point_column(o.point_index, m) + b, jp(a, b));
    }
  }
  Eigen::SparseMatrix<double> j(2 * static_cast<int>(map.observations.size()), 6 * m + 3 * n);
  j.setFromTriplets(triplets.begin(), triplets.end());
  return j;
}

double gradient_norm(const SceneMap& map) {
  const Eigen::SparseMatrix<double> j = assemble_jacobian(map);
  const Eigen::VectorXd r = assemble_residuals(map);
  return 2.0 * (j.transpose() * r).norm();
}

BundleResult bundle_adjust(const SceneMap& input, const BundleOptions& opts) {
  opts.validate();
  input.validate();
  const int m = static_cast<int>(input.cameras.size());
  Problem problem(input, opts.frozen_track_ids);
  const int num_obs = static_cast<int>(input.observations.size());
  const int gauge = static_cast<int>(input.points.size()) == problem.num_free_points() ? 7 : 0;
  if (m < 2 && gauge == 7) {
    throw Error(ErrorKind::kNotEnoughObservations, "bundle adjustment needs at least two cameras");
  }
  if (6 * m + 3 * problem.num_free_points() - gauge > 2 * num_obs) {
    throw Error(ErrorKind::kNotEnoughObservations,
                "only " + std::to_string(2 * num_obs) + " residuals for " +
                    std::to_string(6 * m + 3 * problem.num_free_points() - gauge) + " degrees of freedom");
  }

  BundleResult result{input, {}};
  SceneMap& map = result.map;
  double lambda = opts.initial_damping;
  NormalEquations ne = problem.build(map);
  double gnorm = problem.gradient_norm(ne);
  int iter = 0;
  bool stalled = false;
  while (gnorm > opts.gradient_norm_tolerance && iter < opts.max_iterations && !stalled) {
    ++iter;
    bool accepted = false;
    bool any_solve = false;
    while (!accepted) {
      Eigen::VectorXd dc;
      std::vector<Vec3> dp;
      if (problem.solve(ne, lambda, dc, dp)) {
        any_solve = true;
        SceneMap candidate = problem.apply(map, dc, dp);
        const double cost = cost_or_inf(candidate);
        if (cost < ne.cost) {
          map = std::move(candidate);
          lambda = std::max(lambda / opts.damping_down_factor, kMinDamping);
          accepted = true;
          break;
        }
      }
      lambda *= opts.damping_up_factor;
      if (lambda > kMaxDamping) {
        if (!any_solve) {
          throw Error(ErrorKind::kNumericalFailure, "damped normal matrix not positive definite");
        }
        stalled = true;
        break;
      }
    }
    if (accepted) {
      ne = problem.build(map);
      gnorm = problem.gradient_norm(ne);
    }
  }
  result.report.squared_residual = ne.cost;
  result.report.gradient_norm = gnorm;
  result.report.iterations = iter;
  result.report.converged = gnorm <= opts.gradient_norm_tolerance;
  return result;
}

}  // namespace mapfuse
