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

#include "mapfuse/compress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "mapfuse/bundle.hpp"
#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

constexpr double kMaxAuxCondition = 1e12;

// Power and inverse-power iteration on an SPD matrix; a deterministic estimate of
// lambda_max / lambda_min that is good to a few digits.
template <typename Multiply, typename Solve>
double estimate_condition(int n, Multiply&& mul, Solve&& solve) {
  if (n == 0) return 1.0;
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x(i) = 1.0 + 0.1 * ((i * 7919) % 13);
  x.normalize();
  double lmax = 0.0;
  for (int it = 0; it < 40; ++it) {
    Eigen::VectorXd y = mul(x);
    lmax = y.norm();
    if (lmax == 0.0) return std::numeric_limits<double>::infinity();
    x = y / lmax;
  }
  for (int i = 0; i < n; ++i) x(i) = 1.0 + 0.1 * ((i * 104729) % 17);
  x.normalize();
  double inv_min = 0.0;
  for (int it = 0; it < 40; ++it) {
    Eigen::VectorXd y = solve(x);
    inv_min = y.norm();
    if (!std::isfinite(inv_min)) return std::numeric_limits<double>::infinity();
    x = y / inv_min;
  }
  return lmax * inv_min;
}

void sign_normalize_rows(Eigen::MatrixXd& r) {
  for (int i = 0; i < r.rows(); ++i) {
    if (r(i, i) < 0.0) r.row(i) *= -1.0;
  }
}

}  // namespace

void CompressedMap::validate() const {
  const int n = 3 * num_anchors();
  if (num_anchors() < 3) throw Error(ErrorKind::kInvalidArgument, "footprint needs at least three anchors");
  if (q0.size() != n || r.rows() != n || r.cols() != n) {
    throw Error(ErrorKind::kInvalidArgument, "footprint shapes do not match the anchor count");
  }
  if (!(a >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "footprint residual must be non-negative");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (r(i, j) != 0.0) throw Error(ErrorKind::kInvalidArgument, "footprint R is not upper triangular");
    }
  }
  if (recovery) {
    const long s = 6L * static_cast<long>(recovery->cameras.size()) +
                   3L * static_cast<long>(recovery->aux_point_indices.size());
    if (recovery->dsdq.rows() != s || recovery->dsdq.cols() != n) {
      throw Error(ErrorKind::kInvalidArgument, "recovery block has the wrong shape");
    }
  }
}

JacobianPartition partition_jacobian(const SceneMap& map, std::span<const TrackId> anchor_ids) {
  const int m = static_cast<int>(map.cameras.size());
  const int n = static_cast<int>(map.points.size());
  JacobianPartition part;
  std::vector<int> column(n, -1);  // anchors: index into ja; aux: index into jb point block
  std::vector<bool> is_anchor(n, false);
  for (TrackId id : anchor_ids) {
    const int j = map.find_point(id);
    if (j < 0) throw Error(ErrorKind::kUnknownAnchor, "anchor " + std::to_string(id) + " is not in the map");
    if (is_anchor[j]) throw Error(ErrorKind::kInvalidArgument, "anchor " + std::to_string(id) + " listed twice");
    is_anchor[j] = true;
    column[j] = static_cast<int>(part.anchor_indices.size());
    part.anchor_indices.push_back(j);
  }
  for (int j = 0; j < n; ++j) {
    if (!is_anchor[j]) {
      column[j] = static_cast<int>(part.aux_point_indices.size());
      part.aux_point_indices.push_back(j);
    }
  }
  std::vector<Eigen::Triplet<double>> ta, tb;
  ta.reserve(map.observations.size() * 6);
  tb.reserve(map.observations.size() * 18);
  Eigen::Matrix<double, 2, 6> jc;
  Eigen::Matrix<double, 2, 3> jp;
  for (std::size_t k = 0; k < map.observations.size(); ++k) {
    const auto& o = map.observations[k];
    project(map.cameras[o.camera_index], map.points[o.point_index]);
    observation_jacobian(map.cameras[o.camera_index], map.points[o.point_index].xyz, jc, jp);
    const int row = 2 * static_cast<int>(k);
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 6; ++b) tb.emplace_back(row + a, 6 * o.camera_index + b, jc(a, b));
      const int j = o.point_index;
      for (int b = 0; b < 3; ++b) {
        if (is_anchor[j]) {
          ta.emplace_back(row + a, 3 * column[j] + b, jp(a, b));
        } else {
          tb.emplace_back(row + a, 6 * m + 3 * column[j] + b, jp(a, b));
        }
      }
    }
  }
  const int rows = 2 * static_cast<int>(map.observations.size());
  part.ja.resize(rows, 3 * static_cast<int>(part.anchor_indices.size()));
  part.ja.setFromTriplets(ta.begin(), ta.end());
  part.jb.resize(rows, 6 * m + 3 * static_cast<int>(part.aux_point_indices.size()));
  part.jb.setFromTriplets(tb.begin(), tb.end());
  return part;
}

Eigen::MatrixXd aux_sensitivity(const Eigen::SparseMatrix<double>& ja, const Eigen::SparseMatrix<double>& jb) {
  const Eigen::SparseMatrix<double> v = (jb.transpose() * jb).pruned();
  const Eigen::MatrixXd wt = Eigen::MatrixXd(jb.transpose() * ja);
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(v);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::kSingularAuxiliary, "auxiliary normal matrix is not positive definite");
  }
  const double cond = estimate_condition(
      static_cast<int>(v.rows()), [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(v * x); },
      [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(llt.solve(x)); });
  if (!(cond <= kMaxAuxCondition)) {
    throw Error(ErrorKind::kSingularAuxiliary, "auxiliary normal matrix condition " + std::to_string(cond));
  }
  Eigen::MatrixXd dsdq = -llt.solve(wt);
  if (!dsdq.allFinite()) throw Error(ErrorKind::kSingularAuxiliary, "non-finite ds/dq");
  return dsdq;
}

Eigen::MatrixXd aux_sensitivity(const Eigen::MatrixXd& ja, const Eigen::MatrixXd& jb) {
  const Eigen::MatrixXd v = jb.transpose() * jb;
  const Eigen::MatrixXd wt = jb.transpose() * ja;
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::kSingularAuxiliary, "auxiliary normal matrix is not positive definite");
  }
  const double cond = estimate_condition(
      static_cast<int>(v.rows()), [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(v * x); },
      [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(llt.solve(x)); });
  if (!(cond <= kMaxAuxCondition)) {
    throw Error(ErrorKind::kSingularAuxiliary, "auxiliary normal matrix condition " + std::to_string(cond));
  }
  return -llt.solve(wt);
}

Eigen::MatrixXd reduced_jacobian(const Eigen::SparseMatrix<double>& ja, const Eigen::SparseMatrix<double>& jb,
                                 const Eigen::MatrixXd& dsdq) {
  return Eigen::MatrixXd(ja) + jb * dsdq;
}

Eigen::MatrixXd reduced_jacobian(const Eigen::MatrixXd& ja, const Eigen::MatrixXd& jb, const Eigen::MatrixXd& dsdq) {
  return ja + jb * dsdq;
}

Eigen::MatrixXd gauge_generators_raw(const Eigen::VectorXd& q0) {
  const int n = static_cast<int>(q0.size()) / 3;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(7, 3 * n);
  for (int j = 0; j < n; ++j) {
    const Vec3 x = q0.segment<3>(3 * j);
    for (int i = 0; i < 3; ++i) {
      g(i, 3 * j + i) = 1.0;
      g.block<1, 3>(3 + i, 3 * j) = Vec3::Unit(i).cross(x).transpose();
    }
    g.block<1, 3>(6, 3 * j) = x.transpose();
  }
  return g;
}

Eigen::MatrixXd gauge_generators(const Eigen::VectorXd& q0) {
  const Eigen::MatrixXd g = gauge_generators_raw(q0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g.transpose());
  const Eigen::MatrixXd rr = qr.matrixQR().topRows(7).triangularView<Eigen::Upper>();
  const double scale = g.rowwise().norm().maxCoeff();
  for (int i = 0; i < 7; ++i) {
    if (!(std::abs(rr(i, i)) > 1e-9 * scale)) {
      throw Error(ErrorKind::kDegenerateAnchors, "anchors do not fix all seven gauge directions");
    }
  }
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.cols(), 7);
  return q.transpose();
}

Eigen::MatrixXd triangular_factor(const Eigen::MatrixXd& j) {
  const int n = static_cast<int>(j.cols());
  Eigen::MatrixXd padded = j;
  if (j.rows() < n) {
    padded = Eigen::MatrixXd::Zero(n, n);
    padded.topRows(j.rows()) = j;
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(padded);
  Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  sign_normalize_rows(r);
  return r;
}

GaugeFill gauge_fill(const Eigen::MatrixXd& r_raw, const Eigen::VectorXd& q0) {
  const int n = static_cast<int>(r_raw.rows());
  if (n < 9 || r_raw.cols() != n || q0.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "gauge fill needs a square factor over at least three anchors");
  }
  // the gauge rows are found by magnitude, not assumed to be the trailing ones
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const Eigen::VectorXd norms = r_raw.rowwise().norm();
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return norms(x) < norms(y); });
  std::vector<int> kept(order.begin() + 7, order.end());
  std::sort(kept.begin(), kept.end());

  const int k = n - 7;
  Eigen::MatrixXd informative(k, n);
  std::vector<double> diag(k);
  for (int i = 0; i < k; ++i) {
    informative.row(i) = r_raw.row(kept[i]);
    diag[i] = std::abs(r_raw(kept[i], kept[i]));
  }
  std::nth_element(diag.begin(), diag.begin() + k / 2, diag.end());
  double mu = diag[k / 2];
  if (k % 2 == 0) {
    const double lower = *std::max_element(diag.begin(), diag.begin() + k / 2);
    mu = 0.5 * (mu + lower);
  }
  if (!(mu > 0.0)) throw Error(ErrorKind::kDegenerateAnchors, "reduced Jacobian carries no information");

  // orthonormal basis of the informative row space
  Eigen::HouseholderQR<Eigen::MatrixXd> row_qr(informative.transpose());
  const Eigen::MatrixXd basis = row_qr.householderQ() * Eigen::MatrixXd::Identity(n, k);

  Eigen::MatrixXd g = gauge_generators(q0);
  g -= (g * basis) * basis.transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> g_qr(g.transpose());
  const Eigen::MatrixXd g_r = g_qr.matrixQR().topRows(7).triangularView<Eigen::Upper>();
  for (int i = 0; i < 7; ++i) {
    if (!(std::abs(g_r(i, i)) > 1e-6)) {
      throw Error(ErrorKind::kDegenerateAnchors, "gauge directions overlap the informative rows");
    }
  }
  const Eigen::MatrixXd g_orth = (g_qr.householderQ() * Eigen::MatrixXd::Identity(n, 7)).transpose();

  Eigen::MatrixXd stacked(n, n);
  stacked.topRows(k) = informative;
  stacked.bottomRows(7) = mu * g_orth;
  return {triangular_factor(stacked), mu};
}

CompressedMap compress_map(const SceneMap& map, std::span<const TrackId> anchor_ids, const CompressOptions& opts) {
  map.validate();
  if (anchor_ids.size() < 3) throw Error(ErrorKind::kDegenerateAnchors, "at least three anchors are required");
  const JacobianPartition part = partition_jacobian(map, anchor_ids);
  const Eigen::VectorXd r = assemble_residuals(map);

  CompressedMap out;
  out.a = r.norm();
  if (opts.require_optimum) {
    const Eigen::VectorXd grad = 2.0 * (Eigen::VectorXd(part.ja.transpose() * r));
    const Eigen::VectorXd grad_b = 2.0 * (Eigen::VectorXd(part.jb.transpose() * r));
    const double gnorm = std::sqrt(grad.squaredNorm() + grad_b.squaredNorm());
    if (gnorm > opts.optimum_tolerance * (1.0 + out.a)) {
      throw Error(ErrorKind::kNotConverged, "map is not at an optimum: gradient norm " + std::to_string(gnorm));
    }
  }
  out.anchor_ids.assign(anchor_ids.begin(), anchor_ids.end());
  out.q0.resize(3 * static_cast<int>(anchor_ids.size()));
  for (std::size_t i = 0; i < part.anchor_indices.size(); ++i) {
    out.q0.segment<3>(3 * i) = map.points[part.anchor_indices[i]].xyz;
  }
  // anchor degeneracy is cheaper to detect before the factorizations
  gauge_generators(out.q0);

  Eigen::MatrixXd dsdq = aux_sensitivity(part.ja, part.jb);
  const Eigen::MatrixXd jq = reduced_jacobian(part.ja, part.jb, dsdq);
  out.r = gauge_fill(triangular_factor(jq), out.q0).r;
  const long m = static_cast<long>(map.cameras.size());
  const long n = static_cast<long>(map.points.size());
  out.eta_res = 2L * static_cast<long>(map.observations.size());
  out.d_dof = 6 * m + 3 * n - 7;
  if (opts.with_recovery) {
    RecoveryData rec;
    rec.cameras = map.cameras;
    rec.points = map.points;
    rec.aux_point_indices = part.aux_point_indices;
    rec.dsdq = std::move(dsdq);
    out.recovery = std::move(rec);
  }
  return out;
}

CompressedResidual eval_compressed(const CompressedMap& cmap, const Eigen::VectorXd& q) {
  if (q.size() != cmap.q0.size()) throw Error(ErrorKind::kInvalidArgument, "q has the wrong length");
  CompressedResidual out;
  out.residual.resize(1 + q.size());
  out.residual(0) = cmap.a;
  out.residual.tail(q.size()) = cmap.r.triangularView<Eigen::Upper>() * (q - cmap.q0);
  out.squared = out.residual.squaredNorm();
  return out;
}

SceneMap recover_aux(const CompressedMap& cmap, const Eigen::VectorXd& q_new) {
  if (!cmap.recovery) throw Error(ErrorKind::kNoRecoveryData, "footprint carries no recovery data");
  if (q_new.size() != cmap.q0.size()) throw Error(ErrorKind::kInvalidArgument, "q has the wrong length");
  const RecoveryData& rec = *cmap.recovery;
  const Eigen::VectorXd ds = rec.dsdq * (q_new - cmap.q0);
  SceneMap out;
  out.cameras.reserve(rec.cameras.size());
  for (std::size_t i = 0; i < rec.cameras.size(); ++i) {
    out.cameras.push_back(apply_camera_update(rec.cameras[i], ds.segment<6>(6 * i)));
  }
  out.points = rec.points;
  const int m = static_cast<int>(rec.cameras.size());
  for (std::size_t k = 0; k < rec.aux_point_indices.size(); ++k) {
    out.points[rec.aux_point_indices[k]].xyz += ds.segment<3>(6 * m + 3 * k);
  }
  std::unordered_map<TrackId, int> index;
  for (std::size_t j = 0; j < out.points.size(); ++j) index[out.points[j].track_id] = static_cast<int>(j);
  for (int i = 0; i < cmap.num_anchors(); ++i) {
    out.points[index.at(cmap.anchor_ids[i])].xyz = q_new.segment<3>(3 * i);
  }
  return out;
}

std::vector<std::vector<TrackId>> default_anchor_ids(std::span<const SceneMap> maps) {
  std::unordered_map<TrackId, int> count;
  for (const auto& map : maps) {
    for (const auto& p : map.points) ++count[p.track_id];
  }
  std::vector<std::vector<TrackId>> out(maps.size());
  for (std::size_t k = 0; k < maps.size(); ++k) {
    for (const auto& p : maps[k].points) {
      if (count[p.track_id] >= 2) out[k].push_back(p.track_id);
    }
  }
  return out;
}

}  // namespace mapfuse
