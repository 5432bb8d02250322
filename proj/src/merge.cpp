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

#include "mapfuse/merge.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>

#include "mapfuse/baseline.hpp"
#include "mapfuse/error.hpp"

namespace mapfuse {

namespace {

constexpr double kMaxDamping = 1e16;
constexpr double kMinDamping = 1e-9;

using Mat37 = Eigen::Matrix<double, 3, 7>;

// Column layout of the merge parameters: q first, then 7 per free transform.
struct Layout {
  int num_global = 0;
  int num_maps = 0;
  int first_free = 0;  // 1 when T_1 is frozen

  int cols() const { return 3 * num_global + 7 * (num_maps - first_free); }
  bool is_free(int k) const { return k >= first_free; }
  int transform_col(int k) const { return 3 * num_global + 7 * (k - first_free); }
};

// y = T p(q) for one map and its derivatives.
struct MapBlock {
  Eigen::VectorXd e;   // y - q0
  Mat3 a;              // dy_j / dq_g
  Eigen::MatrixXd dt;  // dy / d(transform update), 3|q| x 7
};

MapBlock map_block(const CompressedMap& cmap, const std::vector<int>& to_global, const Eigen::VectorXd& q,
                   const SimilarityTransform& t) {
  const int n = cmap.num_anchors();
  MapBlock b;
  b.e.resize(3 * n);
  b.dt.resize(3 * n, 7);
  b.a = t.scale * t.rotation;
  for (int i = 0; i < n; ++i) {
    const Vec3 y = t.apply(q.segment<3>(3 * to_global[i]));
    b.e.segment<3>(3 * i) = y - cmap.anchor(i);
    const Vec3 rel = y - t.translation;
    b.dt.block<3, 3>(3 * i, 0) = -skew(rel);
    b.dt.block<3, 3>(3 * i, 3) = Mat3::Identity();
    b.dt.block<3, 1>(3 * i, 6) = rel;
  }
  return b;
}

double merge_cost(std::span<const CompressedMap> cmaps, const Correspondences& corr, const Eigen::VectorXd& q,
                  std::span<const SimilarityTransform> transforms) {
  double cost = 0.0;
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    const auto& c = cmaps[k];
    Eigen::VectorXd e(3 * c.num_anchors());
    for (int i = 0; i < c.num_anchors(); ++i) {
      e.segment<3>(3 * i) = transforms[k].apply(q.segment<3>(3 * corr.to_global[k][i])) - c.anchor(i);
    }
    cost += c.a * c.a + (c.r.triangularView<Eigen::Upper>() * e).squaredNorm();
  }
  return cost;
}

class MergeProblem {
 public:
  MergeProblem(std::span<const CompressedMap> cmaps, const Correspondences& corr, const Layout& layout)
      : cmaps_(cmaps), corr_(corr), layout_(layout) {
    for (const auto& c : cmaps) hessians_.push_back(c.r.transpose() * c.r);
  }

  double build(const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms, Eigen::MatrixXd& normal,
               Eigen::VectorXd& grad) const {
    const int cols = layout_.cols();
    normal = Eigen::MatrixXd::Zero(cols, cols);
    grad = Eigen::VectorXd::Zero(cols);
    for (std::size_t k = 0; k < cmaps_.size(); ++k) {
      const auto& g = corr_.to_global[k];
      const int n = cmaps_[k].num_anchors();
      const Eigen::MatrixXd& h = hessians_[k];
      const MapBlock b = map_block(cmaps_[k], g, q, transforms[k]);
      const Mat3 at = b.a.transpose();

      Eigen::MatrixXd ha(3 * n, 3 * n);
      for (int j = 0; j < n; ++j) ha.middleCols<3>(3 * j) = h.middleCols<3>(3 * j) * b.a;
      const Eigen::VectorXd he = h * b.e;
      for (int i = 0; i < n; ++i) {
        const int gi = 3 * g[i];
        grad.segment<3>(gi) += at * he.segment<3>(3 * i);
        for (int j = 0; j < n; ++j) {
          normal.block<3, 3>(gi, 3 * g[j]) += at * ha.block<3, 3>(3 * i, 3 * j);
        }
      }
      if (layout_.is_free(static_cast<int>(k))) {
        const int c = layout_.transform_col(static_cast<int>(k));
        const Eigen::MatrixXd hd = h * b.dt;
        grad.segment<7>(c) += b.dt.transpose() * he;
        normal.block<7, 7>(c, c) += b.dt.transpose() * hd;
        for (int i = 0; i < n; ++i) {
          const Mat37 cross = at * hd.middleRows<3>(3 * i);
          normal.block<3, 7>(3 * g[i], c) += cross;
          normal.block<7, 3>(c, 3 * g[i]) += cross.transpose();
        }
      }
    }
    return merge_cost(cmaps_, corr_, q, transforms);
  }

  void apply(const Eigen::VectorXd& step, const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms,
             Eigen::VectorXd& q_out, std::vector<SimilarityTransform>& t_out) const {
    q_out = q + step.head(3 * layout_.num_global);
    t_out.assign(transforms.begin(), transforms.end());
    for (int k = 0; k < layout_.num_maps; ++k) {
      if (layout_.is_free(k)) t_out[k] = apply_sim3_update(transforms[k], step.segment<7>(layout_.transform_col(k)));
    }
  }

 private:
  std::span<const CompressedMap> cmaps_;
  const Correspondences& corr_;
  Layout layout_;
  std::vector<Eigen::MatrixXd> hessians_;
};

bool collinear(const std::vector<Vec3>& pts) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::MatrixXd c(3, pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) c.col(i) = pts[i] - mean;
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::MatrixXd>(c).singularValues();
  return !(sv(1) > 1e-9 * sv(0));
}

// Copy of a footprint with anchors relabelled by their global ids.
CompressedMap relabel(const CompressedMap& c, const Correspondences& corr, int k) {
  CompressedMap out = c;
  for (int i = 0; i < c.num_anchors(); ++i) out.anchor_ids[i] = corr.global_ids[corr.to_global[k][i]];
  return out;
}

}  // namespace

Correspondences Correspondences::from_track_ids(std::span<const CompressedMap> cmaps) {
  Correspondences corr;
  std::unordered_map<TrackId, int> index;
  for (const auto& c : cmaps) {
    std::vector<int> list;
    list.reserve(c.anchor_ids.size());
    for (TrackId id : c.anchor_ids) {
      auto [it, inserted] = index.try_emplace(id, static_cast<int>(corr.global_ids.size()));
      if (inserted) corr.global_ids.push_back(id);
      list.push_back(it->second);
    }
    corr.to_global.push_back(std::move(list));
  }
  return corr;
}

std::vector<int> Correspondences::kappa() const {
  std::vector<int> count(global_ids.size(), 0);
  for (const auto& list : to_global) {
    for (int g : list) ++count[g];
  }
  std::vector<int> out(to_global.size() + 1, 0);
  for (int c : count) ++out[c];
  return out;
}

void Correspondences::validate(std::span<const CompressedMap> cmaps) const {
  if (to_global.size() != cmaps.size()) {
    throw Error(ErrorKind::kInvalidArgument, "correspondences list " + std::to_string(to_global.size()) +
                                                 " maps, got " + std::to_string(cmaps.size()));
  }
  std::vector<bool> used(global_ids.size(), false);
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    if (to_global[k].size() != cmaps[k].anchor_ids.size()) {
      throw Error(ErrorKind::kInvalidArgument, "map " + std::to_string(k) + " is not fully covered");
    }
    std::unordered_set<int> seen;
    for (int g : to_global[k]) {
      if (g < 0 || g >= num_global() || !seen.insert(g).second) {
        throw Error(ErrorKind::kInvalidArgument, "bad projection index in map " + std::to_string(k));
      }
      used[g] = true;
    }
  }
  for (std::size_t g = 0; g < used.size(); ++g) {
    if (!used[g]) throw Error(ErrorKind::kInvalidArgument, "global point " + std::to_string(global_ids[g]) + " unused");
  }
}

MergeInit init_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr) {
  if (cmaps.empty()) throw Error(ErrorKind::kInvalidArgument, "nothing to merge");
  corr.validate(cmaps);
  const int n_global = corr.num_global();
  MergeInit init;
  init.q = Eigen::VectorXd::Zero(3 * n_global);
  init.transforms.assign(cmaps.size(), SimilarityTransform::identity());
  std::vector<bool> known(n_global, false);
  std::vector<bool> done(cmaps.size(), false);

  auto fill = [&](std::size_t k) {
    const SimilarityTransform inv = invert(init.transforms[k]);
    for (int i = 0; i < cmaps[k].num_anchors(); ++i) {
      const int g = corr.to_global[k][i];
      if (!known[g]) {
        init.q.segment<3>(3 * g) = inv.apply(cmaps[k].anchor(i));
        known[g] = true;
      }
    }
    done[k] = true;
  };
  fill(0);

  int degenerate = -1;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t k = 1; k < cmaps.size(); ++k) {
      if (done[k]) continue;
      std::vector<Vec3> src, dst;
      for (int i = 0; i < cmaps[k].num_anchors(); ++i) {
        const int g = corr.to_global[k][i];
        if (!known[g]) continue;
        src.push_back(init.q.segment<3>(3 * g));
        dst.push_back(cmaps[k].anchor(i));
      }
      if (src.size() < 3) continue;
      if (collinear(src)) {
        degenerate = static_cast<int>(k);
        continue;
      }
      init.transforms[k] = procrustes_align(src, dst).transform;
      fill(k);
      progress = true;
      break;
    }
  }
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    if (done[k]) continue;
    if (degenerate >= 0) {
      throw Error(ErrorKind::kDegenerateCorrespondences,
                  "matches of map " + std::to_string(degenerate) + " are collinear");
    }
    throw Error(ErrorKind::kInsufficientOverlap,
                "map " + std::to_string(k) + " is not connected to map 0 through three or more matches");
  }
  return init;
}

Eigen::VectorXd merge_residual(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms) {
  int rows = 0;
  for (const auto& c : cmaps) rows += 1 + 3 * c.num_anchors();
  Eigen::VectorXd r(rows);
  int row = 0;
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    const auto& c = cmaps[k];
    const MapBlock b = map_block(c, corr.to_global[k], q, transforms[k]);
    r(row) = c.a;
    r.segment(row + 1, b.e.size()) = c.r.triangularView<Eigen::Upper>() * b.e;
    row += 1 + static_cast<int>(b.e.size());
  }
  return r;
}

Eigen::MatrixXd merge_jacobian(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const Eigen::VectorXd& q, std::span<const SimilarityTransform> transforms,
                               bool include_first_transform) {
  const Layout layout{corr.num_global(), static_cast<int>(cmaps.size()), include_first_transform ? 0 : 1};
  int rows = 0;
  for (const auto& c : cmaps) rows += 3 * c.num_anchors();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(rows, layout.cols());
  int row = 0;
  for (std::size_t k = 0; k < cmaps.size(); ++k) {
    const auto& c = cmaps[k];
    const int n = 3 * c.num_anchors();
    const MapBlock b = map_block(c, corr.to_global[k], q, transforms[k]);
    for (int i = 0; i < c.num_anchors(); ++i) {
      j.block(row, 3 * corr.to_global[k][i], n, 3) += c.r.middleCols<3>(3 * i) * b.a;
    }
    if (layout.is_free(static_cast<int>(k))) {
      j.block(row, layout.transform_col(static_cast<int>(k)), n, 7) = c.r * b.dt;
    }
    row += n;
  }
  return j;
}

MergeSolution merge_bundle(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                           const MergeOptions& opts) {
  return merge_bundle_from(cmaps, corr, init_merge(cmaps, corr), opts);
}

MergeSolution merge_bundle_from(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                                const MergeInit& start, const MergeOptions& opts) {
  opts.lm.validate();
  corr.validate(cmaps);
  for (const auto& c : cmaps) c.validate();
  const Layout layout{corr.num_global(), static_cast<int>(cmaps.size()), opts.fix_first_transform ? 1 : 0};
  MergeProblem problem(cmaps, corr, layout);

  MergeSolution sol;
  sol.global_ids = corr.global_ids;
  sol.q = start.q;
  sol.transforms = start.transforms;
  if (opts.fix_first_transform) sol.transforms[0] = SimilarityTransform::identity();

  Eigen::MatrixXd normal;
  Eigen::VectorXd grad;
  double cost = problem.build(sol.q, sol.transforms, normal, grad);
  double gnorm = 2.0 * grad.norm();
  double lambda = opts.lm.initial_damping;
  int iter = 0;
  bool stalled = false;
  while (gnorm > opts.lm.gradient_norm_tolerance && iter < opts.lm.max_iterations && !stalled) {
    ++iter;
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = normal;
      for (int i = 0; i < damped.rows(); ++i) damped(i, i) += lambda * std::max(normal(i, i), 1e-12);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const Eigen::VectorXd step = ldlt.solve(-grad);
        if (step.allFinite()) {
          Eigen::VectorXd q_new;
          std::vector<SimilarityTransform> t_new;
          problem.apply(step, sol.q, sol.transforms, q_new, t_new);
          const double cost_new = merge_cost(cmaps, corr, q_new, t_new);
          if (cost_new < cost) {
            sol.q = std::move(q_new);
            sol.transforms = std::move(t_new);
            lambda = std::max(lambda / opts.lm.damping_down_factor, kMinDamping);
            accepted = true;
            break;
          }
        }
      }
      lambda *= opts.lm.damping_up_factor;
      if (lambda > kMaxDamping) {
        stalled = true;
        break;
      }
    }
    if (accepted) {
      cost = problem.build(sol.q, sol.transforms, normal, grad);
      gnorm = 2.0 * grad.norm();
    }
  }
  if (!std::isfinite(cost)) throw Error(ErrorKind::kNumericalFailure, "merge cost is not finite");
  sol.a_bar = std::sqrt(cost);
  sol.report.squared_residual = cost;
  sol.report.gradient_norm = gnorm;
  sol.report.iterations = iter;
  sol.report.converged = gnorm <= opts.lm.gradient_norm_tolerance;
  return sol;
}

CompressedMap recompress_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                               const MergeSolution& solution, std::optional<std::vector<TrackId>> keep_ids) {
  corr.validate(cmaps);
  const int n_global = corr.num_global();
  std::vector<int> kept;
  if (keep_ids) {
    std::unordered_map<TrackId, int> index;
    for (int g = 0; g < n_global; ++g) index[corr.global_ids[g]] = g;
    for (TrackId id : *keep_ids) {
      auto it = index.find(id);
      if (it == index.end()) throw Error(ErrorKind::kUnknownAnchor, "keep id " + std::to_string(id) + " not merged");
      kept.push_back(it->second);
    }
  } else {
    for (int g = 0; g < n_global; ++g) kept.push_back(g);
  }
  if (kept.size() < 3) throw Error(ErrorKind::kDegenerateAnchors, "at least three points must stay in q");

  const Eigen::MatrixXd jw = merge_jacobian(cmaps, corr, solution.q, solution.transforms, true);
  std::vector<bool> is_kept(n_global, false);
  for (int g : kept) is_kept[g] = true;
  const int n_aux_points = n_global - static_cast<int>(kept.size());
  Eigen::MatrixXd ja(jw.rows(), 3 * kept.size());
  Eigen::MatrixXd jb(jw.rows(), 3 * n_aux_points + 7 * static_cast<int>(cmaps.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) ja.middleCols<3>(3 * i) = jw.middleCols<3>(3 * kept[i]);
  int col = 0;
  for (int g = 0; g < n_global; ++g) {
    if (!is_kept[g]) {
      jb.middleCols<3>(col) = jw.middleCols<3>(3 * g);
      col += 3;
    }
  }
  jb.rightCols(7 * cmaps.size()) = jw.rightCols(7 * cmaps.size());

  CompressedMap out;
  for (int g : kept) out.anchor_ids.push_back(corr.global_ids[g]);
  out.q0.resize(3 * kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) out.q0.segment<3>(3 * i) = solution.q.segment<3>(3 * kept[i]);
  gauge_generators(out.q0);
  const Eigen::MatrixXd dsdq = aux_sensitivity(ja, jb);
  out.r = gauge_fill(triangular_factor(reduced_jacobian(ja, jb, dsdq)), out.q0).r;
  out.a = solution.a_bar;
  long d_dof = 0;
  for (const auto& c : cmaps) {
    out.eta_res += c.eta_res;
    d_dof += c.d_dof;
  }
  out.d_dof = d_dof - dof_delta(corr);
  return out;
}

double merge_a_tilde(std::span<const CompressedMap> cmaps, const MergeSolution& solution) {
  double sum = 0.0;
  for (const auto& c : cmaps) sum += c.a * c.a;
  return solution.a_bar * solution.a_bar - sum;
}

RobustMergeResult robust_hierarchical_merge(std::span<const CompressedMap> cmaps, const Correspondences& corr,
                                            double sigma, double level, const MergeOptions& opts) {
  corr.validate(cmaps);
  RobustMergeResult out;
  if (cmaps.empty()) throw Error(ErrorKind::kInvalidArgument, "nothing to merge");
  CompressedMap running = relabel(cmaps[0], corr, 0);
  out.accepted.push_back(0);
  for (std::size_t k = 1; k < cmaps.size(); ++k) {
    const std::vector<CompressedMap> pair{running, relabel(cmaps[k], corr, static_cast<int>(k))};
    const Correspondences pair_corr = Correspondences::from_track_ids(pair);
    const MergeSolution step = merge_bundle(pair, pair_corr, opts);
    MergeStep record;
    record.map_index = static_cast<int>(k);
    record.test = change_test(merge_a_tilde(pair, step), gamma_params(sigma, dof_delta(pair_corr)), level);
    out.steps.push_back(record);
    if (record.test.rejected) {
      out.flagged.push_back(static_cast<int>(k));
    } else {
      running = recompress_merge(pair, pair_corr, step);
      out.accepted.push_back(static_cast<int>(k));
    }
  }

  std::vector<CompressedMap> kept;
  for (int k : out.accepted) kept.push_back(relabel(cmaps[k], corr, k));
  out.solution = merge_bundle(kept, Correspondences::from_track_ids(kept), opts);
  return out;
}

}  // namespace mapfuse
