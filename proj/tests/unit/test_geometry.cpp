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

#include <numbers>

#include <gtest/gtest.h>

#include "mapfuse/error.hpp"
#include "mapfuse/geometry.hpp"
#include "test_support.hpp"

namespace mapfuse {
namespace {

using testing::random_rotation;
using testing::random_similarity;
using testing::random_vec3;

TEST(Project, CanonicalAxis) {
  const Vec2 p = project(CameraPose{}, Vec3(0, 0, 1));
  EXPECT_EQ(p, Vec2(0, 0));
}

TEST(Project, DirectDivision) {
  const Vec2 p = project(CameraPose{}, Vec3(1, 2, 2));
  EXPECT_DOUBLE_EQ(p.x(), 0.5);
  EXPECT_DOUBLE_EQ(p.y(), 1.0);
}

TEST(Project, RotatedAndTranslatedPose) {
  // 90 degrees about y: (x, y, z) -> (z, y, -x).
  CameraPose pose;
  pose.rotation << 0, 0, 1, 0, 1, 0, -1, 0, 0;
  pose.translation = Vec3(0, 0, 3);
  // Camera-frame (0.3, -0.6, 3) needs R X = (0.3, -0.6, 0), so X = (0, -0.6, 0.3).
  const Vec2 p = project(pose, Vec3(0, -0.6, 0.3));
  EXPECT_NEAR(p.x(), 0.1, 1e-15);
  EXPECT_NEAR(p.y(), -0.2, 1e-15);
}

TEST(Project, ChiralityError) {
  try {
    project(CameraPose{}, Vec3(1, 1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kChirality);
  }
  EXPECT_THROW(project(CameraPose{}, Vec3(0, 0, -2)), Error);
  EXPECT_THROW(project(CameraPose{}, Vec3(0, 0, 1e-13)), Error);
}

TEST(ReprojectionResidual, ZeroAtExactProjection) {
  std::mt19937_64 rng(3);
  CameraPose pose{random_rotation(rng), Vec3(0, 0, 5)};
  const Point3 x{random_vec3(rng, 0.5), 4};
  const Observation obs{0, 0, project(pose, x)};
  EXPECT_EQ(reprojection_residual(pose, x, obs), Vec2::Zero());
}

TEST(ReprojectionResidual, Subtraction) {
  const Observation obs{0, 0, Vec2(0.4, 1.1)};
  const Vec2 r = reprojection_residual(CameraPose{}, Point3{Vec3(1, 2, 2), 0}, obs);
  EXPECT_NEAR(r.x(), 0.1, 1e-15);
  EXPECT_NEAR(r.y(), -0.1, 1e-15);
}

TEST(ReprojectionResidual, MatchesScalarOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    CameraPose pose{random_rotation(rng), random_vec3(rng)};
    pose.translation.z() += 10.0;
    const Point3 x{random_vec3(rng), 0};
    const Observation obs{0, 0, Vec2(0.1 * trial / 200.0, -0.05)};
    const Mat3& r = pose.rotation;
    const Vec3& t = pose.translation;
    const Vec3& u = x.xyz;
    const double p1 = r(0, 0) * u[0] + r(0, 1) * u[1] + r(0, 2) * u[2] + t[0];
    const double p2 = r(1, 0) * u[0] + r(1, 1) * u[1] + r(1, 2) * u[2] + t[1];
    const double p3 = r(2, 0) * u[0] + r(2, 1) * u[1] + r(2, 2) * u[2] + t[2];
    const Vec2 got = reprojection_residual(pose, x, obs);
    EXPECT_NEAR(got.x(), p1 / p3 - obs.image_point.x(), 1e-12);
    EXPECT_NEAR(got.y(), p2 / p3 - obs.image_point.y(), 1e-12);
  }
}

TEST(CameraUpdate, ZeroDeltaIsIdentity) {
  std::mt19937_64 rng(5);
  const CameraPose pose{random_rotation(rng), random_vec3(rng)};
  const CameraPose out = apply_camera_update(pose, Vec6::Zero());
  EXPECT_TRUE(out.rotation.isApprox(pose.rotation, 1e-15));
  EXPECT_EQ(out.translation, pose.translation);
}

TEST(CameraUpdate, QuarterTurnAboutX) {
  Vec6 d = Vec6::Zero();
  d(0) = std::numbers::pi / 2;
  const CameraPose out = apply_camera_update(CameraPose{}, d);
  Mat3 expect;
  expect << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  EXPECT_LT((out.rotation - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CameraUpdate, TranslationAdds) {
  Vec6 d = Vec6::Zero();
  d.tail<3>() = Vec3(1, -2, 3);
  const CameraPose out = apply_camera_update(CameraPose{Mat3::Identity(), Vec3(1, 1, 1)}, d);
  EXPECT_EQ(out.translation, Vec3(2, -1, 4));
}

TEST(CameraUpdate, SuccessiveUpdatesCompose) {
  std::mt19937_64 rng(8);
  for (double scale : {1e-3, 1e-4}) {
    const CameraPose pose{random_rotation(rng), random_vec3(rng)};
    Vec6 a, b;
    a << random_vec3(rng), random_vec3(rng);
    b << random_vec3(rng), random_vec3(rng);
    a *= scale / a.norm();
    b *= scale / b.norm();
    const CameraPose two = apply_camera_update(apply_camera_update(pose, a), b);
    const CameraPose one = apply_camera_update(pose, a + b);
    const double diff = (two.rotation - one.rotation).norm() + (two.translation - one.translation).norm();
    EXPECT_LE(diff, (a.norm() + b.norm()) * (a.norm() + b.norm()));
  }
}

TEST(CameraUpdate, RotationStaysOrthonormal) {
  std::mt19937_64 rng(9);
  CameraPose pose;
  for (int i = 0; i < 10000; ++i) {
    Vec6 d;
    d << random_vec3(rng, 0.3), random_vec3(rng);
    pose = apply_camera_update(pose, d);
  }
  EXPECT_LT((pose.rotation.transpose() * pose.rotation - Mat3::Identity()).norm(), 1e-9);
  EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-9);
}

TEST(Sim3Update, ZeroDeltaIsIdentity) {
  std::mt19937_64 rng(4);
  const SimilarityTransform t = random_similarity(rng);
  const SimilarityTransform out = apply_sim3_update(t, Vec7::Zero());
  EXPECT_EQ(out.scale, t.scale);
  EXPECT_TRUE(out.rotation.isApprox(t.rotation, 1e-15));
  EXPECT_EQ(out.translation, t.translation);
}

TEST(Sim3Update, LogScale) {
  Vec7 d = Vec7::Zero();
  d(6) = std::log(2.0);
  EXPECT_NEAR(apply_sim3_update(SimilarityTransform::identity(), d).scale, 2.0, 1e-15);
}

TEST(Sim3Update, PointJacobianMatchesFiniteDifferences) {
  // d/d delta of T(delta) X at delta = 0 is [-(sRX)x, I, sRX].
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const SimilarityTransform t = random_similarity(rng);
    const Vec3 x = random_vec3(rng, 2.0);
    const Vec3 y = t.scale * (t.rotation * x);
    Eigen::Matrix<double, 3, 7> analytic;
    analytic << -skew(y), Mat3::Identity(), y;
    const auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return apply_sim3_update(t, Vec7(d)).apply(x);
    };
    const Eigen::MatrixXd numeric = testing::numeric_jacobian(f, Eigen::VectorXd::Zero(7), 1e-6);
    EXPECT_LT((numeric - analytic).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Sim3Apply, Identity) {
  const std::vector<Vec3> x{Vec3(1, 2, 3), Vec3(-1, 0, 4)};
  const auto y = sim3_apply(SimilarityTransform::identity(), x);
  EXPECT_EQ(y, x);
}

TEST(Sim3Apply, Arithmetic) {
  const SimilarityTransform t{2.0, Mat3::Identity(), Vec3(1, 0, 0)};
  const std::vector<Vec3> x{Vec3(1, 1, 1)};
  EXPECT_EQ(sim3_apply(t, x)[0], Vec3(3, 2, 2));
}

TEST(Sim3Apply, InverseLaw) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const SimilarityTransform t = random_similarity(rng);
    std::vector<Vec3> x;
    for (int i = 0; i < 5; ++i) x.push_back(random_vec3(rng, 5.0));
    const auto back = sim3_apply(invert(t), sim3_apply(t, x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT((back[i] - x[i]).norm(), 1e-9);
  }
}

TEST(Similarity, ComposeWithInverseIsIdentity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const SimilarityTransform t = random_similarity(rng);
    for (const auto& id : {compose(t, invert(t)), compose(invert(t), t)}) {
      EXPECT_NEAR(id.scale, 1.0, 1e-9);
      EXPECT_LT((id.rotation - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT(id.translation.cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Similarity, ComposeAppliesRightFirst) {
  std::mt19937_64 rng(10);
  const SimilarityTransform a = random_similarity(rng);
  const SimilarityTransform b = random_similarity(rng);
  const Vec3 x = random_vec3(rng);
  EXPECT_LT((compose(a, b).apply(x) - a.apply(b.apply(x))).norm(), 1e-12);
}

TEST(Similarity, TransformPoseKeepsProjections) {
  std::mt19937_64 rng(13);
  const SimilarityTransform s = random_similarity(rng);
  CameraPose pose{random_rotation(rng), Vec3(0.1, 0.2, 8.0)};
  const Vec3 x = random_vec3(rng);
  const Vec2 before = project(pose, x);
  const Vec2 after = project(transform_pose(pose, s), s.apply(x));
  EXPECT_LT((before - after).norm(), 1e-12);
}

TEST(Rotation, NearestRotationProjects) {
  std::mt19937_64 rng(14);
  const Mat3 r = random_rotation(rng);
  const Mat3 noisy = r + 1e-3 * Mat3::Random();
  const Mat3 fixed = nearest_rotation(noisy);
  EXPECT_LT((fixed.transpose() * fixed - Mat3::Identity()).norm(), 1e-12);
  EXPECT_NEAR(fixed.determinant(), 1.0, 1e-12);
  EXPECT_LT((fixed - r).norm(), 1e-2);
}

TEST(SceneMap, ValidateRejectsDanglingAndDuplicates) {
  SceneMap m;
  m.cameras.push_back(CameraPose{});
  m.points.push_back({Vec3(0, 0, 2), 1});
  m.observations.push_back({0, 0, Vec2::Zero()});
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.find_point(1), 0);
  EXPECT_EQ(m.find_point(2), -1);
  SceneMap dangling = m;
  dangling.observations.push_back({1, 0, Vec2::Zero()});
  EXPECT_THROW(dangling.validate(), Error);
  SceneMap dup = m;
  dup.points.push_back({Vec3(0, 1, 2), 1});
  EXPECT_THROW(dup.validate(), Error);
}

}  // namespace
}  // namespace mapfuse
