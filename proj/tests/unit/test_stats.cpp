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

#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "mapfuse/compress.hpp"
#include "mapfuse/error.hpp"
#include "mapfuse/merge.hpp"
#include "mapfuse/stats.hpp"
#include "test_support.hpp"

namespace mapfuse {
namespace {

CompressedMap with_stats(double a, long eta, long d) {
  CompressedMap c;
  c.a = a;
  c.eta_res = eta;
  c.d_dof = d;
  return c;
}

TEST(EstimateSigma, Arithmetic) {
  const std::vector<CompressedMap> one{with_stats(2.0, 500, 100)};
  EXPECT_DOUBLE_EQ(estimate_sigma(one), 0.1);
  const std::vector<CompressedMap> two{with_stats(2.0, 500, 100), with_stats(2.0, 500, 100)};
  EXPECT_DOUBLE_EQ(estimate_sigma(two), 0.1);
  const std::vector<CompressedMap> mixed{with_stats(2.0, 500, 100), with_stats(1.0, 200, 100)};
  EXPECT_DOUBLE_EQ(estimate_sigma(mixed), 0.1);
}

TEST(EstimateSigma, InvalidDof) {
  const std::vector<CompressedMap> bad{with_stats(1.0, 100, 100)};
  try {
    estimate_sigma(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidDof);
  }
}

TEST(EstimateSigma, ConsistentOnBoxScene) {
  BoxSceneSpec s;
  s.sigma = 0.05;
  s.n_maps = 1;
  std::vector<CompressedMap> all;
  for (int seed = 1; seed <= 100; ++seed) {
    s.seed = seed;
    const SceneMap m = bundle_adjust(gen_box_scene(s).maps[0]).map;
    all.push_back(with_stats(assemble_residuals(m).norm(), 2 * static_cast<long>(m.observations.size()),
                             6 * 10 + 3 * 100 - 7));
  }
  EXPECT_NEAR(estimate_sigma(all), 0.05, 0.05 * 0.05);
}

TEST(DofDelta, Substitution) {
  EXPECT_EQ(dof_delta(std::vector<int>{0, 0, 0, 10}, 3), 46);
  EXPECT_EQ(dof_delta(std::vector<int>{0, 5}, 1), 0);
  EXPECT_EQ(dof_delta(std::vector<int>{0, 0, 3}, 2), 2);
  // Points seen once lock nothing.
  EXPECT_EQ(dof_delta(std::vector<int>{0, 7, 3}, 2), 2);
}

TEST(GammaParams, Substitution) {
  const GammaParams p = gamma_params(0.05, 46);
  EXPECT_NEAR(p.alpha, 200.0, 1e-12);
  EXPECT_DOUBLE_EQ(p.nu, 23.0);
  EXPECT_NEAR(p.mean(), 0.05 * 0.05 * 46, 1e-15);
}

TEST(GammaParams, NonPositiveDof) {
  for (long d : {0L, -3L}) {
    try {
      gamma_params(0.1, d);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kNonPositiveDof);
    }
  }
}

TEST(Gamma, ExponentialSpecialCase) {
  const GammaParams p = gamma_params(1.0, 2);
  for (double x : {0.1, 0.5, 1.0, 3.0, 10.0}) {
    EXPECT_NEAR(gamma_cdf(p, x), 1.0 - std::exp(-0.5 * x), 1e-14);
    EXPECT_NEAR(gamma_pdf(p, x), 0.5 * std::exp(-0.5 * x), 1e-14);
  }
}

TEST(Gamma, CdfMatchesQuadratureOfDensity) {
  const GammaParams p{200.0, 23.0};
  const auto density = [](double x) {
    // alpha^nu x^(nu-1) e^(-alpha x) / Gamma(nu), evaluated in logs.
    if (x <= 0.0) return 0.0;
    return std::exp(23.0 * std::log(200.0) + 22.0 * std::log(x) - 200.0 * x - std::lgamma(23.0));
  };
  for (int i = 1; i <= 20; ++i) {
    const double x = 0.012 * i;
    const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, 0.0, x, 15, 1e-14);
    EXPECT_NEAR(gamma_cdf(p, x), integral, 1e-8) << x;
  }
}

TEST(Gamma, QuantileInvertsCdf) {
  const GammaParams p{200.0, 23.0};
  for (double level : {0.01, 0.5, 0.9, 0.99, 0.999}) EXPECT_NEAR(gamma_cdf(p, gamma_quantile(p, level)), level, 1e-12);
  EXPECT_EQ(gamma_quantile(p, 1.0), std::numeric_limits<double>::infinity());
}

TEST(ChangeTest, ZeroIsAccepted) {
  const ChangeTestResult r = change_test(0.0, GammaParams{200.0, 23.0}, 0.99);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0);
  EXPECT_FALSE(r.rejected);
}

TEST(ChangeTest, BoundaryIsNotRejected) {
  const GammaParams p{200.0, 23.0};
  const double q = gamma_quantile(p, 0.99);
  EXPECT_FALSE(change_test(q, p, 0.99).rejected);
  EXPECT_TRUE(change_test(std::nextafter(q, 1.0), p, 0.99).rejected);
  const ChangeTestResult r = change_test(0.5, p, 0.99);
  EXPECT_NEAR(r.p_value, 1.0 - gamma_cdf(p, 0.5), 1e-15);
  EXPECT_DOUBLE_EQ(r.threshold, q);
  EXPECT_DOUBLE_EQ(r.level, 0.99);
}

TEST(ChangeTest, LevelOneNeverRejects) {
  EXPECT_FALSE(change_test(1e9, GammaParams{200.0, 23.0}, 1.0).rejected);
}

TEST(KsDistance, SmallForGammaSamples) {
  std::mt19937_64 rng(5);
  std::gamma_distribution<double> g(23.0, 1.0 / 200.0);
  std::vector<double> x(4000);
  for (auto& v : x) v = g(rng);
  EXPECT_LT(ks_distance(x, GammaParams{200.0, 23.0}), 0.03);
  EXPECT_GT(ks_distance(x, GammaParams{100.0, 23.0}), 0.3);
}

TEST(KsDistance, SinglePointHandComputed) {
  // One sample at the median: sup distance is 0.5.
  const GammaParams p{1.0, 1.0};
  EXPECT_NEAR(ks_distance({std::log(2.0)}, p), 0.5, 1e-12);
}

}  // namespace
}  // namespace mapfuse
