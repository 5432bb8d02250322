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

namespace mapfuse {

struct CompressedMap;
struct Correspondences;

/// Gamma law of a_tilde for a consistent merge: rate alpha = 1 / (2 sigma^2), shape nu.
struct GammaParams {
  double alpha = 1.0;
  double nu = 1.0;

  double mean() const { return nu / alpha; }
  double variance() const { return nu / (alpha * alpha); }
};

struct ChangeTestResult {
  double a_tilde = 0.0;
  GammaParams params;
  double p_value = 1.0;
  double threshold = 0.0;  // quantile at `level`
  double level = 0.99;
  bool rejected = false;
};

/// Mean over maps of a / sqrt(eta_res - d_dof). Throws kInvalidDof when eta_res <= d_dof.
double estimate_sigma(std::span<const CompressedMap> cmaps);

/// sum_i 3 kappa_i (i - 1) - 7 (N - 1).
long dof_delta(std::span<const int> kappa, int num_maps);
long dof_delta(const Correspondences& corr);

/// Throws kNonPositiveDof when dof_delta <= 0.
GammaParams gamma_params(double sigma, long dof_delta);

double gamma_pdf(const GammaParams& p, double x);
double gamma_cdf(const GammaParams& p, double x);
/// Inverse CDF; level >= 1 gives +inf.
double gamma_quantile(const GammaParams& p, double level);

/// Rejects strictly above the level quantile; p_value = 1 - CDF(a_tilde).
ChangeTestResult change_test(double a_tilde, const GammaParams& params, double level);

/// Kolmogorov-Smirnov sup distance between the empirical CDF of samples and the gamma CDF.
double ks_distance(std::vector<double> samples, const GammaParams& params);

}  // namespace mapfuse
