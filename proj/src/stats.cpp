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

#include "mapfuse/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <boost/math/distributions/gamma.hpp>

#include "mapfuse/compress.hpp"
#include "mapfuse/error.hpp"
#include "mapfuse/merge.hpp"

namespace mapfuse {

namespace {

// boost parametrizes by scale = 1 / rate
boost::math::gamma_distribution<double> to_boost(const GammaParams& p) {
  return boost::math::gamma_distribution<double>(p.nu, 1.0 / p.alpha);
}

}  // namespace

double estimate_sigma(std::span<const CompressedMap> cmaps) {
  if (cmaps.empty()) throw Error(ErrorKind::kInvalidArgument, "no footprints to estimate sigma from");
  double sum = 0.0;
  for (const auto& c : cmaps) {
    if (c.eta_res <= c.d_dof) {
      throw Error(ErrorKind::kInvalidDof, "eta_res " + std::to_string(c.eta_res) + " <= d_dof " +
                                              std::to_string(c.d_dof));
    }
    sum += c.a / std::sqrt(static_cast<double>(c.eta_res - c.d_dof));
  }
  return sum / static_cast<double>(cmaps.size());
}

long dof_delta(std::span<const int> kappa, int num_maps) {
  long locked = 0;
  for (std::size_t i = 1; i < kappa.size(); ++i) locked += 3L * kappa[i] * static_cast<long>(i - 1);
  return locked - 7L * (num_maps - 1);
}

long dof_delta(const Correspondences& corr) {
  const std::vector<int> k = corr.kappa();
  return dof_delta(k, corr.num_maps());
}

GammaParams gamma_params(double sigma, long dof) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::kInvalidArgument, "sigma must be positive");
  if (dof <= 0) {
    throw Error(ErrorKind::kNonPositiveDof, "degrees-of-freedom delta " + std::to_string(dof) +
                                                " leaves nothing to test");
  }
  return {1.0 / (2.0 * sigma * sigma), 0.5 * static_cast<double>(dof)};
}

double gamma_pdf(const GammaParams& p, double x) {
  if (x < 0.0) return 0.0;
  return boost::math::pdf(to_boost(p), x);
}

double gamma_cdf(const GammaParams& p, double x) {
  if (x <= 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  return boost::math::cdf(to_boost(p), x);
}

double gamma_quantile(const GammaParams& p, double level) {
  if (level >= 1.0) return std::numeric_limits<double>::infinity();
  if (level <= 0.0) return 0.0;
  return boost::math::quantile(to_boost(p), level);
}

ChangeTestResult change_test(double a_tilde, const GammaParams& params, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "test level must be in (0, 1]");
  ChangeTestResult out;
  out.a_tilde = a_tilde;
  out.params = params;
  out.level = level;
  out.p_value = a_tilde <= 0.0 ? 1.0 : boost::math::cdf(boost::math::complement(to_boost(params), a_tilde));
  out.threshold = gamma_quantile(params, level);
  out.rejected = a_tilde > out.threshold;
  return out;
}

double ks_distance(std::vector<double> samples, const GammaParams& params) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = gamma_cdf(params, samples[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

}  // namespace mapfuse
