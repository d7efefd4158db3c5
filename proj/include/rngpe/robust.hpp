/*
 * Copyright 2026 The rngpe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "rngpe/errors.hpp"

namespace rngpe {

/// 1 / Phi^{-1}(3/4): makes the MAD a consistent estimate of sigma at the Gaussian.
inline constexpr double kMadConsistency = 1.4826;

struct HuberConfig {
  double c = 1.5;

  void validate() const {
    if (!(c > 0.0)) throw InvalidArgument("HuberConfig: threshold c must be positive");
  }
};

namespace detail {
template <typename Scalar>
void require_finite(Scalar r, const char* what) {
  if (!std::isfinite(r)) throw InvalidArgument(std::string(what) + ": non-finite residual");
}
}  // namespace detail

// Huber family on standardized residuals. The branches are symmetric in r; the
// threshold c may be +inf, which collapses every function to its quadratic branch.

template <typename Scalar>
Scalar huber_rho(Scalar r, const HuberConfig& cfg = {}) {
  detail::require_finite(r, "huber_rho");
  const Scalar c = static_cast<Scalar>(cfg.c);
  const Scalar a = std::abs(r);
  if (a < c) return r * r / Scalar(2);
  return c * a - c * c / Scalar(2);
}

template <typename Scalar>
Scalar huber_psi(Scalar r, const HuberConfig& cfg = {}) {
  detail::require_finite(r, "huber_psi");
  const Scalar c = static_cast<Scalar>(cfg.c);
  if (std::abs(r) < c) return r;
  return r > Scalar(0) ? c : -c;
}

/// q(r) = psi(r) / r, the IRLS weight; equals 1 at the origin.
template <typename Scalar>
Scalar huber_q(Scalar r, const HuberConfig& cfg = {}) {
  detail::require_finite(r, "huber_q");
  const Scalar c = static_cast<Scalar>(cfg.c);
  const Scalar a = std::abs(r);
  if (a <= c) return Scalar(1);
  return c / a;
}

/// Sample median; even lengths average the two central order statistics.
double median(std::vector<double> values);
double median(const Eigen::Ref<const Eigen::VectorXd>& values);

struct LocationScale {
  double median = 0.0;
  double mad_scale = 0.0;  ///< 1.4826 * median(|v - median(v)|)
};

LocationScale robust_location_scale(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Projection statistics of the rows of `cloud` (m x d).
///
/// For every row h_j distinct from the coordinate-wise median M, the cloud is
/// projected on u_j = (h_j - M) / |h_j - M| and standardized by the projected
/// median and 1.4826 * MAD. PS_i is the largest absolute standardized distance
/// of row i over that direction set. Directions with zero projected MAD are
/// skipped; if all are skipped every PS is zero.
Eigen::VectorXd projection_statistics(const Eigen::Ref<const Eigen::MatrixXd>& cloud);

/// Regularized lower incomplete gamma function P(a, x).
double regularized_gamma_p(double a, double x);

/// Quantile of the chi-squared distribution with `dof` degrees of freedom.
double chi_squared_quantile(double probability, double dof);

/// Probability level of the leverage cutoff.
inline constexpr double kLeverageQuantile = 0.975;

struct LeverageDiagnostics {
  Eigen::VectorXd ps;
  double cutoff = 0.0;  ///< chi2(nu, 0.975), compared against PS^2
  Eigen::VectorXd weights;
  int nu = 0;
};

/// w_i = min(1, cutoff / PS_i^2) with cutoff = chi2(nu, 0.975).
LeverageDiagnostics shgm_weights(const Eigen::Ref<const Eigen::VectorXd>& ps, int nu);

}  // namespace rngpe
