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

#include <vector>

#include <Eigen/Core>

#include "rngpe/kernel.hpp"
#include "rngpe/robust.hpp"

namespace rngpe {

/// Degrees of freedom of the leverage cutoff.
enum class NuRule {
  NonConstantColumns,  ///< columns of H that vary across rows (2p for the quadratic basis)
  AllColumns,          ///< every entry of a basis row (2p + 1)
};

struct ShgmConfig {
  HuberConfig huber;
  double tol = 1e-6;
  int max_iter = 50;
  /// Re-estimate s from the current residuals at every iteration instead of
  /// freezing the value computed from the initial fit.
  bool recompute_scale = true;
  NuRule nu_rule = NuRule::NonConstantColumns;

  void validate() const;
};

/// s = 1.4826 (1 + 5 / (n - q)) median(|r_i|).
double robust_scale(const Eigen::Ref<const Eigen::VectorXd>& residuals, Eigen::Index q);

/// Projection statistics and SHGM weights of the non-constant columns of H.
LeverageDiagnostics leverage_diagnostics(const Eigen::Ref<const Eigen::MatrixXd>& H,
                                         NuRule rule = NuRule::NonConstantColumns);

/// Unit weights and zero PS: what the classical estimator sees.
LeverageDiagnostics unit_leverage(Eigen::Index n);

struct IrlsStep {
  int iteration = 0;
  double scale = 0.0;
  double step = 0.0;           ///< relative infinity-norm change of beta
  double downweighted = 0.0;   ///< fraction of rows with q < 1
};

struct RobustFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd weights;           ///< leverage weights w_i
  Eigen::VectorXd ps;
  Eigen::VectorXd residuals;         ///< y - H beta
  Eigen::VectorXd residual_weights;  ///< q(r_i / (w_i s)) at the returned beta
  double scale = 0.0;
  double cutoff = 0.0;
  int iterations = 0;
  bool converged = false;
  bool exact_fit = false;
  std::vector<IrlsStep> trace;

  /// q_i * w_i, the total influence weight of each row.
  Eigen::VectorXd combined_weights() const { return residual_weights.cwiseProduct(weights); }
};

/// (H' S^-1 H)^-1 H' S^-1 y through the shared factor.
Eigen::VectorXd gls_solve(const Eigen::Ref<const Eigen::MatrixXd>& H,
                          const Eigen::Ref<const Eigen::VectorXd>& y,
                          const CovarianceFactor& factor);

/// Schweppe-type GM estimate of beta by IRLS:
/// beta <- (H' Q S^-1 H)^-1 H' Q S^-1 y with Q = diag(q(r_i / (w_i s))).
RobustFit irls_solve(const Eigen::Ref<const Eigen::MatrixXd>& H,
                     const Eigen::Ref<const Eigen::VectorXd>& y,
                     const CovarianceFactor& factor,
                     const LeverageDiagnostics& leverage,
                     const ShgmConfig& cfg = {});

/// H' Q S^-1 r at the fit's beta, Q recomputed from the fit's residuals and scale.
/// Vanishes at an IRLS fixed point; with S = I it is the Huber estimating equation.
Eigen::VectorXd estimating_equation(const Eigen::Ref<const Eigen::MatrixXd>& H,
                                    const RobustFit& fit,
                                    const CovarianceFactor& factor,
                                    const HuberConfig& huber);

}  // namespace rngpe
