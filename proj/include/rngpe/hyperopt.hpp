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

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "rngpe/kernel.hpp"
#include "rngpe/shgm.hpp"

namespace rngpe {

struct LikelihoodEvaluation {
  double nll = 0.0;
  Eigen::VectorXd grad_lengthscales;
  double grad_amplitude = 0.0;
  double grad_nugget = 0.0;
};

/// nll = 1/2 r' S^-1 r + 1/2 log|S| + n/2 log(2 pi) with r = y - H beta, and its
/// exact gradient in (lengthscales, amplitude, nugget).
LikelihoodEvaluation negative_log_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                             const Eigen::Ref<const Eigen::VectorXd>& y,
                                             const Eigen::Ref<const Eigen::MatrixXd>& H,
                                             const Eigen::Ref<const Eigen::VectorXd>& beta,
                                             const KernelParams& params);

/// Derivatives of log|S| alone: trace(S^-1 dS/dtheta).
struct LogDetGradient {
  Eigen::VectorXd lengthscales;  ///< 2 tau^2 trace(S^-1 S_k), S_k(i,j) = (x_ik - x_jk)^2 / l_k^3 R(x_i, x_j)
  double amplitude = 0.0;        ///< 2 tau trace(S^-1 R)
  double nugget = 0.0;           ///< trace(S^-1)
};

LogDetGradient log_det_gradient(const Eigen::Ref<const Eigen::MatrixXd>& X, const KernelParams& params);

/// dS/dl_k; entries 2 (x_ik - x_jk)^2 / l_k^3 * tau^2 R(x_i, x_j).
Eigen::MatrixXd covariance_lengthscale_derivative(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                                  const KernelParams& params, Eigen::Index k);

/// Box constraints in natural units, ordered [l_1..l_p, tau, nugget].
struct HyperparameterBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Bounds scaled to the data: lengthscales within [1e-2, 1e2] of each input's
/// robust spread, tau within [1e-4, 1e2] of the residual RMS, nugget within
/// [1e-6, 1e2] of its square.
HyperparameterBounds default_bounds(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const Eigen::Ref<const Eigen::VectorXd>& residuals);

struct OptimizerConfig {
  int max_evals = 150;      ///< per restart
  double grad_tol = 1e-5;   ///< on the projected gradient in log-parameter space
  std::optional<HyperparameterBounds> bounds;
  int restarts = 4;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

struct OptimizationResult {
  KernelParams params;
  double nll = 0.0;
  int evaluations = 0;
  bool converged = false;  ///< projected gradient test met (as opposed to max_evals)
  int best_restart = 0;
};

/// Multi-start projected BFGS on log parameters. Restart 0 starts from `start`
/// (clamped into the bounds) when given, otherwise from the centre of the box.
OptimizationResult optimize_hyperparameters(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                            const Eigen::Ref<const Eigen::VectorXd>& y,
                                            const Eigen::Ref<const Eigen::MatrixXd>& H,
                                            const Eigen::Ref<const Eigen::VectorXd>& beta,
                                            const OptimizerConfig& cfg,
                                            const KernelParams* start = nullptr);

/// l_k = sqrt(p) times the robust spread of input k, tau^2 = var(y), nugget = 1e-4 tau^2.
KernelParams initial_params(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y);

struct AlternateFitConfig {
  bool robust = true;  ///< false: GLS with unit weights (c -> inf)
  ShgmConfig shgm;
  OptimizerConfig optimizer;
  int outer_max = 5;
  double rel_tol = 1e-6;
};

struct AlternateFitResult {
  RobustFit fit;
  KernelParams params;
  double nll = 0.0;
  std::vector<double> nll_trace;  ///< nll at the pair returned by each accepted round
  int rounds = 0;
};

/// Block-coordinate fit: beta given kernel parameters, then kernel parameters
/// given beta, until the nll stops improving.
AlternateFitResult alternate_fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                 const Eigen::Ref<const Eigen::VectorXd>& y,
                                 const AlternateFitConfig& cfg,
                                 const KernelParams* start = nullptr);

}  // namespace rngpe
