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

#include "rngpe/hyperopt.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>

#include "rngpe/random.hpp"

namespace rngpe {

namespace {

void check_dims(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                const Eigen::Ref<const Eigen::MatrixXd>& H, const Eigen::Ref<const Eigen::VectorXd>& beta) {
  if (X.rows() != y.size() || H.rows() != y.size() || H.cols() != beta.size()) {
    throw InvalidArgument("negative_log_likelihood: inconsistent dimensions");
  }
}

// sum_ij M_ij (x_ik - x_jk)^2 for every column k, M symmetric.
Eigen::VectorXd weighted_square_gaps(const Eigen::MatrixXd& M, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  const Eigen::VectorXd rowsum = M.rowwise().sum();
  const Eigen::MatrixXd MX = M * X;
  return 2.0 * (X.array().square().matrix().transpose() * rowsum) -
         2.0 * (X.array() * MX.array()).colwise().sum().matrix().transpose();
}

}  // namespace

LikelihoodEvaluation negative_log_likelihood(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                             const Eigen::Ref<const Eigen::VectorXd>& y,
                                             const Eigen::Ref<const Eigen::MatrixXd>& H,
                                             const Eigen::Ref<const Eigen::VectorXd>& beta,
                                             const KernelParams& params) {
  check_dims(X, y, H, beta);
  params.validate(X.cols());
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd R = correlation_matrix(X, params.lengthscales);
  Eigen::MatrixXd sigma = params.variance() * R;
  sigma.diagonal().array() += params.nugget;
  const CovarianceFactor factor = factorize(sigma, params.nugget_floor());

  const Eigen::VectorXd r = y - H * beta;
  const Eigen::VectorXd alpha = factor.solve(r);

  LikelihoodEvaluation out;
  out.nll = 0.5 * r.dot(alpha) + 0.5 * factor.log_det + 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // d nll / d theta = 1/2 trace((S^-1 - alpha alpha') dS/dtheta)
  Eigen::MatrixXd W = factor.inverse();
  W.noalias() -= alpha * alpha.transpose();
  const Eigen::MatrixXd WR = W.cwiseProduct(R);
  out.grad_nugget = 0.5 * W.trace();
  out.grad_amplitude = params.amplitude * WR.sum();
  const Eigen::VectorXd gaps = weighted_square_gaps(WR, X);
  out.grad_lengthscales = params.variance() * gaps.cwiseQuotient(params.lengthscales.array().cube().matrix());
  return out;
}

LogDetGradient log_det_gradient(const Eigen::Ref<const Eigen::MatrixXd>& X, const KernelParams& params) {
  params.validate(X.cols());
  const Eigen::MatrixXd R = correlation_matrix(X, params.lengthscales);
  Eigen::MatrixXd sigma = params.variance() * R;
  sigma.diagonal().array() += params.nugget;
  const CovarianceFactor factor = factorize(sigma, params.nugget_floor());
  const Eigen::MatrixXd Sinv = factor.inverse();
  const Eigen::MatrixXd SR = Sinv.cwiseProduct(R);

  LogDetGradient out;
  out.nugget = Sinv.trace();
  out.amplitude = 2.0 * params.amplitude * SR.sum();
  const Eigen::VectorXd gaps = weighted_square_gaps(SR, X);
  out.lengthscales = 2.0 * params.variance() * gaps.cwiseQuotient(params.lengthscales.array().cube().matrix());
  return out;
}

Eigen::MatrixXd covariance_lengthscale_derivative(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                                  const KernelParams& params, Eigen::Index k) {
  params.validate(X.cols());
  if (k < 0 || k >= X.cols()) throw InvalidArgument("covariance_lengthscale_derivative: index out of range");
  const Eigen::MatrixXd R = correlation_matrix(X, params.lengthscales);
  const double l = params.lengthscales(k);
  Eigen::MatrixXd D(X.rows(), X.rows());
  for (Eigen::Index j = 0; j < X.rows(); ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double g = X(i, k) - X(j, k);
      D(i, j) = 2.0 * g * g / (l * l * l) * params.variance() * R(i, j);
    }
  }
  return D;
}

HyperparameterBounds default_bounds(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                    const Eigen::Ref<const Eigen::VectorXd>& residuals) {
  const Eigen::Index p = X.cols();
  HyperparameterBounds b;
  b.lower.resize(p + 2);
  b.upper.resize(p + 2);
  const Standardizer spread = Standardizer::fit(X);
  for (Eigen::Index k = 0; k < p; ++k) {
    b.lower(k) = 1e-2 * spread.scale(k);
    b.upper(k) = 1e2 * spread.scale(k);
  }
  double rms = residuals.size() > 0 ? std::sqrt(residuals.squaredNorm() / static_cast<double>(residuals.size())) : 0.0;
  if (!(rms > 0.0)) rms = 1.0;
  b.lower(p) = 1e-4 * rms;
  b.upper(p) = 1e2 * rms;
  b.lower(p + 1) = 1e-6 * rms * rms;
  b.upper(p + 1) = 1e2 * rms * rms;
  return b;
}

void OptimizerConfig::validate() const {
  if (max_evals < 1) throw InvalidArgument("OptimizerConfig: max_evals must be >= 1");
  if (!(grad_tol > 0.0)) throw InvalidArgument("OptimizerConfig: grad_tol must be positive");
  if (restarts < 1) throw InvalidArgument("OptimizerConfig: restarts must be >= 1");
  if (bounds) {
    if (bounds->lower.size() != bounds->upper.size()) throw InvalidArgument("OptimizerConfig: bound size mismatch");
    if (!(bounds->lower.array() > 0.0).all() || !(bounds->upper.array() >= bounds->lower.array()).all()) {
      throw InvalidArgument("OptimizerConfig: bounds must be positive intervals");
    }
  }
}

namespace {

struct Objective {
  const Eigen::Ref<const Eigen::MatrixXd>& X;
  const Eigen::Ref<const Eigen::VectorXd>& y;
  const Eigen::Ref<const Eigen::MatrixXd>& H;
  const Eigen::Ref<const Eigen::VectorXd>& beta;
  int evals = 0;

  static KernelParams unpack(const Eigen::VectorXd& z) {
    const Eigen::Index p = z.size() - 2;
    KernelParams k;
    k.lengthscales = z.head(p).array().exp().matrix();
    k.amplitude = std::exp(z(p));
    k.nugget = std::exp(z(p + 1));
    return k;
  }

  // Value and gradient in log space; false when Sigma cannot be factorized.
  bool operator()(const Eigen::VectorXd& z, double& f, Eigen::VectorXd& g) {
    ++evals;
    const KernelParams k = unpack(z);
    try {
      const LikelihoodEvaluation e = negative_log_likelihood(X, y, H, beta, k);
      if (!std::isfinite(e.nll)) return false;
      const Eigen::Index p = z.size() - 2;
      f = e.nll;
      g.resize(z.size());
      g.head(p) = e.grad_lengthscales.cwiseProduct(k.lengthscales);
      g(p) = e.grad_amplitude * k.amplitude;
      g(p + 1) = e.grad_nugget * k.nugget;
      return g.allFinite();
    } catch (const NumericalError&) {
      return false;
    }
  }
};

struct RestartOutcome {
  bool ok = false;
  Eigen::VectorXd z;
  double f = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool converged = false;
};

RestartOutcome run_restart(Objective obj, const Eigen::VectorXd& z0, const Eigen::VectorXd& lo,
                           const Eigen::VectorXd& hi, const OptimizerConfig& cfg) {
  const Eigen::Index m = z0.size();
  auto project = [&](const Eigen::VectorXd& z) { return z.cwiseMax(lo).cwiseMin(hi).eval(); };

  RestartOutcome out;
  Eigen::VectorXd z = project(z0);
  Eigen::VectorXd g;
  double f = 0.0;
  if (!obj(z, f, g)) {
    out.evals = obj.evals;
    return out;
  }
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(m, m);
  bool fresh = true;
  int stalls = 0;

  while (obj.evals < cfg.max_evals) {
    const Eigen::VectorXd pg = project(z - g) - z;
    if (pg.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      out.converged = true;
      break;
    }
    std::vector<bool> active(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
      active[static_cast<std::size_t>(i)] = (z(i) <= lo(i) && g(i) > 0.0) || (z(i) >= hi(i) && g(i) < 0.0);
    }
    Eigen::VectorXd gf = g;
    for (Eigen::Index i = 0; i < m; ++i) if (active[static_cast<std::size_t>(i)]) gf(i) = 0.0;
    Eigen::VectorXd d = -(Hinv * gf);
    for (Eigen::Index i = 0; i < m; ++i) if (active[static_cast<std::size_t>(i)]) d(i) = 0.0;
    if (!(g.dot(d) < 0.0)) {
      Hinv.setIdentity();
      fresh = true;
      d = -gf;
    }
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (fresh && dmax > 1.0) d *= 1.0 / dmax;

    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd z_new, g_new;
    double f_new = 0.0;
    while (obj.evals < cfg.max_evals) {
      z_new = project(z + t * d);
      if ((z_new - z).lpNorm<Eigen::Infinity>() < 1e-14) break;
      if (obj(z_new, f_new, g_new) && f_new <= f + 1e-4 * g.dot(z_new - z)) {
        accepted = true;
        break;
      }
      t *= 0.5;
      if (t < 1e-10) break;
    }
    if (!accepted) {
      if (fresh) break;
      Hinv.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = z_new - z;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd V = Eigen::MatrixXd::Identity(m, m) - rho * yv * s.transpose();
      Hinv = V.transpose() * Hinv * V + rho * s * s.transpose();
      fresh = false;
    }
    stalls = (f - f_new <= 1e-12 * (1.0 + std::abs(f))) ? stalls + 1 : 0;
    z = z_new;
    f = f_new;
    g = g_new;
    if (stalls >= 3) break;
  }
  out.ok = true;
  out.z = z;
  out.f = f;
  out.evals = obj.evals;
  return out;
}

}  // namespace

OptimizationResult optimize_hyperparameters(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                            const Eigen::Ref<const Eigen::VectorXd>& y,
                                            const Eigen::Ref<const Eigen::MatrixXd>& H,
                                            const Eigen::Ref<const Eigen::VectorXd>& beta,
                                            const OptimizerConfig& cfg,
                                            const KernelParams* start) {
  cfg.validate();
  check_dims(X, y, H, beta);
  const Eigen::Index p = X.cols();
  const HyperparameterBounds bounds = cfg.bounds ? *cfg.bounds : default_bounds(X, y - H * beta);
  if (bounds.lower.size() != p + 2) throw InvalidArgument("optimize_hyperparameters: bounds have wrong size");
  const Eigen::VectorXd lo = bounds.lower.array().log().matrix();
  const Eigen::VectorXd hi = bounds.upper.array().log().matrix();

  std::vector<Eigen::VectorXd> starts;
  if (start) {
    start->validate(p);
    Eigen::VectorXd z(p + 2);
    z.head(p) = start->lengthscales.array().log().matrix();
    z(p) = std::log(start->amplitude);
    z(p + 1) = std::log(std::max(start->nugget, bounds.lower(p + 1)));
    starts.push_back(z);
  } else {
    starts.push_back(0.5 * (lo + hi));
  }
  Rng rng(cfg.seed);
  while (static_cast<int>(starts.size()) < cfg.restarts) {
    Eigen::VectorXd z(p + 2);
    for (Eigen::Index i = 0; i < p + 2; ++i) {
      const double w = hi(i) - lo(i);
      z(i) = rng.uniform(lo(i) + 0.25 * w, hi(i) - 0.25 * w);
    }
    starts.push_back(z);
  }

  std::vector<RestartOutcome> outcomes(starts.size());
  auto job = [&](std::size_t r) { return run_restart(Objective{X, y, H, beta}, starts[r], lo, hi, cfg); };
  if (cfg.threads > 1 && starts.size() > 1) {
    std::vector<std::future<RestartOutcome>> futures;
    for (std::size_t r = 0; r < starts.size(); ++r) futures.push_back(std::async(std::launch::async, job, r));
    for (std::size_t r = 0; r < starts.size(); ++r) outcomes[r] = futures[r].get();
  } else {
    for (std::size_t r = 0; r < starts.size(); ++r) outcomes[r] = job(r);
  }

  OptimizationResult result;
  int best = -1;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    result.evaluations += outcomes[r].evals;
    if (outcomes[r].ok && (best < 0 || outcomes[r].f < outcomes[static_cast<std::size_t>(best)].f)) {
      best = static_cast<int>(r);
    }
  }
  if (best < 0) throw NumericalError("optimize_hyperparameters: every restart failed to factorize the covariance");
  const RestartOutcome& win = outcomes[static_cast<std::size_t>(best)];
  result.params = Objective::unpack(win.z);
  result.nll = win.f;
  result.converged = win.converged;
  result.best_restart = best;
  return result;
}

KernelParams initial_params(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y) {
  KernelParams k;
  // Typical squared scaled distance ~2 between points regardless of dimension.
  k.lengthscales = Standardizer::fit(X).scale * std::sqrt(static_cast<double>(X.cols()));
  double var = 0.0;
  if (y.size() > 1) var = (y.array() - y.mean()).square().sum() / static_cast<double>(y.size() - 1);
  if (!(var > 0.0)) var = 1.0;
  k.amplitude = std::sqrt(var);
  k.nugget = 1e-4 * var;
  return k;
}

AlternateFitResult alternate_fit(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                 const Eigen::Ref<const Eigen::VectorXd>& y,
                                 const AlternateFitConfig& cfg,
                                 const KernelParams* start) {
  if (cfg.outer_max < 1) throw InvalidArgument("alternate_fit: outer_max must be >= 1");
  if (X.rows() != y.size()) throw InvalidArgument("alternate_fit: X and y row counts differ");
  const Eigen::MatrixXd H = quadratic_basis(X);
  if (H.rows() <= H.cols()) {
    throw InvalidArgument("alternate_fit: need at least " + std::to_string(H.cols() + 1) + " rows, got " +
                          std::to_string(H.rows()));
  }
  ShgmConfig shgm = cfg.shgm;
  LeverageDiagnostics leverage;
  if (cfg.robust) {
    leverage = leverage_diagnostics(H, shgm.nu_rule);
  } else {
    shgm.huber.c = std::numeric_limits<double>::infinity();
    leverage = unit_leverage(H.rows());
  }

  KernelParams params = start ? *start : initial_params(X, y);
  AlternateFitResult best;
  bool have_best = false;
  for (int round = 1; round <= cfg.outer_max; ++round) {
    const CovarianceFactor factor = factorize(assemble_covariance(X, params), params.nugget_floor());
    RobustFit fit = irls_solve(H, y, factor, leverage, shgm);
    const OptimizationResult opt = optimize_hyperparameters(X, y, H, fit.beta, cfg.optimizer, &params);
    if (have_best && opt.nll > best.nll + 1e-8 * std::max(1.0, std::abs(best.nll))) break;
    const double improvement = have_best ? best.nll - opt.nll : std::numeric_limits<double>::infinity();
    best.fit = std::move(fit);
    best.params = opt.params;
    best.nll = opt.nll;
    best.nll_trace.push_back(opt.nll);
    best.rounds = round;
    have_best = true;
    if (improvement < cfg.rel_tol * std::abs(opt.nll)) break;
    params = opt.params;
  }
  return best;
}

}  // namespace rngpe
