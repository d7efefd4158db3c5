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

#include "rngpe/shgm.hpp"

#include <Eigen/LU>
#include <sstream>

namespace rngpe {

void ShgmConfig::validate() const {
  huber.validate();
  if (!(tol > 0.0)) throw InvalidArgument("ShgmConfig: tol must be positive");
  if (max_iter < 1) throw InvalidArgument("ShgmConfig: max_iter must be >= 1");
}

double robust_scale(const Eigen::Ref<const Eigen::VectorXd>& residuals, Eigen::Index q) {
  const Eigen::Index n = residuals.size();
  if (n <= q) {
    throw InvalidArgument("robust_scale: need more residuals (" + std::to_string(n) + ") than parameters (" +
                          std::to_string(q) + ")");
  }
  const double correction = 1.0 + 5.0 / static_cast<double>(n - q);
  return kMadConsistency * correction * median(residuals.cwiseAbs());
}

LeverageDiagnostics leverage_diagnostics(const Eigen::Ref<const Eigen::MatrixXd>& H, NuRule rule) {
  std::vector<Eigen::Index> varying;
  for (Eigen::Index k = 0; k < H.cols(); ++k) {
    if ((H.col(k).array() != H(0, k)).any()) varying.push_back(k);
  }
  const int nu = rule == NuRule::AllColumns ? static_cast<int>(H.cols()) : static_cast<int>(varying.size());
  if (varying.empty()) {
    return shgm_weights(Eigen::VectorXd::Zero(H.rows()), std::max(nu, 1));
  }
  Eigen::MatrixXd cloud(H.rows(), static_cast<Eigen::Index>(varying.size()));
  for (std::size_t j = 0; j < varying.size(); ++j) cloud.col(static_cast<Eigen::Index>(j)) = H.col(varying[j]);
  return shgm_weights(projection_statistics(cloud), nu);
}

LeverageDiagnostics unit_leverage(Eigen::Index n) {
  LeverageDiagnostics out;
  out.ps = Eigen::VectorXd::Zero(n);
  out.weights = Eigen::VectorXd::Ones(n);
  out.cutoff = 0.0;
  out.nu = 0;
  return out;
}

namespace {

Eigen::VectorXd solve_checked(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const char* what) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  const double rcond = lu.rcond();
  if (!(rcond > 1e-15)) {
    std::ostringstream msg;
    msg << what << ": normal matrix is singular (condition estimate " << (rcond > 0.0 ? 1.0 / rcond : INFINITY)
        << ")";
    throw NumericalError(msg.str());
  }
  return lu.solve(b);
}

Eigen::VectorXd q_values(const Eigen::VectorXd& residuals, const Eigen::VectorXd& w, double s,
                         const HuberConfig& huber) {
  Eigen::VectorXd q(residuals.size());
  for (Eigen::Index i = 0; i < residuals.size(); ++i) q(i) = huber_q(residuals(i) / (w(i) * s), huber);
  return q;
}

}  // namespace

Eigen::VectorXd gls_solve(const Eigen::Ref<const Eigen::MatrixXd>& H,
                          const Eigen::Ref<const Eigen::VectorXd>& y,
                          const CovarianceFactor& factor) {
  if (H.rows() != y.size() || factor.size() != y.size()) throw InvalidArgument("gls_solve: dimension mismatch");
  const Eigen::MatrixXd SinvH = factor.solve(H);
  const Eigen::MatrixXd A = H.transpose() * SinvH;
  const Eigen::VectorXd b = SinvH.transpose() * y;
  return solve_checked(A, b, "gls_solve");
}

RobustFit irls_solve(const Eigen::Ref<const Eigen::MatrixXd>& H,
                     const Eigen::Ref<const Eigen::VectorXd>& y,
                     const CovarianceFactor& factor,
                     const LeverageDiagnostics& leverage,
                     const ShgmConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = H.rows();
  const Eigen::Index q = H.cols();
  if (n <= q) {
    throw InvalidArgument("irls_solve: need more rows (" + std::to_string(n) + ") than basis columns (" +
                          std::to_string(q) + ")");
  }
  if (y.size() != n || factor.size() != n || leverage.weights.size() != n) {
    throw InvalidArgument("irls_solve: dimension mismatch between H, y, factor and leverage weights");
  }
  if (!H.allFinite() || !y.allFinite()) throw InvalidArgument("irls_solve: non-finite data");
  const Eigen::VectorXd& w = leverage.weights;
  if (!(w.array() > 0.0).all()) throw InvalidArgument("irls_solve: leverage weights must be positive");

  RobustFit fit;
  fit.weights = w;
  fit.ps = leverage.ps;
  fit.cutoff = leverage.cutoff;

  const Eigen::MatrixXd SinvH = factor.solve(H);
  const Eigen::VectorXd Sinvy = factor.solve(y);

  // Start from GLS on leverage-weighted rows.
  {
    const Eigen::MatrixXd WH = w.asDiagonal() * H;
    const Eigen::MatrixXd SinvWH = factor.solve(WH);
    const Eigen::VectorXd Wy = w.cwiseProduct(y);
    fit.beta = solve_checked(WH.transpose() * SinvWH, SinvWH.transpose() * Wy, "irls_solve (initial fit)");
  }
  fit.residuals = y - H * fit.beta;

  auto scale_of = [&](const Eigen::VectorXd& r) {
    double s = robust_scale(r, q);
    if (s == 0.0 && (r.array() != 0.0).any()) {
      // More than half the rows interpolated exactly; fall back to the mean deviation.
      s = kMadConsistency * (1.0 + 5.0 / static_cast<double>(n - q)) * r.cwiseAbs().mean();
    }
    return s;
  };

  fit.scale = scale_of(fit.residuals);
  if (fit.scale == 0.0) {
    fit.exact_fit = true;
    fit.converged = true;
    fit.residual_weights = Eigen::VectorXd::Ones(n);
    return fit;
  }

  Eigen::MatrixXd A(q, q);
  Eigen::VectorXd b(q);
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const Eigen::VectorXd qv = q_values(fit.residuals, w, fit.scale, cfg.huber);
    A.noalias() = H.transpose() * qv.asDiagonal() * SinvH;
    b.noalias() = H.transpose() * qv.cwiseProduct(Sinvy);
    const Eigen::VectorXd next = solve_checked(A, b, "irls_solve");
    const double step =
        (next - fit.beta).lpNorm<Eigen::Infinity>() / std::max(1.0, fit.beta.lpNorm<Eigen::Infinity>());
    fit.beta = next;
    fit.residuals = y - H * fit.beta;
    if (cfg.recompute_scale) {
      const double s = scale_of(fit.residuals);
      if (s == 0.0) {
        fit.exact_fit = true;
        fit.converged = true;
        fit.iterations = it;
        fit.residual_weights = Eigen::VectorXd::Ones(n);
        return fit;
      }
      fit.scale = s;
    }
    fit.iterations = it;
    fit.trace.push_back({it, fit.scale, step, (qv.array() < 1.0).cast<double>().mean()});
    if (step < cfg.tol) {
      fit.converged = true;
      break;
    }
  }
  fit.residual_weights = q_values(fit.residuals, w, fit.scale, cfg.huber);
  return fit;
}

Eigen::VectorXd estimating_equation(const Eigen::Ref<const Eigen::MatrixXd>& H,
                                    const RobustFit& fit,
                                    const CovarianceFactor& factor,
                                    const HuberConfig& huber) {
  const Eigen::VectorXd qv = fit.exact_fit ? Eigen::VectorXd::Ones(H.rows())
                                           : q_values(fit.residuals, fit.weights, fit.scale, huber);
  return H.transpose() * qv.cwiseProduct(factor.solve(fit.residuals));
}

}  // namespace rngpe
