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

#include "rngpe/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>

namespace rngpe {

EmulatorModel train(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const TrainConfig& cfg) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (p < 1) throw InvalidArgument("train: inputs have no columns");
  if (y.size() != n) throw InvalidArgument("train: X has " + std::to_string(n) + " rows but y has " +
                                           std::to_string(y.size()));
  const Eigen::Index q = basis_size(p);
  if (n <= q) {
    throw InvalidArgument("train: need at least " + std::to_string(q + 1) + " training rows for " +
                          std::to_string(p) + " inputs, got " + std::to_string(n));
  }
  if (!X.allFinite() || !y.allFinite()) throw InvalidArgument("train: non-finite training data");

  EmulatorModel model;
  model.robust = cfg.robust;
  model.standardizer = cfg.standardizer ? *cfg.standardizer : Standardizer::fit(X);
  model.inputs = model.standardizer.apply(X);

  AlternateFitConfig afc;
  afc.robust = cfg.robust;
  afc.shgm = cfg.shgm;
  afc.optimizer = cfg.optimizer;
  afc.outer_max = cfg.outer_max;

  if (cfg.fixed_params) {
    const KernelParams& params = *cfg.fixed_params;
    params.validate(p);
    const Eigen::MatrixXd H = quadratic_basis(model.inputs);
    ShgmConfig shgm = cfg.shgm;
    LeverageDiagnostics leverage;
    if (cfg.robust) {
      leverage = leverage_diagnostics(H, shgm.nu_rule);
    } else {
      shgm.huber.c = std::numeric_limits<double>::infinity();
      leverage = unit_leverage(n);
    }
    CovarianceFactor factor;
    try {
      factor = factorize(assemble_covariance(model.inputs, params), params.nugget_floor());
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("train (covariance): ") + e.what());
    }
    model.diagnostics = irls_solve(H, y, factor, leverage, shgm);
    model.params = params;
  } else {
    AlternateFitResult res;
    try {
      res = alternate_fit(model.inputs, y, afc);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("train (alternating fit): ") + e.what());
    }
    model.diagnostics = std::move(res.fit);
    model.params = res.params;
    model.nll_trace = std::move(res.nll_trace);
  }

  model.beta = model.diagnostics.beta;
  const Eigen::MatrixXd H = quadratic_basis(model.inputs);
  try {
    model.factor = factorize(assemble_covariance(model.inputs, model.params), model.params.nugget_floor());
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("train (final factorization): ") + e.what());
  }
  const Eigen::VectorXd r = y - H * model.beta;
  model.alpha = model.factor.solve(r);
  model.nll = 0.5 * r.dot(model.alpha) + 0.5 * model.factor.log_det +
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return model;
}

Prediction predict(const EmulatorModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star) {
  if (x_star.size() != model.input_dim()) {
    throw InvalidArgument("predict: expected " + std::to_string(model.input_dim()) + " inputs, got " +
                          std::to_string(x_star.size()));
  }
  if (!x_star.allFinite()) throw InvalidArgument("predict: non-finite input");
  const Eigen::VectorXd z = model.standardizer.apply_row(x_star);
  const Eigen::Index n = model.training_size();
  const Eigen::VectorXd inv_l = model.params.lengthscales.cwiseInverse();
  const Eigen::VectorXd zs = z.cwiseProduct(inv_l);

  Eigen::VectorXd c(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i) = model.params.variance() *
           std::exp(-(model.inputs.row(i).transpose().cwiseProduct(inv_l) - zs).squaredNorm());
  }
  Prediction out;
  out.mean = quadratic_basis_row(z).dot(model.beta) + c.dot(model.alpha);
  const Eigen::VectorXd v = model.factor.half_solve(c);
  const double prior = model.prior_variance();
  double var = prior - v.squaredNorm();
  if (var < 0.0) {
    out.clamped = true;
    var = 0.0;
  }
  out.variance = std::min(var, prior);
  return out;
}

std::vector<Prediction> predict_batch(const EmulatorModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X_star,
                                      int threads) {
  if (X_star.rows() > 0 && X_star.cols() != model.input_dim()) {
    throw InvalidArgument("predict_batch: expected " + std::to_string(model.input_dim()) + " input columns, got " +
                          std::to_string(X_star.cols()));
  }
  const auto m = static_cast<std::size_t>(X_star.rows());
  std::vector<Prediction> out(m);
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = predict(model, X_star.row(static_cast<Eigen::Index>(i)).transpose());
  };
  if (threads <= 1 || m < 2) {
    run(0, m);
    return out;
  }
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), m);
  std::vector<std::future<void>> jobs;
  for (std::size_t t = 0; t < chunks; ++t) {
    jobs.push_back(std::async(std::launch::async, run, t * m / chunks, (t + 1) * m / chunks));
  }
  for (auto& j : jobs) j.get();
  return out;
}

EvaluationReport score(const std::vector<Prediction>& predictions, const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (predictions.empty() || y.size() == 0) throw InvalidArgument("evaluate: empty test set");
  if (static_cast<Eigen::Index>(predictions.size()) != y.size()) {
    throw InvalidArgument("evaluate: prediction and target counts differ");
  }
  if (!y.allFinite()) throw InvalidArgument("evaluate: non-finite targets");
  EvaluationReport rep;
  rep.count = predictions.size();
  double se = 0.0, ae = 0.0;
  std::size_t covered = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = y(static_cast<Eigen::Index>(i)) - predictions[i].mean;
    se += e * e;
    ae += std::abs(e);
    if (std::abs(e) <= 1.96 * std::sqrt(predictions[i].variance)) ++covered;
  }
  const auto n = static_cast<double>(predictions.size());
  rep.rmse = std::sqrt(se / n);
  rep.mean_abs_err = ae / n;
  rep.coverage_95 = static_cast<double>(covered) / n;
  return rep;
}

EvaluationReport evaluate(const EmulatorModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X_test,
                          const Eigen::Ref<const Eigen::VectorXd>& y_test) {
  if (X_test.rows() == 0) throw InvalidArgument("evaluate: empty test set");
  if (X_test.rows() != y_test.size()) throw InvalidArgument("evaluate: X_test and y_test row counts differ");
  return score(predict_batch(model, X_test), y_test);
}

}  // namespace rngpe
