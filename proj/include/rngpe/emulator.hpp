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

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rngpe/hyperopt.hpp"
#include "rngpe/kernel.hpp"
#include "rngpe/shgm.hpp"

namespace rngpe {

struct TrainConfig {
  bool robust = true;
  ShgmConfig shgm;
  OptimizerConfig optimizer;
  int outer_max = 5;
  /// Skip hyperparameter estimation and fit beta under these parameters.
  std::optional<KernelParams> fixed_params;
  /// Input transform to use instead of the median / MAD fit on the training inputs.
  std::optional<Standardizer> standardizer;
};

/// A trained emulator. Immutable after training; safe to share for prediction.
struct EmulatorModel {
  Standardizer standardizer;
  Eigen::VectorXd beta;
  KernelParams params;
  Eigen::MatrixXd inputs;  ///< standardized training inputs
  CovarianceFactor factor;
  Eigen::VectorXd alpha;   ///< S^-1 (y - H beta)
  bool robust = true;
  RobustFit diagnostics;
  double nll = 0.0;
  std::vector<double> nll_trace;

  Eigen::Index input_dim() const { return inputs.cols(); }
  Eigen::Index training_size() const { return inputs.rows(); }
  /// Prior predictive variance V(x*) = tau^2 + nugget.
  double prior_variance() const { return params.variance() + params.nugget; }
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
  bool clamped = false;  ///< variance was slightly negative and set to zero
};

EmulatorModel train(const Eigen::Ref<const Eigen::MatrixXd>& X, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const TrainConfig& cfg = {});

Prediction predict(const EmulatorModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star);

/// Row-by-row predict(); results are bitwise identical to pointwise calls.
std::vector<Prediction> predict_batch(const EmulatorModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X_star,
                                      int threads = 1);

struct EvaluationReport {
  double rmse = 0.0;
  double mean_abs_err = 0.0;
  double coverage_95 = 0.0;
  std::size_t count = 0;
};

/// Scores predictions against targets; coverage counts |y - mean| <= 1.96 sd.
EvaluationReport score(const std::vector<Prediction>& predictions, const Eigen::Ref<const Eigen::VectorXd>& y);

EvaluationReport evaluate(const EmulatorModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X_test,
                          const Eigen::Ref<const Eigen::VectorXd>& y_test);

/// Model files are JSON with a format tag and major.minor version; doubles are
/// written as shortest round-trip decimals so reload is bit-exact.
inline constexpr int kModelFormatMajor = 1;
inline constexpr int kModelFormatMinor = 0;

std::string serialize_model(const EmulatorModel& model);
EmulatorModel deserialize_model(const std::string& text);
void save_model(const EmulatorModel& model, const std::string& path);
EmulatorModel load_model(const std::string& path);

}  // namespace rngpe
