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
#include <string>
#include <vector>

#include "rngpe/dataset.hpp"
#include "rngpe/emulator.hpp"
#include "rngpe/powerflow.hpp"

namespace rngpe {

/// Major.minor version stamped on manifests, reports and summaries.
inline constexpr int kArtifactFormatMajor = 1;
inline constexpr int kArtifactFormatMinor = 0;

/// Experiment settings. The JSON form (see README) uses the field names below;
/// missing keys keep their defaults and unknown keys are rejected.
struct ExperimentConfig {
  std::string feeder = std::string(RNGPE_DATA_DIR) + "/ieee33.feeder";
  std::string res_series;      ///< CSV of per-unit RES output; empty means synthetic
  double res_step_sd = 0.02;   ///< step of the synthetic RES random walk
  std::size_t n_train = 100;
  std::size_t n_test = 60;
  int output_bus = 19;
  OutputKind output_kind = OutputKind::Magnitude;
  InputLayout layout = InputLayout::Reduced;
  double load_cv = 0.05;
  bool observed_loads_only = true;  ///< random loads only on buses that enter the inputs
  ContaminationSpec contamination{0.25, ContaminationKind::BadLeverage, 20.0, 0, {}};
  std::vector<double> sweep{0.0, 0.05, 0.10, 0.15, 0.20, 0.25};
  int replicates = 20;
  std::vector<double> weight_magnitudes{2.0, 4.0, 8.0, 16.0};
  double weight_fraction = 0.10;
  bool per_bus = true;         ///< train the per-bus models of the network-wide figure
  std::uint64_t seed = 2026;
  int restarts = 2;
  int max_evals = 150;
  int outer_max = 5;

  /// Checks ranges and that referenced files exist; loads the feeder to size the inputs.
  void validate() const;
};

ExperimentConfig parse_config(const std::string& text, const std::string& source = "config");
/// Reads a config file, or the config echoed inside a manifest.
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON of every field, as echoed into manifests and summaries.
std::string config_to_json(const ExperimentConfig& cfg);
/// Named presets; "fig5" is the default experiment.
ExperimentConfig preset(const std::string& name);

/// 64-bit FNV-1a of the canonical feeder text, as 16 hex digits.
std::string feeder_hash(const FeederModel& feeder);

struct ExperimentSeeds {
  std::uint64_t series = 0;
  std::uint64_t scenarios = 0;
  std::uint64_t contamination = 0;
  std::uint64_t optimizer = 0;
};

/// Independent streams derived from one base seed.
ExperimentSeeds derive_seeds(std::uint64_t base);

struct GeneratedData {
  Dataset train;
  Dataset test;
};

/// n_train + n_test consecutive scenarios solved through the power flow;
/// the first n_train rows train, the rest test.
GeneratedData generate_data(const ExperimentConfig& cfg, const FeederModel& feeder, std::uint64_t seed,
                            int output_bus, OutputKind kind, int threads = 1);

TrainConfig make_train_config(const ExperimentConfig& cfg, bool robust, std::uint64_t seed, int threads = 1);

/// JSON with per-point weight, PS, residual and the IRLS trace of a trained model.
std::string diagnostics_json(const EmulatorModel& model, const std::vector<long>& t);

struct ModelScore {
  std::string name;
  EvaluationReport report;
};

/// Error comparison of the first two models of an evaluation.
struct PairedComparison {
  std::string first;
  std::string second;
  double rmse_difference = 0.0;  ///< first - second
  double mae_difference = 0.0;
  double coverage_difference = 0.0;
  double rmse_ratio = 0.0;       ///< first / second
  double first_closer = 0.0;     ///< fraction of points where the first model's error is smaller
};

struct EvaluationTable {
  std::vector<ModelScore> models;
  bool paired = false;
  PairedComparison comparison;
};

EvaluationTable evaluate_models(const std::vector<std::pair<std::string, const EmulatorModel*>>& models,
                                const Dataset& test, int threads = 1);
std::string evaluation_json(const EvaluationTable& table);
std::string evaluation_csv(const EvaluationTable& table);

/// `t,mean,variance,lo95,hi95`.
std::string predictions_csv(const std::vector<long>& t, const std::vector<Prediction>& preds);

// Commands. Each writes into `out_dir` (created if needed) and throws the
// library error types on failure.

/// train.csv, test.csv and manifest.json.
void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir, int threads = 1);

/// contaminated.csv and mask.csv (altered row indices). Good leverage rebuilds
/// scenarios from the inputs and re-solves at the config's output channel.
ContaminationResult cmd_contaminate(const std::string& dataset_path, const ContaminationSpec& spec,
                                    const ExperimentConfig& cfg, const std::string& out_dir);

/// <name>.model.json and <name>.diagnostics.json.
EmulatorModel cmd_train(const std::string& dataset_path, const TrainConfig& train_cfg, const std::string& name,
                        const std::string& out_dir);

/// predictions.csv.
void cmd_predict(const std::string& model_path, const std::string& inputs_path, const std::string& out_dir,
                 int threads = 1);

/// evaluation.json and evaluation.csv.
EvaluationTable cmd_evaluate(const std::vector<std::string>& model_paths, const std::string& test_path,
                             const std::string& out_dir, int threads = 1);

struct SweepRow {
  double fraction = 0.0;
  std::vector<double> robust_rmse;     ///< per replicate
  std::vector<double> classical_rmse;
  int robust_wins = 0;                 ///< replicates with robust RMSE strictly lower
};

struct ReproduceSummary {
  double clean_rmse = 0.0;             ///< robust emulator on clean data
  double clean_coverage = 0.0;
  std::vector<double> weight_medians;  ///< leverage weights of planted rows, per magnitude
  std::vector<double> combined_medians;
  bool weights_monotone = false;
  std::vector<SweepRow> sweep;
  bool trend_pass = false;             ///< robust wins >= 90% of replicates at every nonzero level
  bool pass = false;                   ///< mean robust RMSE below classical at the largest level
  std::string json;                    ///< summary.json contents
};

/// Runs the full experiment and writes plot-ready CSVs, intermediate files and summary.json.
ReproduceSummary cmd_reproduce(const ExperimentConfig& cfg, const std::string& out_dir, int threads = 1);

}  // namespace rngpe
