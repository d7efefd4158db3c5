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

// Command-line front end: generate, contaminate, train, predict, evaluate, reproduce.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rngpe/errors.hpp"
#include "rngpe/experiment.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kInput = 3, kNumerical = 4, kIo = 5 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "rngpe-out";
  int threads = 1;
};

rngpe::ExperimentConfig resolve_config(const Globals& g) {
  rngpe::ExperimentConfig cfg = g.config.empty() ? rngpe::preset("fig5") : rngpe::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Robust Gaussian process emulation of distribution-grid power flow"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON) or a manifest written by a previous run");
  app.add_option("--seed", g.seed, "base seed, overriding the config");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  auto* generate = app.add_subcommand("generate", "solve scenarios and write train/test datasets");

  auto* contaminate = app.add_subcommand("contaminate", "plant outliers in a dataset");
  std::string c_in;
  double c_fraction = 0.0;
  std::string c_kind = "bad_leverage";
  double c_magnitude = 10.0;
  std::vector<int> c_coords;
  contaminate->add_option("dataset", c_in, "dataset CSV")->required();
  contaminate->add_option("--fraction", c_fraction, "fraction of rows to alter, in [0, 0.5)")->required();
  contaminate->add_option("--kind", c_kind, "vertical, bad_leverage or good_leverage")->capture_default_str();
  contaminate->add_option("--magnitude", c_magnitude, "shift in robust standard deviations")->capture_default_str();
  contaminate->add_option("--coords", c_coords, "input columns to shift (0-based); default all")->delimiter(',');

  auto* train = app.add_subcommand("train", "train an emulator on a dataset");
  std::string t_in, t_name;
  bool t_classical = false;
  train->add_option("dataset", t_in, "training dataset CSV")->required();
  auto* robust_flag = train->add_flag("--robust", "SHGM regression weights (default)");
  train->add_flag("--classical", t_classical, "generalized least squares regression weights")->excludes(robust_flag);
  train->add_option("--name", t_name, "model file stem (default: robust or classical)");

  auto* predict = app.add_subcommand("predict", "predict at the inputs of a dataset");
  std::string p_model, p_inputs;
  predict->add_option("model", p_model, "model file")->required();
  predict->add_option("inputs", p_inputs, "dataset CSV; the y column is optional")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score models on a test dataset");
  std::string e_test;
  std::vector<std::string> e_models;
  evaluate->add_option("test", e_test, "test dataset CSV")->required();
  evaluate->add_option("models", e_models, "one or more model files")->required();

  auto* reproduce = app.add_subcommand("reproduce", "run the full experiment preset");
  std::string r_preset = "fig5";
  reproduce->add_option("preset", r_preset, "preset name")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (*generate) {
      rngpe::cmd_generate(resolve_config(g), g.out, g.threads);
      std::cout << "wrote " << g.out << "/train.csv, test.csv, manifest.json\n";
    } else if (*contaminate) {
      const rngpe::ExperimentConfig cfg = resolve_config(g);
      rngpe::ContaminationSpec spec;
      spec.fraction = c_fraction;
      spec.kind = rngpe::parse_contamination_kind(c_kind);
      spec.magnitude = c_magnitude;
      spec.coordinates = c_coords;
      spec.seed = rngpe::derive_seeds(cfg.seed).contamination;
      const auto res = rngpe::cmd_contaminate(c_in, spec, cfg, g.out);
      std::cout << "altered " << res.rows.size() << " of " << res.data.size() << " rows; wrote " << g.out
                << "/contaminated.csv, mask.csv\n";
    } else if (*train) {
      const rngpe::ExperimentConfig cfg = resolve_config(g);
      const bool robust = !t_classical;
      const std::string name = t_name.empty() ? (robust ? "robust" : "classical") : t_name;
      const auto model = rngpe::cmd_train(
          t_in, rngpe::make_train_config(cfg, robust, rngpe::derive_seeds(cfg.seed).optimizer, g.threads), name,
          g.out);
      std::cout << "trained " << name << " model (nll " << model.nll << "); wrote " << g.out << "/" << name
                << ".model.json, " << name << ".diagnostics.json\n";
    } else if (*predict) {
      rngpe::cmd_predict(p_model, p_inputs, g.out, g.threads);
      std::cout << "wrote " << g.out << "/predictions.csv\n";
    } else if (*evaluate) {
      const auto table = rngpe::cmd_evaluate(e_models, e_test, g.out, g.threads);
      std::cout << rngpe::evaluation_csv(table);
    } else if (*reproduce) {
      rngpe::ExperimentConfig cfg = g.config.empty() ? rngpe::preset(r_preset) : rngpe::load_config(g.config);
      if (g.seed) cfg.seed = *g.seed;
      const auto sum = rngpe::cmd_reproduce(cfg, g.out, g.threads);
      std::cout << "fraction  robust_rmse  classical_rmse  robust_wins\n";
      for (const auto& row : sum.sweep) {
        double r = 0.0, c = 0.0;
        for (double v : row.robust_rmse) r += v;
        for (double v : row.classical_rmse) c += v;
        const auto n = static_cast<double>(row.robust_rmse.size());
        std::cout << row.fraction << "  " << r / n << "  " << c / n << "  " << row.robust_wins << "/"
                  << row.robust_rmse.size() << "\n";
      }
      std::cout << (sum.pass ? "PASS" : "FAIL") << ": robust vs classical RMSE at the largest level; summary in "
                << g.out << "/summary.json\n";
    }
  } catch (const rngpe::InvalidArgument& e) {
    std::cerr << "rngpe " << stage << ": invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const rngpe::ParseError& e) {
    std::cerr << "rngpe " << stage << ": input error: " << e.what() << "\n";
    return kInput;
  } catch (const rngpe::NumericalError& e) {
    std::cerr << "rngpe " << stage << ": numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const rngpe::IoError& e) {
    std::cerr << "rngpe " << stage << ": I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "rngpe " << stage << ": error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
