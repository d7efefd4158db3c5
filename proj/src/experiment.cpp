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

#include "rngpe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "rngpe/random.hpp"
#include "rngpe/robust.hpp"
#include "text_util.hpp"

namespace rngpe {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using detail::fmt17;

namespace {

std::string version_string() {
  return std::to_string(kArtifactFormatMajor) + "." + std::to_string(kArtifactFormatMinor);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + what + " '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string to_string(OutputKind k) { return k == OutputKind::Magnitude ? "magnitude" : "angle"; }
std::string to_string(InputLayout l) { return l == InputLayout::Reduced ? "reduced" : "full"; }

OutputKind parse_output_kind(const std::string& s) {
  if (s == "magnitude") return OutputKind::Magnitude;
  if (s == "angle") return OutputKind::Angle;
  throw InvalidArgument("unknown output kind '" + s + "' (magnitude, angle)");
}

InputLayout parse_layout(const std::string& s) {
  if (s == "reduced") return InputLayout::Reduced;
  if (s == "full") return InputLayout::Full;
  throw InvalidArgument("unknown input layout '" + s + "' (reduced, full)");
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["feeder"] = c.feeder;
  j["res_series"] = c.res_series;
  j["res_step_sd"] = c.res_step_sd;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["output_bus"] = c.output_bus;
  j["output_kind"] = to_string(c.output_kind);
  j["layout"] = to_string(c.layout);
  j["load_cv"] = c.load_cv;
  j["observed_loads_only"] = c.observed_loads_only;
  j["contamination"] = {{"fraction", c.contamination.fraction},
                        {"kind", to_string(c.contamination.kind)},
                        {"magnitude", c.contamination.magnitude},
                        {"coordinates", c.contamination.coordinates}};
  j["sweep"] = c.sweep;
  j["replicates"] = c.replicates;
  j["weight_magnitudes"] = c.weight_magnitudes;
  j["weight_fraction"] = c.weight_fraction;
  j["per_bus"] = c.per_bus;
  j["seed"] = c.seed;
  j["hyperopt"] = {{"restarts", c.restarts}, {"max_evals", c.max_evals}, {"outer_max", c.outer_max}};
  return j;
}

void reject_unknown(const json& j, const std::set<std::string>& keys, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!keys.count(it.key())) throw ParseError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ParseError(where + ": key '" + key + "' has the wrong type");
  }
}

ExperimentConfig config_from_json(const json& j, const std::string& source) {
  if (!j.is_object()) throw ParseError(source + ": expected a JSON object");
  reject_unknown(j,
                 {"feeder", "res_series", "res_step_sd", "n_train", "n_test", "output_bus", "output_kind", "layout",
                  "load_cv", "observed_loads_only", "contamination", "sweep", "replicates", "weight_magnitudes",
                  "weight_fraction", "per_bus", "seed", "hyperopt"},
                 source);
  ExperimentConfig c;
  read(j, "feeder", c.feeder, source);
  read(j, "res_series", c.res_series, source);
  read(j, "res_step_sd", c.res_step_sd, source);
  read(j, "n_train", c.n_train, source);
  read(j, "n_test", c.n_test, source);
  read(j, "output_bus", c.output_bus, source);
  std::string s;
  if (j.contains("output_kind")) {
    read(j, "output_kind", s, source);
    c.output_kind = parse_output_kind(s);
  }
  if (j.contains("layout")) {
    read(j, "layout", s, source);
    c.layout = parse_layout(s);
  }
  read(j, "load_cv", c.load_cv, source);
  read(j, "observed_loads_only", c.observed_loads_only, source);
  if (j.contains("contamination")) {
    const json& cj = j.at("contamination");
    const std::string where = source + ": contamination";
    if (!cj.is_object()) throw ParseError(where + " must be an object");
    reject_unknown(cj, {"fraction", "kind", "magnitude", "coordinates"}, where);
    read(cj, "fraction", c.contamination.fraction, where);
    read(cj, "magnitude", c.contamination.magnitude, where);
    read(cj, "coordinates", c.contamination.coordinates, where);
    if (cj.contains("kind")) {
      read(cj, "kind", s, where);
      c.contamination.kind = parse_contamination_kind(s);
    }
  }
  read(j, "sweep", c.sweep, source);
  read(j, "replicates", c.replicates, source);
  read(j, "weight_magnitudes", c.weight_magnitudes, source);
  read(j, "weight_fraction", c.weight_fraction, source);
  read(j, "per_bus", c.per_bus, source);
  read(j, "seed", c.seed, source);
  if (j.contains("hyperopt")) {
    const json& hj = j.at("hyperopt");
    const std::string where = source + ": hyperopt";
    if (!hj.is_object()) throw ParseError(where + " must be an object");
    reject_unknown(hj, {"restarts", "max_evals", "outer_max"}, where);
    read(hj, "restarts", c.restarts, where);
    read(hj, "max_evals", c.max_evals, where);
    read(hj, "outer_max", c.outer_max, where);
  }
  return c;
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
}

void check_version(const json& j, const std::string& format, const std::string& source) {
  if (j.value("format", "") != format) throw ParseError(source + ": not an " + format + " file");
  const std::string v = j.value("version", "");
  long major = 0;
  if (!detail::to_long(v.substr(0, v.find('.')), major)) throw ParseError(source + ": missing version");
  if (major != kArtifactFormatMajor) throw ParseError(source + ": unsupported major version " + v);
}

// Runs tasks on a pool of workers; rethrows the failure of the lowest-numbered task.
void run_tasks(const std::vector<std::function<void()>>& tasks, int threads) {
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        tasks[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1 || tasks.size() < 2) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < std::min(n, tasks.size()); ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

ContaminationSpec with(const ContaminationSpec& base, double fraction, double magnitude, std::uint64_t seed) {
  ContaminationSpec s = base;
  s.fraction = fraction;
  s.magnitude = magnitude;
  s.seed = seed;
  return s;
}

ContaminationResult contaminate_train(const Dataset& train, const ContaminationSpec& spec,
                                      const FeederModel& feeder) {
  return contaminate(train, spec, &feeder);
}

std::string dataset_stem(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const char* suffix : {".model.json", ".json"}) {
    const std::string sfx = suffix;
    if (name.size() > sfx.size() && name.compare(name.size() - sfx.size(), sfx.size(), sfx) == 0) {
      name.resize(name.size() - sfx.size());
      break;
    }
  }
  return name;
}

struct PredictionSet {
  std::vector<Prediction> preds;
  EvaluationReport report;
};

PredictionSet predict_and_score(const EmulatorModel& m, const Dataset& test) {
  PredictionSet p;
  p.preds = predict_batch(m, test.X);
  p.report = score(p.preds, test.y);
  return p;
}

// Posterior predictive mixture on a 200-point grid spanning +-4 sd of every component.
std::vector<std::pair<double, double>> mixture_density(const std::vector<Prediction>& preds) {
  constexpr int kGrid = 200;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : preds) {
    const double sd = std::sqrt(p.variance);
    lo = std::min(lo, p.mean - 4.0 * sd);
    hi = std::max(hi, p.mean + 4.0 * sd);
  }
  std::vector<std::pair<double, double>> out;
  if (preds.empty()) return out;
  for (int g = 0; g < kGrid; ++g) {
    const double x = lo + (hi - lo) * g / (kGrid - 1);
    double d = 0.0;
    for (const auto& p : preds) {
      if (!(p.variance > 0.0)) continue;
      const double z = (x - p.mean) / std::sqrt(p.variance);
      d += std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi * p.variance);
    }
    out.emplace_back(x, d / static_cast<double>(preds.size()));
  }
  return out;
}

bool non_increasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!fs::is_regular_file(feeder)) throw InvalidArgument("feeder file '" + feeder + "' does not exist");
  if (!res_series.empty() && !fs::is_regular_file(res_series))
    throw InvalidArgument("RES series file '" + res_series + "' does not exist");
  const FeederModel f = load_feeder(feeder);
  const auto p = static_cast<std::size_t>(input_columns(f, layout).size());
  if (n_train <= 2 * p + 1)
    throw InvalidArgument("n_train must exceed 2p + 1 = " + std::to_string(2 * p + 1) + " for " + std::to_string(p) +
                          " inputs, got " + std::to_string(n_train));
  if (n_test < 1) throw InvalidArgument("n_test must be at least 1");
  const int idx = f.bus_index(output_bus);
  if (idx == f.root()) throw InvalidArgument("output bus " + std::to_string(output_bus) + " is the substation");
  if (!(std::isfinite(load_cv) && load_cv >= 0.0)) throw InvalidArgument("load_cv must be finite and non-negative");
  if (!(std::isfinite(res_step_sd) && res_step_sd > 0.0)) throw InvalidArgument("res_step_sd must be positive");
  contamination.validate();
  for (int c : contamination.coordinates)
    if (static_cast<std::size_t>(c) >= p)
      throw InvalidArgument("contamination coordinate " + std::to_string(c) + " exceeds input dimension " +
                            std::to_string(p));
  if (sweep.empty()) throw InvalidArgument("sweep needs at least one contamination level");
  for (double s : sweep)
    if (!(s >= 0.0 && s < 0.5)) throw InvalidArgument("sweep levels must lie in [0, 0.5)");
  if (replicates < 1) throw InvalidArgument("replicates must be at least 1");
  if (weight_magnitudes.empty()) throw InvalidArgument("weight_magnitudes must not be empty");
  for (double m : weight_magnitudes)
    if (!(std::isfinite(m) && m > 0.0)) throw InvalidArgument("weight_magnitudes must be positive");
  if (!(weight_fraction > 0.0 && weight_fraction < 0.5)) throw InvalidArgument("weight_fraction must lie in (0, 0.5)");
  if (restarts < 1 || max_evals < 1 || outer_max < 1)
    throw InvalidArgument("hyperopt restarts, max_evals and outer_max must be at least 1");
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  return config_from_json(parse_json(text, source), source);
}

ExperimentConfig load_config(const std::string& path) {
  const json j = parse_json(read_file(path, "config file"), path);
  if (j.is_object() && j.value("format", "") == "rngpe-manifest") {
    check_version(j, "rngpe-manifest", path);
    if (!j.contains("config")) throw ParseError(path + ": manifest has no config");
    return config_from_json(j.at("config"), path + ": config");
  }
  return config_from_json(j, path);
}

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

ExperimentConfig preset(const std::string& name) {
  if (name == "fig5" || name == "default") return ExperimentConfig{};
  throw InvalidArgument("unknown preset '" + name + "' (fig5)");
}

std::string feeder_hash(const FeederModel& feeder) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : format_feeder(feeder)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentSeeds derive_seeds(std::uint64_t base) {
  return {derive_seed(base, 0), derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3)};
}

GeneratedData generate_data(const ExperimentConfig& cfg, const FeederModel& feeder, std::uint64_t seed,
                            int output_bus, OutputKind kind, int threads) {
  const ExperimentSeeds seeds = derive_seeds(seed);
  const std::size_t n = cfg.n_train + cfg.n_test;
  const ResSeries series = cfg.res_series.empty()
                               ? synthetic_res_series(feeder, static_cast<Eigen::Index>(n), seeds.series,
                                                      cfg.res_step_sd)
                               : load_res_series(cfg.res_series, feeder);
  ScenarioOptions so;
  so.load_cv = cfg.load_cv;
  if (cfg.observed_loads_only) so.stochastic_buses = observed_load_buses(feeder, cfg.layout);
  const auto scenarios = generate_scenarios(feeder, n, series, seeds.scenarios, so);
  DatasetOptions dopt;
  dopt.layout = cfg.layout;
  dopt.threads = threads;
  const Dataset all = build_dataset(feeder, scenarios, output_bus, kind, dopt);
  const auto nt = static_cast<Eigen::Index>(cfg.n_train);
  return {all.slice(0, nt), all.slice(nt, static_cast<Eigen::Index>(cfg.n_test))};
}

TrainConfig make_train_config(const ExperimentConfig& cfg, bool robust, std::uint64_t seed, int threads) {
  TrainConfig t;
  t.robust = robust;
  t.optimizer.restarts = cfg.restarts;
  t.optimizer.max_evals = cfg.max_evals;
  t.optimizer.seed = seed;
  t.optimizer.threads = threads;
  t.outer_max = cfg.outer_max;
  return t;
}

std::string diagnostics_json(const EmulatorModel& m, const std::vector<long>& t) {
  const RobustFit& d = m.diagnostics;
  json j;
  j["format"] = "rngpe-diagnostics";
  j["version"] = version_string();
  j["robust"] = m.robust;
  j["scale"] = d.scale;
  j["cutoff"] = d.cutoff;
  j["iterations"] = d.iterations;
  j["converged"] = d.converged;
  j["exact_fit"] = d.exact_fit;
  j["nll"] = m.nll;
  j["nll_trace"] = m.nll_trace;
  j["params"] = {{"lengthscales", std::vector<double>(m.params.lengthscales.data(),
                                                      m.params.lengthscales.data() + m.params.lengthscales.size())},
                 {"amplitude", m.params.amplitude},
                 {"nugget", m.params.nugget}};
  json pts = json::array();
  for (Eigen::Index i = 0; i < d.weights.size(); ++i) {
    pts.push_back({{"t", i < static_cast<Eigen::Index>(t.size()) ? t[static_cast<std::size_t>(i)] : static_cast<long>(i)},
                   {"weight", d.weights(i)},
                   {"ps", d.ps(i)},
                   {"residual", d.residuals(i)},
                   {"residual_weight", d.residual_weights(i)}});
  }
  j["points"] = std::move(pts);
  json trace = json::array();
  for (const IrlsStep& s : d.trace)
    trace.push_back({{"iteration", s.iteration}, {"scale", s.scale}, {"step", s.step}, {"downweighted", s.downweighted}});
  j["irls_trace"] = std::move(trace);
  return j.dump(2) + "\n";
}

EvaluationTable evaluate_models(const std::vector<std::pair<std::string, const EmulatorModel*>>& models,
                                const Dataset& test, int threads) {
  if (models.empty()) throw InvalidArgument("evaluate: no models given");
  if (!test.has_targets) throw InvalidArgument("evaluate: test dataset has no y column");
  EvaluationTable table;
  std::vector<std::vector<Prediction>> preds;
  for (const auto& [name, model] : models) {
    if (test.dim() != model->input_dim())
      throw InvalidArgument("evaluate: model '" + name + "' expects " + std::to_string(model->input_dim()) +
                            " inputs but the test set has " + std::to_string(test.dim()));
    preds.push_back(predict_batch(*model, test.X, threads));
    table.models.push_back({name, score(preds.back(), test.y)});
  }
  if (models.size() >= 2) {
    table.paired = true;
    PairedComparison& c = table.comparison;
    const EvaluationReport& a = table.models[0].report;
    const EvaluationReport& b = table.models[1].report;
    c.first = table.models[0].name;
    c.second = table.models[1].name;
    c.rmse_difference = a.rmse - b.rmse;
    c.mae_difference = a.mean_abs_err - b.mean_abs_err;
    c.coverage_difference = a.coverage_95 - b.coverage_95;
    c.rmse_ratio = b.rmse > 0.0 ? a.rmse / b.rmse : (a.rmse > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
    std::size_t closer = 0;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (std::abs(test.y(i) - preds[0][k].mean) < std::abs(test.y(i) - preds[1][k].mean)) ++closer;
    }
    c.first_closer = static_cast<double>(closer) / static_cast<double>(test.size());
  }
  return table;
}

std::string evaluation_json(const EvaluationTable& table) {
  json j;
  j["format"] = "rngpe-evaluation";
  j["version"] = version_string();
  json ms = json::array();
  for (const auto& m : table.models)
    ms.push_back({{"name", m.name},
                  {"rmse", m.report.rmse},
                  {"mae", m.report.mean_abs_err},
                  {"coverage_95", m.report.coverage_95},
                  {"count", m.report.count}});
  j["models"] = std::move(ms);
  if (table.paired) {
    const auto& c = table.comparison;
    j["comparison"] = {{"first", c.first},
                       {"second", c.second},
                       {"rmse_difference", c.rmse_difference},
                       {"mae_difference", c.mae_difference},
                       {"coverage_difference", c.coverage_difference},
                       {"rmse_ratio", std::isfinite(c.rmse_ratio) ? json(c.rmse_ratio) : json(nullptr)},
                       {"first_closer", c.first_closer}};
  }
  return j.dump(2) + "\n";
}

std::string evaluation_csv(const EvaluationTable& table) {
  std::ostringstream os;
  os << "model,rmse,mae,coverage_95,count\n";
  for (const auto& m : table.models)
    os << m.name << ',' << fmt17(m.report.rmse) << ',' << fmt17(m.report.mean_abs_err) << ','
       << fmt17(m.report.coverage_95) << ',' << m.report.count << '\n';
  if (table.paired) {
    const auto& c = table.comparison;
    os << c.first << " - " << c.second << ',' << fmt17(c.rmse_difference) << ',' << fmt17(c.mae_difference) << ','
       << fmt17(c.coverage_difference) << ',' << table.models[0].report.count << '\n';
  }
  return os.str();
}

std::string predictions_csv(const std::vector<long>& t, const std::vector<Prediction>& preds) {
  std::ostringstream os;
  os << "t,mean,variance,lo95,hi95\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double half = 1.96 * std::sqrt(preds[i].variance);
    os << (i < t.size() ? t[i] : static_cast<long>(i)) << ',' << fmt17(preds[i].mean) << ','
       << fmt17(preds[i].variance) << ',' << fmt17(preds[i].mean - half) << ',' << fmt17(preds[i].mean + half)
       << '\n';
  }
  return os.str();
}

namespace {

json manifest(const ExperimentConfig& cfg, const FeederModel& feeder, const std::string& command,
              const std::vector<std::string>& files) {
  const ExperimentSeeds s = derive_seeds(cfg.seed);
  json j;
  j["format"] = "rngpe-manifest";
  j["version"] = version_string();
  j["command"] = command;
  j["feeder_hash"] = feeder_hash(feeder);
  j["seeds"] = {{"base", cfg.seed},
                {"series", s.series},
                {"scenarios", s.scenarios},
                {"contamination", s.contamination},
                {"optimizer", s.optimizer}};
  j["files"] = files;
  j["config"] = config_json(cfg);
  return j;
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, const std::string& out_dir, int threads) {
  cfg.validate();
  const FeederModel feeder = load_feeder(cfg.feeder);
  const GeneratedData data = generate_data(cfg, feeder, cfg.seed, cfg.output_bus, cfg.output_kind, threads);
  ensure_dir(out_dir);
  save_dataset(data.train, join(out_dir, "train.csv"));
  save_dataset(data.test, join(out_dir, "test.csv"));
  write_file(join(out_dir, "manifest.json"),
             manifest(cfg, feeder, "generate", {"train.csv", "test.csv"}).dump(2) + "\n");
}

ContaminationResult cmd_contaminate(const std::string& dataset_path, const ContaminationSpec& spec,
                                    const ExperimentConfig& cfg, const std::string& out_dir) {
  spec.validate();
  Dataset data = load_dataset(dataset_path);
  ContaminationResult res;
  if (spec.kind == ContaminationKind::GoodLeverage) {
    const FeederModel feeder = load_feeder(cfg.feeder);
    data.layout = infer_layout(feeder, data.dim());
    data.output_bus = cfg.output_bus;
    data.output_kind = cfg.output_kind;
    if (!data.has_targets) throw InvalidArgument("good_leverage contamination needs a dataset with targets");
    data.scenarios.clear();
    for (Eigen::Index i = 0; i < data.size(); ++i)
      data.scenarios.push_back(scenario_from_inputs(feeder, data.X.row(i).transpose(), data.layout));
    res = contaminate(data, spec, &feeder);
  } else {
    res = contaminate(data, spec);
  }
  ensure_dir(out_dir);
  save_dataset(res.data, join(out_dir, "contaminated.csv"));
  std::ostringstream mask;
  mask << "row\n";
  for (std::size_t r : res.rows) mask << r << '\n';
  write_file(join(out_dir, "mask.csv"), mask.str());
  return res;
}

EmulatorModel cmd_train(const std::string& dataset_path, const TrainConfig& train_cfg, const std::string& name,
                        const std::string& out_dir) {
  const Dataset data = load_dataset(dataset_path);
  if (!data.has_targets) throw InvalidArgument("training dataset '" + dataset_path + "' has no y column");
  EmulatorModel model = train(data.X, data.y, train_cfg);
  ensure_dir(out_dir);
  save_model(model, join(out_dir, name + ".model.json"));
  write_file(join(out_dir, name + ".diagnostics.json"), diagnostics_json(model, data.t));
  return model;
}

void cmd_predict(const std::string& model_path, const std::string& inputs_path, const std::string& out_dir,
                 int threads) {
  const EmulatorModel model = load_model(model_path);
  const Dataset data = load_dataset(inputs_path);
  const auto preds = predict_batch(model, data.X, threads);
  ensure_dir(out_dir);
  write_file(join(out_dir, "predictions.csv"), predictions_csv(data.t, preds));
}

EvaluationTable cmd_evaluate(const std::vector<std::string>& model_paths, const std::string& test_path,
                             const std::string& out_dir, int threads) {
  std::vector<EmulatorModel> models;
  for (const auto& p : model_paths) models.push_back(load_model(p));
  const Dataset test = load_dataset(test_path);
  std::vector<std::pair<std::string, const EmulatorModel*>> named;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string name = dataset_stem(model_paths[i]);
    if (!seen.insert(name).second) name += "#" + std::to_string(i + 1);
    named.emplace_back(name, &models[i]);
  }
  EvaluationTable table = evaluate_models(named, test, threads);
  ensure_dir(out_dir);
  write_file(join(out_dir, "evaluation.json"), evaluation_json(table));
  write_file(join(out_dir, "evaluation.csv"), evaluation_csv(table));
  return table;
}

ReproduceSummary cmd_reproduce(const ExperimentConfig& cfg, const std::string& out_dir, int threads) {
  cfg.validate();
  const FeederModel feeder = load_feeder(cfg.feeder);
  const ExperimentSeeds seeds = derive_seeds(cfg.seed);
  const int bus = cfg.output_bus;

  // Base run: the datasets behind the per-figure outputs.
  const GeneratedData mag = generate_data(cfg, feeder, cfg.seed, bus, OutputKind::Magnitude, threads);
  const GeneratedData ang = generate_data(cfg, feeder, cfg.seed, bus, OutputKind::Angle, threads);
  const ContaminationSpec base_spec =
      with(cfg.contamination, cfg.contamination.fraction, cfg.contamination.magnitude, seeds.contamination);
  const ContaminationResult mag_bad = contaminate_train(mag.train, base_spec, feeder);
  const ContaminationResult ang_bad = contaminate_train(ang.train, base_spec, feeder);

  std::vector<std::function<void()>> tasks;

  // Predictions for the magnitude and angle figures: {clean, contaminated} x {robust, classical}.
  struct Fit {
    EmulatorModel model;
    PredictionSet out;
  };
  std::vector<Fit> fig23(8);
  const Dataset* trains[4] = {&mag.train, &mag_bad.data, &ang.train, &ang_bad.data};
  const Dataset* tests[4] = {&mag.test, &mag.test, &ang.test, &ang.test};
  for (int k = 0; k < 8; ++k) {
    tasks.emplace_back([&, k] {
      const bool robust = k % 2 == 0;
      const Dataset& tr = *trains[k / 2];
      fig23[static_cast<std::size_t>(k)].model = train(tr.X, tr.y, make_train_config(cfg, robust, seeds.optimizer));
      fig23[static_cast<std::size_t>(k)].out = predict_and_score(fig23[static_cast<std::size_t>(k)].model, *tests[k / 2]);
    });
  }

  // Weights against outlier magnitude, same planted rows at every magnitude.
  std::vector<EmulatorModel> fig1(cfg.weight_magnitudes.size());
  std::vector<ContaminationResult> fig1_data(cfg.weight_magnitudes.size());
  for (std::size_t k = 0; k < cfg.weight_magnitudes.size(); ++k) {
    tasks.emplace_back([&, k] {
      fig1_data[k] = contaminate_train(
          mag.train, with(cfg.contamination, cfg.weight_fraction, cfg.weight_magnitudes[k], seeds.contamination),
          feeder);
      fig1[k] = train(fig1_data[k].data.X, fig1_data[k].data.y, make_train_config(cfg, true, seeds.optimizer));
    });
  }

  // One robust model per bus and output kind on contaminated training data.
  std::vector<int> buses;
  for (const Bus& b : feeder.buses)
    if (b.id != feeder.substation) buses.push_back(b.id);
  std::sort(buses.begin(), buses.end());
  struct BusFit {
    Dataset test;
    PredictionSet out;
  };
  std::vector<BusFit> fig4(cfg.per_bus ? 2 * buses.size() : 0);
  for (std::size_t k = 0; k < fig4.size(); ++k) {
    tasks.emplace_back([&, k] {
      const OutputKind kind = k % 2 == 0 ? OutputKind::Magnitude : OutputKind::Angle;
      const GeneratedData d = generate_data(cfg, feeder, cfg.seed, buses[k / 2], kind);
      const ContaminationResult c = contaminate_train(d.train, base_spec, feeder);
      const EmulatorModel m = train(c.data.X, c.data.y, make_train_config(cfg, true, seeds.optimizer));
      fig4[k].test = d.test;
      fig4[k].out = predict_and_score(m, d.test);
    });
  }

  // Contamination sweep: replicate r has its own data, planted rows nested across levels.
  const std::size_t levels = cfg.sweep.size();
  const auto reps = static_cast<std::size_t>(cfg.replicates);
  std::vector<double> rob(levels * reps), cls(levels * reps);
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t l = 0; l < levels; ++l) {
      tasks.emplace_back([&, r, l] {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, 100 + r);
        const ExperimentSeeds rs = derive_seeds(rep_seed);
        const GeneratedData d = generate_data(cfg, feeder, rep_seed, bus, cfg.output_kind);
        const ContaminationResult c = contaminate_train(
            d.train, with(cfg.contamination, cfg.sweep[l], cfg.contamination.magnitude, rs.contamination), feeder);
        for (bool robust : {true, false}) {
          const EmulatorModel m = train(c.data.X, c.data.y, make_train_config(cfg, robust, rs.optimizer));
          (robust ? rob : cls)[l * reps + r] = evaluate(m, d.test.X, d.test.y).rmse;
        }
      });
    }
  }

  run_tasks(tasks, threads);

  ensure_dir(out_dir);
  ensure_dir(join(out_dir, "data"));
  ensure_dir(join(out_dir, "models"));
  std::vector<std::string> files;
  auto emit = [&](const std::string& rel, const std::string& text) {
    write_file(join(out_dir, rel), text);
    files.push_back(rel);
  };

  auto mask_csv = [](const ContaminationResult& c) {
    std::ostringstream os;
    os << "row\n";
    for (std::size_t r : c.rows) os << r << '\n';
    return os.str();
  };
  save_dataset(mag.train, join(out_dir, "data/train.csv"));
  save_dataset(mag.test, join(out_dir, "data/test.csv"));
  save_dataset(mag_bad.data, join(out_dir, "data/train_contaminated.csv"));
  files.insert(files.end(), {"data/train.csv", "data/test.csv", "data/train_contaminated.csv"});
  emit("data/mask.csv", mask_csv(mag_bad));

  const char* conditions[2] = {"clean", "contaminated"};
  const char* model_names[2] = {"robust", "classical"};
  for (int k = 0; k < 4; ++k) {
    const std::string stem = std::string("models/") + conditions[k / 2] + "_" + model_names[k % 2];
    save_model(fig23[static_cast<std::size_t>(k)].model, join(out_dir, stem + ".model.json"));
    files.push_back(stem + ".model.json");
    emit(stem + ".diagnostics.json",
         diagnostics_json(fig23[static_cast<std::size_t>(k)].model, (k / 2 == 0 ? mag.train : mag_bad.data).t));
  }

  for (int fig = 0; fig < 2; ++fig) {
    std::ostringstream pred, dens;
    pred << "condition,model,t,y,mean,variance,lo95,hi95\n";
    dens << "condition,model,value,density\n";
    const Dataset& test = fig == 0 ? mag.test : ang.test;
    for (int k = 0; k < 4; ++k) {
      const auto& ps = fig23[static_cast<std::size_t>(4 * fig + k)].out.preds;
      const std::string tag = std::string(conditions[k / 2]) + "," + model_names[k % 2];
      for (std::size_t i = 0; i < ps.size(); ++i) {
        const double half = 1.96 * std::sqrt(ps[i].variance);
        pred << tag << ',' << test.t[i] << ',' << fmt17(test.y(static_cast<Eigen::Index>(i))) << ','
             << fmt17(ps[i].mean) << ',' << fmt17(ps[i].variance) << ',' << fmt17(ps[i].mean - half) << ','
             << fmt17(ps[i].mean + half) << '\n';
      }
      for (const auto& [x, d] : mixture_density(ps)) dens << tag << ',' << fmt17(x) << ',' << fmt17(d) << '\n';
    }
    const std::string name = fig == 0 ? "fig2_magnitude" : "fig3_angle";
    emit(name + "_predictions.csv", pred.str());
    emit(name + "_density.csv", dens.str());
  }

  ReproduceSummary sum;
  sum.clean_rmse = fig23[0].out.report.rmse;
  sum.clean_coverage = fig23[0].out.report.coverage_95;

  {
    std::ostringstream med, pts;
    med << "magnitude,median_weight,median_combined_weight,planted_rows\n";
    pts << "magnitude,row,weight,ps,residual_weight,combined_weight\n";
    for (std::size_t k = 0; k < fig1.size(); ++k) {
      const RobustFit& d = fig1[k].diagnostics;
      std::vector<double> w, wc;
      for (std::size_t r : fig1_data[k].rows) {
        const auto i = static_cast<Eigen::Index>(r);
        w.push_back(d.weights(i));
        wc.push_back(d.weights(i) * d.residual_weights(i));
        pts << fmt17(cfg.weight_magnitudes[k]) << ',' << r << ',' << fmt17(d.weights(i)) << ',' << fmt17(d.ps(i))
            << ',' << fmt17(d.residual_weights(i)) << ',' << fmt17(wc.back()) << '\n';
      }
      sum.weight_medians.push_back(median(w));
      sum.combined_medians.push_back(median(wc));
      med << fmt17(cfg.weight_magnitudes[k]) << ',' << fmt17(sum.weight_medians.back()) << ','
          << fmt17(sum.combined_medians.back()) << ',' << w.size() << '\n';
    }
    // Magnitudes are compared in increasing order.
    std::vector<std::size_t> order(fig1.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return cfg.weight_magnitudes[a] < cfg.weight_magnitudes[b]; });
    std::vector<double> w, wc;
    for (std::size_t k : order) {
      w.push_back(sum.weight_medians[k]);
      wc.push_back(sum.combined_medians[k]);
    }
    sum.weights_monotone = non_increasing(w) && non_increasing(wc);
    emit("fig1_weights.csv", med.str());
    emit("fig1_points.csv", pts.str());
  }

  if (cfg.per_bus) {
    std::ostringstream os;
    os << "bus,output,t,y,mean,variance,lo95,hi95,test_rmse\n";
    for (std::size_t k = 0; k < fig4.size(); ++k) {
      const auto& f = fig4[k];
      const Prediction& p = f.out.preds.front();
      const double half = 1.96 * std::sqrt(p.variance);
      os << buses[k / 2] << ',' << (k % 2 == 0 ? "magnitude" : "angle") << ',' << f.test.t.front() << ','
         << fmt17(f.test.y(0)) << ',' << fmt17(p.mean) << ',' << fmt17(p.variance) << ',' << fmt17(p.mean - half)
         << ',' << fmt17(p.mean + half) << ',' << fmt17(f.out.report.rmse) << '\n';
    }
    emit("fig4_buses.csv", os.str());
  }

  {
    std::ostringstream runs, table;
    runs << "fraction,replicate,robust_rmse,classical_rmse\n";
    table << "fraction,robust_mean_rmse,classical_mean_rmse,robust_median_rmse,classical_median_rmse,robust_wins,"
             "replicates\n";
    for (std::size_t l = 0; l < levels; ++l) {
      SweepRow row;
      row.fraction = cfg.sweep[l];
      for (std::size_t r = 0; r < reps; ++r) {
        row.robust_rmse.push_back(rob[l * reps + r]);
        row.classical_rmse.push_back(cls[l * reps + r]);
        if (row.robust_rmse.back() < row.classical_rmse.back()) ++row.robust_wins;
        runs << fmt17(row.fraction) << ',' << r << ',' << fmt17(row.robust_rmse.back()) << ','
             << fmt17(row.classical_rmse.back()) << '\n';
      }
      table << fmt17(row.fraction) << ',' << fmt17(mean_of(row.robust_rmse)) << ','
            << fmt17(mean_of(row.classical_rmse)) << ',' << fmt17(median(row.robust_rmse)) << ','
            << fmt17(median(row.classical_rmse)) << ',' << row.robust_wins << ',' << reps << '\n';
      sum.sweep.push_back(std::move(row));
    }
    emit("fig5_runs.csv", runs.str());
    emit("fig5.csv", table.str());
  }

  sum.trend_pass = true;
  for (const SweepRow& row : sum.sweep)
    if (row.fraction > 0.0 && 10 * row.robust_wins < 9 * static_cast<int>(reps)) sum.trend_pass = false;
  const auto largest = std::max_element(sum.sweep.begin(), sum.sweep.end(),
                                        [](const SweepRow& a, const SweepRow& b) { return a.fraction < b.fraction; });
  sum.pass = largest->fraction > 0.0 && mean_of(largest->robust_rmse) < mean_of(largest->classical_rmse);

  json s;
  s["format"] = "rngpe-summary";
  s["version"] = version_string();
  s["feeder_hash"] = feeder_hash(feeder);
  s["config"] = config_json(cfg);
  s["fidelity"] = {{"robust", {{"rmse", fig23[0].out.report.rmse}, {"coverage_95", fig23[0].out.report.coverage_95}}},
                   {"classical", {{"rmse", fig23[1].out.report.rmse}, {"coverage_95", fig23[1].out.report.coverage_95}}}};
  s["weights"] = {{"magnitudes", cfg.weight_magnitudes},
                  {"median_weight", sum.weight_medians},
                  {"median_combined_weight", sum.combined_medians},
                  {"monotone", sum.weights_monotone}};
  json sw = json::array();
  for (const SweepRow& row : sum.sweep)
    sw.push_back({{"fraction", row.fraction},
                  {"robust_mean_rmse", mean_of(row.robust_rmse)},
                  {"classical_mean_rmse", mean_of(row.classical_rmse)},
                  {"robust_wins", row.robust_wins},
                  {"replicates", reps}});
  s["sweep"] = std::move(sw);
  s["flags"] = {{"robust_beats_classical_at_max_level", sum.pass},
                {"robust_wins_90pct_every_level", sum.trend_pass},
                {"weights_monotone", sum.weights_monotone}};
  s["status"] = sum.pass ? "PASS" : "FAIL";
  sum.json = s.dump(2) + "\n";
  emit("summary.json", sum.json);
  write_file(join(out_dir, "manifest.json"), manifest(cfg, feeder, "reproduce", files).dump(2) + "\n");
  return sum;
}

}  // namespace rngpe
