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

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "rngpe/emulator.hpp"

namespace rngpe {

using json = nlohmann::json;

namespace {

constexpr const char* kFormat = "rngpe-model";

json vec(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json rows(const Eigen::MatrixXd& M, bool lower_only = false) {
  json out = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    const Eigen::Index len = lower_only ? i + 1 : M.cols();
    std::vector<double> r(static_cast<std::size_t>(len));
    for (Eigen::Index j = 0; j < len; ++j) r[static_cast<std::size_t>(j)] = M(i, j);
    out.push_back(r);
  }
  return out;
}

Eigen::VectorXd read_vec(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string("model file: '") + what + "' is not an array");
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd read_rows(const json& j, Eigen::Index cols, bool lower_only, const char* what) {
  if (!j.is_array()) throw ParseError(std::string("model file: '") + what + "' is not an array");
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto r = j[i].get<std::vector<double>>();
    const std::size_t expected = lower_only ? i + 1 : static_cast<std::size_t>(cols);
    if (r.size() != expected) throw ParseError(std::string("model file: ragged rows in '") + what + "'");
    for (std::size_t k = 0; k < r.size(); ++k) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[k];
  }
  return M;
}

}  // namespace

std::string serialize_model(const EmulatorModel& m) {
  json j;
  j["format"] = kFormat;
  j["version"] = std::to_string(kModelFormatMajor) + "." + std::to_string(kModelFormatMinor);
  j["robust"] = m.robust;
  j["input_dim"] = m.input_dim();
  j["standardizer"] = {{"center", vec(m.standardizer.center)}, {"scale", vec(m.standardizer.scale)}};
  j["beta"] = vec(m.beta);
  j["params"] = {{"lengthscales", vec(m.params.lengthscales)},
                 {"amplitude", m.params.amplitude},
                 {"nugget", m.params.nugget}};
  j["inputs"] = rows(m.inputs);
  j["factor"] = {{"chol", rows(m.factor.chol, true)}, {"log_det", m.factor.log_det}, {"jitter", m.factor.jitter}};
  j["alpha"] = vec(m.alpha);
  j["nll"] = m.nll;
  j["nll_trace"] = m.nll_trace;

  const RobustFit& d = m.diagnostics;
  json trace = json::array();
  for (const auto& s : d.trace) {
    trace.push_back({{"iteration", s.iteration}, {"scale", s.scale}, {"step", s.step}, {"downweighted", s.downweighted}});
  }
  j["diagnostics"] = {{"beta", vec(d.beta)},
                      {"weights", vec(d.weights)},
                      {"ps", vec(d.ps)},
                      {"residuals", vec(d.residuals)},
                      {"residual_weights", vec(d.residual_weights)},
                      {"scale", d.scale},
                      {"cutoff", d.cutoff},
                      {"iterations", d.iterations},
                      {"converged", d.converged},
                      {"exact_fit", d.exact_fit},
                      {"trace", trace}};
  return j.dump(1);
}

EmulatorModel deserialize_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
  try {
    if (j.value("format", "") != kFormat) throw ParseError("model file: not an rngpe model");
    const std::string version = j.at("version").get<std::string>();
    const int major = std::stoi(version.substr(0, version.find('.')));
    if (major != kModelFormatMajor) throw ParseError("model file: unsupported major version " + version);

    EmulatorModel m;
    m.robust = j.at("robust").get<bool>();
    const auto p = j.at("input_dim").get<Eigen::Index>();
    m.standardizer.center = read_vec(j.at("standardizer").at("center"), "standardizer.center");
    m.standardizer.scale = read_vec(j.at("standardizer").at("scale"), "standardizer.scale");
    m.beta = read_vec(j.at("beta"), "beta");
    m.params.lengthscales = read_vec(j.at("params").at("lengthscales"), "params.lengthscales");
    m.params.amplitude = j.at("params").at("amplitude").get<double>();
    m.params.nugget = j.at("params").at("nugget").get<double>();
    m.inputs = read_rows(j.at("inputs"), p, false, "inputs");
    m.factor.chol = read_rows(j.at("factor").at("chol"), m.inputs.rows(), true, "factor.chol");
    m.factor.log_det = j.at("factor").at("log_det").get<double>();
    m.factor.jitter = j.at("factor").at("jitter").get<double>();
    m.alpha = read_vec(j.at("alpha"), "alpha");
    m.nll = j.at("nll").get<double>();
    m.nll_trace = j.at("nll_trace").get<std::vector<double>>();

    const json& d = j.at("diagnostics");
    m.diagnostics.beta = read_vec(d.at("beta"), "diagnostics.beta");
    m.diagnostics.weights = read_vec(d.at("weights"), "diagnostics.weights");
    m.diagnostics.ps = read_vec(d.at("ps"), "diagnostics.ps");
    m.diagnostics.residuals = read_vec(d.at("residuals"), "diagnostics.residuals");
    m.diagnostics.residual_weights = read_vec(d.at("residual_weights"), "diagnostics.residual_weights");
    m.diagnostics.scale = d.at("scale").get<double>();
    m.diagnostics.cutoff = d.at("cutoff").get<double>();
    m.diagnostics.iterations = d.at("iterations").get<int>();
    m.diagnostics.converged = d.at("converged").get<bool>();
    m.diagnostics.exact_fit = d.at("exact_fit").get<bool>();
    for (const auto& s : d.at("trace")) {
      m.diagnostics.trace.push_back({s.at("iteration").get<int>(), s.at("scale").get<double>(),
                                     s.at("step").get<double>(), s.at("downweighted").get<double>()});
    }

    const Eigen::Index n = m.inputs.rows();
    if (m.standardizer.dim() != p || m.standardizer.scale.size() != p || m.params.lengthscales.size() != p ||
        m.beta.size() != basis_size(p) || m.alpha.size() != n || m.factor.chol.rows() != n) {
      throw ParseError("model file: inconsistent dimensions");
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model file: ") + e.what());
  }
}

void save_model(const EmulatorModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << serialize_model(model) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

EmulatorModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace rngpe
