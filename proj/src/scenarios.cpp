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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "rngpe/powerflow.hpp"
#include "rngpe/random.hpp"
#include "text_util.hpp"

namespace rngpe {

namespace {

std::vector<Eigen::Index> unit_rows(const ResSeries& series, const FeederModel& feeder) {
  if (series.values.rows() != static_cast<Eigen::Index>(series.unit_ids.size()))
    throw InvalidArgument("RES series has inconsistent unit rows");
  std::vector<Eigen::Index> rows;
  for (const ResUnit& u : feeder.res_units) {
    auto it = std::find(series.unit_ids.begin(), series.unit_ids.end(), u.name);
    if (it == series.unit_ids.end()) throw InvalidArgument("RES series has no data for unit " + u.name);
    rows.push_back(it - series.unit_ids.begin());
  }
  return rows;
}

}  // namespace

ResSeries synthetic_res_series(const FeederModel& feeder, Eigen::Index length, std::uint64_t seed,
                               double step_sd) {
  if (length < 0) throw InvalidArgument("series length must be non-negative");
  if (!(step_sd >= 0.0) || !std::isfinite(step_sd)) throw InvalidArgument("step_sd must be finite and >= 0");
  ResSeries out;
  const auto m = static_cast<Eigen::Index>(feeder.res_units.size());
  out.values.resize(m, length);
  for (Eigen::Index u = 0; u < m; ++u) {
    out.unit_ids.push_back(feeder.res_units[u].name);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(u)));
    double v = rng.uniform(0.2, 0.8);
    for (Eigen::Index t = 0; t < length; ++t) {
      out.values(u, t) = v;
      v += rng.normal(0.0, step_sd);
      if (v < 0.0) v = -v;
      if (v > 1.0) v = 2.0 - v;
      v = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

ResSeries load_res_series(const std::string& path, const FeederModel& feeder) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open RES series file " + path);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(path + ": empty RES series file");
  ++lineno;
  const auto header = detail::split(line, ',');
  if (header != std::vector<std::string>{"t", "unit_id", "value_pu"})
    throw ParseError(detail::where(path, lineno) + "expected header 't,unit_id,value_pu'");

  std::map<std::string, std::map<long, double>> data;
  long max_t = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto at = detail::where(path, lineno);
    const auto f = detail::split(line, ',');
    if (f.size() != 3) throw ParseError(at + "expected 3 fields");
    long t;
    double v;
    if (!detail::to_long(f[0], t) || t < 0) throw ParseError(at + "invalid time index '" + f[0] + "'");
    if (!detail::to_double(f[2], v) || !std::isfinite(v) || v < 0.0 || v > 1.0)
      throw ParseError(at + "value_pu must be a number in [0, 1], got '" + f[2] + "'");
    bool known = false;
    for (const ResUnit& u : feeder.res_units) known = known || u.name == f[1];
    if (!known) throw ParseError(at + "unknown RES unit '" + f[1] + "'");
    if (!data[f[1]].emplace(t, v).second)
      throw ParseError(at + "duplicate sample for unit " + f[1] + " at t = " + f[0]);
    max_t = std::max(max_t, t);
  }

  ResSeries out;
  const auto m = static_cast<Eigen::Index>(feeder.res_units.size());
  out.values.resize(m, max_t + 1);
  for (Eigen::Index u = 0; u < m; ++u) {
    const std::string& name = feeder.res_units[u].name;
    out.unit_ids.push_back(name);
    const auto& series = data[name];
    for (long t = 0; t <= max_t; ++t) {
      auto it = series.find(t);
      if (it == series.end())
        throw ParseError(path + ": unit " + name + " has no sample at t = " + std::to_string(t));
      out.values(u, t) = it->second;
    }
  }
  return out;
}

void save_res_series(const ResSeries& series, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write RES series file " + path);
  out << "t,unit_id,value_pu\n";
  for (Eigen::Index t = 0; t < series.length(); ++t)
    for (std::size_t u = 0; u < series.unit_ids.size(); ++u)
      out << t << "," << series.unit_ids[u] << "," << detail::fmt17(series.values(static_cast<Eigen::Index>(u), t))
          << "\n";
  if (!out) throw IoError("failed writing " + path);
}

std::vector<Scenario> generate_scenarios(const FeederModel& feeder, std::size_t n, const ResSeries& series,
                                         std::uint64_t seed, const ScenarioOptions& opts) {
  const double load_cv = opts.load_cv;
  const std::size_t t0 = opts.t0;
  if (!(load_cv >= 0.0) || !std::isfinite(load_cv)) throw InvalidArgument("load_cv must be finite and >= 0");
  std::vector<char> stochastic(feeder.size(), opts.stochastic_buses.empty() ? 1 : 0);
  for (int id : opts.stochastic_buses) stochastic[static_cast<std::size_t>(feeder.bus_index(id))] = 1;
  const auto rows = unit_rows(series, feeder);
  const auto need = static_cast<Eigen::Index>(t0 + n);
  if (series.length() < need)
    throw InvalidArgument("RES series too short: need " + std::to_string(need) + " samples, have " +
                          std::to_string(series.length()));
  for (Eigen::Index r : rows) {
    const auto seg = series.values.row(r).segment(static_cast<Eigen::Index>(t0), static_cast<Eigen::Index>(n));
    if (!seg.allFinite() || (n > 0 && (seg.minCoeff() < 0.0 || seg.maxCoeff() > 1.0)))
      throw InvalidArgument("RES series values must lie in [0, 1]");
  }

  Rng rng(seed);
  std::vector<Scenario> out;
  out.reserve(n);
  const auto nb = static_cast<Eigen::Index>(feeder.size());
  for (std::size_t t = 0; t < n; ++t) {
    Scenario s;
    s.t = static_cast<long>(t0 + t);
    s.load_p.resize(nb);
    s.load_q.resize(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
      const Bus& b = feeder.buses[i];
      if (b.p_kw > 0.0 && stochastic[static_cast<std::size_t>(i)]) {
        const double p = std::max(0.0, rng.normal(b.p_kw, load_cv * b.p_kw));
        s.load_p(i) = p;
        s.load_q(i) = p * b.q_kvar / b.p_kw;
      } else {
        s.load_p(i) = b.p_kw;
        s.load_q(i) = b.q_kvar;
      }
    }
    s.res_p.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t u = 0; u < rows.size(); ++u)
      s.res_p(static_cast<Eigen::Index>(u)) =
          feeder.res_units[u].capacity_kw * series.values(rows[u], static_cast<Eigen::Index>(t0 + t));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace rngpe
