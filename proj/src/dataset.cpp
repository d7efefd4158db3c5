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
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "rngpe/dataset.hpp"
#include "text_util.hpp"

namespace rngpe {

std::vector<InputColumn> input_columns(const FeederModel& feeder, InputLayout layout) {
  std::vector<int> ids;
  for (const Bus& b : feeder.buses)
    if (b.id != feeder.substation) ids.push_back(b.id);
  std::sort(ids.begin(), ids.end());

  std::vector<InputColumn> cols;
  if (layout == InputLayout::Full) {
    for (int id : ids) cols.push_back({InputColumn::Kind::Net, feeder.bus_index(id), {}, "P_" + std::to_string(id)});
    return cols;
  }
  for (std::size_t u = 0; u < feeder.res_units.size(); ++u)
    cols.push_back({InputColumn::Kind::Res, static_cast<int>(u), {}, "P_" + feeder.res_units[u].name});
  if (static_cast<int>(ids.size()) < kReducedLoadBuses)
    throw InvalidArgument("reduced input layout needs at least " + std::to_string(kReducedLoadBuses) +
                          " load buses");
  for (int k = 0; k < kReducedLoadBuses; ++k)
    cols.push_back({InputColumn::Kind::Load, 0, {feeder.bus_index(ids[k])}, "P_L" + std::to_string(ids[k])});
  return cols;
}

std::vector<int> observed_load_buses(const FeederModel& feeder, InputLayout layout) {
  std::vector<int> out;
  for (const InputColumn& c : input_columns(feeder, layout)) {
    if (c.kind == InputColumn::Kind::Load)
      for (int b : c.buses) out.push_back(feeder.buses[b].id);
    if (c.kind == InputColumn::Kind::Net) out.push_back(feeder.buses[c.index].id);
  }
  return out;
}

Eigen::VectorXd input_row(const FeederModel& feeder, const Scenario& s, InputLayout layout) {
  const auto cols = input_columns(feeder, layout);
  const Eigen::VectorXd net = s.net_p(feeder);
  Eigen::VectorXd x(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto& c = cols[k];
    double v = 0.0;
    switch (c.kind) {
      case InputColumn::Kind::Res: v = s.res_p(c.index); break;
      case InputColumn::Kind::Load:
        for (int b : c.buses) v += s.load_p(b);
        break;
      case InputColumn::Kind::Net: v = net(c.index); break;
    }
    x(static_cast<Eigen::Index>(k)) = v;
  }
  return x;
}

Scenario scenario_from_inputs(const FeederModel& feeder, const Eigen::Ref<const Eigen::VectorXd>& x,
                              InputLayout layout) {
  const auto cols = input_columns(feeder, layout);
  if (static_cast<Eigen::Index>(cols.size()) != x.size())
    throw InvalidArgument("expected " + std::to_string(cols.size()) + " inputs for this layout, got " +
                          std::to_string(x.size()));
  Scenario s = base_scenario(feeder);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const auto& c = cols[k];
    const double v = x(static_cast<Eigen::Index>(k));
    switch (c.kind) {
      case InputColumn::Kind::Res: s.res_p(c.index) = v; break;
      case InputColumn::Kind::Load: {
        double total = 0.0;
        for (int b : c.buses) total += feeder.buses[b].p_kw;
        for (int b : c.buses) {
          const double share = total > 0.0 ? feeder.buses[b].p_kw / total : 1.0 / static_cast<double>(c.buses.size());
          s.set_load(feeder, b, v * share);
        }
        break;
      }
      case InputColumn::Kind::Net: s.set_load(feeder, c.index, -v); break;
    }
  }
  return s;
}

InputLayout infer_layout(const FeederModel& feeder, Eigen::Index dim) {
  for (InputLayout l : {InputLayout::Reduced, InputLayout::Full})
    if (static_cast<Eigen::Index>(input_columns(feeder, l).size()) == dim) return l;
  throw InvalidArgument("dataset has " + std::to_string(dim) + " inputs, which matches no input layout of feeder '" +
                        feeder.name + "'");
}

Dataset Dataset::slice(Eigen::Index begin, Eigen::Index count) const {
  if (begin < 0 || count < 0 || begin + count > size()) throw InvalidArgument("dataset slice out of range");
  Dataset d;
  d.t.assign(t.begin() + begin, t.begin() + begin + count);
  d.X = X.middleRows(begin, count);
  d.has_targets = has_targets;
  if (has_targets) d.y = y.segment(begin, count);
  if (has_scenarios()) d.scenarios.assign(scenarios.begin() + begin, scenarios.begin() + begin + count);
  d.layout = layout;
  d.output_bus = output_bus;
  d.output_kind = output_kind;
  return d;
}

double output_value(const PowerFlowSolution& sol, int bus_index, OutputKind kind) {
  return kind == OutputKind::Magnitude ? sol.magnitude(bus_index) : sol.angle(bus_index);
}

Dataset build_dataset(const FeederModel& feeder, const std::vector<Scenario>& scenarios, int output_bus,
                      OutputKind kind, const DatasetOptions& opts) {
  const int out_idx = feeder.bus_index(output_bus);
  const auto n = static_cast<Eigen::Index>(scenarios.size());
  const auto cols = input_columns(feeder, opts.layout);

  Dataset d;
  d.layout = opts.layout;
  d.output_bus = output_bus;
  d.output_kind = kind;
  d.scenarios = scenarios;
  d.t.resize(scenarios.size());
  d.X.resize(n, static_cast<Eigen::Index>(cols.size()));
  d.y.resize(n);

  std::mutex err_mutex;
  Eigen::Index err_index = n;
  std::string err_msg;
  std::atomic<Eigen::Index> next{0};
  auto work = [&] {
    for (Eigen::Index i = next++; i < n; i = next++) {
      try {
        const Scenario& s = scenarios[i];
        d.t[i] = s.t;
        d.X.row(i) = input_row(feeder, s, opts.layout).transpose();
        d.y(i) = output_value(solve_power_flow(feeder, s, opts.power_flow), out_idx, kind);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err_msg = e.what();
        }
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(n)));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (err_index < n)
    throw NumericalError("scenario " + std::to_string(err_index) + " (t = " +
                         std::to_string(scenarios[err_index].t) + ") could not be solved: " + err_msg);
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file " + path);
  out << "t";
  for (Eigen::Index k = 0; k < d.dim(); ++k) out << ",x_" << (k + 1);
  if (d.has_targets) out << ",y";
  out << "\n";
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    out << (static_cast<std::size_t>(i) < d.t.size() ? d.t[i] : static_cast<long>(i));
    for (Eigen::Index k = 0; k < d.dim(); ++k) out << "," << detail::fmt17(d.X(i, k));
    if (d.has_targets) out << "," << detail::fmt17(d.y(i));
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file " + path);
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw ParseError(path + ": empty dataset file");
  const auto header = detail::split(line, ',');
  if (header.size() < 2 || header[0] != "t")
    throw ParseError(detail::where(path, lineno) + "expected header 't,x_1..x_p[,y]'");
  const bool has_y = header.back() == "y";
  const std::size_t p = header.size() - 1 - (has_y ? 1 : 0);
  if (p == 0) throw ParseError(detail::where(path, lineno) + "dataset needs at least one input column");
  for (std::size_t k = 0; k < p; ++k)
    if (header[k + 1] != "x_" + std::to_string(k + 1))
      throw ParseError(detail::where(path, lineno) + "expected column 'x_" + std::to_string(k + 1) + "', found '" +
                       header[k + 1] + "'");

  std::vector<long> t;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto at = detail::where(path, lineno);
    const auto f = detail::split(line, ',');
    if (f.size() != header.size())
      throw ParseError(at + "expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(f.size()));
    long ti;
    if (!detail::to_long(f[0], ti)) throw ParseError(at + "invalid time index '" + f[0] + "'");
    t.push_back(ti);
    for (std::size_t k = 1; k < f.size(); ++k) {
      double v;
      if (!detail::to_double(f[k], v) || !std::isfinite(v))
        throw ParseError(at + "invalid value '" + f[k] + "' in column " + header[k]);
      values.push_back(v);
    }
  }
  if (t.empty()) throw ParseError(path + ": dataset has no rows");

  Dataset d;
  const auto n = static_cast<Eigen::Index>(t.size());
  const auto w = static_cast<Eigen::Index>(header.size() - 1);
  d.t = std::move(t);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(values.data(), n,
                                                                                                  w);
  d.X = m.leftCols(static_cast<Eigen::Index>(p));
  d.has_targets = has_y;
  if (has_y) d.y = m.col(w - 1);
  return d;
}

}  // namespace rngpe
