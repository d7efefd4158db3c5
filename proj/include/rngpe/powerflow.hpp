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

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rngpe/errors.hpp"

namespace rngpe {

enum class ResType { PV, WG };

struct Bus {
  int id = 0;
  double p_kw = 0.0;    ///< base active load
  double q_kvar = 0.0;  ///< base reactive load
};

struct Branch {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
};

struct ResUnit {
  std::string name;  ///< unit id used by series files, e.g. "G24"
  int bus = 0;
  ResType type = ResType::PV;
  double capacity_kw = 0.0;
};

/// Radial feeder. After finalize() the topology arrays are indexed by bus
/// position in `buses`; `order` lists bus indices root first (BFS).
struct FeederModel {
  std::string name;
  double base_kv = 0.0;
  double base_kva = 0.0;
  int substation = 1;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<ResUnit> res_units;

  std::vector<int> parent;         ///< parent bus index, -1 for the substation
  std::vector<int> parent_branch;  ///< index into branches, -1 for the substation
  std::vector<std::vector<int>> children;
  std::vector<int> order;

  /// Validates and builds the topology; throws ParseError on bad data.
  void finalize();
  int bus_index(int id) const;  ///< throws InvalidArgument for unknown ids
  int root() const { return order.empty() ? -1 : order.front(); }
  double impedance_base() const { return base_kv * base_kv * 1000.0 / base_kva; }
  std::size_t size() const { return buses.size(); }
};

inline constexpr int kFeederFormatMajor = 1;

FeederModel parse_feeder(std::istream& in, const std::string& source = "<stream>");
FeederModel load_feeder(const std::string& path);
std::string format_feeder(const FeederModel& feeder);

/// One time step: per-bus loads and per-unit RES output, in kW / kvar.
struct Scenario {
  long t = 0;
  Eigen::VectorXd load_p;  ///< by bus index
  Eigen::VectorXd load_q;
  Eigen::VectorXd res_p;   ///< by RES unit index

  /// Net active injection (generation minus load) per bus index, kW.
  Eigen::VectorXd net_p(const FeederModel& feeder) const;
  /// Sets the active load of a bus (by index), keeping its base power factor.
  void set_load(const FeederModel& feeder, int bus, double p);
};

Scenario base_scenario(const FeederModel& feeder);

struct PowerFlowOptions {
  double tol = 1e-8;  ///< max complex power mismatch, per unit
  int max_iter = 100;
};

struct PowerFlowSolution {
  Eigen::VectorXd magnitude;  ///< per unit, by bus index
  Eigen::VectorXd angle;      ///< radians
  int iterations = 0;
  double max_mismatch = 0.0;
  std::vector<std::complex<double>> voltage;
  std::vector<std::complex<double>> branch_current;  ///< per unit, by branch index, flowing away from the root
  std::complex<double> substation_power;             ///< per unit
  std::complex<double> losses;                       ///< sum |I|^2 Z, per unit
};

class PowerFlowDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Backward/forward sweep on the radial tree.
PowerFlowSolution solve_power_flow(const FeederModel& feeder, const Scenario& scenario,
                                   const PowerFlowOptions& opts = {});

/// Per-unit RES output series, one row per unit (feeder order), one column per second.
struct ResSeries {
  std::vector<std::string> unit_ids;
  Eigen::MatrixXd values;

  Eigen::Index length() const { return values.cols(); }
};

/// Bounded random walk in [0, 1] per unit, reflected at the edges.
ResSeries synthetic_res_series(const FeederModel& feeder, Eigen::Index length, std::uint64_t seed,
                               double step_sd = 0.02);

/// CSV with header `t,unit_id,value_pu`; units must match the feeder's RES names.
ResSeries load_res_series(const std::string& path, const FeederModel& feeder);
void save_res_series(const ResSeries& series, const std::string& path);

struct ScenarioOptions {
  std::size_t t0 = 0;      ///< first series sample used
  double load_cv = 0.05;   ///< load standard deviation relative to the base load
  std::vector<int> stochastic_buses;  ///< bus ids with random loads; empty means every bus
};

/// Gaussian loads N(P_L, (load_cv P_L)^2) truncated at 0 with constant power
/// factor, RES output = capacity * series(t0 + t). Buses outside
/// `stochastic_buses` keep their base load.
std::vector<Scenario> generate_scenarios(const FeederModel& feeder, std::size_t n, const ResSeries& series,
                                         std::uint64_t seed, const ScenarioOptions& opts = {});

}  // namespace rngpe
