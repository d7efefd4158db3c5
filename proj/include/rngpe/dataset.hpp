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

#include <Eigen/Core>

#include "rngpe/powerflow.hpp"

namespace rngpe {

enum class OutputKind { Magnitude, Angle };
enum class InputLayout { Reduced, Full };

/// Number of load buses observed by the reduced layout.
inline constexpr int kReducedLoadBuses = 20;

struct InputColumn {
  enum class Kind { Res, Load, Net };
  Kind kind = Kind::Res;
  int index = 0;          ///< RES unit index for Res, bus index for Net
  std::vector<int> buses; ///< bus indices summed by a Load channel
  std::string label;
};

/// Reduced: RES outputs, then the active loads of the first kReducedLoadBuses
/// non-substation buses in id order. Full: net active injection of every
/// non-substation bus.
std::vector<InputColumn> input_columns(const FeederModel& feeder, InputLayout layout);
/// Ids of the buses whose loads enter the inputs of a layout.
std::vector<int> observed_load_buses(const FeederModel& feeder, InputLayout layout);
Eigen::VectorXd input_row(const FeederModel& feeder, const Scenario& scenario, InputLayout layout);
/// Inverse of input_row: a scenario whose inputs equal x. Quantities the layout
/// does not observe keep their base values (RES output 0 under the full layout).
Scenario scenario_from_inputs(const FeederModel& feeder, const Eigen::Ref<const Eigen::VectorXd>& x,
                              InputLayout layout);
/// Layout whose column count matches `dim`.
InputLayout infer_layout(const FeederModel& feeder, Eigen::Index dim);

struct Dataset {
  std::vector<long> t;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  bool has_targets = true;

  // Generation context; only present for datasets built in memory.
  std::vector<Scenario> scenarios;
  InputLayout layout = InputLayout::Reduced;
  int output_bus = 0;
  OutputKind output_kind = OutputKind::Magnitude;

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
  bool has_scenarios() const { return static_cast<Eigen::Index>(scenarios.size()) == size(); }
  Dataset slice(Eigen::Index begin, Eigen::Index count) const;
};

struct DatasetOptions {
  InputLayout layout = InputLayout::Reduced;
  PowerFlowOptions power_flow;
  int threads = 1;
};

double output_value(const PowerFlowSolution& sol, int bus_index, OutputKind kind);

Dataset build_dataset(const FeederModel& feeder, const std::vector<Scenario>& scenarios, int output_bus,
                      OutputKind kind, const DatasetOptions& opts = {});

/// CSV `t,x_1..x_p,y`; the y column is optional on load (inputs-only files).
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

enum class ContaminationKind { Vertical, BadLeverage, GoodLeverage };

ContaminationKind parse_contamination_kind(const std::string& name);
std::string to_string(ContaminationKind kind);

struct ContaminationSpec {
  double fraction = 0.0;
  ContaminationKind kind = ContaminationKind::BadLeverage;
  double magnitude = 10.0;  ///< in robust standard deviations of the affected channel
  std::uint64_t seed = 0;
  std::vector<int> coordinates;  ///< input columns to shift (0-based); empty means all

  void validate() const;
};

struct ContaminationResult {
  Dataset data;
  std::vector<bool> mask;
  std::vector<std::size_t> rows;  ///< altered rows, ascending
};

/// Robust scale of a channel: MAD scale, falling back to the standard deviation, then 1.
double channel_scale(const Eigen::Ref<const Eigen::VectorXd>& v);

ContaminationResult contaminate(const Dataset& data, const ContaminationSpec& spec,
                                const FeederModel* feeder = nullptr, const PowerFlowOptions& pf = {});

}  // namespace rngpe
