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

#include "rngpe/dataset.hpp"
#include "rngpe/random.hpp"
#include "rngpe/robust.hpp"

namespace rngpe {

ContaminationKind parse_contamination_kind(const std::string& name) {
  if (name == "vertical") return ContaminationKind::Vertical;
  if (name == "bad_leverage") return ContaminationKind::BadLeverage;
  if (name == "good_leverage") return ContaminationKind::GoodLeverage;
  throw InvalidArgument("unknown contamination kind '" + name + "' (vertical, bad_leverage, good_leverage)");
}

std::string to_string(ContaminationKind kind) {
  switch (kind) {
    case ContaminationKind::Vertical: return "vertical";
    case ContaminationKind::BadLeverage: return "bad_leverage";
    case ContaminationKind::GoodLeverage: return "good_leverage";
  }
  return "unknown";
}

void ContaminationSpec::validate() const {
  if (!(fraction >= 0.0 && fraction < 0.5)) throw InvalidArgument("contamination fraction must lie in [0, 0.5)");
  if (!std::isfinite(magnitude)) throw InvalidArgument("contamination magnitude must be finite");
  for (int c : coordinates)
    if (c < 0) throw InvalidArgument("contamination coordinates must be non-negative");
}

double channel_scale(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) return 1.0;
  const double s = robust_location_scale(v).mad_scale;
  if (s > 0.0) return s;
  if (v.size() > 1) {
    const double sd = std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
    if (sd > 0.0) return sd;
  }
  return 1.0;
}

ContaminationResult contaminate(const Dataset& data, const ContaminationSpec& spec, const FeederModel* feeder,
                                const PowerFlowOptions& pf) {
  spec.validate();
  const Eigen::Index n = data.size();
  if (spec.kind == ContaminationKind::Vertical && !data.has_targets)
    throw InvalidArgument("vertical contamination needs a dataset with targets");
  if (spec.kind == ContaminationKind::GoodLeverage) {
    if (feeder == nullptr) throw InvalidArgument("good_leverage contamination needs the feeder model");
    if (!data.has_scenarios())
      throw InvalidArgument("good_leverage contamination needs a dataset built from feeder scenarios");
  }

  std::vector<int> coords = spec.coordinates;
  if (coords.empty())
    for (Eigen::Index k = 0; k < data.dim(); ++k) coords.push_back(static_cast<int>(k));
  for (int c : coords)
    if (c >= data.dim())
      throw InvalidArgument("contamination coordinate " + std::to_string(c) + " exceeds input dimension " +
                            std::to_string(data.dim()));

  ContaminationResult out;
  out.data = data;
  out.mask.assign(static_cast<std::size_t>(n), false);
  const auto count = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
  Rng rng(spec.seed);
  out.rows = rng.sample(static_cast<std::size_t>(n), count);
  std::sort(out.rows.begin(), out.rows.end());
  for (std::size_t r : out.rows) out.mask[r] = true;
  if (out.rows.empty()) return out;

  if (spec.kind == ContaminationKind::Vertical) {
    const double shift = spec.magnitude * channel_scale(data.y);
    for (std::size_t r : out.rows) out.data.y(static_cast<Eigen::Index>(r)) += shift;
    return out;
  }

  std::vector<double> shifts;
  for (int c : coords) shifts.push_back(spec.magnitude * channel_scale(data.X.col(c)));
  for (std::size_t r : out.rows)
    for (std::size_t k = 0; k < coords.size(); ++k) out.data.X(static_cast<Eigen::Index>(r), coords[k]) += shifts[k];
  if (spec.kind == ContaminationKind::BadLeverage) return out;

  // Good leverage: move the underlying scenario to the shifted inputs and re-solve.
  const auto cols = input_columns(*feeder, data.layout);
  if (static_cast<Eigen::Index>(cols.size()) != data.dim())
    throw InvalidArgument("dataset layout does not match the feeder");
  const int out_idx = feeder->bus_index(data.output_bus);
  for (std::size_t r : out.rows) {
    const auto i = static_cast<Eigen::Index>(r);
    Scenario& s = out.data.scenarios[r];
    const Eigen::VectorXd net = s.net_p(*feeder);
    for (int c : coords) {
      const InputColumn& col = cols[c];
      const double x = out.data.X(i, c);
      switch (col.kind) {
        case InputColumn::Kind::Res: s.res_p(col.index) = x; break;
        case InputColumn::Kind::Load: {
          // Spread the new channel total over its buses in proportion to their current loads.
          double total = 0.0;
          for (int b : col.buses) total += s.load_p(b);
          for (int b : col.buses) {
            const double share = total > 0.0 ? s.load_p(b) / total : 1.0 / static_cast<double>(col.buses.size());
            s.set_load(*feeder, b, x * share);
          }
          break;
        }
        case InputColumn::Kind::Net: {
          const double gen = net(col.index) + s.load_p(col.index);
          s.set_load(*feeder, col.index, gen - x);
          break;
        }
      }
    }
    out.data.y(i) = output_value(solve_power_flow(*feeder, s, pf), out_idx, data.output_kind);
  }
  return out;
}

}  // namespace rngpe
