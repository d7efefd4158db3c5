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

#include <cmath>
#include <sstream>

#include "rngpe/powerflow.hpp"

namespace rngpe {

namespace {

using cplx = std::complex<double>;

void check_scenario(const FeederModel& feeder, const Scenario& s) {
  const auto n = static_cast<Eigen::Index>(feeder.size());
  if (s.load_p.size() != n || s.load_q.size() != n)
    throw InvalidArgument("scenario load vectors must have one entry per bus");
  if (s.res_p.size() != static_cast<Eigen::Index>(feeder.res_units.size()))
    throw InvalidArgument("scenario RES vector must have one entry per RES unit");
  if (!s.load_p.allFinite() || !s.load_q.allFinite() || !s.res_p.allFinite())
    throw InvalidArgument("scenario injections must be finite");
  if (feeder.order.size() != feeder.size()) throw InvalidArgument("feeder topology not built; call finalize()");
}

}  // namespace

PowerFlowSolution solve_power_flow(const FeederModel& feeder, const Scenario& scenario,
                                   const PowerFlowOptions& opts) {
  check_scenario(feeder, scenario);
  if (!(opts.tol > 0.0) || opts.max_iter < 1) throw InvalidArgument("power flow needs tol > 0 and max_iter >= 1");

  const int n = static_cast<int>(feeder.size());
  const int root = feeder.root();
  const double zb = feeder.impedance_base();

  // Complex power consumed at each bus, per unit.
  std::vector<cplx> s(n);
  const Eigen::VectorXd net = scenario.net_p(feeder);
  for (int i = 0; i < n; ++i) s[i] = cplx(-net(i), scenario.load_q(i)) / feeder.base_kva;
  s[root] = 0.0;

  std::vector<cplx> z(feeder.branches.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = cplx(feeder.branches[k].r_ohm, feeder.branches[k].x_ohm) / zb;

  std::vector<cplx> v(n, cplx(1.0, 0.0)), load_i(n), j(feeder.branches.size());
  std::vector<double> trace;
  PowerFlowSolution sol;
  bool converged = false;
  for (int it = 1; it <= opts.max_iter; ++it) {
    for (int i = 0; i < n; ++i) load_i[i] = std::conj(s[i] / v[i]);

    for (auto r = feeder.order.rbegin(); r != feeder.order.rend(); ++r) {
      const int b = *r;
      if (b == root) continue;
      cplx acc = load_i[b];
      for (int c : feeder.children[b]) acc += j[feeder.parent_branch[c]];
      j[feeder.parent_branch[b]] = acc;
    }
    for (int b : feeder.order) {
      if (b == root) continue;
      const int k = feeder.parent_branch[b];
      v[b] = v[feeder.parent[b]] - z[k] * j[k];
      if (std::abs(v[b]) < 0.5) {
        std::ostringstream os;
        os << "power flow diverged: voltage collapse at bus " << feeder.buses[b].id << " (|V| = " << std::abs(v[b])
           << " pu) in iteration " << it;
        throw PowerFlowDiverged(os.str());
      }
    }

    double mismatch = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i == root) continue;
      mismatch = std::max(mismatch, std::abs(v[i] * std::conj(load_i[i]) - s[i]));
    }
    trace.push_back(mismatch);
    sol.iterations = it;
    sol.max_mismatch = mismatch;
    if (mismatch < opts.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "power flow did not converge in " << opts.max_iter << " iterations (tol " << opts.tol
       << "); mismatch trace:";
    const std::size_t from = trace.size() > 10 ? trace.size() - 10 : 0;
    if (from > 0) os << " ...";
    for (std::size_t i = from; i < trace.size(); ++i) os << " " << trace[i];
    throw NumericalError(os.str());
  }

  sol.voltage = v;
  sol.branch_current = j;
  sol.magnitude.resize(n);
  sol.angle.resize(n);
  for (int i = 0; i < n; ++i) {
    sol.magnitude(i) = std::abs(v[i]);
    sol.angle(i) = std::arg(v[i]);
  }
  cplx out = 0.0;
  for (int c : feeder.children[root]) out += j[feeder.parent_branch[c]];
  sol.substation_power = v[root] * std::conj(out);
  sol.losses = 0.0;
  for (std::size_t k = 0; k < j.size(); ++k) sol.losses += z[k] * std::norm(j[k]);
  return sol;
}

}  // namespace rngpe
