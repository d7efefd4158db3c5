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

#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "rngpe/experiment.hpp"
#include "rngpe/powerflow.hpp"
#include "rngpe/random.hpp"

using namespace rngpe;

namespace {

const std::string kHeader =
    "rngpe-feeder 1.0\n"
    "name tiny\n"
    "base_kv 12.66\n"
    "base_kva 10000\n"
    "substation 1\n"
    "units power=kW reactive=kvar impedance=ohm capacity=kW\n";

FeederModel parse(const std::string& text) {
  std::istringstream in(text);
  return parse_feeder(in, "tiny.feeder");
}

std::string two_bus(double p, double q, double r, double x) {
  std::ostringstream s;
  s.precision(17);
  s << kHeader << "[buses]\n1 0 0\n2 " << p << ' ' << q << "\n[branches]\n1 2 " << r << ' ' << x << '\n';
  return s.str();
}

FeederModel ieee33() { return load_feeder(std::string(RNGPE_DATA_DIR) + "/ieee33.feeder"); }

std::vector<Scenario> random_scenarios(const FeederModel& f, std::size_t n, std::uint64_t seed) {
  const ResSeries series = synthetic_res_series(f, static_cast<Eigen::Index>(n), seed);
  ScenarioOptions opts;
  opts.load_cv = 0.2;
  return generate_scenarios(f, n, series, seed + 1, opts);
}

}  // namespace

TEST_CASE("bundled feeder is the 33-bus radial test case") {
  const FeederModel f = ieee33();
  CHECK(f.size() == 33);
  CHECK(f.branches.size() == 32);
  CHECK(f.res_units.size() == 4);
  CHECK(f.buses[static_cast<std::size_t>(f.root())].id == 1);
  CHECK(f.order.size() == 33);
  // Round trip through the canonical text.
  CHECK(format_feeder(parse(format_feeder(f))) == format_feeder(f));
}

TEST_CASE("minimal two-bus feeder loads") {
  const FeederModel f = parse(two_bus(100, 50, 0.5, 0.3));
  CHECK(f.size() == 2);
  CHECK(f.branches.size() == 1);
  CHECK(f.res_units.empty());
  CHECK(f.parent[1] == 0);
}

TEST_CASE("feeder parse errors") {
  const std::string buses = "[buses]\n1 0 0\n2 10 5\n3 10 5\n";
  CHECK_THROWS_WITH_AS(parse(kHeader + buses + "[branches]\n1 2 0.1 0.1\n2 3 0.1 0.1\n1 2 0.2 0.2\n"),
                       doctest::Contains("duplicate branch 1-2"), ParseError);
  CHECK_THROWS_WITH_AS(parse(kHeader + buses + "[branches]\n1 2 0.1 0.1\n2 3 0.1 0.1\n3 1 0.1 0.1\n"),
                       doctest::Contains("cycle"), ParseError);
  CHECK_THROWS_WITH_AS(parse(kHeader + buses + "[branches]\n1 2 0.1 0.1\n2 4 0.1 0.1\n"),
                       doctest::Contains("unknown bus 4"), ParseError);
  CHECK_THROWS_WITH_AS(parse(kHeader + buses + "[branches]\n1 2 0.1 0.1\n2 4 0.1 0.1\n"),
                       doctest::Contains("tiny.feeder:13:"), ParseError);
  CHECK_THROWS_WITH_AS(parse("rngpe-feeder 2.0\n"), doctest::Contains("unsupported feeder format version"), ParseError);
  CHECK_THROWS_AS(parse(kHeader + buses + "[branches]\n1 2 0.1 0.1\n"), ParseError);
  CHECK_THROWS_AS(parse(kHeader + buses + "[branches]\n1 2 -0.1 0.1\n2 3 0.1 0.1\n"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(load_feeder("no/such/file.feeder"), IoError);
}

TEST_CASE("zero loads give a flat voltage profile") {
  const FeederModel f = ieee33();
  Scenario s = base_scenario(f);
  s.load_p.setZero();
  s.load_q.setZero();
  const PowerFlowSolution sol = solve_power_flow(f, s);
  CHECK((sol.magnitude.array() - 1.0).abs().maxCoeff() == 0.0);
  CHECK(sol.angle.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-bus feeder matches the closed-form voltage drop") {
  for (double p : {50.0, 400.0, 2000.0}) {
    const double q = 0.6 * p, r_ohm = 0.9, x_ohm = 0.5;
    const FeederModel f = parse(two_bus(p, q, r_ohm, x_ohm));
    const PowerFlowSolution sol = solve_power_flow(f, base_scenario(f), {1e-12, 100});
    const double R = r_ohm / f.impedance_base(), X = x_ohm / f.impedance_base();
    const double P = p / f.base_kva, Q = q / f.base_kva;
    const double b = 1.0 - 2.0 * (R * P + X * Q);
    const double v2 = std::sqrt((b + std::sqrt(b * b - 4.0 * (R * R + X * X) * (P * P + Q * Q))) / 2.0);
    const double delta = -std::atan2(X * P - R * Q, v2 * v2 + R * P + X * Q);
    CHECK(sol.magnitude(1) == doctest::Approx(v2).epsilon(1e-8));
    CHECK(std::abs(sol.angle(1) - delta) <= 1e-8);
    CHECK(sol.magnitude(0) == 1.0);
    CHECK(sol.angle(0) == 0.0);
  }
}

TEST_CASE("33-bus base case matches the published solution and a Newton solve") {
  const FeederModel f = ieee33();
  const Scenario s = base_scenario(f);
  const PowerFlowSolution sol = solve_power_flow(f, s);
  CHECK(sol.max_mismatch <= 1e-8);
  CHECK(sol.losses.real() * f.base_kva == doctest::Approx(202.68).epsilon(5e-4));
  CHECK(sol.magnitude(f.bus_index(18)) == doctest::Approx(0.91309).epsilon(2e-5));
  CHECK(sol.magnitude.minCoeff() == sol.magnitude(f.bus_index(18)));
  const auto ref = oracle::newton_power_flow(f, s);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(std::abs(sol.voltage[i] - ref[i]) <= 1e-6);
}

TEST_CASE("property: sweep and Newton solvers agree on random scenarios") {
  const FeederModel f = ieee33();
  const auto scenarios = random_scenarios(f, 50, 11);
  double worst = 0.0;
  for (const Scenario& s : scenarios) {
    const PowerFlowSolution sol = solve_power_flow(f, s);
    const auto ref = oracle::newton_power_flow(f, s);
    for (std::size_t i = 0; i < f.size(); ++i) worst = std::max(worst, std::abs(sol.voltage[i] - ref[i]));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("property: injected power equals consumption plus losses") {
  const FeederModel f = ieee33();
  for (const Scenario& s : random_scenarios(f, 20, 12)) {
    const PowerFlowSolution sol = solve_power_flow(f, s);
    const Eigen::VectorXd net = s.net_p(f);
    const double consumed_p = -net.sum() / f.base_kva;
    const double consumed_q = s.load_q.sum() / f.base_kva;
    CHECK(std::abs(sol.substation_power.real() - consumed_p - sol.losses.real()) <= 1e-6);
    CHECK(std::abs(sol.substation_power.imag() - consumed_q - sol.losses.imag()) <= 1e-6);
  }
}

TEST_CASE("property: voltage drops monotonically along the main feeder") {
  const FeederModel f = ieee33();
  for (const Scenario& s : random_scenarios(f, 20, 13)) {
    const PowerFlowSolution sol = solve_power_flow(f, s);
    for (int id = 2; id <= 18; ++id) CHECK(sol.magnitude(f.bus_index(id)) <= sol.magnitude(f.bus_index(id - 1)));
  }
}

TEST_CASE("voltage collapse is reported as divergence") {
  const FeederModel f = parse(two_bus(1e6, 5e5, 5.0, 5.0));
  CHECK_THROWS_AS(solve_power_flow(f, base_scenario(f)), PowerFlowDiverged);
}

TEST_CASE("scenario generator matches its load distribution") {
  const FeederModel f = ieee33();
  const std::size_t n = 10000;
  const ResSeries series = synthetic_res_series(f, static_cast<Eigen::Index>(n), 5);
  const auto scenarios = generate_scenarios(f, n, series, 6);
  REQUIRE(scenarios.size() == n);
  const int bus = f.bus_index(7);
  const double base = f.buses[static_cast<std::size_t>(bus)].p_kw;
  double sum = 0.0, sq = 0.0;
  for (const Scenario& s : scenarios) {
    sum += s.load_p(bus);
    sq += s.load_p(bus) * s.load_p(bus);
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt((sq - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1));
  CHECK(std::abs(mean - base) <= 0.01 * base);
  CHECK(std::abs(sd - 0.05 * base) <= 0.05 * 0.05 * base);
  // Constant power factor.
  const Scenario& s = scenarios.front();
  CHECK(s.load_q(bus) / s.load_p(bus) == doctest::Approx(f.buses[static_cast<std::size_t>(bus)].q_kvar / base));
  // RES output = capacity * series.
  for (std::size_t u = 0; u < f.res_units.size(); ++u)
    CHECK(s.res_p(static_cast<Eigen::Index>(u)) ==
          doctest::Approx(f.res_units[u].capacity_kw * series.values(static_cast<Eigen::Index>(u), 0)));
}

TEST_CASE("scenario generator examples") {
  const FeederModel f = ieee33();
  ResSeries series = synthetic_res_series(f, 3, 1);
  const auto a = generate_scenarios(f, 1, series, 9);
  const auto b = generate_scenarios(f, 1, series, 9);
  REQUIRE(a.size() == 1);
  CHECK(a[0].load_p == b[0].load_p);
  CHECK(a[0].res_p == b[0].res_p);
  series.values.setZero();
  const auto z = generate_scenarios(f, 3, series, 9);
  for (const Scenario& s : z) CHECK(s.res_p.isZero(0.0));
  CHECK_THROWS_AS(generate_scenarios(f, 4, series, 9), InvalidArgument);
  ScenarioOptions only;
  only.stochastic_buses = {7};
  const auto c = generate_scenarios(f, 2, series, 9, only);
  CHECK(c[0].load_p(f.bus_index(8)) == f.buses[static_cast<std::size_t>(f.bus_index(8))].p_kw);
  CHECK(c[0].load_p(f.bus_index(7)) != f.buses[static_cast<std::size_t>(f.bus_index(7))].p_kw);
}

TEST_CASE("synthetic RES series stays in the unit interval and round trips through CSV") {
  const FeederModel f = ieee33();
  const ResSeries s = synthetic_res_series(f, 500, 3, 0.2);
  CHECK(s.values.minCoeff() >= 0.0);
  CHECK(s.values.maxCoeff() <= 1.0);
  CHECK(s.unit_ids.size() == f.res_units.size());
  const std::string path = "test_powerflow_series.csv";
  save_res_series(s, path);
  const ResSeries r = load_res_series(path, f);
  std::remove(path.c_str());
  CHECK(r.unit_ids == s.unit_ids);
  CHECK(r.values == s.values);
  CHECK_THROWS_AS(load_res_series("no/such/series.csv", f), IoError);
}
