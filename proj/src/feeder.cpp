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
#include <fstream>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "rngpe/powerflow.hpp"
#include "text_util.hpp"

namespace rngpe {

namespace {

using detail::where;

struct LineInfo {
  std::string source = "<feeder>";
  std::vector<std::size_t> bus_lines;
  std::vector<std::size_t> branch_lines;
  std::vector<std::size_t> res_lines;

  std::string at(const std::vector<std::size_t>& lines, std::size_t i) const {
    if (i < lines.size()) return where(source, lines[i]);
    return source + ": ";
  }
};

int find_root(std::vector<int>& uf, int i) {
  while (uf[i] != i) {
    uf[i] = uf[uf[i]];
    i = uf[i];
  }
  return i;
}

std::string branch_name(const Branch& b) {
  return std::to_string(b.from) + "-" + std::to_string(b.to);
}

void build(FeederModel& f, const LineInfo& info) {
  const std::string head = info.source + ": ";
  if (!(f.base_kv > 0.0) || !std::isfinite(f.base_kv)) throw ParseError(head + "base_kv must be positive");
  if (!(f.base_kva > 0.0) || !std::isfinite(f.base_kva)) throw ParseError(head + "base_kva must be positive");
  if (f.buses.empty()) throw ParseError(head + "no buses defined");

  std::map<int, int> index;
  for (std::size_t i = 0; i < f.buses.size(); ++i) {
    const Bus& b = f.buses[i];
    if (!index.emplace(b.id, static_cast<int>(i)).second)
      throw ParseError(info.at(info.bus_lines, i) + "duplicate bus " + std::to_string(b.id));
    if (!std::isfinite(b.p_kw) || !std::isfinite(b.q_kvar) || b.p_kw < 0.0)
      throw ParseError(info.at(info.bus_lines, i) + "bus " + std::to_string(b.id) +
                       " needs a finite non-negative active load and a finite reactive load");
  }
  if (!index.count(f.substation))
    throw ParseError(head + "substation bus " + std::to_string(f.substation) + " is not defined");

  const int n = static_cast<int>(f.buses.size());
  std::vector<int> uf(n);
  std::iota(uf.begin(), uf.end(), 0);
  std::map<std::pair<int, int>, std::size_t> seen;
  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbour, branch)
  for (std::size_t k = 0; k < f.branches.size(); ++k) {
    const Branch& br = f.branches[k];
    const std::string at = info.at(info.branch_lines, k);
    for (int id : {br.from, br.to})
      if (!index.count(id))
        throw ParseError(at + "branch " + branch_name(br) + " references unknown bus " + std::to_string(id));
    if (br.from == br.to) throw ParseError(at + "branch " + branch_name(br) + " connects a bus to itself");
    if (!(br.r_ohm > 0.0) || !(br.x_ohm > 0.0) || !std::isfinite(br.r_ohm) || !std::isfinite(br.x_ohm))
      throw ParseError(at + "branch " + branch_name(br) + " needs positive finite resistance and reactance");
    const auto key = std::minmax(br.from, br.to);
    auto [it, fresh] = seen.emplace(key, k);
    if (!fresh) {
      std::string first = "branch " + std::to_string(it->second + 1);
      if (it->second < info.branch_lines.size()) first = "line " + std::to_string(info.branch_lines[it->second]);
      throw ParseError(at + "duplicate branch " + branch_name(br) + " (first defined on " + first + ")");
    }
    const int a = index[br.from], b = index[br.to];
    const int ra = find_root(uf, a), rb = find_root(uf, b);
    if (ra == rb) throw ParseError(at + "branch " + branch_name(br) + " closes a cycle; the feeder must be radial");
    uf[ra] = rb;
    adj[a].emplace_back(b, static_cast<int>(k));
    adj[b].emplace_back(a, static_cast<int>(k));
  }

  f.parent.assign(n, -1);
  f.parent_branch.assign(n, -1);
  f.children.assign(n, {});
  f.order.clear();
  std::vector<char> visited(n, 0);
  std::queue<int> q;
  const int root = index[f.substation];
  q.push(root);
  visited[root] = 1;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    f.order.push_back(u);
    for (auto [v, k] : adj[u]) {
      if (visited[v]) continue;
      visited[v] = 1;
      f.parent[v] = u;
      f.parent_branch[v] = k;
      f.children[u].push_back(v);
      q.push(v);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!visited[i])
      throw ParseError(info.at(info.bus_lines, i) + "bus " + std::to_string(f.buses[i].id) +
                       " is not connected to the substation");

  std::set<std::string> names;
  for (std::size_t u = 0; u < f.res_units.size(); ++u) {
    const ResUnit& r = f.res_units[u];
    const std::string at = info.at(info.res_lines, u);
    if (r.name.empty()) throw ParseError(at + "RES unit needs a name");
    if (!names.insert(r.name).second) throw ParseError(at + "duplicate RES unit " + r.name);
    if (!index.count(r.bus))
      throw ParseError(at + "RES unit " + r.name + " references unknown bus " + std::to_string(r.bus));
    if (!(r.capacity_kw > 0.0) || !std::isfinite(r.capacity_kw))
      throw ParseError(at + "RES unit " + r.name + " needs a positive capacity");
  }
}

const std::map<std::string, std::string> kUnits = {
    {"power", "kW"}, {"reactive", "kvar"}, {"impedance", "ohm"}, {"capacity", "kW"}};

}  // namespace

void FeederModel::finalize() { build(*this, LineInfo{}); }

int FeederModel::bus_index(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == id) return static_cast<int>(i);
  throw InvalidArgument("unknown bus " + std::to_string(id));
}

FeederModel parse_feeder(std::istream& in, const std::string& source) {
  FeederModel f;
  f.base_kv = 0.0;
  f.base_kva = 0.0;
  LineInfo info;
  info.source = source;

  std::string raw;
  std::size_t lineno = 0;
  bool header = false, have_units = false;
  std::set<std::string> have_keys;
  std::string section;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto tok = detail::split_ws(line);
    const std::string at = where(source, lineno);

    if (!header) {
      if (tok.size() != 2 || tok[0] != "rngpe-feeder")
        throw ParseError(at + "expected header 'rngpe-feeder <version>'");
      const auto dot = tok[1].find('.');
      long major = -1;
      if (!detail::to_long(tok[1].substr(0, dot), major))
        throw ParseError(at + "malformed format version '" + tok[1] + "'");
      if (major != kFeederFormatMajor)
        throw ParseError(at + "unsupported feeder format version " + tok[1] + " (supported: " +
                         std::to_string(kFeederFormatMajor) + ".x)");
      header = true;
      continue;
    }

    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(at + "malformed section header");
      section = std::string(line.substr(1, line.size() - 2));
      if (section != "buses" && section != "branches" && section != "res")
        throw ParseError(at + "unknown section [" + section + "]");
      continue;
    }

    auto number = [&](const std::string& s, const char* what) {
      double v;
      if (!detail::to_double(s, v) || !std::isfinite(v))
        throw ParseError(at + "invalid " + std::string(what) + " '" + s + "'");
      return v;
    };
    auto integer = [&](const std::string& s, const char* what) {
      long v;
      if (!detail::to_long(s, v)) throw ParseError(at + "invalid " + std::string(what) + " '" + s + "'");
      return static_cast<int>(v);
    };

    if (section.empty()) {
      const std::string& key = tok[0];
      if (!have_keys.insert(key).second) throw ParseError(at + "duplicate key '" + key + "'");
      if (key == "units") {
        for (std::size_t i = 1; i < tok.size(); ++i) {
          const auto eq = tok[i].find('=');
          if (eq == std::string::npos) throw ParseError(at + "malformed unit declaration '" + tok[i] + "'");
          const std::string k = tok[i].substr(0, eq), v = tok[i].substr(eq + 1);
          auto it = kUnits.find(k);
          if (it == kUnits.end()) throw ParseError(at + "unknown unit quantity '" + k + "'");
          if (it->second != v)
            throw ParseError(at + "unsupported unit '" + v + "' for " + k + " (expected " + it->second + ")");
        }
        have_units = true;
        continue;
      }
      if (tok.size() != 2) throw ParseError(at + "expected '<key> <value>'");
      if (key == "name")
        f.name = tok[1];
      else if (key == "base_kv")
        f.base_kv = number(tok[1], "base_kv");
      else if (key == "base_kva")
        f.base_kva = number(tok[1], "base_kva");
      else if (key == "substation")
        f.substation = integer(tok[1], "substation bus");
      else
        throw ParseError(at + "unknown key '" + key + "'");
    } else if (section == "buses") {
      if (tok.size() != 3) throw ParseError(at + "bus rows need 3 columns: id p_kw q_kvar");
      f.buses.push_back({integer(tok[0], "bus id"), number(tok[1], "p_kw"), number(tok[2], "q_kvar")});
      info.bus_lines.push_back(lineno);
    } else if (section == "branches") {
      if (tok.size() != 4) throw ParseError(at + "branch rows need 4 columns: from to r_ohm x_ohm");
      f.branches.push_back({integer(tok[0], "bus id"), integer(tok[1], "bus id"), number(tok[2], "resistance"),
                            number(tok[3], "reactance")});
      info.branch_lines.push_back(lineno);
    } else {
      if (tok.size() != 4) throw ParseError(at + "res rows need 4 columns: name bus type capacity_kw");
      ResUnit r;
      r.name = tok[0];
      r.bus = integer(tok[1], "bus id");
      if (tok[2] == "PV")
        r.type = ResType::PV;
      else if (tok[2] == "WG")
        r.type = ResType::WG;
      else
        throw ParseError(at + "unknown RES type '" + tok[2] + "' (expected PV or WG)");
      r.capacity_kw = number(tok[3], "capacity");
      f.res_units.push_back(r);
      info.res_lines.push_back(lineno);
    }
  }
  if (!header) throw ParseError(source + ": empty feeder file");
  if (!have_units) throw ParseError(source + ": missing 'units' declaration");
  for (const char* k : {"base_kv", "base_kva"})
    if (!have_keys.count(k)) throw ParseError(source + ": missing '" + std::string(k) + "'");
  build(f, info);
  return f;
}

FeederModel load_feeder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feeder file " + path);
  return parse_feeder(in, path);
}

std::string format_feeder(const FeederModel& f) {
  std::ostringstream os;
  os << "rngpe-feeder " << kFeederFormatMajor << ".0\n";
  if (!f.name.empty()) os << "name " << f.name << "\n";
  os << "base_kv " << detail::fmt17(f.base_kv) << "\n";
  os << "base_kva " << detail::fmt17(f.base_kva) << "\n";
  os << "substation " << f.substation << "\n";
  os << "units power=kW reactive=kvar impedance=ohm capacity=kW\n\n[buses]\n";
  for (const Bus& b : f.buses)
    os << b.id << " " << detail::fmt17(b.p_kw) << " " << detail::fmt17(b.q_kvar) << "\n";
  os << "\n[branches]\n";
  for (const Branch& b : f.branches)
    os << b.from << " " << b.to << " " << detail::fmt17(b.r_ohm) << " " << detail::fmt17(b.x_ohm) << "\n";
  os << "\n[res]\n";
  for (const ResUnit& r : f.res_units)
    os << r.name << " " << r.bus << " " << (r.type == ResType::PV ? "PV" : "WG") << " "
       << detail::fmt17(r.capacity_kw) << "\n";
  return os.str();
}

Eigen::VectorXd Scenario::net_p(const FeederModel& feeder) const {
  Eigen::VectorXd net = -load_p;
  for (std::size_t u = 0; u < feeder.res_units.size(); ++u)
    net(feeder.bus_index(feeder.res_units[u].bus)) += res_p(static_cast<Eigen::Index>(u));
  return net;
}

void Scenario::set_load(const FeederModel& feeder, int bus, double p) {
  const Bus& b = feeder.buses[static_cast<std::size_t>(bus)];
  load_p(bus) = p;
  if (b.p_kw > 0.0) load_q(bus) = p * b.q_kvar / b.p_kw;
}

Scenario base_scenario(const FeederModel& feeder) {
  Scenario s;
  const auto n = static_cast<Eigen::Index>(feeder.size());
  s.load_p.resize(n);
  s.load_q.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s.load_p(i) = feeder.buses[i].p_kw;
    s.load_q(i) = feeder.buses[i].q_kvar;
  }
  s.res_p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(feeder.res_units.size()));
  return s;
}

}  // namespace rngpe
