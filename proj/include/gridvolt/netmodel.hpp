#pragma once

// Static feeder model: buses, branches, PV/SVC placements, per-unit base,
// JSON ingestion and the bus admittance matrix.

#include <Eigen/Dense>
#include <algorithm>
#include <complex>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"

namespace gridvolt {

enum class BusKind { slack, pq };

struct Bus {
  int id = 0;  // external 1-based id, as in the bundled data files
  BusKind kind = BusKind::pq;
  double v_min = 0.95;
  double v_max = 1.05;
  double base_kv = 0.0;

  friend bool operator==(const Bus&, const Bus&) = default;
};

struct Branch {
  int from = 0;  // bus indices (0-based positions in Network::buses)
  int to = 0;
  double r = 0.0;     // per-unit series resistance
  double x = 0.0;     // per-unit series reactance
  double i_max = 0.0; // per-unit current limit (large sentinel when absent)

  friend bool operator==(const Branch&, const Branch&) = default;
};

struct PvUnit {
  int bus = 0;  // bus index
  double p_rated_mw = 0.0;
  double s_mva = 0.0;

  friend bool operator==(const PvUnit&, const PvUnit&) = default;
};

struct SvcUnit {
  int bus = 0;  // bus index
  double q_min_mvar = 0.0;
  double q_max_mvar = 0.0;

  friend bool operator==(const SvcUnit&, const SvcUnit&) = default;
};

// Current limits default to this when the data file omits them; limits are
// reported, never enforced.
inline constexpr double kNoCurrentLimit = 1e9;

struct Network {
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<PvUnit> pvs;
  std::vector<SvcUnit> svcs;
  double s_base_mva = 1.0;
  Eigen::VectorXd load_p_mw;   // per-bus base load
  Eigen::VectorXd load_q_mvar;

  int n() const { return static_cast<int>(buses.size()); }

  int slack_index() const {
    for (int i = 0; i < n(); ++i)
      if (buses[i].kind == BusKind::slack) return i;
    throw InvariantViolation("network has no slack bus");
  }

  /// Index of the bus with external id `id`; -1 when absent.
  int bus_index(int id) const {
    for (int i = 0; i < n(); ++i)
      if (buses[i].id == id) return i;
    return -1;
  }

  friend bool operator==(const Network& a, const Network& b) {
    return a.buses == b.buses && a.branches == b.branches && a.pvs == b.pvs &&
           a.svcs == b.svcs && a.s_base_mva == b.s_base_mva &&
           a.load_p_mw == b.load_p_mw && a.load_q_mvar == b.load_q_mvar;
  }
};

struct AdmittanceMatrix {
  Eigen::MatrixXd g;  // real part, per-unit
  Eigen::MatrixXd b;  // imaginary part, per-unit
};

inline double to_per_unit(const Network& net, double value_mw_or_mvar) {
  return value_mw_or_mvar / net.s_base_mva;
}

namespace detail {

inline void require(bool ok, const std::string& rule) {
  if (!ok) throw InvariantViolation(rule);
}

inline int line_of_offset(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

/// Check every type invariant. Messages name the failing rule.
inline void validate_network(const Network& net) {
  using detail::require;
  const int n = net.n();
  require(n >= 2, "network must have at least two buses");
  require(net.s_base_mva > 0, "s_base_mva must be positive");

  int slack_count = 0;
  for (const Bus& bus : net.buses) {
    if (bus.kind == BusKind::slack) ++slack_count;
    require(bus.v_min > 0 && bus.v_min < bus.v_max,
            "bus " + std::to_string(bus.id) + ": requires 0 < v_min < v_max");
  }
  require(slack_count == 1, "exactly one slack bus required, found " +
                                std::to_string(slack_count));

  for (const Branch& br : net.branches) {
    require(br.from != br.to, "branch endpoints must differ");
    require(br.from >= 0 && br.from < n && br.to >= 0 && br.to < n,
            "branch endpoint out of range");
    require(br.r >= 0, "branch r must be >= 0");
    require(br.x > 0, "branch x must be > 0");
    require(br.i_max > 0, "branch i_max must be > 0");
  }

  require(static_cast<int>(net.branches.size()) == n - 1, "not radial");
  // Spanning check: |E| = |V|-1 plus connectivity makes the graph a tree.
  std::vector<std::vector<int>> adj(n);
  for (const Branch& br : net.branches) {
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{net.slack_index()};
  seen[stack.back()] = 1;
  int reached = 1;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    for (int v : adj[u])
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        stack.push_back(v);
      }
  }
  require(reached == n, "not radial");

  for (const PvUnit& pv : net.pvs) {
    require(pv.bus >= 0 && pv.bus < n, "pv bus id not in network");
    require(pv.p_rated_mw > 0 && pv.s_mva >= pv.p_rated_mw,
            "pv requires s_apparent >= p_rated > 0");
  }
  for (const SvcUnit& svc : net.svcs) {
    require(svc.bus >= 0 && svc.bus < n, "svc bus id not in network");
    require(svc.q_min_mvar <= 0 && svc.q_max_mvar >= 0,
            "svc requires q_min <= 0 <= q_max");
  }
  require(static_cast<int>(net.load_p_mw.size()) == n &&
              static_cast<int>(net.load_q_mvar.size()) == n,
          "load arrays must cover every bus");
}

inline Network network_from_json(const nlohmann::json& doc) {
  Network net;
  net.s_base_mva = doc.at("s_base_mva").get<double>();
  const double base_kv = doc.at("base_kv").get<double>();

  for (const auto& jb : doc.at("buses")) {
    Bus bus;
    bus.id = jb.at("id").get<int>();
    const std::string kind = jb.at("kind").get<std::string>();
    if (kind == "slack")
      bus.kind = BusKind::slack;
    else if (kind == "pq")
      bus.kind = BusKind::pq;
    else
      throw ParseError("unknown bus kind '" + kind + "'");
    bus.v_min = jb.value("v_min", 0.95);
    bus.v_max = jb.value("v_max", 1.05);
    bus.base_kv = jb.value("base_kv", base_kv);
    net.buses.push_back(bus);
  }

  auto index_of = [&](int id, const char* what) {
    int idx = net.bus_index(id);
    if (idx < 0)
      throw InvariantViolation(std::string(what) + " references unknown bus id " +
                               std::to_string(id));
    return idx;
  };

  for (const auto& jb : doc.at("branches")) {
    Branch br;
    br.from = index_of(jb.at("from").get<int>(), "branch");
    br.to = index_of(jb.at("to").get<int>(), "branch");
    br.r = jb.at("r_pu").get<double>();
    br.x = jb.at("x_pu").get<double>();
    br.i_max = jb.value("i_max_pu", kNoCurrentLimit);
    net.branches.push_back(br);
  }

  net.load_p_mw = Eigen::VectorXd::Zero(net.n());
  net.load_q_mvar = Eigen::VectorXd::Zero(net.n());
  if (doc.contains("loads")) {
    for (const auto& jl : doc.at("loads")) {
      int idx = index_of(jl.at("bus").get<int>(), "load");
      net.load_p_mw[idx] += jl.at("p_mw").get<double>();
      net.load_q_mvar[idx] += jl.at("q_mvar").get<double>();
    }
  }

  if (doc.contains("pvs")) {
    for (const auto& jp : doc.at("pvs")) {
      PvUnit pv;
      pv.bus = index_of(jp.at("bus").get<int>(), "pv");
      pv.p_rated_mw = jp.at("p_rated_mw").get<double>();
      pv.s_mva = jp.at("s_mva").get<double>();
      net.pvs.push_back(pv);
    }
  }
  if (doc.contains("svcs")) {
    for (const auto& js : doc.at("svcs")) {
      SvcUnit svc;
      svc.bus = index_of(js.at("bus").get<int>(), "svc");
      svc.q_min_mvar = js.at("q_min_mvar").get<double>();
      svc.q_max_mvar = js.at("q_max_mvar").get<double>();
      net.svcs.push_back(svc);
    }
  }

  std::sort(net.pvs.begin(), net.pvs.end(),
            [](const PvUnit& a, const PvUnit& b) { return a.bus < b.bus; });
  std::sort(net.svcs.begin(), net.svcs.end(),
            [](const SvcUnit& a, const SvcUnit& b) { return a.bus < b.bus; });

  validate_network(net);
  return net;
}

inline Network load_network_from_string(const std::string& text,
                                        const std::string& origin = "<string>") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ":" +
                     std::to_string(detail::line_of_offset(text, e.byte)) + ": " +
                     e.what());
  }
  try {
    return network_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open network file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_network_from_string(ss.str(), path);
}

inline std::string serialize_network(const Network& net) {
  nlohmann::json doc;
  doc["s_base_mva"] = net.s_base_mva;
  doc["base_kv"] = net.buses.empty() ? 0.0 : net.buses.front().base_kv;
  auto& jbuses = doc["buses"] = nlohmann::json::array();
  for (const Bus& bus : net.buses) {
    jbuses.push_back({{"id", bus.id},
                      {"kind", bus.kind == BusKind::slack ? "slack" : "pq"},
                      {"v_min", bus.v_min},
                      {"v_max", bus.v_max},
                      {"base_kv", bus.base_kv}});
  }
  auto& jbranches = doc["branches"] = nlohmann::json::array();
  for (const Branch& br : net.branches) {
    jbranches.push_back({{"from", net.buses[br.from].id},
                         {"to", net.buses[br.to].id},
                         {"r_pu", br.r},
                         {"x_pu", br.x},
                         {"i_max_pu", br.i_max}});
  }
  auto& jloads = doc["loads"] = nlohmann::json::array();
  for (int i = 0; i < net.n(); ++i) {
    if (net.load_p_mw[i] != 0.0 || net.load_q_mvar[i] != 0.0)
      jloads.push_back({{"bus", net.buses[i].id},
                        {"p_mw", net.load_p_mw[i]},
                        {"q_mvar", net.load_q_mvar[i]}});
  }
  auto& jpvs = doc["pvs"] = nlohmann::json::array();
  for (const PvUnit& pv : net.pvs)
    jpvs.push_back({{"bus", net.buses[pv.bus].id},
                    {"p_rated_mw", pv.p_rated_mw},
                    {"s_mva", pv.s_mva}});
  auto& jsvcs = doc["svcs"] = nlohmann::json::array();
  for (const SvcUnit& svc : net.svcs)
    jsvcs.push_back({{"bus", net.buses[svc.bus].id},
                     {"q_min_mvar", svc.q_min_mvar},
                     {"q_max_mvar", svc.q_max_mvar}});
  return doc.dump(1);
}

/// Bus admittance matrix from branch series impedances, y = 1/(r + jx).
/// No shunt elements: off-diagonal row sums equal the negated diagonal.
inline AdmittanceMatrix build_admittance(const Network& net) {
  const int n = net.n();
  AdmittanceMatrix y;
  y.g = Eigen::MatrixXd::Zero(n, n);
  y.b = Eigen::MatrixXd::Zero(n, n);
  for (const Branch& br : net.branches) {
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const int i = br.from, j = br.to;
    y.g(i, j) -= ys.real();
    y.g(j, i) -= ys.real();
    y.b(i, j) -= ys.imag();
    y.b(j, i) -= ys.imag();
    y.g(i, i) += ys.real();
    y.g(j, j) += ys.real();
    y.b(i, i) += ys.imag();
    y.b(j, j) += ys.imag();
  }
  return y;
}

}  // namespace gridvolt
