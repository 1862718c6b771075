#pragma once

// The Markov-game environment: exogenous scenario profiles, cluster-local
// observations, normalized actions mapped to device setpoints, power-flow
// stepping, and the shared reward -sum|V_i - V0|.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/partition.hpp"
#include "gridvolt/powerflow.hpp"

namespace gridvolt {

class MissingAgentAction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownAgent : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioProfile {
  int t_count = 0;      // T
  double dt_s = 0.0;    // seconds per step
  Eigen::MatrixXd load_p_mw;    // T x N
  Eigen::MatrixXd load_q_mvar;  // T x N
  Eigen::MatrixXd pv_avail_mw;  // T x |pvs|, columns in net.pvs order
};

/// One control sub-network: its buses and the devices that live on them.
struct ClusterSpec {
  std::vector<int> buses;  // bus indices, ascending
  std::vector<int> svcs;   // indices into net.svcs
  std::vector<int> pvs;    // indices into net.pvs

  int observation_dim() const {
    return 2 * static_cast<int>(buses.size()) + static_cast<int>(pvs.size());
  }
  int action_dim() const {
    return static_cast<int>(svcs.size()) + static_cast<int>(pvs.size());
  }
};

/// Split the feeder along a partition; every cluster must end up with at
/// least one controllable device.
inline std::vector<ClusterSpec> make_clusters(const Network& net,
                                              const PartitionResult& part) {
  std::vector<ClusterSpec> clusters(part.k);
  for (std::size_t row = 0; row < part.assignment.size(); ++row)
    clusters[part.assignment[row]].buses.push_back(part.buses[row]);
  for (auto& c : clusters) std::sort(c.buses.begin(), c.buses.end());

  auto cluster_of_bus = [&](int bus) {
    for (std::size_t j = 0; j < clusters.size(); ++j)
      if (std::binary_search(clusters[j].buses.begin(),
                             clusters[j].buses.end(), bus))
        return static_cast<int>(j);
    return -1;
  };
  for (std::size_t d = 0; d < net.svcs.size(); ++d) {
    const int j = cluster_of_bus(net.svcs[d].bus);
    if (j >= 0) clusters[j].svcs.push_back(static_cast<int>(d));
  }
  for (std::size_t d = 0; d < net.pvs.size(); ++d) {
    const int j = cluster_of_bus(net.pvs[d].bus);
    if (j >= 0) clusters[j].pvs.push_back(static_cast<int>(d));
  }

  for (std::size_t j = 0; j < clusters.size(); ++j)
    if (clusters[j].action_dim() == 0)
      throw ConfigError("cluster " + std::to_string(j) +
                        " has no controllable device; choose another "
                        "partition or adjust the device placement");
  return clusters;
}

/// Device setpoints from normalized actions (clipped to [-1,1]):
///   SVC: Q = q_min + (a+1)/2 * (q_max - q_min)
///   PV:  Q = a * sqrt(max(0, S^2 - P_avail^2)), P = full availability.
inline Injections map_actions(const Network& net,
                              const std::vector<ClusterSpec>& clusters,
                              const ScenarioProfile& profile, int t,
                              const std::vector<Eigen::VectorXd>& actions) {
  if (actions.size() != clusters.size())
    throw MissingAgentAction("expected " + std::to_string(clusters.size()) +
                             " action vectors, got " +
                             std::to_string(actions.size()));

  Injections inj;
  inj.p = -profile.load_p_mw.row(t).transpose() / net.s_base_mva;
  inj.q = -profile.load_q_mvar.row(t).transpose() / net.s_base_mva;

  for (std::size_t j = 0; j < clusters.size(); ++j) {
    const ClusterSpec& cluster = clusters[j];
    if (actions[j].size() != cluster.action_dim())
      throw MissingAgentAction(
          "agent " + std::to_string(j) + " action has " +
          std::to_string(actions[j].size()) + " components, expected " +
          std::to_string(cluster.action_dim()));

    int slot = 0;
    for (int d : cluster.svcs) {
      const SvcUnit& svc = net.svcs[d];
      const double a = std::clamp(actions[j][slot++], -1.0, 1.0);
      const double q_mvar =
          svc.q_min_mvar + 0.5 * (a + 1.0) * (svc.q_max_mvar - svc.q_min_mvar);
      inj.q[svc.bus] += q_mvar / net.s_base_mva;
    }
    for (int d : cluster.pvs) {
      const PvUnit& pv = net.pvs[d];
      const double a = std::clamp(actions[j][slot++], -1.0, 1.0);
      const double p_mw = profile.pv_avail_mw(t, d);
      const double headroom =
          std::sqrt(std::max(0.0, pv.s_mva * pv.s_mva - p_mw * p_mw));
      inj.p[pv.bus] += p_mw / net.s_base_mva;
      inj.q[pv.bus] += a * headroom / net.s_base_mva;
    }
  }
  return inj;
}

struct StepOutcome {
  double reward = 0.0;                     // shared: -sum_i |V_i - V0|
  Eigen::VectorXd cluster_rewards;         // per cluster, over its own buses
  std::vector<Eigen::VectorXd> next_obs;   // at the advanced timestep
  PowerFlowSolution solution;
  ViolationReport violations;
  bool failed = false;  // power flow diverged; episode terminated
  bool done = false;
};

class Environment {
 public:
  Environment(Network net, std::vector<ClusterSpec> clusters, double v0 = 1.0,
              double nonconvergence_reward = -10.0,
              double violation_penalty_weight = 0.0)
      : net_(std::move(net)),
        y_(build_admittance(net_)),
        clusters_(std::move(clusters)),
        v0_(v0),
        nonconvergence_reward_(nonconvergence_reward),
        penalty_weight_(violation_penalty_weight) {}

  int agent_count() const { return static_cast<int>(clusters_.size()); }
  const std::vector<ClusterSpec>& clusters() const { return clusters_; }
  const Network& network() const { return net_; }
  const ScenarioProfile& profile() const { return profile_; }
  int t() const { return t_; }
  double v0() const { return v0_; }

  void reset(const ScenarioProfile& profile) {
    if (profile.t_count < 1)
      throw InvariantViolation("scenario must have at least one step");
    if (profile.load_p_mw.rows() != profile.t_count ||
        profile.load_p_mw.cols() != net_.n() ||
        profile.load_q_mvar.rows() != profile.t_count ||
        profile.pv_avail_mw.rows() != profile.t_count ||
        profile.pv_avail_mw.cols() != static_cast<int>(net_.pvs.size()))
      throw DimensionMismatch("profile series do not match the network");
    profile_ = profile;
    t_ = 0;
  }

  /// Cluster-local exogenous state at the current step, per-unit: loads
  /// (P then Q interleaved per bus) followed by PV availability. Voltages
  /// are deliberately absent.
  Eigen::VectorXd observe(int j) const {
    if (j < 0 || j >= agent_count())
      throw UnknownAgent("no agent " + std::to_string(j));
    return observe_at(j, std::min(t_, profile_.t_count - 1));
  }

  std::vector<Eigen::VectorXd> observe_all() const {
    std::vector<Eigen::VectorXd> obs;
    for (int j = 0; j < agent_count(); ++j) obs.push_back(observe(j));
    return obs;
  }

  StepOutcome step(const std::vector<Eigen::VectorXd>& actions) {
    if (t_ >= profile_.t_count)
      throw InvariantViolation("episode is over; reset the environment");

    StepOutcome out;
    Injections inj = map_actions(net_, clusters_, profile_, t_, actions);
    try {
      out.solution = solve_power_flow(net_, y_, inj);
    } catch (const NonConvergence&) {
      out.failed = true;
      out.done = true;
      out.reward = nonconvergence_reward_;
      out.cluster_rewards =
          Eigen::VectorXd::Constant(agent_count(), nonconvergence_reward_);
      t_ = profile_.t_count;
      out.next_obs = observe_all();
      return out;
    }

    out.cluster_rewards = Eigen::VectorXd::Zero(agent_count());
    double total = 0.0;
    for (int i = 0; i < net_.n(); ++i)
      total += std::abs(out.solution.v[i] - v0_);
    for (int j = 0; j < agent_count(); ++j) {
      double dev = 0.0;
      for (int bus : clusters_[j].buses)
        dev += std::abs(out.solution.v[bus] - v0_);
      out.cluster_rewards[j] = -dev;
    }
    out.reward = -total;

    out.violations = check_limits(net_, out.solution);
    if (penalty_weight_ > 0.0) {
      double weight_sum = 0.0;
      for (const Violation& v : out.violations.violations)
        weight_sum += v.magnitude;
      out.reward -= penalty_weight_ * weight_sum;
    }

    ++t_;
    out.done = t_ >= profile_.t_count;
    out.next_obs = observe_all();
    return out;
  }

 private:
  Eigen::VectorXd observe_at(int j, int t) const {
    const ClusterSpec& cluster = clusters_[j];
    Eigen::VectorXd obs(cluster.observation_dim());
    int slot = 0;
    for (int bus : cluster.buses) {
      obs[slot++] = profile_.load_p_mw(t, bus) / net_.s_base_mva;
      obs[slot++] = profile_.load_q_mvar(t, bus) / net_.s_base_mva;
    }
    for (int d : cluster.pvs)
      obs[slot++] = profile_.pv_avail_mw(t, d) / net_.s_base_mva;
    return obs;
  }

  Network net_;
  AdmittanceMatrix y_;
  std::vector<ClusterSpec> clusters_;
  ScenarioProfile profile_;
  int t_ = 0;
  double v0_;
  double nonconvergence_reward_;
  double penalty_weight_;
};

// ---------------------------------------------------------------------------
// Scenario generation.

enum class ProfileKind { daily, cloud_transient };

struct ProfileGenConfig {
  // daily: hourly resolution, solar bell plus double-peaked load
  int daily_steps = 24;
  int sunrise = 6;   // availability forced to 0 strictly before this hour
  int sunset = 18;   // ... and strictly after this hour
  // cloud_transient: second resolution, Fig.-9-style ramp at light load
  int transient_steps = 60;
  double transient_p_start_mw = 0.33;
  double transient_p_peak_mw = 0.65;
  double transient_load_fraction = 0.30;  // light-load evening condition
};

/// Seeded synthetic scenarios. `daily` gives 24 hourly steps with a solar
/// bell (zeroed outside sunrise..sunset) and a double-peaked load shape;
/// `cloud_transient` gives 60 one-second steps where every PV ramps
/// 0.33 -> 0.65 -> 0.33 MW under light constant load.
inline std::vector<ScenarioProfile> generate_profiles(
    const Network& net, ProfileKind kind, int count, std::uint64_t seed,
    const ProfileGenConfig& cfg = {}) {
  if (count < 1) throw InvariantViolation("profile count must be >= 1");
  const int n = net.n();
  const int n_pv = static_cast<int>(net.pvs.size());

  std::vector<ScenarioProfile> out;
  for (int idx = 0; idx < count; ++idx) {
    std::mt19937_64 rng(substream_seed(
        seed, (kind == ProfileKind::daily ? "profile/daily/"
                                          : "profile/transient/") +
                  std::to_string(idx)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ScenarioProfile p;
    if (kind == ProfileKind::daily) {
      p.t_count = cfg.daily_steps;
      p.dt_s = 86400.0 / cfg.daily_steps;
      p.load_p_mw.resize(p.t_count, n);
      p.load_q_mvar.resize(p.t_count, n);
      p.pv_avail_mw.resize(p.t_count, n_pv);

      const double day_load = 0.85 + 0.3 * unit(rng);   // day-to-day spread
      const double day_solar = 0.75 + 0.25 * unit(rng); // clear vs hazy day
      for (int t = 0; t < p.t_count; ++t) {
        const double hour = t * 24.0 / cfg.daily_steps;
        // Double-peaked demand: morning shoulder, midday dip, evening peak.
        const double shape =
            0.45 + 0.25 * std::exp(-0.5 * std::pow((hour - 8.0) / 2.0, 2)) +
            0.55 * std::exp(-0.5 * std::pow((hour - 19.5) / 2.5, 2));
        const double noise = 0.95 + 0.1 * unit(rng);
        const double mult = day_load * shape * noise;
        p.load_p_mw.row(t) = mult * net.load_p_mw.transpose();
        p.load_q_mvar.row(t) = mult * net.load_q_mvar.transpose();

        const bool dark = hour < cfg.sunrise || hour > cfg.sunset;
        for (int d = 0; d < n_pv; ++d) {
          if (dark) {
            p.pv_avail_mw(t, d) = 0.0;
            continue;
          }
          const double bell =
              std::exp(-0.5 * std::pow((hour - 12.0) / 3.0, 2));
          const double cloud = 0.9 + 0.1 * unit(rng);
          p.pv_avail_mw(t, d) = std::min(
              net.pvs[d].p_rated_mw,
              day_solar * bell * cloud * net.pvs[d].p_rated_mw);
        }
      }
    } else {
      p.t_count = cfg.transient_steps;
      p.dt_s = 1.0;
      p.load_p_mw.resize(p.t_count, n);
      p.load_q_mvar.resize(p.t_count, n);
      p.pv_avail_mw.resize(p.t_count, n_pv);

      for (int t = 0; t < p.t_count; ++t) {
        p.load_p_mw.row(t) =
            cfg.transient_load_fraction * net.load_p_mw.transpose();
        p.load_q_mvar.row(t) =
            cfg.transient_load_fraction * net.load_q_mvar.transpose();

        // Ramp hitting the waypoints exactly: start at second 1, peak at
        // the midpoint second, back to start at the last second.
        const int s = t + 1;
        const int mid = p.t_count / 2;
        const double frac =
            s <= mid ? static_cast<double>(s - 1) / (mid - 1)
                     : 1.0 - static_cast<double>(s - mid) / (p.t_count - mid);
        const double base = cfg.transient_p_start_mw +
                            frac * (cfg.transient_p_peak_mw -
                                    cfg.transient_p_start_mw);
        for (int d = 0; d < n_pv; ++d) {
          const double jitter = 0.995 + 0.01 * unit(rng);
          p.pv_avail_mw(t, d) =
              std::clamp(base * jitter, 0.0, net.pvs[d].p_rated_mw);
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Profile CSV: `t,bus_or_pv_id,kind,p_mw,q_mvar`. PV rows use the PV's bus
// id and leave q_mvar at 0 (availability only). dt is not part of the
// format; the reader takes it as an argument.

inline std::string write_profile_csv(const Network& net,
                                     const ScenarioProfile& profile) {
  std::string out = "t,bus_or_pv_id,kind,p_mw,q_mvar\n";
  for (int t = 0; t < profile.t_count; ++t) {
    for (int i = 0; i < net.n(); ++i) {
      if (profile.load_p_mw(t, i) == 0.0 && profile.load_q_mvar(t, i) == 0.0)
        continue;
      out += std::to_string(t) + ',' + std::to_string(net.buses[i].id) +
             ",load," + format_double(profile.load_p_mw(t, i)) + ',' +
             format_double(profile.load_q_mvar(t, i)) + '\n';
    }
    for (std::size_t d = 0; d < net.pvs.size(); ++d)
      out += std::to_string(t) + ',' +
             std::to_string(net.buses[net.pvs[d].bus].id) + ",pv," +
             format_double(profile.pv_avail_mw(t, static_cast<int>(d))) +
             ",0\n";
  }
  return out;
}

inline ScenarioProfile read_profile_csv(const Network& net,
                                        const std::string& text,
                                        double dt_s = 3600.0) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  // Emitted artifacts carry "# key=value" provenance lines up front.
  do {
    if (!std::getline(in, line))
      throw ParseError("profile CSV: missing or wrong header");
    ++lineno;
  } while (!line.empty() && line[0] == '#');
  if (line != "t,bus_or_pv_id,kind,p_mw,q_mvar")
    throw ParseError("profile CSV: missing or wrong header");

  struct Row {
    int t;
    int bus;
    bool is_pv;
    double p, q;
  };
  std::vector<Row> rows;
  int t_max = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string t_s, id_s, kind, p_s, q_s;
    if (!std::getline(ls, t_s, ',') || !std::getline(ls, id_s, ',') ||
        !std::getline(ls, kind, ',') || !std::getline(ls, p_s, ',') ||
        !std::getline(ls, q_s))
      throw ParseError("profile CSV line " + std::to_string(lineno) +
                       ": expected 5 fields");
    Row row;
    try {
      row.t = std::stoi(t_s);
      row.p = std::stod(p_s);
      row.q = std::stod(q_s);
    } catch (const std::exception&) {
      throw ParseError("profile CSV line " + std::to_string(lineno) +
                       ": malformed number");
    }
    const int bus_idx = net.bus_index(std::stoi(id_s));
    if (bus_idx < 0)
      throw ParseError("profile CSV line " + std::to_string(lineno) +
                       ": unknown bus id " + id_s);
    if (kind == "load")
      row.is_pv = false;
    else if (kind == "pv")
      row.is_pv = true;
    else
      throw ParseError("profile CSV line " + std::to_string(lineno) +
                       ": kind must be load or pv");
    row.bus = bus_idx;
    if (row.t < 0)
      throw ParseError("profile CSV line " + std::to_string(lineno) +
                       ": negative timestep");
    t_max = std::max(t_max, row.t);
    rows.push_back(row);
  }
  if (t_max < 0) throw ParseError("profile CSV has no data rows");

  ScenarioProfile p;
  p.t_count = t_max + 1;
  p.dt_s = dt_s;
  p.load_p_mw = Eigen::MatrixXd::Zero(p.t_count, net.n());
  p.load_q_mvar = Eigen::MatrixXd::Zero(p.t_count, net.n());
  p.pv_avail_mw =
      Eigen::MatrixXd::Zero(p.t_count, static_cast<int>(net.pvs.size()));

  auto pv_slot = [&](int bus_idx) {
    for (std::size_t d = 0; d < net.pvs.size(); ++d)
      if (net.pvs[d].bus == bus_idx) return static_cast<int>(d);
    return -1;
  };
  for (const Row& row : rows) {
    if (row.is_pv) {
      const int d = pv_slot(row.bus);
      if (d < 0)
        throw ParseError("profile CSV: pv row for bus id " +
                         std::to_string(net.buses[row.bus].id) +
                         " which has no PV unit");
      p.pv_avail_mw(row.t, d) = row.p;
    } else {
      p.load_p_mw(row.t, row.bus) += row.p;
      p.load_q_mvar(row.t, row.bus) += row.q;
    }
  }
  return p;
}

}  // namespace gridvolt
