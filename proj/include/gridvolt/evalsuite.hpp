#pragma once

// Baselines and metrics around the trained controllers: the uncontrolled
// system, fully independent per-cluster TD3, a projected-gradient
// centralized benchmark with re-linearized V-Q sensitivities, Table-style
// deviation metrics with the ERR optimality gap, and the one-minute
// cloud-transient stress test.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/gridenv.hpp"
#include "gridvolt/matd3.hpp"

namespace gridvolt {

class DegenerateDenominator : public InvariantViolation {
 public:
  using InvariantViolation::InvariantViolation;
};

/// Voltage deviation summary, percentages against the 1.0 p.u. target.
struct DeviationMetrics {
  double average = 0.0;        // mean over buses and steps of |V - V0|
  double max_rise = 0.0;       // worst (V - V0)+ anywhere
  double max_drop = 0.0;       // worst (V0 - V)+ anywhere
  double per_step_time = 0.0;  // decision seconds per control step
};

struct EvalResult {
  DeviationMetrics metrics;
  std::vector<PowerFlowSolution> solutions;  // converged steps, in order
  int failed_steps = 0;
};

/// Aggregates solved operating points into the metric row. Every bus of
/// every step contributes, the slack included (its deviation is zero by
/// construction, which is exactly what the shared reward sums over).
inline DeviationMetrics compute_metrics(
    const std::vector<PowerFlowSolution>& solutions, double v0 = 1.0,
    double per_step_time = 0.0) {
  DeviationMetrics m;
  m.per_step_time = per_step_time;
  if (solutions.empty()) return m;
  double total = 0.0;
  long count = 0;
  for (const PowerFlowSolution& sol : solutions) {
    if (sol.v.size() == 0)
      throw InvariantViolation("metrics require solved operating points");
    for (int i = 0; i < sol.v.size(); ++i) {
      const double dev = sol.v[i] - v0;
      total += std::abs(dev);
      m.max_rise = std::max(m.max_rise, dev);
      m.max_drop = std::max(m.max_drop, -dev);
      ++count;
    }
  }
  m.average = 100.0 * total / static_cast<double>(count);
  m.max_rise = 100.0 * std::max(0.0, m.max_rise);
  m.max_drop = 100.0 * std::max(0.0, m.max_drop);
  return m;
}

namespace evdetail {

/// Injections at step t with explicit per-device reactive setpoints x
/// (per-unit, SVCs first then PVs); PV active power rides availability.
/// x may be empty, which is the uncontrolled system.
inline Injections device_injections(const Network& net,
                                    const ScenarioProfile& profile, int t,
                                    const Eigen::VectorXd& x) {
  Injections inj;
  inj.p = -profile.load_p_mw.row(t).transpose() / net.s_base_mva;
  inj.q = -profile.load_q_mvar.row(t).transpose() / net.s_base_mva;
  const int n_svc = static_cast<int>(net.svcs.size());
  for (int s = 0; s < n_svc; ++s)
    if (x.size() > 0) inj.q[net.svcs[s].bus] += x[s];
  for (std::size_t p = 0; p < net.pvs.size(); ++p) {
    inj.p[net.pvs[p].bus] += profile.pv_avail_mw(t, static_cast<int>(p)) /
                             net.s_base_mva;
    if (x.size() > 0) inj.q[net.pvs[p].bus] += x[n_svc + static_cast<int>(p)];
  }
  return inj;
}

/// Feasible box for the device vector at step t, per-unit. The PV disc
/// constraint collapses to a symmetric box once P is pinned to the
/// availability, so projection is an exact componentwise clamp.
struct DeviceBox {
  Eigen::VectorXd lo, hi;
  std::vector<int> bus;  // device -> bus index, SVCs then PVs
};

inline DeviceBox device_box(const Network& net, const ScenarioProfile& profile,
                            int t) {
  DeviceBox box;
  const int count = static_cast<int>(net.svcs.size() + net.pvs.size());
  box.lo.resize(count);
  box.hi.resize(count);
  int d = 0;
  for (const SvcUnit& svc : net.svcs) {
    box.lo[d] = svc.q_min_mvar / net.s_base_mva;
    box.hi[d] = svc.q_max_mvar / net.s_base_mva;
    box.bus.push_back(svc.bus);
    ++d;
  }
  for (std::size_t p = 0; p < net.pvs.size(); ++p) {
    const double avail = profile.pv_avail_mw(t, static_cast<int>(p));
    const double s = net.pvs[p].s_mva;
    const double headroom =
        std::sqrt(std::max(0.0, s * s - avail * avail)) / net.s_base_mva;
    box.lo[d] = -headroom;
    box.hi[d] = headroom;
    box.bus.push_back(net.pvs[p].bus);
    ++d;
  }
  return box;
}

inline Eigen::VectorXd clamp_to_box(const Eigen::VectorXd& x,
                                    const DeviceBox& box) {
  return x.cwiseMax(box.lo).cwiseMin(box.hi);
}

/// Total deviation of a candidate setpoint, +inf when the flow diverges
/// (backtracking then simply refuses the step).
inline double objective(const Network& net, const AdmittanceMatrix& y,
                        const ScenarioProfile& profile, int t,
                        const Eigen::VectorXd& x, double v0,
                        PowerFlowSolution* sol_out = nullptr) {
  try {
    PowerFlowSolution sol =
        solve_power_flow(net, y, device_injections(net, profile, t, x));
    double f = 0.0;
    for (int i = 0; i < sol.v.size(); ++i) f += std::abs(sol.v[i] - v0);
    if (sol_out) *sol_out = sol;
    return f;
  } catch (const NonConvergence&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Linearized seed: least-squares fit of the device reactive powers to the
/// uncontrolled voltage error through the base-point sensitivity, clamped
/// to the box. Random starts often land in poor basins; this one places the
/// gradient phase next to the answer.
inline Eigen::VectorXd linearized_seed(const Network& net,
                                       const AdmittanceMatrix& y,
                                       const DeviceBox& box,
                                       const PowerFlowSolution& uncontrolled,
                                       double v0) {
  const SensitivityMatrix sens = compute_vq_sensitivity(net, y, uncontrolled);
  const int m = static_cast<int>(sens.buses.size());
  const int dim = static_cast<int>(box.lo.size());
  Eigen::MatrixXd a(m, dim);
  Eigen::VectorXd b(m);
  for (int r = 0; r < m; ++r) b[r] = v0 - uncontrolled.v[sens.buses[r]];
  for (int d = 0; d < dim; ++d) {
    const auto col =
        std::find(sens.buses.begin(), sens.buses.end(), box.bus[d]);
    const int c = static_cast<int>(col - sens.buses.begin());
    for (int r = 0; r < m; ++r) a(r, d) = sens.s(r, c);
  }
  return clamp_to_box(a.colPivHouseholderQr().solve(b), box);
}

/// Fixed-budget coordinate refinement of an accepted point: a coarse scan
/// plus a golden-section zoom along every device axis, two sweeps, strict
/// improvements only. Gradient steps stall where several buses sit on the
/// |V - v0| kink; sliding one coordinate at a time does not.
inline void coordinate_polish(const Network& net, const AdmittanceMatrix& y,
                              const ScenarioProfile& profile, int t,
                              const DeviceBox& box, double v0,
                              Eigen::VectorXd& x, double& f) {
  const int dim = static_cast<int>(box.lo.size());
  const double gold = (std::sqrt(5.0) - 1.0) / 2.0;
  Eigen::VectorXd probe = x;
  auto slice = [&](int d, double s) {
    probe = x;
    probe[d] = s;
    return objective(net, y, profile, t, probe, v0);
  };
  for (int sweep = 0; sweep < 2; ++sweep) {
    for (int d = 0; d < dim; ++d) {
      const double lo = box.lo[d], hi = box.hi[d];
      if (hi - lo < 1e-12) continue;
      const int cells = 12;
      double best_s = x[d], best_f = f;
      for (int i = 0; i <= cells; ++i) {
        const double s = lo + (hi - lo) * i / cells;
        const double fs = slice(d, s);
        if (fs < best_f) {
          best_f = fs;
          best_s = s;
        }
      }
      double a = std::max(lo, best_s - (hi - lo) / cells);
      double b = std::min(hi, best_s + (hi - lo) / cells);
      double c1 = b - gold * (b - a), c2 = a + gold * (b - a);
      double f1 = slice(d, c1), f2 = slice(d, c2);
      for (int it = 0; it < 12; ++it) {
        if (f1 < f2) {
          b = c2;
          c2 = c1;
          f2 = f1;
          c1 = b - gold * (b - a);
          f1 = slice(d, c1);
        } else {
          a = c1;
          c1 = c2;
          f1 = f2;
          c2 = a + gold * (b - a);
          f2 = slice(d, c2);
        }
      }
      if (f1 < best_f) {
        best_f = f1;
        best_s = c1;
      }
      if (f2 < best_f) {
        best_f = f2;
        best_s = c2;
      }
      if (best_f < f) {
        f = best_f;
        x[d] = best_s;
      }
    }
  }
}

}  // namespace evdetail

/// The uncontrolled system: every device holds Q = 0 while PVs export
/// whatever the sky provides.
inline EvalResult eval_no_control(const Network& net,
                                  const std::vector<ScenarioProfile>& profiles,
                                  double v0 = 1.0) {
  const AdmittanceMatrix y = build_admittance(net);
  EvalResult result;
  for (const ScenarioProfile& profile : profiles) {
    for (int t = 0; t < profile.t_count; ++t) {
      try {
        result.solutions.push_back(solve_power_flow(
            net, y,
            evdetail::device_injections(net, profile, t, Eigen::VectorXd())));
      } catch (const NonConvergence&) {
        ++result.failed_steps;
      }
    }
  }
  if (!result.solutions.empty())
    result.metrics = compute_metrics(result.solutions, v0, 0.0);
  return result;
}

/// Greedy policy evaluation over a profile set; per_step_time is the mean
/// actor inference time (the decentralized decision cost).
inline EvalResult eval_policy(const std::vector<Mlp>& actors, Environment& env,
                              const std::vector<ScenarioProfile>& profiles,
                              double v0 = 1.0) {
  EvalResult result;
  double seconds = 0.0;
  long steps = 0;
  for (const ScenarioProfile& profile : profiles) {
    RolloutResult roll = rollout_greedy(actors, env, profile);
    for (std::size_t t = 0; t < roll.solutions.size(); ++t) {
      if (roll.solutions[t].v.size() == 0) continue;  // failed, terminal
      result.solutions.push_back(roll.solutions[t]);
    }
    result.failed_steps += roll.failed_steps;
    seconds += roll.per_step_seconds * static_cast<double>(roll.rewards.size());
    steps += static_cast<long>(roll.rewards.size());
  }
  if (!result.solutions.empty())
    result.metrics = compute_metrics(result.solutions, v0,
                                     steps > 0 ? seconds / steps : 0.0);
  return result;
}

// ---------------------------------------------------------------------------
// Centralized deterministic benchmark: projected gradient on the summed
// deviation, gradient from the V-Q sensitivity re-linearized at every
// iterate, exact box projection. Start schedule: the uncontrolled point,
// the linearized seed, then uniform draws; the winner gets the coordinate
// polish.

struct OracleConfig {
  int starts = 3;  // uncontrolled + linearized seed + (starts - 2) random
  int max_iterations = 200;
  double tolerance = 1e-9;  // objective improvement per accepted step
  std::uint64_t seed = 0;
};

struct OracleStep {
  Eigen::VectorXd setpoints;  // per-unit device Q, SVCs then PVs
  double deviation = 0.0;     // summed |V - V0| at the best point
  PowerFlowSolution solution;
  int iterations = 0;  // accepted gradient steps across all starts
};

struct OracleSolution {
  std::vector<OracleStep> steps;
  double per_step_seconds = 0.0;
};

inline OracleStep centralized_oracle(const Network& net,
                                     const AdmittanceMatrix& y,
                                     const ScenarioProfile& profile, int t,
                                     const OracleConfig& cfg = {},
                                     double v0 = 1.0) {
  const evdetail::DeviceBox box = evdetail::device_box(net, profile, t);
  const int dim = static_cast<int>(box.lo.size());

  OracleStep best;
  best.deviation = std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(
      substream_seed(cfg.seed, "oracle/t" + std::to_string(t)));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Start schedule: the uncontrolled point (always feasible, so the oracle
  // never loses to no control), the linearized seed, then uniform draws.
  std::vector<Eigen::VectorXd> seeds;
  seeds.push_back(Eigen::VectorXd::Zero(dim));
  {
    PowerFlowSolution uncontrolled;
    if (cfg.starts > 1 &&
        std::isfinite(evdetail::objective(net, y, profile, t, seeds[0], v0,
                                          &uncontrolled)))
      seeds.push_back(
          evdetail::linearized_seed(net, y, box, uncontrolled, v0));
  }
  while (static_cast<int>(seeds.size()) < cfg.starts) {
    Eigen::VectorXd draw(dim);
    for (int d = 0; d < dim; ++d)
      draw[d] = box.lo[d] + u(rng) * (box.hi[d] - box.lo[d]);
    seeds.push_back(std::move(draw));
  }

  for (const Eigen::VectorXd& seed : seeds) {
    Eigen::VectorXd x = seed;
    PowerFlowSolution sol;
    double f = evdetail::objective(net, y, profile, t, x, v0, &sol);
    if (!std::isfinite(f)) continue;  // a random start may not converge

    double alpha = 0.1;
    int accepted = 0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
      // Deviation gradient through the sensitivity at the current iterate.
      const SensitivityMatrix sens = compute_vq_sensitivity(net, y, sol);
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
      for (int d = 0; d < dim; ++d) {
        const auto col = std::find(sens.buses.begin(), sens.buses.end(),
                                   box.bus[d]);
        const int c = static_cast<int>(col - sens.buses.begin());
        for (std::size_t r = 0; r < sens.buses.size(); ++r) {
          const double dev = sol.v[sens.buses[r]] - v0;
          if (dev != 0.0)
            grad[d] += (dev > 0.0 ? 1.0 : -1.0) *
                       sens.s(static_cast<int>(r), c);
        }
      }

      // Backtracking on the projected step; grow the trust step again
      // after a clean acceptance.
      bool moved = false;
      double f_new = f;
      PowerFlowSolution sol_new;
      Eigen::VectorXd x_new;
      while (alpha > 1e-12) {
        x_new = evdetail::clamp_to_box(x - alpha * grad, box);
        f_new = evdetail::objective(net, y, profile, t, x_new, v0, &sol_new);
        if (f_new < f) {
          moved = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!moved) break;  // no descent direction left at any scale

      const double improvement = f - f_new;
      x = x_new;
      f = f_new;
      sol = sol_new;
      ++accepted;
      alpha = std::min(alpha * 2.0, 1.0);
      if (improvement < cfg.tolerance) break;
    }

    if (f < best.deviation) {
      best.deviation = f;
      best.setpoints = x;
      best.solution = sol;
    }
    best.iterations += accepted;
  }

  if (!std::isfinite(best.deviation))
    throw NonConvergence(best.deviation, cfg.max_iterations);

  evdetail::coordinate_polish(net, y, profile, t, box, v0, best.setpoints,
                              best.deviation);
  best.deviation = evdetail::objective(net, y, profile, t, best.setpoints, v0,
                                       &best.solution);
  return best;
}

inline OracleSolution run_oracle(const Network& net,
                                 const ScenarioProfile& profile,
                                 const OracleConfig& cfg = {},
                                 double v0 = 1.0) {
  const AdmittanceMatrix y = build_admittance(net);
  OracleSolution out;
  const auto t0 = std::chrono::steady_clock::now();
  for (int t = 0; t < profile.t_count; ++t)
    out.steps.push_back(centralized_oracle(net, y, profile, t, cfg, v0));
  out.per_step_seconds = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - t0)
                             .count() /
                         std::max(1, profile.t_count);
  return out;
}

/// Benchmark metrics across a profile set, optionally fanned out over a
/// small thread pool (aggregation order stays fixed regardless of jobs).
inline EvalResult eval_oracle(const Network& net,
                              const std::vector<ScenarioProfile>& profiles,
                              const OracleConfig& cfg = {}, double v0 = 1.0,
                              int jobs = 1) {
  std::vector<OracleSolution> per_profile(profiles.size());
  if (jobs <= 1 || profiles.size() <= 1) {
    for (std::size_t i = 0; i < profiles.size(); ++i)
      per_profile[i] = run_oracle(net, profiles[i], cfg, v0);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (std::size_t i = next.fetch_add(1); i < profiles.size();
           i = next.fetch_add(1))
        per_profile[i] = run_oracle(net, profiles[i], cfg, v0);
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(jobs, static_cast<int>(profiles.size()));
    for (int w = 0; w < count; ++w) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }

  EvalResult result;
  double seconds = 0.0;
  long steps = 0;
  for (const OracleSolution& sol : per_profile) {
    for (const OracleStep& step : sol.steps)
      result.solutions.push_back(step.solution);
    seconds += sol.per_step_seconds * static_cast<double>(sol.steps.size());
    steps += static_cast<long>(sol.steps.size());
  }
  result.metrics = compute_metrics(result.solutions, v0,
                                   steps > 0 ? seconds / steps : 0.0);
  return result;
}

/// Independent per-cluster TD3: same machinery, but every critic sees only
/// its own cluster and every agent optimizes its own cluster's deviation.
inline TrainResult train_independent_td3(
    Environment& env, const std::vector<ScenarioProfile>& profiles,
    TrainConfig cfg,
    const std::function<void(const EpisodeStats&, const AgentSet&)>&
        on_episode_end = nullptr) {
  cfg.scope = CriticScope::local;
  return train(env, profiles, cfg, on_episode_end);
}

/// ERR optimality gap: how far the proposed controller sits between the
/// centralized benchmark and the uncontrolled system, in percent.
inline double compute_err(const DeviationMetrics& pro,
                          const DeviationMetrics& cen,
                          const DeviationMetrics& ori) {
  const double denom = std::abs(cen.average - ori.average);
  if (denom == 0.0)
    throw DegenerateDenominator(
        "benchmark and uncontrolled deviations coincide; ERR is undefined");
  return std::abs(pro.average - cen.average) / denom * 100.0;
}

// ---------------------------------------------------------------------------
// One-minute cloud transient: second-by-second comparison of every method
// at the bus the uncontrolled system stresses hardest.

struct StressTraces {
  int bus = 0;     // monitored bus, 0-based index
  int bus_id = 0;  // its external id
  std::vector<double> t_s;
  // Method name -> voltage at the monitored bus / total deviation, both
  // per step; insertion order is the emission order.
  std::vector<std::pair<std::string, std::vector<double>>> v_pu;
  std::vector<std::pair<std::string, std::vector<double>>> deviation;
};

namespace evdetail {

inline void append_series(StressTraces& traces, const std::string& method,
                          const std::vector<PowerFlowSolution>& solutions,
                          double v0) {
  std::vector<double> v, dev;
  for (const PowerFlowSolution& sol : solutions) {
    v.push_back(sol.v[traces.bus]);
    double total = 0.0;
    for (int i = 0; i < sol.v.size(); ++i) total += std::abs(sol.v[i] - v0);
    dev.push_back(total);
  }
  traces.v_pu.emplace_back(method, std::move(v));
  traces.deviation.emplace_back(method, std::move(dev));
}

}  // namespace evdetail

/// Runs the five methods over one generated cloud transient. The frozen
/// method holds the benchmark's t=0 setpoints for the whole minute (the
/// stand-in for a predetermined day-ahead solution), re-clamped to each
/// step's feasible box as PV headroom shrinks toward the irradiance peak.
inline StressTraces stress_test_transient(const Network& net,
                                          const std::vector<ClusterSpec>& clusters,
                                          const std::vector<Mlp>& matd3_actors,
                                          const std::vector<Mlp>& independent_actors,
                                          std::uint64_t seed,
                                          const OracleConfig& oracle_cfg = {},
                                          double v0 = 1.0) {
  const ScenarioProfile profile =
      generate_profiles(net, ProfileKind::cloud_transient, 1, seed)[0];
  const AdmittanceMatrix y = build_admittance(net);

  // Uncontrolled pass first; it also selects the monitored bus.
  std::vector<PowerFlowSolution> original;
  for (int t = 0; t < profile.t_count; ++t)
    original.push_back(solve_power_flow(
        net, y, evdetail::device_injections(net, profile, t, Eigen::VectorXd())));

  StressTraces traces;
  double worst = -1.0;
  for (const PowerFlowSolution& sol : original)
    for (int i = 0; i < sol.v.size(); ++i)
      if (i != net.slack_index() && std::abs(sol.v[i] - v0) > worst) {
        worst = std::abs(sol.v[i] - v0);
        traces.bus = i;
      }
  traces.bus_id = net.buses[traces.bus].id;
  for (int t = 0; t < profile.t_count; ++t)
    traces.t_s.push_back((t + 1) * profile.dt_s);

  evdetail::append_series(traces, "original", original, v0);

  // Frozen: the benchmark solution of the first second, held throughout.
  const OracleStep first =
      centralized_oracle(net, y, profile, 0, oracle_cfg, v0);
  std::vector<PowerFlowSolution> frozen;
  for (int t = 0; t < profile.t_count; ++t) {
    const evdetail::DeviceBox box = evdetail::device_box(net, profile, t);
    const Eigen::VectorXd x = evdetail::clamp_to_box(first.setpoints, box);
    frozen.push_back(
        solve_power_flow(net, y, evdetail::device_injections(net, profile, t, x)));
  }
  evdetail::append_series(traces, "frozen", frozen, v0);

  Environment env(net, clusters, v0);
  evdetail::append_series(
      traces, "independent_td3",
      rollout_greedy(independent_actors, env, profile).solutions, v0);
  evdetail::append_series(traces, "matd3",
                          rollout_greedy(matd3_actors, env, profile).solutions,
                          v0);

  std::vector<PowerFlowSolution> oracle;
  for (int t = 0; t < profile.t_count; ++t)
    oracle.push_back(
        centralized_oracle(net, y, profile, t, oracle_cfg, v0).solution);
  evdetail::append_series(traces, "oracle", oracle, v0);

  return traces;
}

// ---------------------------------------------------------------------------
// CSV emission, shortest-round-trip formatting throughout.

struct MethodMetrics {
  std::string method;
  DeviationMetrics metrics;
};

inline std::string results_to_csv(const std::vector<MethodMetrics>& rows) {
  std::string out = "method,average_pct,max_rise_pct,max_drop_pct,per_step_time_s\n";
  for (const MethodMetrics& row : rows) {
    out += row.method + ',' + format_double(row.metrics.average) + ',' +
           format_double(row.metrics.max_rise) + ',' +
           format_double(row.metrics.max_drop) + ',' +
           format_double(row.metrics.per_step_time) + '\n';
  }
  return out;
}

inline std::string stress_to_csv(const StressTraces& traces) {
  std::string out = "t_s,method,v_pu\n";
  for (const auto& [method, series] : traces.v_pu)
    for (std::size_t t = 0; t < series.size(); ++t)
      out += format_double(traces.t_s[t]) + ',' + method + ',' +
             format_double(series[t]) + '\n';
  return out;
}

}  // namespace gridvolt
