#pragma once

// Newton-Raphson AC power flow in polar form, plus the V-Q sensitivity
// matrix (the ∂V/∂Q block of the inverse Jacobian) that the partitioner
// uses as electrical distance.
//
// Bus i mismatch equations, with theta_ij = theta_i - theta_j:
//   P_i(V,theta) = V_i * sum_j V_j (G_ij cos theta_ij + B_ij sin theta_ij)
//   Q_i(V,theta) = V_i * sum_j V_j (G_ij sin theta_ij - B_ij cos theta_ij)
// The slack bus is held at 1.0 p.u., 0 rad and excluded from the update.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/netmodel.hpp"

namespace gridvolt {

struct Injections {
  Eigen::VectorXd p;  // per-bus net active injection, per-unit
  Eigen::VectorXd q;  // per-bus net reactive injection, per-unit
};

/// Base-case injections: negated loads, no devices active.
inline Injections base_injections(const Network& net) {
  Injections inj;
  inj.p = -net.load_p_mw / net.s_base_mva;
  inj.q = -net.load_q_mvar / net.s_base_mva;
  return inj;
}

struct PowerFlowSolution {
  Eigen::VectorXd v;         // per-unit magnitudes
  Eigen::VectorXd theta;     // radians
  Eigen::VectorXd branch_i;  // per-branch current magnitude, per-unit
  double residual = 0.0;     // max absolute power mismatch at exit
  int iterations = 0;
};

/// Newton Jacobian at an operating point, reduced to non-slack buses.
/// Row/column order: [theta block | V block], each in `buses` order.
struct Jacobian {
  Eigen::MatrixXd m;       // 2(N-1) x 2(N-1)
  std::vector<int> buses;  // non-slack bus indices, ascending
};

struct SensitivityMatrix {
  Eigen::MatrixXd s;  // (N-1)x(N-1), dV_i/dQ_j at non-slack buses
  PowerFlowSolution operating_point;
  std::vector<int> buses;  // row/column -> bus index
};

namespace pfdetail {

inline std::vector<int> non_slack(const Network& net) {
  std::vector<int> out;
  const int slack = net.slack_index();
  for (int i = 0; i < net.n(); ++i)
    if (i != slack) out.push_back(i);
  return out;
}

/// Calculated injections P_i, Q_i at (v, theta).
inline void calc_power(const AdmittanceMatrix& y, const Eigen::VectorXd& v,
                       const Eigen::VectorXd& theta, Eigen::VectorXd& p_calc,
                       Eigen::VectorXd& q_calc) {
  const int n = static_cast<int>(v.size());
  p_calc.setZero(n);
  q_calc.setZero(n);
  for (int i = 0; i < n; ++i) {
    double pi = 0.0, qi = 0.0;
    for (int j = 0; j < n; ++j) {
      if (y.g(i, j) == 0.0 && y.b(i, j) == 0.0) continue;
      const double tij = theta[i] - theta[j];
      const double c = std::cos(tij), s = std::sin(tij);
      pi += v[j] * (y.g(i, j) * c + y.b(i, j) * s);
      qi += v[j] * (y.g(i, j) * s - y.b(i, j) * c);
    }
    p_calc[i] = v[i] * pi;
    q_calc[i] = v[i] * qi;
  }
}

}  // namespace pfdetail

/// Analytic Jacobian of the calculated injections with respect to
/// (theta, V) of the non-slack buses.
inline Jacobian compute_jacobian(const Network& net, const AdmittanceMatrix& y,
                                 const PowerFlowSolution& sol) {
  Jacobian jac;
  jac.buses = pfdetail::non_slack(net);
  const int m = static_cast<int>(jac.buses.size());
  jac.m.setZero(2 * m, 2 * m);

  Eigen::VectorXd p_calc, q_calc;
  pfdetail::calc_power(y, sol.v, sol.theta, p_calc, q_calc);

  for (int a = 0; a < m; ++a) {
    const int i = jac.buses[a];
    const double vi = sol.v[i];
    for (int b = 0; b < m; ++b) {
      const int j = jac.buses[b];
      if (i == j) {
        jac.m(a, b) = -q_calc[i] - y.b(i, i) * vi * vi;          // dP/dtheta
        jac.m(a, m + b) = p_calc[i] / vi + y.g(i, i) * vi;       // dP/dV
        jac.m(m + a, b) = p_calc[i] - y.g(i, i) * vi * vi;       // dQ/dtheta
        jac.m(m + a, m + b) = q_calc[i] / vi - y.b(i, i) * vi;   // dQ/dV
      } else {
        const double tij = sol.theta[i] - sol.theta[j];
        const double c = std::cos(tij), s = std::sin(tij);
        const double gij = y.g(i, j), bij = y.b(i, j);
        const double vj = sol.v[j];
        jac.m(a, b) = vi * vj * (gij * s - bij * c);
        jac.m(a, m + b) = vi * (gij * c + bij * s);
        jac.m(m + a, b) = -vi * vj * (gij * c + bij * s);
        jac.m(m + a, m + b) = vi * (gij * s - bij * c);
      }
    }
  }
  return jac;
}

inline PowerFlowSolution solve_power_flow(const Network& net,
                                          const AdmittanceMatrix& y,
                                          const Injections& inj,
                                          double tol = 1e-8,
                                          int max_iter = 50) {
  if (tol <= 0) throw InvariantViolation("power flow tolerance must be > 0");
  if (inj.p.size() != net.n() || inj.q.size() != net.n())
    throw DimensionMismatch("injection vectors must cover every bus");

  const int n = net.n();
  const int slack = net.slack_index();
  const std::vector<int> buses = pfdetail::non_slack(net);
  const int m = static_cast<int>(buses.size());

  PowerFlowSolution sol;
  sol.v = Eigen::VectorXd::Ones(n);
  sol.theta = Eigen::VectorXd::Zero(n);

  Eigen::VectorXd p_calc, q_calc, rhs(2 * m);
  for (int it = 0;; ++it) {
    pfdetail::calc_power(y, sol.v, sol.theta, p_calc, q_calc);
    double residual = 0.0;
    for (int a = 0; a < m; ++a) {
      const int i = buses[a];
      rhs[a] = inj.p[i] - p_calc[i];
      rhs[m + a] = inj.q[i] - q_calc[i];
      residual = std::max(residual, std::abs(rhs[a]));
      residual = std::max(residual, std::abs(rhs[m + a]));
    }
    sol.residual = residual;
    sol.iterations = it;
    if (residual <= tol) break;
    if (it == max_iter) throw NonConvergence(residual, it);

    Jacobian jac = compute_jacobian(net, y, sol);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac.m);
    if (!lu.isInvertible())
      throw SingularJacobian("singular power flow Jacobian at iteration " +
                             std::to_string(it));
    Eigen::VectorXd dx = lu.solve(rhs);
    for (int a = 0; a < m; ++a) {
      sol.theta[buses[a]] += dx[a];
      sol.v[buses[a]] += dx[m + a];
    }
  }

  sol.v[slack] = 1.0;
  sol.theta[slack] = 0.0;

  sol.branch_i.resize(net.branches.size());
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    const Branch& br = net.branches[k];
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> vi =
        std::polar(sol.v[br.from], sol.theta[br.from]);
    const std::complex<double> vj = std::polar(sol.v[br.to], sol.theta[br.to]);
    sol.branch_i[k] = std::abs(ys) * std::abs(vi - vj);
  }
  return sol;
}

/// dV/dQ via the Schur complement of the theta block:
///   s = (L - M H^{-1} N)^{-1}
/// with H = dP/dtheta, N = dP/dV, M = dQ/dtheta, L = dQ/dV.
inline SensitivityMatrix compute_vq_sensitivity(const Network& net,
                                                const AdmittanceMatrix& y,
                                                const PowerFlowSolution& sol) {
  Jacobian jac = compute_jacobian(net, y, sol);
  const int m = static_cast<int>(jac.buses.size());
  const Eigen::MatrixXd h = jac.m.topLeftCorner(m, m);
  const Eigen::MatrixXd nmat = jac.m.topRightCorner(m, m);
  const Eigen::MatrixXd mmat = jac.m.bottomLeftCorner(m, m);
  const Eigen::MatrixXd l = jac.m.bottomRightCorner(m, m);

  Eigen::FullPivLU<Eigen::MatrixXd> lu_h(h);
  if (!lu_h.isInvertible())
    throw SingularJacobian("theta block of the Jacobian is singular");
  const Eigen::MatrixXd schur = l - mmat * lu_h.solve(nmat);
  Eigen::FullPivLU<Eigen::MatrixXd> lu_s(schur);
  if (!lu_s.isInvertible())
    throw SingularJacobian("V-Q Schur complement is singular");

  SensitivityMatrix sens;
  sens.s = lu_s.inverse();
  sens.operating_point = sol;
  sens.buses = jac.buses;
  return sens;
}

// ---------------------------------------------------------------------------
// Limit checking. Violations are reported, never enforced.

struct Violation {
  enum class Kind { over_voltage, under_voltage, over_current };
  Kind kind;
  int id;            // external bus id, or branch index for currents
  double magnitude;  // how far past the limit, per-unit
};

struct ViolationReport {
  std::vector<Violation> violations;
  double worst_over_voltage = 0.0;
  double worst_under_voltage = 0.0;
  double worst_over_current = 0.0;

  bool empty() const { return violations.empty(); }
};

inline const char* violation_kind_name(Violation::Kind k) {
  switch (k) {
    case Violation::Kind::over_voltage: return "over_voltage";
    case Violation::Kind::under_voltage: return "under_voltage";
    case Violation::Kind::over_current: return "over_current";
  }
  return "?";
}

inline ViolationReport check_limits(const Network& net,
                                    const PowerFlowSolution& sol) {
  ViolationReport report;
  for (int i = 0; i < net.n(); ++i) {
    const Bus& bus = net.buses[i];
    if (sol.v[i] > bus.v_max) {
      const double margin = sol.v[i] - bus.v_max;
      report.violations.push_back(
          {Violation::Kind::over_voltage, bus.id, margin});
      report.worst_over_voltage = std::max(report.worst_over_voltage, margin);
    } else if (sol.v[i] < bus.v_min) {
      const double margin = bus.v_min - sol.v[i];
      report.violations.push_back(
          {Violation::Kind::under_voltage, bus.id, margin});
      report.worst_under_voltage =
          std::max(report.worst_under_voltage, margin);
    }
  }
  for (std::size_t k = 0; k < net.branches.size(); ++k) {
    if (sol.branch_i[k] > net.branches[k].i_max) {
      const double margin = sol.branch_i[k] - net.branches[k].i_max;
      report.violations.push_back(
          {Violation::Kind::over_current, static_cast<int>(k), margin});
      report.worst_over_current = std::max(report.worst_over_current, margin);
    }
  }
  return report;
}

/// CSV rows `id,type,magnitude`, one violation per line.
inline std::string violations_to_csv(const ViolationReport& report) {
  std::string out = "id,type,magnitude\n";
  for (const Violation& v : report.violations) {
    out += std::to_string(v.id);
    out += ',';
    out += violation_kind_name(v.kind);
    out += ',';
    out += format_double(v.magnitude);
    out += '\n';
  }
  return out;
}

}  // namespace gridvolt
