#pragma once

// Independent re-implementations used to cross-check the library. These
// deliberately take different routes than the code under test: complex
// phasor arithmetic instead of trig expansions, finite differences instead
// of analytic derivatives.

#include <complex>
#include <gridvolt/netmodel.hpp>
#include <gridvolt/powerflow.hpp>
#include <vector>

namespace gridvolt::testing {

/// Max |S_spec - S_calc| over non-slack buses, from S_i = V_i * conj((YV)_i).
inline double complex_mismatch(const Network& net, const AdmittanceMatrix& y,
                               const Injections& inj,
                               const PowerFlowSolution& sol) {
  const int n = net.n();
  std::vector<std::complex<double>> v(n);
  for (int i = 0; i < n; ++i) v[i] = std::polar(sol.v[i], sol.theta[i]);

  double worst = 0.0;
  const int slack = net.slack_index();
  for (int i = 0; i < n; ++i) {
    if (i == slack) continue;
    std::complex<double> iinj(0.0, 0.0);
    for (int j = 0; j < n; ++j)
      iinj += std::complex<double>(y.g(i, j), y.b(i, j)) * v[j];
    const std::complex<double> s_calc = v[i] * std::conj(iinj);
    worst = std::max(worst, std::abs(inj.p[i] - s_calc.real()));
    worst = std::max(worst, std::abs(inj.q[i] - s_calc.imag()));
  }
  return worst;
}

/// Central-difference Jacobian of the calculated injections, same row and
/// column ordering as compute_jacobian.
inline Eigen::MatrixXd fd_jacobian(const Network& net,
                                   const AdmittanceMatrix& y,
                                   const PowerFlowSolution& sol,
                                   double step = 1e-6) {
  const int slack = net.slack_index();
  std::vector<int> buses;
  for (int i = 0; i < net.n(); ++i)
    if (i != slack) buses.push_back(i);
  const int m = static_cast<int>(buses.size());

  auto eval = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& theta) {
    Eigen::VectorXd p, q, out(2 * m);
    gridvolt::pfdetail::calc_power(y, v, theta, p, q);
    for (int a = 0; a < m; ++a) {
      out[a] = p[buses[a]];
      out[m + a] = q[buses[a]];
    }
    return out;
  };

  Eigen::MatrixXd jac(2 * m, 2 * m);
  for (int b = 0; b < m; ++b) {
    Eigen::VectorXd tp = sol.theta, tm = sol.theta;
    tp[buses[b]] += step;
    tm[buses[b]] -= step;
    jac.col(b) = (eval(sol.v, tp) - eval(sol.v, tm)) / (2 * step);

    Eigen::VectorXd vp = sol.v, vm = sol.v;
    vp[buses[b]] += step;
    vm[buses[b]] -= step;
    jac.col(m + b) = (eval(vp, sol.theta) - eval(vm, sol.theta)) / (2 * step);
  }
  return jac;
}

}  // namespace gridvolt::testing
