#pragma once

// Dense feed-forward networks with exact reverse-mode gradients, Adam/SGD
// updates, and soft target tracking. Small enough to stay dense and serial;
// the batched entry points put samples in columns so Eigen does the heavy
// lifting via matrix products.

#include <Eigen/Dense>
#include <cmath>
#include <nlohmann/json.hpp>
#include <random>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"

namespace gridvolt {

enum class OutputActivation { tanh, identity };

struct Mlp {
  // layers[i]: out_i x in_i weights with matching bias. Hidden layers use
  // ReLU; the last layer uses `output`.
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  OutputActivation output = OutputActivation::identity;

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int layer_count() const { return static_cast<int>(weights.size()); }
};

struct GradientSet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Uniform ±1/sqrt(fan_in) initialization, seeded.
inline Mlp make_mlp(const std::vector<int>& dims, OutputActivation output,
                    std::uint64_t seed) {
  if (dims.size() < 2)
    throw InvariantViolation("an MLP needs at least input and output dims");
  Mlp net;
  net.output = output;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l], out = dims[l + 1];
    if (in < 1 || out < 1)
      throw InvariantViolation("layer dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(out, in);
    Eigen::VectorXd b(out);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) w(r, c) = u(rng);
      b[r] = u(rng);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

inline GradientSet zero_gradients(const Mlp& net) {
  GradientSet g;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(),
                                              net.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
  }
  return g;
}

inline AdamState make_adam_state(const Mlp& net) {
  AdamState st;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    st.m_w.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(),
                                           net.weights[l].cols()));
    st.v_w.push_back(st.m_w.back());
    st.m_b.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
    st.v_b.push_back(st.m_b.back());
  }
  return st;
}

namespace nndetail {

inline void apply_output(OutputActivation act, Eigen::MatrixXd& z) {
  if (act == OutputActivation::tanh) z = z.array().tanh();
}

}  // namespace nndetail

/// Batched forward pass: columns of `x` are samples.
inline Eigen::MatrixXd forward_batch(const Mlp& net, const Eigen::MatrixXd& x) {
  if (x.rows() != net.input_dim())
    throw DimensionMismatch("forward: input has " + std::to_string(x.rows()) +
                            " rows, network expects " +
                            std::to_string(net.input_dim()));
  Eigen::MatrixXd h = x;
  const int last = net.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    h = (net.weights[l] * h).colwise() + net.biases[l];
    if (l < last)
      h = h.cwiseMax(0.0);  // ReLU
    else
      nndetail::apply_output(net.output, h);
  }
  return h;
}

inline Eigen::VectorXd forward(const Mlp& net, const Eigen::VectorXd& x) {
  return forward_batch(net, x);
}

/// Batched reverse-mode gradients of sum over samples of
/// <upstream.col(s), forward(x.col(s))>. Recomputes the forward pass
/// internally; returns parameter gradients and the gradient w.r.t. x.
inline GradientSet backward_batch(const Mlp& net, const Eigen::MatrixXd& x,
                                  const Eigen::MatrixXd& upstream,
                                  Eigen::MatrixXd* input_grad = nullptr) {
  if (x.rows() != net.input_dim())
    throw DimensionMismatch("backward: input rows do not match network");
  if (upstream.rows() != net.output_dim() || upstream.cols() != x.cols())
    throw DimensionMismatch("backward: upstream gradient shape mismatch");

  const int last = net.layer_count() - 1;
  std::vector<Eigen::MatrixXd> inputs(net.layer_count());  // layer inputs
  Eigen::MatrixXd h = x;
  for (int l = 0; l <= last; ++l) {
    inputs[l] = h;
    h = (net.weights[l] * h).colwise() + net.biases[l];
    if (l < last)
      h = h.cwiseMax(0.0);
    else
      nndetail::apply_output(net.output, h);
  }

  GradientSet grads = zero_gradients(net);
  Eigen::MatrixXd delta = upstream;
  if (net.output == OutputActivation::tanh)
    delta = delta.cwiseProduct((1.0 - h.array().square()).matrix());

  for (int l = last; l >= 0; --l) {
    grads.weights[l] = delta * inputs[l].transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l == 0) {
      if (input_grad) *input_grad = net.weights[0].transpose() * delta;
      break;
    }
    delta = net.weights[l].transpose() * delta;
    // The ReLU that produced inputs[l] gates the gradient: closed where the
    // activation is zero (covers strictly negative pre-activations).
    delta = delta.cwiseProduct(
        (inputs[l].array() > 0.0).cast<double>().matrix());
  }
  return grads;
}

inline GradientSet backward(const Mlp& net, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& upstream,
                            Eigen::VectorXd* input_grad = nullptr) {
  Eigen::MatrixXd ig;
  GradientSet g = backward_batch(net, x, upstream, input_grad ? &ig : nullptr);
  if (input_grad) *input_grad = ig.col(0);
  return g;
}

inline void adam_step(Mlp& net, const GradientSet& grads, AdamState& st,
                      double lr, bool maximize = false) {
  const double sign = maximize ? -1.0 : 1.0;
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Eigen::MatrixXd gw = sign * grads.weights[l];
    st.m_w[l] = st.beta1 * st.m_w[l] + (1.0 - st.beta1) * gw;
    st.v_w[l] = st.beta2 * st.v_w[l] + (1.0 - st.beta2) * gw.cwiseProduct(gw);
    net.weights[l] -=
        (lr * (st.m_w[l] / bc1).array() /
         ((st.v_w[l] / bc2).array().sqrt() + st.eps))
            .matrix();

    const Eigen::VectorXd gb = sign * grads.biases[l];
    st.m_b[l] = st.beta1 * st.m_b[l] + (1.0 - st.beta1) * gb;
    st.v_b[l] = st.beta2 * st.v_b[l] + (1.0 - st.beta2) * gb.cwiseProduct(gb);
    net.biases[l] -= (lr * (st.m_b[l] / bc1).array() /
                      ((st.v_b[l] / bc2).array().sqrt() + st.eps))
                         .matrix();
  }
}

/// Plain SGD, exposed as the config alternative to Adam.
inline void sgd_step(Mlp& net, const GradientSet& grads, double lr,
                     bool maximize = false) {
  const double sign = maximize ? -1.0 : 1.0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    net.weights[l] -= sign * lr * grads.weights[l];
    net.biases[l] -= sign * lr * grads.biases[l];
  }
}

/// target <- tau * online + (1 - tau) * target, elementwise.
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
  if (tau <= 0.0 || tau > 1.0)
    throw InvariantViolation("soft update requires 0 < tau <= 1");
  if (target.layer_count() != online.layer_count())
    throw DimensionMismatch("soft update on incongruent networks");
  for (int l = 0; l < target.layer_count(); ++l) {
    if (target.weights[l].rows() != online.weights[l].rows() ||
        target.weights[l].cols() != online.weights[l].cols())
      throw DimensionMismatch("soft update on incongruent networks");
    target.weights[l] = tau * online.weights[l] + (1.0 - tau) * target.weights[l];
    target.biases[l] = tau * online.biases[l] + (1.0 - tau) * target.biases[l];
  }
}

// ---------------------------------------------------------------------------
// Serialization. Matrices are stored row-major as nested JSON arrays with
// shortest round-trip doubles, so save/load is bit-exact.

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const int rows = static_cast<int>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const int cols = static_cast<int>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = j.at(r);
    if (static_cast<int>(row.size()) != cols)
      throw ParseError("ragged matrix in checkpoint");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

inline nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["output"] = net.output == OutputActivation::tanh ? "tanh" : "identity";
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (int l = 0; l < net.layer_count(); ++l) {
    j["weights"].push_back(matrix_to_json(net.weights[l]));
    nlohmann::json b = nlohmann::json::array();
    for (int i = 0; i < net.biases[l].size(); ++i) b.push_back(net.biases[l][i]);
    j["biases"].push_back(std::move(b));
  }
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp net;
  const std::string out = j.at("output").get<std::string>();
  if (out == "tanh")
    net.output = OutputActivation::tanh;
  else if (out == "identity")
    net.output = OutputActivation::identity;
  else
    throw ParseError("unknown output activation '" + out + "'");
  for (const auto& w : j.at("weights"))
    net.weights.push_back(matrix_from_json(w));
  for (const auto& b : j.at("biases")) {
    Eigen::VectorXd v(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) v[i] = b.at(i).get<double>();
    net.biases.push_back(std::move(v));
  }
  if (net.weights.size() != net.biases.size() || net.weights.empty())
    throw ParseError("checkpoint layer lists are inconsistent");
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    if (net.weights[l].rows() != net.biases[l].size())
      throw ParseError("checkpoint bias shape mismatch at layer " +
                       std::to_string(l));
    if (l + 1 < net.weights.size() &&
        net.weights[l + 1].cols() != net.weights[l].rows())
      throw ParseError("checkpoint layer dimensions do not chain");
  }
  return net;
}

}  // namespace gridvolt
