#pragma once

// Multi-agent TD3 over the cluster environment: centralized twin critics
// (global observation + all actions) with decentralized tanh actors, target
// policy smoothing, delayed actor updates, and soft target tracking. The
// same loop also trains fully independent per-cluster TD3 agents (local
// critics, per-cluster rewards) for the baseline comparison.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/gridenv.hpp"
#include "gridvolt/neuralcore.hpp"

namespace gridvolt {

struct AgentParams {
  Mlp actor, target_actor;
  Mlp critic1, critic2;
  Mlp target_critic1, target_critic2;
  AdamState actor_opt, critic1_opt, critic2_opt;
};

/// What a critic sees: the whole system (MATD3) or only its own cluster
/// (the independent-TD3 baseline, which also switches to cluster rewards).
enum class CriticScope { global, local };

enum class Optimizer { adam, sgd };

struct TrainConfig {
  int batch = 32;
  int buffer_capacity = 48000;
  double gamma = 0.0;
  double tau = 0.001;
  int policy_delay = 2;          // gradient steps between actor updates
  double smoothing_std = 0.2;    // target policy smoothing
  double noise_clip = 0.5;
  double explore_noise_start = 0.1;
  double explore_noise_final = 0.02;  // reached halfway through training
  double actor_lr = 0.001;
  double critic_lr = 0.002;
  int episodes = 100;
  int warmup_batches = 10;       // learning starts at warmup_batches * batch
  int hidden1 = 100;
  int hidden2 = 100;
  Optimizer optimizer = Optimizer::adam;
  CriticScope scope = CriticScope::global;
  int invariant_check_interval = 100;  // gradient steps between audits
  std::uint64_t seed = 0;

  void validate() const {
    if (batch < 1 || buffer_capacity < batch)
      throw ConfigError("batch and buffer sizes are inconsistent");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0,1]");
    if (policy_delay < 1) throw ConfigError("policy delay must be >= 1");
    if (noise_clip <= 0.0) throw ConfigError("noise clip must be > 0");
    if (actor_lr <= 0.0 || critic_lr <= 0.0)
      throw ConfigError("learning rates must be > 0");
    if (tau <= 0.0 || tau > 1.0) throw ConfigError("tau must be in (0,1]");
    if (episodes < 1) throw ConfigError("episode count must be >= 1");
  }
};

struct Transition {
  Eigen::VectorXd obs;       // concatenated per-agent observations
  Eigen::VectorXd act;       // concatenated per-agent actions
  double reward = 0.0;       // shared
  Eigen::VectorXd cluster_rewards;
  Eigen::VectorXd next_obs;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw InvariantViolation("buffer capacity must be >= 1");
  }

  void push(Transition t) {
    if (!std::isfinite(t.reward))
      throw InvariantViolation("non-finite reward pushed to replay buffer");
    if (static_cast<int>(data_.size()) < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[cursor_] = std::move(t);  // FIFO overwrite
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  int size() const { return static_cast<int>(data_.size()); }
  int capacity() const { return capacity_; }
  const Transition& operator[](int i) const { return data_[i]; }

  std::vector<int> sample_indices(int batch, std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> pick(0, size() - 1);
    std::vector<int> idx(batch);
    for (int& i : idx) i = pick(rng);
    return idx;
  }

 private:
  std::vector<Transition> data_;
  int capacity_;
  int cursor_ = 0;
};

/// Layout bookkeeping for the concatenated observation/action vectors.
struct AgentLayout {
  std::vector<int> obs_dims, act_dims;
  std::vector<int> obs_offsets, act_offsets;
  int total_obs = 0, total_act = 0;

  explicit AgentLayout(const std::vector<ClusterSpec>& clusters) {
    for (const ClusterSpec& c : clusters) {
      obs_offsets.push_back(total_obs);
      act_offsets.push_back(total_act);
      obs_dims.push_back(c.observation_dim());
      act_dims.push_back(c.action_dim());
      total_obs += c.observation_dim();
      total_act += c.action_dim();
    }
  }

  int agent_count() const { return static_cast<int>(obs_dims.size()); }
};

struct AgentSet {
  std::vector<AgentParams> agents;
  AgentLayout layout;
  CriticScope scope = CriticScope::global;

  int critic_input_dim(int j) const {
    return scope == CriticScope::global
               ? layout.total_obs + layout.total_act
               : layout.obs_dims[j] + layout.act_dims[j];
  }
};

inline AgentSet make_agents(const std::vector<ClusterSpec>& clusters,
                            const TrainConfig& cfg) {
  AgentSet set{{}, AgentLayout(clusters), cfg.scope};
  for (int j = 0; j < set.layout.agent_count(); ++j) {
    const std::string tag = "agent" + std::to_string(j);
    AgentParams a;
    a.actor = make_mlp(
        {set.layout.obs_dims[j], cfg.hidden1, cfg.hidden2,
         set.layout.act_dims[j]},
        OutputActivation::tanh, substream_seed(cfg.seed, tag + "/actor"));
    a.target_actor = a.actor;
    const int critic_in = set.critic_input_dim(j);
    a.critic1 =
        make_mlp({critic_in, cfg.hidden1, cfg.hidden2, 1},
                 OutputActivation::identity,
                 substream_seed(cfg.seed, tag + "/critic1"));
    a.critic2 =
        make_mlp({critic_in, cfg.hidden1, cfg.hidden2, 1},
                 OutputActivation::identity,
                 substream_seed(cfg.seed, tag + "/critic2"));
    a.target_critic1 = a.critic1;
    a.target_critic2 = a.critic2;
    a.actor_opt = make_adam_state(a.actor);
    a.critic1_opt = make_adam_state(a.critic1);
    a.critic2_opt = make_adam_state(a.critic2);
    set.agents.push_back(std::move(a));
  }
  return set;
}

/// Actor policy with optional exploration noise, clipped to [-1, 1].
inline Eigen::VectorXd select_action(const AgentParams& agent,
                                     const Eigen::VectorXd& obs, bool explore,
                                     double noise_std, std::mt19937_64& rng) {
  Eigen::VectorXd a = forward(agent.actor, obs);
  if (explore) {
    std::normal_distribution<double> gauss(0.0, noise_std);
    for (int i = 0; i < a.size(); ++i)
      a[i] = std::clamp(a[i] + gauss(rng), -1.0, 1.0);
  }
  return a;
}

/// Audit counters filled while training runs (every
/// invariant_check_interval gradient steps).
struct InvariantMonitor {
  long checks = 0;
  long violations = 0;
  std::vector<std::string> messages;

  void fail(const std::string& what) {
    ++violations;
    if (messages.size() < 20) messages.push_back(what);
  }
};

struct TargetBatch {
  // One row per agent, one column per sampled transition.
  Eigen::MatrixXd y;
  // Joint smoothed target action actually fed to the target critics.
  Eigen::MatrixXd smoothed_next_act;
  // Diagnostics for the TD3 invariants, maxima over the batch:
  double max_min_minus_q1 = 0.0;   // min(Q1',Q2') - Q1' (should be <= 0)
  double max_min_minus_q2 = 0.0;
  double max_smoothing_excess = 0.0;  // |noise after clip| - c
  double max_y_minus_r = 0.0;         // only meaningful when gamma == 0
};

namespace m3detail {

inline Eigen::MatrixXd gather(const ReplayBuffer& buffer,
                              const std::vector<int>& idx,
                              const std::function<Eigen::VectorXd(
                                  const Transition&)>& field) {
  Eigen::MatrixXd out(field(buffer[idx[0]]).size(), idx.size());
  for (std::size_t c = 0; c < idx.size(); ++c) out.col(c) = field(buffer[idx[c]]);
  return out;
}

/// Critic input for agent j: [obs; act] of either the whole system or just
/// agent j's slices, depending on scope.
inline Eigen::MatrixXd critic_input(const AgentSet& set, int j,
                                    const Eigen::MatrixXd& obs,
                                    const Eigen::MatrixXd& act) {
  if (set.scope == CriticScope::global) {
    Eigen::MatrixXd in(obs.rows() + act.rows(), obs.cols());
    in << obs, act;
    return in;
  }
  const AgentLayout& lay = set.layout;
  Eigen::MatrixXd in(lay.obs_dims[j] + lay.act_dims[j], obs.cols());
  in << obs.middleRows(lay.obs_offsets[j], lay.obs_dims[j]),
      act.middleRows(lay.act_offsets[j], lay.act_dims[j]);
  return in;
}

}  // namespace m3detail

/// TD targets: smoothed target-actor actions, twin target critics,
/// min-bootstrap; terminal transitions (and gamma = 0) reduce to the bare
/// reward.
inline TargetBatch compute_target(const AgentSet& set,
                                  const ReplayBuffer& buffer,
                                  const std::vector<int>& idx,
                                  const TrainConfig& cfg,
                                  std::mt19937_64& rng) {
  const AgentLayout& lay = set.layout;
  const int batch = static_cast<int>(idx.size());

  const Eigen::MatrixXd next_obs = m3detail::gather(
      buffer, idx, [](const Transition& t) { return t.next_obs; });

  // Smoothed joint target action, one noise draw per component.
  Eigen::MatrixXd next_act(lay.total_act, batch);
  TargetBatch out;
  std::normal_distribution<double> gauss(0.0, cfg.smoothing_std);
  for (int j = 0; j < lay.agent_count(); ++j) {
    const Eigen::MatrixXd local =
        next_obs.middleRows(lay.obs_offsets[j], lay.obs_dims[j]);
    Eigen::MatrixXd a = forward_batch(set.agents[j].target_actor, local);
    for (int c = 0; c < a.cols(); ++c)
      for (int r = 0; r < a.rows(); ++r) {
        const double eps =
            std::clamp(gauss(rng), -cfg.noise_clip, cfg.noise_clip);
        out.max_smoothing_excess =
            std::max(out.max_smoothing_excess, std::abs(eps) - cfg.noise_clip);
        a(r, c) = std::clamp(a(r, c) + eps, -1.0, 1.0);
      }
    next_act.middleRows(lay.act_offsets[j], lay.act_dims[j]) = a;
  }
  out.smoothed_next_act = next_act;

  out.y.resize(lay.agent_count(), batch);
  for (int j = 0; j < lay.agent_count(); ++j) {
    const Eigen::MatrixXd in = m3detail::critic_input(set, j, next_obs, next_act);
    const Eigen::MatrixXd q1 = forward_batch(set.agents[j].target_critic1, in);
    const Eigen::MatrixXd q2 = forward_batch(set.agents[j].target_critic2, in);
    for (int c = 0; c < batch; ++c) {
      const Transition& t = buffer[idx[c]];
      const double r = set.scope == CriticScope::global
                           ? t.reward
                           : t.cluster_rewards[j];
      const double qmin = std::min(q1(0, c), q2(0, c));
      out.max_min_minus_q1 = std::max(out.max_min_minus_q1, qmin - q1(0, c));
      out.max_min_minus_q2 = std::max(out.max_min_minus_q2, qmin - q2(0, c));
      double y = r;
      if (cfg.gamma != 0.0 && !t.done) y += cfg.gamma * qmin;
      out.y(j, c) = y;
      out.max_y_minus_r = std::max(out.max_y_minus_r, std::abs(y - r));
    }
  }
  return out;
}

namespace m3detail {

inline void optimizer_step(Mlp& net, const GradientSet& g, AdamState& st,
                           const TrainConfig& cfg, double lr, bool maximize) {
  if (cfg.optimizer == Optimizer::adam)
    adam_step(net, g, st, lr, maximize);
  else
    sgd_step(net, g, lr, maximize);
}

}  // namespace m3detail

/// One MSE descent step on both critics; returns the pre-update losses.
inline std::pair<double, double> critic_update(AgentSet& set, int j,
                                               const ReplayBuffer& buffer,
                                               const std::vector<int>& idx,
                                               const Eigen::RowVectorXd& y,
                                               const TrainConfig& cfg) {
  const int batch = static_cast<int>(idx.size());
  const Eigen::MatrixXd obs = m3detail::gather(
      buffer, idx, [](const Transition& t) { return t.obs; });
  const Eigen::MatrixXd act = m3detail::gather(
      buffer, idx, [](const Transition& t) { return t.act; });
  const Eigen::MatrixXd in = m3detail::critic_input(set, j, obs, act);

  AgentParams& agent = set.agents[j];
  std::pair<double, double> losses;
  auto update_one = [&](Mlp& critic, AdamState& st) {
    const Eigen::MatrixXd q = forward_batch(critic, in);
    const Eigen::MatrixXd err = q - y;
    const double loss = err.array().square().mean();
    const Eigen::MatrixXd upstream = 2.0 * err / batch;
    GradientSet g = backward_batch(critic, in, upstream);
    m3detail::optimizer_step(critic, g, st, cfg, cfg.critic_lr, false);
    return loss;
  };
  losses.first = update_one(agent.critic1, agent.critic1_opt);
  losses.second = update_one(agent.critic2, agent.critic2_opt);
  return losses;
}

/// Deterministic policy-gradient ascent on critic Q1 with agent j's batch
/// action replaced by its actor output; returns the pre-update objective.
inline double actor_update(AgentSet& set, int j, const ReplayBuffer& buffer,
                           const std::vector<int>& idx,
                           const TrainConfig& cfg) {
  const AgentLayout& lay = set.layout;
  const int batch = static_cast<int>(idx.size());
  const Eigen::MatrixXd obs = m3detail::gather(
      buffer, idx, [](const Transition& t) { return t.obs; });
  Eigen::MatrixXd act = m3detail::gather(
      buffer, idx, [](const Transition& t) { return t.act; });

  AgentParams& agent = set.agents[j];
  const Eigen::MatrixXd local_obs =
      obs.middleRows(lay.obs_offsets[j], lay.obs_dims[j]);
  const Eigen::MatrixXd pi = forward_batch(agent.actor, local_obs);
  act.middleRows(lay.act_offsets[j], lay.act_dims[j]) = pi;

  const Eigen::MatrixXd in = m3detail::critic_input(set, j, obs, act);
  const Eigen::MatrixXd q = forward_batch(agent.critic1, in);
  const double objective = q.mean();

  // dQ/d(input), sliced at agent j's action rows, feeds the actor backward
  // pass; critic parameters receive no update here.
  const Eigen::MatrixXd upstream =
      Eigen::MatrixXd::Constant(1, batch, 1.0 / batch);
  Eigen::MatrixXd dq_din;
  backward_batch(agent.critic1, in, upstream, &dq_din);
  const int slice_start = set.scope == CriticScope::global
                              ? lay.total_obs + lay.act_offsets[j]
                              : lay.obs_dims[j];
  const Eigen::MatrixXd dq_da = dq_din.middleRows(slice_start, lay.act_dims[j]);

  GradientSet g = backward_batch(agent.actor, local_obs, dq_da);
  m3detail::optimizer_step(agent.actor, g, agent.actor_opt, cfg, cfg.actor_lr,
                           /*maximize=*/true);
  return objective;
}

struct EpisodeStats {
  int episode = 0;
  double cumulative_reward = 0.0;
  double mean_critic_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  AgentSet agents;
  std::vector<EpisodeStats> curve;
  InvariantMonitor monitor;
  long gradient_steps = 0;
  int buffer_size = 0;
};

/// Exploration noise: linear decay from start to final over the first half
/// of training, then flat.
inline double exploration_std(const TrainConfig& cfg, int episode) {
  const double half = std::max(1.0, cfg.episodes / 2.0);
  const double frac = std::min(1.0, episode / half);
  return cfg.explore_noise_start +
         frac * (cfg.explore_noise_final - cfg.explore_noise_start);
}

/// The full training loop: explore, store, sample, twin-critic regression,
/// delayed actor + soft target updates. Deterministic given cfg.seed.
/// `on_episode_end` (optional) sees the stats and the live agents, e.g. for
/// periodic checkpoints. Passing `resume_from` (with the episode to resume
/// at) continues an interrupted run from a checkpoint; the replay buffer
/// restarts empty, so a resumed run is deterministic but not byte-equal to
/// an uninterrupted one.
inline TrainResult train(
    Environment& env, const std::vector<ScenarioProfile>& profiles,
    const TrainConfig& cfg,
    const std::function<void(const EpisodeStats&, const AgentSet&)>&
        on_episode_end = nullptr,
    const AgentSet* resume_from = nullptr, int first_episode = 0) {
  cfg.validate();
  if (profiles.empty()) throw ConfigError("no training profiles supplied");
  if (first_episode < 0 || first_episode > cfg.episodes)
    throw ConfigError("resume episode is outside the configured run");

  TrainResult result{resume_from ? *resume_from
                                 : make_agents(env.clusters(), cfg),
                     {},
                     {},
                     0,
                     0};
  AgentSet& set = result.agents;
  const AgentLayout& lay = set.layout;
  if (resume_from) {
    const AgentLayout fresh(env.clusters());
    if (lay.obs_dims != fresh.obs_dims || lay.act_dims != fresh.act_dims ||
        set.scope != cfg.scope)
      throw ConfigError("resumed agents do not match this environment");
  }

  // A resumed segment draws from its own substreams so it never replays
  // the exhausted head of the original noise sequence.
  const std::string seg =
      first_episode > 0 ? "/resume" + std::to_string(first_episode) : "";
  ReplayBuffer buffer(cfg.buffer_capacity);
  std::mt19937_64 explore_rng(substream_seed(cfg.seed, "train/explore" + seg));
  std::mt19937_64 sample_rng(substream_seed(cfg.seed, "train/sample" + seg));
  std::mt19937_64 target_rng(substream_seed(cfg.seed, "train/target" + seg));

  const int warmup = cfg.warmup_batches * cfg.batch;

  for (int episode = first_episode; episode < cfg.episodes; ++episode) {
    const auto t0 = std::chrono::steady_clock::now();
    env.reset(profiles[episode % profiles.size()]);
    const double noise_std = exploration_std(cfg, episode);

    double cumulative = 0.0, loss_sum = 0.0;
    long loss_count = 0;

    std::vector<Eigen::VectorXd> obs = env.observe_all();
    bool done = false;
    while (!done) {
      std::vector<Eigen::VectorXd> actions;
      for (int j = 0; j < lay.agent_count(); ++j)
        actions.push_back(select_action(set.agents[j], obs[j], true,
                                        noise_std, explore_rng));

      StepOutcome out = env.step(actions);
      cumulative += out.reward;

      Transition tr;
      tr.obs.resize(lay.total_obs);
      tr.act.resize(lay.total_act);
      for (int j = 0; j < lay.agent_count(); ++j) {
        tr.obs.segment(lay.obs_offsets[j], lay.obs_dims[j]) = obs[j];
        tr.act.segment(lay.act_offsets[j], lay.act_dims[j]) = actions[j];
      }
      tr.reward = out.reward;
      tr.cluster_rewards = out.cluster_rewards;
      tr.next_obs.resize(lay.total_obs);
      for (int j = 0; j < lay.agent_count(); ++j)
        tr.next_obs.segment(lay.obs_offsets[j], lay.obs_dims[j]) =
            out.next_obs[j];
      tr.done = out.done;
      buffer.push(std::move(tr));

      obs = out.next_obs;
      done = out.done;

      if (buffer.size() < std::max(warmup, cfg.batch)) continue;

      // One gradient step per environment step.
      ++result.gradient_steps;
      const std::vector<int> idx = buffer.sample_indices(cfg.batch, sample_rng);
      TargetBatch targets =
          compute_target(set, buffer, idx, cfg, target_rng);

      const bool audit =
          cfg.invariant_check_interval > 0 &&
          result.gradient_steps % cfg.invariant_check_interval == 0;
      if (audit) {
        ++result.monitor.checks;
        if (targets.max_min_minus_q1 > 1e-12 ||
            targets.max_min_minus_q2 > 1e-12)
          result.monitor.fail("twin-min exceeded an individual critic");
        if (targets.max_smoothing_excess > 0.0)
          result.monitor.fail("smoothing noise escaped the clip bound");
        if (cfg.gamma == 0.0 && targets.max_y_minus_r != 0.0)
          result.monitor.fail("gamma=0 target deviated from the reward");
      }

      for (int j = 0; j < lay.agent_count(); ++j) {
        auto [l1, l2] = critic_update(set, j, buffer, idx, targets.y.row(j), cfg);
        loss_sum += 0.5 * (l1 + l2);
        ++loss_count;
      }

      if (result.gradient_steps % cfg.policy_delay == 0) {
        for (int j = 0; j < lay.agent_count(); ++j) {
          actor_update(set, j, buffer, idx, cfg);

          AgentParams& agent = set.agents[j];
          if (audit) {
            // Soft-update contract, checked against an explicit convex
            // combination on the first actor layer.
            const Eigen::MatrixXd expect =
                cfg.tau * agent.actor.weights[0] +
                (1.0 - cfg.tau) * agent.target_actor.weights[0];
            soft_update(agent.target_actor, agent.actor, cfg.tau);
            if ((agent.target_actor.weights[0] - expect)
                    .cwiseAbs()
                    .maxCoeff() > 1e-12)
              result.monitor.fail("soft update is not the stated combination");
          } else {
            soft_update(agent.target_actor, agent.actor, cfg.tau);
          }
          soft_update(agent.target_critic1, agent.critic1, cfg.tau);
          soft_update(agent.target_critic2, agent.critic2, cfg.tau);
        }
      }
    }

    EpisodeStats stats;
    stats.episode = episode;
    stats.cumulative_reward = cumulative;
    stats.mean_critic_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
    result.curve.push_back(stats);
    if (on_episode_end) on_episode_end(stats, set);
  }
  result.buffer_size = buffer.size();
  return result;
}

// ---------------------------------------------------------------------------
// Greedy execution (Table-II style): actors only, local observations only.

struct RolloutResult {
  std::vector<std::vector<Eigen::VectorXd>> actions;  // per step, per agent
  std::vector<double> rewards;
  std::vector<PowerFlowSolution> solutions;
  double per_step_seconds = 0.0;  // actor inference time only
  int failed_steps = 0;           // non-convergent steps (episode-ending)
};

/// Takes bare actor networks — critics and global state are not even
/// visible here, which is the decentralized-execution guarantee.
inline RolloutResult rollout_greedy(const std::vector<Mlp>& actors,
                                    Environment& env,
                                    const ScenarioProfile& profile) {
  if (static_cast<int>(actors.size()) != env.agent_count())
    throw DimensionMismatch("one actor per cluster required");
  RolloutResult result;
  env.reset(profile);
  std::vector<Eigen::VectorXd> obs = env.observe_all();
  bool done = false;
  double actor_seconds = 0.0;
  long steps = 0;
  while (!done) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Eigen::VectorXd> actions;
    for (std::size_t j = 0; j < actors.size(); ++j)
      actions.push_back(forward(actors[j], obs[j]));
    actor_seconds +=
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    StepOutcome out = env.step(actions);
    result.actions.push_back(actions);
    result.rewards.push_back(out.reward);
    result.solutions.push_back(out.solution);
    if (out.failed) ++result.failed_steps;
    obs = out.next_obs;
    done = out.done;
    ++steps;
  }
  result.per_step_seconds = steps > 0 ? actor_seconds / steps : 0.0;
  return result;
}

inline std::vector<Mlp> extract_actors(const AgentSet& set) {
  std::vector<Mlp> actors;
  for (const AgentParams& a : set.agents) actors.push_back(a.actor);
  return actors;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON container of every network and optimizer state, guarded
// by a config hash and written atomically (temp file + rename).

inline nlohmann::json adam_to_json(const AdamState& st) {
  nlohmann::json j;
  j["step"] = st.step;
  j["m_w"] = nlohmann::json::array();
  j["v_w"] = nlohmann::json::array();
  j["m_b"] = nlohmann::json::array();
  j["v_b"] = nlohmann::json::array();
  for (std::size_t l = 0; l < st.m_w.size(); ++l) {
    j["m_w"].push_back(matrix_to_json(st.m_w[l]));
    j["v_w"].push_back(matrix_to_json(st.v_w[l]));
    nlohmann::json mb = nlohmann::json::array(), vb = nlohmann::json::array();
    for (int i = 0; i < st.m_b[l].size(); ++i) {
      mb.push_back(st.m_b[l][i]);
      vb.push_back(st.v_b[l][i]);
    }
    j["m_b"].push_back(std::move(mb));
    j["v_b"].push_back(std::move(vb));
  }
  return j;
}

inline AdamState adam_from_json(const nlohmann::json& j) {
  AdamState st;
  st.step = j.at("step").get<long>();
  for (const auto& m : j.at("m_w")) st.m_w.push_back(matrix_from_json(m));
  for (const auto& m : j.at("v_w")) st.v_w.push_back(matrix_from_json(m));
  for (const auto& b : j.at("m_b")) {
    Eigen::VectorXd v(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) v[i] = b.at(i).get<double>();
    st.m_b.push_back(std::move(v));
  }
  for (const auto& b : j.at("v_b")) {
    Eigen::VectorXd v(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) v[i] = b.at(i).get<double>();
    st.v_b.push_back(std::move(v));
  }
  return st;
}

inline void save_checkpoint(const AgentSet& set, std::uint64_t config_hash,
                            const std::string& path,
                            const nlohmann::json& meta = nlohmann::json()) {
  nlohmann::json doc;
  doc["config_hash"] = to_hex(config_hash);
  doc["scope"] = set.scope == CriticScope::global ? "global" : "local";
  if (!meta.is_null()) doc["meta"] = meta;
  doc["agents"] = nlohmann::json::array();
  for (const AgentParams& a : set.agents) {
    nlohmann::json ja;
    ja["actor"] = mlp_to_json(a.actor);
    ja["target_actor"] = mlp_to_json(a.target_actor);
    ja["critic1"] = mlp_to_json(a.critic1);
    ja["critic2"] = mlp_to_json(a.critic2);
    ja["target_critic1"] = mlp_to_json(a.target_critic1);
    ja["target_critic2"] = mlp_to_json(a.target_critic2);
    ja["actor_opt"] = adam_to_json(a.actor_opt);
    ja["critic1_opt"] = adam_to_json(a.critic1_opt);
    ja["critic2_opt"] = adam_to_json(a.critic2_opt);
    doc["agents"].push_back(std::move(ja));
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write checkpoint: " + tmp);
    out << doc.dump();
    if (!out) throw ParseError("short write on checkpoint: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline AgentSet load_checkpoint(const std::string& path,
                                std::uint64_t expected_config_hash,
                                const std::vector<ClusterSpec>& clusters,
                                nlohmann::json* meta_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("checkpoint " + path + " is corrupt: " + e.what());
  }
  if (meta_out) *meta_out = doc.value("meta", nlohmann::json());

  const std::string stored = doc.at("config_hash").get<std::string>();
  if (stored != to_hex(expected_config_hash))
    throw ConfigError("checkpoint config hash " + stored +
                      " does not match the current configuration " +
                      to_hex(expected_config_hash));

  AgentSet set{{}, AgentLayout(clusters), CriticScope::global};
  set.scope = doc.at("scope").get<std::string>() == "local"
                  ? CriticScope::local
                  : CriticScope::global;
  for (const auto& ja : doc.at("agents")) {
    AgentParams a;
    a.actor = mlp_from_json(ja.at("actor"));
    a.target_actor = mlp_from_json(ja.at("target_actor"));
    a.critic1 = mlp_from_json(ja.at("critic1"));
    a.critic2 = mlp_from_json(ja.at("critic2"));
    a.target_critic1 = mlp_from_json(ja.at("target_critic1"));
    a.target_critic2 = mlp_from_json(ja.at("target_critic2"));
    a.actor_opt = adam_from_json(ja.at("actor_opt"));
    a.critic1_opt = adam_from_json(ja.at("critic1_opt"));
    a.critic2_opt = adam_from_json(ja.at("critic2_opt"));
    set.agents.push_back(std::move(a));
  }
  if (set.agents.size() != static_cast<std::size_t>(set.layout.agent_count()))
    throw ConfigError("checkpoint agent count does not match the partition");
  for (int j = 0; j < set.layout.agent_count(); ++j) {
    if (set.agents[j].actor.input_dim() != set.layout.obs_dims[j] ||
        set.agents[j].actor.output_dim() != set.layout.act_dims[j])
      throw ConfigError("checkpoint actor " + std::to_string(j) +
                        " does not fit the cluster layout");
  }
  return set;
}

}  // namespace gridvolt
