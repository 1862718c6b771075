#pragma once

// Command-line front end: JSON configuration with flag overrides, a single
// root seed fanned out through named substreams, and CSV artifacts stamped
// with a config hash + seed so re-running one configuration reproduces the
// same bytes (timing columns stay at zero unless explicitly requested).

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/evalsuite.hpp"
#include "gridvolt/gridenv.hpp"
#include "gridvolt/matd3.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/partition.hpp"
#include "gridvolt/powerflow.hpp"

namespace gridvolt {

struct ProfileConfig {
  ProfileKind kind = ProfileKind::daily;
  int train_count = 100;  // mirrors the train/test day split, desk scale
  int test_count = 10;
};

struct PartitionParams {
  int k_min = 2;
  int k_max = 8;
  // Kernel widths come from these as sigma = 1/sqrt(2*gamma); an empty
  // list means the built-in widths plus the median-distance heuristic.
  std::vector<double> gammas;
};

struct RunConfig {
  std::string network;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  ProfileConfig profiles;
  PartitionParams partition;
  TrainConfig train;
  OracleConfig oracle;

  // Execution-only knobs, deliberately outside the config hash.
  int jobs = 1;
  bool timing = false;
  bool resume = false;
  bool transient = false;
  std::string checkpoint;           // eval: override the expected path
  std::string baseline_checkpoint;  // eval: independent-TD3 checkpoint
};

namespace clidetail {

inline void require_keys(const nlohmann::json& obj,
                         std::initializer_list<const char*> allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key \"" + it.key() + "\" in " +
                        where);
  }
}

inline ProfileKind parse_profile_kind(const std::string& s) {
  if (s == "daily") return ProfileKind::daily;
  if (s == "cloud_transient") return ProfileKind::cloud_transient;
  throw ConfigError("profile kind must be daily or cloud_transient, got \"" +
                    s + "\"");
}

inline std::string profile_kind_name(ProfileKind kind) {
  return kind == ProfileKind::daily ? "daily" : "cloud_transient";
}

/// "--k-range 2..8" (or a bare "4") -> inclusive bounds.
inline void check_k_range(int lo, int hi) {
  if (lo < 2 || hi < lo)
    throw ConfigError("k range " + std::to_string(lo) + ".." +
                      std::to_string(hi) + " is empty or starts below 2");
}

inline std::pair<int, int> parse_k_range(const std::string& s) {
  const auto dots = s.find("..");
  std::pair<int, int> range;
  try {
    if (dots == std::string::npos) {
      range = {std::stoi(s), std::stoi(s)};
    } else {
      range = {std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2))};
    }
  } catch (const std::exception&) {
    throw ConfigError("cannot parse k range \"" + s +
                      "\"; expected e.g. 2..8");
  }
  check_k_range(range.first, range.second);
  return range;
}

}  // namespace clidetail

inline void apply_train_json(TrainConfig& t, const nlohmann::json& j) {
  clidetail::require_keys(
      j,
      {"episodes", "batch", "buffer_capacity", "gamma", "tau", "policy_delay",
       "smoothing_std", "noise_clip", "explore_noise_start",
       "explore_noise_final", "actor_lr", "critic_lr", "warmup_batches",
       "hidden1", "hidden2", "optimizer", "invariant_check_interval"},
      "train");
  t.episodes = j.value("episodes", t.episodes);
  t.batch = j.value("batch", t.batch);
  t.buffer_capacity = j.value("buffer_capacity", t.buffer_capacity);
  t.gamma = j.value("gamma", t.gamma);
  t.tau = j.value("tau", t.tau);
  t.policy_delay = j.value("policy_delay", t.policy_delay);
  t.smoothing_std = j.value("smoothing_std", t.smoothing_std);
  t.noise_clip = j.value("noise_clip", t.noise_clip);
  t.explore_noise_start = j.value("explore_noise_start", t.explore_noise_start);
  t.explore_noise_final = j.value("explore_noise_final", t.explore_noise_final);
  t.actor_lr = j.value("actor_lr", t.actor_lr);
  t.critic_lr = j.value("critic_lr", t.critic_lr);
  t.warmup_batches = j.value("warmup_batches", t.warmup_batches);
  t.hidden1 = j.value("hidden1", t.hidden1);
  t.hidden2 = j.value("hidden2", t.hidden2);
  t.invariant_check_interval =
      j.value("invariant_check_interval", t.invariant_check_interval);
  if (j.contains("optimizer")) {
    const std::string opt = j.at("optimizer").get<std::string>();
    if (opt == "adam")
      t.optimizer = Optimizer::adam;
    else if (opt == "sgd")
      t.optimizer = Optimizer::sgd;
    else
      throw ConfigError("config: optimizer must be adam or sgd");
  }
}

inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
  clidetail::require_keys(j,
                          {"network", "out_dir", "seed", "jobs", "profiles",
                           "partition", "train", "oracle"},
                          "the top level");
  cfg.network = j.value("network", cfg.network);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (j.contains("profiles")) {
    const nlohmann::json& p = j.at("profiles");
    clidetail::require_keys(p, {"kind", "train_count", "test_count"},
                            "profiles");
    if (p.contains("kind"))
      cfg.profiles.kind =
          clidetail::parse_profile_kind(p.at("kind").get<std::string>());
    cfg.profiles.train_count = p.value("train_count", cfg.profiles.train_count);
    cfg.profiles.test_count = p.value("test_count", cfg.profiles.test_count);
  }
  if (j.contains("partition")) {
    const nlohmann::json& p = j.at("partition");
    clidetail::require_keys(p, {"k_min", "k_max", "gammas"}, "partition");
    cfg.partition.k_min = p.value("k_min", cfg.partition.k_min);
    cfg.partition.k_max = p.value("k_max", cfg.partition.k_max);
    clidetail::check_k_range(cfg.partition.k_min, cfg.partition.k_max);
    if (p.contains("gammas"))
      cfg.partition.gammas = p.at("gammas").get<std::vector<double>>();
  }
  if (j.contains("train")) apply_train_json(cfg.train, j.at("train"));
  if (j.contains("oracle")) {
    const nlohmann::json& o = j.at("oracle");
    clidetail::require_keys(o, {"starts", "max_iterations", "tolerance"},
                            "oracle");
    cfg.oracle.starts = o.value("starts", cfg.oracle.starts);
    cfg.oracle.max_iterations =
        o.value("max_iterations", cfg.oracle.max_iterations);
    cfg.oracle.tolerance = o.value("tolerance", cfg.oracle.tolerance);
  }
}

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

/// Everything that determines what a run computes — but not where artifacts
/// land or how many threads crunch them. The network enters by content
/// fingerprint, so a moved file still matches and an edited one does not.
inline std::uint64_t config_hash(const RunConfig& cfg, const Network& net,
                                 CriticScope scope) {
  nlohmann::json j;
  j["method"] = scope == CriticScope::local ? "independent_td3" : "matd3";
  j["network_fingerprint"] = to_hex(fnv1a64(serialize_network(net)));
  j["seed"] = cfg.seed;
  j["profiles"] = {{"kind", clidetail::profile_kind_name(cfg.profiles.kind)},
                   {"train_count", cfg.profiles.train_count},
                   {"test_count", cfg.profiles.test_count}};
  j["partition"] = {{"k_min", cfg.partition.k_min},
                    {"k_max", cfg.partition.k_max},
                    {"gammas", cfg.partition.gammas}};
  const TrainConfig& t = cfg.train;
  j["train"] = {{"episodes", t.episodes},
                {"batch", t.batch},
                {"buffer_capacity", t.buffer_capacity},
                {"gamma", t.gamma},
                {"tau", t.tau},
                {"policy_delay", t.policy_delay},
                {"smoothing_std", t.smoothing_std},
                {"noise_clip", t.noise_clip},
                {"explore_noise_start", t.explore_noise_start},
                {"explore_noise_final", t.explore_noise_final},
                {"actor_lr", t.actor_lr},
                {"critic_lr", t.critic_lr},
                {"warmup_batches", t.warmup_batches},
                {"hidden1", t.hidden1},
                {"hidden2", t.hidden2},
                {"optimizer", t.optimizer == Optimizer::adam ? "adam" : "sgd"}};
  j["oracle"] = {{"starts", cfg.oracle.starts},
                 {"max_iterations", cfg.oracle.max_iterations},
                 {"tolerance", cfg.oracle.tolerance}};
  return fnv1a64(j.dump());
}

inline std::string artifact_header(std::uint64_t hash, std::uint64_t seed) {
  return "# config_hash=" + to_hex(hash) + "\n# seed=" + std::to_string(seed) +
         "\n";
}

inline void write_file(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError("cannot write " + path);
    out << text;
    if (!out) throw ParseError("short write on " + path);
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Shared pipeline stages.

inline Network load_run_network(const RunConfig& cfg) {
  if (cfg.network.empty())
    throw ConfigError("no network given; pass --net or set it in the config");
  return load_network(cfg.network);
}

inline SensitivityMatrix base_sensitivity(const Network& net,
                                          const AdmittanceMatrix& y) {
  const PowerFlowSolution sol =
      solve_power_flow(net, y, base_injections(net));
  return compute_vq_sensitivity(net, y, sol);
}

inline std::vector<double> resolved_sigmas(const PartitionParams& params,
                                           const SensitivityMatrix& sens) {
  if (params.gammas.empty()) return default_sigmas(sens);
  std::vector<double> sigmas;
  for (double gamma : params.gammas) {
    if (gamma <= 0.0) throw ConfigError("gamma values must be > 0");
    sigmas.push_back(1.0 / std::sqrt(2.0 * gamma));
  }
  std::sort(sigmas.begin(), sigmas.end());
  return sigmas;
}

inline bool every_cluster_has_a_device(const PartitionResult& part) {
  if (part.clusters.empty()) return false;
  for (const ClusterDiagnostics& c : part.clusters)
    if (c.pv_count + c.svc_count == 0) return false;
  return true;
}

/// The partition the controllers actually train on. If the score optimum
/// leaves some cluster without a single controllable device, fall back to
/// the best-scoring scanned candidate with full device coverage (agents
/// need something to actuate); `fell_back` reports when that happened.
inline PartitionResult select_trainable_partition(
    const Network& net, const SensitivityMatrix& sens, const RunConfig& cfg,
    std::vector<ScanEntry>* scan_out = nullptr, bool* fell_back = nullptr) {
  const std::vector<double> sigmas = resolved_sigmas(cfg.partition, sens);
  const std::uint64_t seed = substream_seed(cfg.seed, "kmeans");
  std::vector<ScanEntry> scan;
  PartitionResult best = select_partition(net, sens, cfg.partition.k_min,
                                          cfg.partition.k_max, sigmas, seed,
                                          &scan);
  if (scan_out) *scan_out = scan;
  if (fell_back) *fell_back = false;
  if (every_cluster_has_a_device(best)) return best;

  std::sort(scan.begin(), scan.end(),
            [](const ScanEntry& a, const ScanEntry& b) {
              return a.silhouette > b.silhouette;
            });
  for (const ScanEntry& entry : scan) {
    PartitionResult cand =
        partition_at(net, sens, entry.k, entry.sigma, seed);
    if (cand.k >= 2 && every_cluster_has_a_device(cand)) {
      if (fell_back) *fell_back = true;
      return cand;
    }
  }
  throw ConfigError(
      "no scanned partition gives every cluster a controllable device");
}

// ---------------------------------------------------------------------------
// Subcommands. Each throws on failure; run_cli maps exceptions to exit
// codes (2 = configuration/usage, 3 = runtime).

inline void cmd_partition(const RunConfig& cfg) {
  const Network net = load_run_network(cfg);
  const AdmittanceMatrix y = build_admittance(net);
  const SensitivityMatrix sens = base_sensitivity(net, y);
  const std::vector<double> sigmas = resolved_sigmas(cfg.partition, sens);

  std::vector<ScanEntry> scan;
  const PartitionResult best =
      select_partition(net, sens, cfg.partition.k_min, cfg.partition.k_max,
                       sigmas, substream_seed(cfg.seed, "kmeans"), &scan);

  const std::uint64_t hash = config_hash(cfg, net, CriticScope::global);
  std::string scan_csv =
      artifact_header(hash, cfg.seed) + "k,sigma,silhouette,ncut\n";
  for (const ScanEntry& e : scan)
    scan_csv += std::to_string(e.k) + ',' + format_double(e.sigma) + ',' +
                format_double(e.silhouette) + ',' + format_double(e.ncut) +
                '\n';
  write_file(cfg.out_dir + "/scan.csv", scan_csv);

  std::string part_csv = artifact_header(hash, cfg.seed) + "bus_id,cluster\n";
  for (std::size_t i = 0; i < best.buses.size(); ++i)
    part_csv += std::to_string(net.buses[best.buses[i]].id) + ',' +
                std::to_string(best.assignment[i]) + '\n';
  write_file(cfg.out_dir + "/partition.csv", part_csv);

  std::cout << "selected k=" << best.k << " sigma=" << format_double(best.sigma)
            << " silhouette=" << format_double(best.silhouette)
            << " ncut=" << format_double(best.ncut) << "\n"
            << "devices covered: "
            << (every_cluster_has_a_device(best) ? "yes" : "no") << "\n"
            << "wrote " << cfg.out_dir << "/scan.csv and " << cfg.out_dir
            << "/partition.csv\n";
}

namespace clidetail {

inline std::string checkpoint_tag(CriticScope scope) {
  return scope == CriticScope::local ? "_independent" : "";
}

inline std::string final_checkpoint_path(const RunConfig& cfg,
                                         CriticScope scope) {
  return cfg.out_dir + "/checkpoint" + checkpoint_tag(scope) + ".json";
}

/// Highest-episode checkpoint (final or periodic) for resuming, or empty.
inline std::string latest_checkpoint(const RunConfig& cfg, CriticScope scope,
                                     std::uint64_t hash,
                                     const std::vector<ClusterSpec>& clusters,
                                     int* episode_out) {
  const std::string prefix = "checkpoint" + checkpoint_tag(scope);
  std::string best_path;
  int best_episode = -1;
  if (!std::filesystem::is_directory(cfg.out_dir)) return best_path;
  for (const auto& entry : std::filesystem::directory_iterator(cfg.out_dir)) {
    const std::string name = entry.path().filename().string();
    if (name != prefix + ".json" &&
        (name.rfind(prefix + "_ep", 0) != 0 ||
         name.find(".json") == std::string::npos))
      continue;
    try {
      nlohmann::json meta;
      load_checkpoint(entry.path().string(), hash, clusters, &meta);
      const int ep = meta.value("episode", -1);
      if (ep > best_episode) {
        best_episode = ep;
        best_path = entry.path().string();
      }
    } catch (const std::exception&) {
      continue;  // foreign or stale checkpoint; not ours to resume
    }
  }
  *episode_out = best_episode;
  return best_path;
}

}  // namespace clidetail

inline void cmd_train(const RunConfig& cfg) {
  const Network net = load_run_network(cfg);
  const AdmittanceMatrix y = build_admittance(net);
  const SensitivityMatrix sens = base_sensitivity(net, y);

  bool fell_back = false;
  const PartitionResult part =
      select_trainable_partition(net, sens, cfg, nullptr, &fell_back);
  if (fell_back)
    std::cerr << "note: score-optimal partition left a cluster without "
                 "devices; training on the best covered candidate (k="
              << part.k << ")\n";
  const std::vector<ClusterSpec> clusters = make_clusters(net, part);

  const std::vector<ScenarioProfile> profiles =
      generate_profiles(net, cfg.profiles.kind, cfg.profiles.train_count,
                        substream_seed(cfg.seed, "profiles/train"));

  TrainConfig tc = cfg.train;
  tc.seed = substream_seed(cfg.seed, tc.scope == CriticScope::local
                                         ? "train/independent"
                                         : "train/matd3");
  const std::uint64_t hash = config_hash(cfg, net, tc.scope);
  const std::string tag = clidetail::checkpoint_tag(tc.scope);

  Environment env(net, clusters);

  AgentSet resumed{{}, AgentLayout(clusters), tc.scope};
  const AgentSet* resume_from = nullptr;
  int first_episode = 0;
  if (cfg.resume) {
    int episode = -1;
    const std::string path =
        clidetail::latest_checkpoint(cfg, tc.scope, hash, clusters, &episode);
    if (!path.empty() && episode >= 0) {
      resumed = load_checkpoint(path, hash, clusters);
      resumed.scope = tc.scope;
      resume_from = &resumed;
      first_episode = episode + 1;
      std::cout << "resuming from " << path << " at episode " << first_episode
                << "\n";
    } else {
      std::cout << "no matching checkpoint to resume; starting fresh\n";
    }
  }

  auto checkpoint_cb = [&](const EpisodeStats& stats, const AgentSet& set) {
    if ((stats.episode + 1) % 100 == 0)
      save_checkpoint(set, hash,
                      cfg.out_dir + "/checkpoint" + tag + "_ep" +
                          std::to_string(stats.episode + 1) + ".json",
                      {{"episode", stats.episode}});
  };

  std::filesystem::create_directories(cfg.out_dir);
  TrainResult result =
      train(env, profiles, tc, checkpoint_cb, resume_from, first_episode);

  save_checkpoint(result.agents, hash,
                  clidetail::final_checkpoint_path(cfg, tc.scope),
                  {{"episode", tc.episodes - 1}});

  std::string curve = artifact_header(hash, cfg.seed) +
                      "episode,cumulative_reward,mean_critic_loss,wall_ms\n";
  for (const EpisodeStats& s : result.curve)
    curve += std::to_string(s.episode) + ',' +
             format_double(s.cumulative_reward) + ',' +
             format_double(s.mean_critic_loss) + ',' +
             format_double(cfg.timing ? s.wall_ms : 0.0) + '\n';
  write_file(cfg.out_dir + "/curve" + tag + ".csv", curve);

  if (result.monitor.violations > 0) {
    std::cerr << "warning: " << result.monitor.violations
              << " invariant violations during training:\n";
    for (const std::string& m : result.monitor.messages)
      std::cerr << "  " << m << "\n";
  }
  std::cout << "trained " << result.curve.size() << " episodes ("
            << result.gradient_steps << " gradient steps, "
            << result.monitor.checks << " invariant audits, "
            << result.monitor.violations << " violations)\n"
            << "wrote " << clidetail::final_checkpoint_path(cfg, tc.scope)
            << " and " << cfg.out_dir << "/curve" << tag << ".csv\n";
}

inline void cmd_eval(const RunConfig& cfg) {
  const Network net = load_run_network(cfg);
  const AdmittanceMatrix y = build_admittance(net);
  const SensitivityMatrix sens = base_sensitivity(net, y);
  const PartitionResult part = select_trainable_partition(net, sens, cfg);
  const std::vector<ClusterSpec> clusters = make_clusters(net, part);

  const std::vector<ScenarioProfile> held_out =
      generate_profiles(net, cfg.profiles.kind, cfg.profiles.test_count,
                        substream_seed(cfg.seed, "profiles/test"));

  // The proposed controller is required; the independent baseline joins
  // the table when its checkpoint exists.
  const std::uint64_t matd3_hash = config_hash(cfg, net, CriticScope::global);
  const std::string matd3_path =
      cfg.checkpoint.empty()
          ? clidetail::final_checkpoint_path(cfg, CriticScope::global)
          : cfg.checkpoint;
  if (!std::filesystem::exists(matd3_path))
    throw ConfigError("missing checkpoint: expected " + matd3_path +
                      " (run `gridvolt train` first)");
  const AgentSet matd3_set = load_checkpoint(matd3_path, matd3_hash, clusters);
  const std::vector<Mlp> matd3_actors = extract_actors(matd3_set);

  const std::uint64_t indep_hash = config_hash(cfg, net, CriticScope::local);
  const std::string indep_path =
      cfg.baseline_checkpoint.empty()
          ? clidetail::final_checkpoint_path(cfg, CriticScope::local)
          : cfg.baseline_checkpoint;
  std::optional<std::vector<Mlp>> indep_actors;
  if (std::filesystem::exists(indep_path)) {
    indep_actors =
        extract_actors(load_checkpoint(indep_path, indep_hash, clusters));
  } else if (!cfg.baseline_checkpoint.empty()) {
    throw ConfigError("missing checkpoint: expected " + indep_path);
  }

  Environment env(net, clusters);
  const EvalResult original = eval_no_control(net, held_out);
  std::optional<EvalResult> independent;
  if (indep_actors)
    independent = eval_policy(*indep_actors, env, held_out);
  const EvalResult matd3 = eval_policy(matd3_actors, env, held_out);
  OracleConfig ocfg = cfg.oracle;
  ocfg.seed = substream_seed(cfg.seed, "oracle");
  const EvalResult oracle = eval_oracle(net, held_out, ocfg, 1.0, cfg.jobs);

  auto err_of = [&](const EvalResult& method) -> std::string {
    try {
      return format_double(
          compute_err(method.metrics, oracle.metrics, original.metrics));
    } catch (const DegenerateDenominator&) {
      return "";
    }
  };
  auto row = [&](const std::string& name, const EvalResult& r,
                 const std::string& err) {
    return name + ',' + format_double(r.metrics.average) + ',' +
           format_double(r.metrics.max_rise) + ',' +
           format_double(r.metrics.max_drop) + ',' +
           format_double(cfg.timing ? r.metrics.per_step_time : 0.0) + ',' +
           err + '\n';
  };

  const std::uint64_t hash = matd3_hash;
  std::string results =
      artifact_header(hash, cfg.seed) +
      "method,average_pct,max_rise_pct,max_drop_pct,per_step_time_s,err_pct\n";
  results += row("original", original, "");
  if (independent)
    results += row("independent_td3", *independent, err_of(*independent));
  results += row("matd3", matd3, err_of(matd3));
  results += row("oracle", oracle, "");
  write_file(cfg.out_dir + "/results.csv", results);
  std::cout << "wrote " << cfg.out_dir << "/results.csv\n";

  if (cfg.transient) {
    if (!indep_actors)
      throw ConfigError(
          "--transient compares both controllers; train the independent "
          "baseline first (gridvolt train --baseline independent)");
    StressTraces traces =
        stress_test_transient(net, clusters, matd3_actors, *indep_actors,
                              substream_seed(cfg.seed, "stress"), ocfg);
    write_file(cfg.out_dir + "/stress.csv",
               artifact_header(hash, cfg.seed) + stress_to_csv(traces));
    std::cout << "wrote " << cfg.out_dir << "/stress.csv (monitored bus "
              << traces.bus_id << ")\n";
  }

  std::cout << "average deviation: original "
            << format_double(original.metrics.average) << "%, matd3 "
            << format_double(matd3.metrics.average) << "%, oracle "
            << format_double(oracle.metrics.average) << "%\n";
}

inline void cmd_generate_profiles(const RunConfig& cfg, int count) {
  const Network net = load_run_network(cfg);
  const std::vector<ScenarioProfile> profiles =
      generate_profiles(net, cfg.profiles.kind, count,
                        substream_seed(cfg.seed, "profiles/generate"));
  const std::uint64_t hash = config_hash(cfg, net, CriticScope::global);
  const std::string kind = clidetail::profile_kind_name(cfg.profiles.kind);
  for (int i = 0; i < count; ++i) {
    const std::string path =
        cfg.out_dir + "/profile_" + kind + "_" + std::to_string(i) + ".csv";
    write_file(path, artifact_header(hash, cfg.seed) +
                         write_profile_csv(net, profiles[i]));
  }
  std::cout << "wrote " << count << " " << kind << " profile(s) to "
            << cfg.out_dir << "\n";
}

// ---------------------------------------------------------------------------
// Argument wiring.

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{
      "gridvolt: cluster a radial feeder by V-Q sensitivity and train "
      "per-cluster reinforcement-learning voltage controllers"};
  app.require_subcommand(1);

  // Shared option state; each subcommand binds the subset it supports.
  std::string net_path, config_path, out_dir, k_range, kind_name, ckpt_path,
      baseline_ckpt_path;
  std::uint64_t seed = 0;
  std::string baseline_name = "matd3";
  std::vector<double> gammas;
  int episodes = 0, count = 1, jobs = 0;
  bool resume = false, timing = false, transient = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--net", net_path, "network JSON file");
    cmd->add_option("--config", config_path, "JSON config file (flags win)");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "root seed");
  };

  CLI::App* partition = app.add_subcommand(
      "partition", "scan (k, sigma) and write the selected assignment");
  add_common(partition);
  partition->add_option("--k-range", k_range, "cluster counts, e.g. 2..8");
  partition->add_option("--gamma", gammas,
                        "kernel gammas (sigma = 1/sqrt(2 gamma))")
      ->delimiter(',');

  CLI::App* train_cmd =
      app.add_subcommand("train", "train controllers on generated days");
  add_common(train_cmd);
  train_cmd->add_option("--episodes", episodes, "training episodes");
  train_cmd->add_option("--baseline", baseline_name,
                        "matd3 (default) or independent");
  train_cmd->add_flag("--resume", resume, "continue from the last checkpoint");
  train_cmd->add_flag("--timing", timing, "record wall-clock columns");

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "compare methods on held-out days and write the results table");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", ckpt_path, "controller checkpoint");
  eval_cmd->add_option("--baseline-checkpoint", baseline_ckpt_path,
                       "independent-TD3 checkpoint");
  eval_cmd->add_flag("--transient", transient,
                     "also run the one-minute cloud transient");
  eval_cmd->add_flag("--timing", timing, "record wall-clock columns");
  eval_cmd->add_option("--jobs", jobs, "benchmark evaluation threads");

  CLI::App* gen = app.add_subcommand("generate-profiles",
                                     "emit scenario CSVs for inspection");
  add_common(gen);
  gen->add_option("--kind", kind_name, "daily or cloud_transient");
  gen->add_option("--count", count, "number of profiles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    auto passed = [&](CLI::App* cmd, const std::string& flag) {
      return cmd->count(flag) > 0;
    };
    CLI::App* active = app.get_subcommands().front();
    if (passed(active, "--net")) cfg.network = net_path;
    if (passed(active, "--out")) cfg.out_dir = out_dir;
    if (passed(active, "--seed")) cfg.seed = seed;

    if (active == partition) {
      if (passed(partition, "--k-range")) {
        auto [lo, hi] = clidetail::parse_k_range(k_range);
        cfg.partition.k_min = lo;
        cfg.partition.k_max = hi;
      }
      if (passed(partition, "--gamma")) cfg.partition.gammas = gammas;
      cmd_partition(cfg);
    } else if (active == train_cmd) {
      if (passed(train_cmd, "--episodes")) cfg.train.episodes = episodes;
      if (baseline_name == "independent")
        cfg.train.scope = CriticScope::local;
      else if (baseline_name != "matd3")
        throw ConfigError("--baseline must be matd3 or independent, got \"" +
                          baseline_name + "\"");
      cfg.resume = resume;
      cfg.timing = timing;
      cmd_train(cfg);
    } else if (active == eval_cmd) {
      cfg.checkpoint = ckpt_path;
      cfg.baseline_checkpoint = baseline_ckpt_path;
      cfg.transient = transient;
      cfg.timing = timing;
      if (passed(eval_cmd, "--jobs")) cfg.jobs = jobs;
      cmd_eval(cfg);
    } else {
      if (passed(gen, "--kind"))
        cfg.profiles.kind = clidetail::parse_profile_kind(kind_name);
      cmd_generate_profiles(cfg, count);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace gridvolt
