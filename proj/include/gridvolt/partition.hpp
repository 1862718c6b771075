#pragma once

// Spectral clustering of buses into control sub-networks. Rows of the V-Q
// sensitivity matrix are the feature vectors; a Gaussian kernel turns row
// distances into affinities, the symmetric normalized Laplacian is embedded
// via its smallest eigenvectors (rows renormalized, Ng-Jordan-Weiss), and
// k-means picks the clusters. The cluster count and kernel width come from
// a Silhouette scan.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "gridvolt/common.hpp"
#include "gridvolt/netmodel.hpp"
#include "gridvolt/powerflow.hpp"

namespace gridvolt {

class ZeroDegree : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EigenFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateClustering : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AffinityMatrix {
  Eigen::MatrixXd w;  // symmetric, diagonal 1, entries in (0,1]
  double sigma = 0.0;
};

struct SpectralEmbedding {
  Eigen::MatrixXd vectors;      // N x k, rows unit-norm
  Eigen::MatrixXd raw_vectors;  // the eigenvectors before row scaling
  Eigen::VectorXd eigenvalues;  // first k, ascending
};

struct ClusterDiagnostics {
  int size = 0;
  int pv_count = 0;
  int svc_count = 0;
  bool contiguous = false;  // buses induce a connected feeder subgraph
};

struct PartitionResult {
  std::vector<int> assignment;  // per sensitivity row, cluster id in 0..k-1
  std::vector<int> buses;       // row -> bus index (non-slack, ascending)
  int k = 0;
  double sigma = 0.0;
  double silhouette = 0.0;
  double ncut = 0.0;
  std::vector<ClusterDiagnostics> clusters;
};

struct ScanEntry {
  int k = 0;
  double sigma = 0.0;
  double silhouette = 0.0;
  double ncut = 0.0;
};

inline AffinityMatrix build_affinity(const SensitivityMatrix& sens,
                                     double sigma) {
  if (sigma <= 0) throw InvariantViolation("kernel width sigma must be > 0");
  const int n = static_cast<int>(sens.s.rows());
  AffinityMatrix aff;
  aff.sigma = sigma;
  aff.w.resize(n, n);
  const double denom = 2.0 * sigma * sigma;
  for (int i = 0; i < n; ++i) {
    aff.w(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double d2 = (sens.s.row(i) - sens.s.row(j)).squaredNorm();
      const double w = std::exp(-d2 / denom);
      aff.w(i, j) = w;
      aff.w(j, i) = w;
    }
  }
  return aff;
}

/// L_sym = D^{-1/2} (D - W) D^{-1/2}; degrees include the self-affinity.
inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> build_normalized_laplacian(
    const AffinityMatrix& aff) {
  const Eigen::VectorXd d = aff.w.rowwise().sum();
  if ((d.array() <= 0.0).any())
    throw ZeroDegree("affinity graph has an isolated node");
  const Eigen::VectorXd dinv_sqrt = d.array().rsqrt();
  Eigen::MatrixXd l_sym =
      -(dinv_sqrt.asDiagonal() * aff.w * dinv_sqrt.asDiagonal());
  l_sym.diagonal().array() += 1.0;
  // Clean up asymmetry from the two diagonal scalings.
  l_sym = 0.5 * (l_sym + l_sym.transpose()).eval();
  return {l_sym, d};
}

inline SpectralEmbedding spectral_embed(const Eigen::MatrixXd& l_sym, int k) {
  const int n = static_cast<int>(l_sym.rows());
  if (k < 2 || k > n)
    throw InvariantViolation("embedding dimension must satisfy 2 <= k <= N");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(l_sym);
  if (solver.info() != Eigen::Success)
    throw EigenFailure("symmetric eigensolver failed on the Laplacian");

  SpectralEmbedding emb;
  emb.eigenvalues = solver.eigenvalues().head(k);
  emb.raw_vectors = solver.eigenvectors().leftCols(k);
  emb.vectors = emb.raw_vectors;
  for (int i = 0; i < n; ++i) {
    const double norm = emb.vectors.row(i).norm();
    if (norm > 0) emb.vectors.row(i) /= norm;
  }
  return emb;
}

namespace kmdetail {

inline double wcss(const Eigen::MatrixXd& points,
                   const std::vector<int>& assignment,
                   const Eigen::MatrixXd& centroids) {
  double total = 0.0;
  for (int i = 0; i < points.rows(); ++i)
    total += (points.row(i) - centroids.row(assignment[i])).squaredNorm();
  return total;
}

/// k-means++ seeding: D²-weighted sampling of successive centroids.
inline Eigen::MatrixXd seed_centroids(const Eigen::MatrixXd& points, int k,
                                      std::mt19937_64& rng) {
  const int n = static_cast<int>(points.rows());
  Eigen::MatrixXd centroids(k, points.cols());
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.row(0) = points.row(first(rng));

  Eigen::VectorXd d2(n);
  for (int c = 1; c < k; ++c) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (int j = 0; j < c; ++j)
        best = std::min(best, (points.row(i) - centroids.row(j)).squaredNorm());
      d2[i] = best;
    }
    const double total = d2.sum();
    if (total <= 0.0) {
      // All points coincide with chosen centroids; any pick works.
      centroids.row(c) = points.row(first(rng));
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng), acc = 0.0;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= target) {
        pick = i;
        break;
      }
    }
    centroids.row(c) = points.row(pick);
  }
  return centroids;
}

}  // namespace kmdetail

inline std::vector<int> kmeans(const Eigen::MatrixXd& points, int k,
                               int restarts, std::uint64_t seed,
                               int max_iter = 300, double tol = 1e-10) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n) throw InvariantViolation("kmeans requires 1 <= k <= N");
  if (restarts < 1) throw InvariantViolation("kmeans requires restarts >= 1");

  std::vector<int> best_assignment;
  double best_wcss = std::numeric_limits<double>::max();

  for (int restart = 0; restart < restarts; ++restart) {
    std::mt19937_64 rng(
        substream_seed(seed, "kmeans/" + std::to_string(restart)));
    Eigen::MatrixXd centroids = kmdetail::seed_centroids(points, k, rng);
    std::vector<int> assignment(n, 0);

    for (int iter = 0; iter < max_iter; ++iter) {
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        for (int c = 0; c < k; ++c) {
          const double d = (points.row(i) - centroids.row(c)).squaredNorm();
          if (d < best) {
            best = d;
            assignment[i] = c;
          }
        }
      }

      Eigen::MatrixXd next = Eigen::MatrixXd::Zero(k, points.cols());
      std::vector<int> counts(k, 0);
      for (int i = 0; i < n; ++i) {
        next.row(assignment[i]) += points.row(i);
        ++counts[assignment[i]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] > 0) {
          next.row(c) /= counts[c];
          continue;
        }
        // Empty cluster: reseed at the point farthest from its centroid.
        int farthest = 0;
        double worst = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d =
              (points.row(i) - centroids.row(assignment[i])).squaredNorm();
          if (d > worst) {
            worst = d;
            farthest = i;
          }
        }
        next.row(c) = points.row(farthest);
        assignment[farthest] = c;
      }

      const double moved = (next - centroids).rowwise().norm().maxCoeff();
      centroids = next;
      if (moved < tol) break;
    }

    const double score = kmdetail::wcss(points, assignment, centroids);
    if (score < best_wcss) {
      best_wcss = score;
      best_assignment = assignment;
    }
  }
  return best_assignment;
}

inline double silhouette_score(const Eigen::MatrixXd& points,
                               const std::vector<int>& assignment) {
  const int n = static_cast<int>(points.rows());
  int k = 0;
  for (int c : assignment) k = std::max(k, c + 1);
  std::vector<int> counts(k, 0);
  for (int c : assignment) ++counts[c];
  int nonempty = 0;
  for (int c = 0; c < k; ++c)
    if (counts[c] > 0) ++nonempty;
  if (nonempty < 2)
    throw DegenerateClustering("silhouette needs at least two clusters");

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int own = assignment[i];
    if (counts[own] == 1) continue;  // singleton contributes 0

    std::vector<double> mean_dist(k, 0.0);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_dist[assignment[j]] += (points.row(i) - points.row(j)).norm();
    }
    const double a = mean_dist[own] / (counts[own] - 1);
    double b = std::numeric_limits<double>::max();
    for (int c = 0; c < k; ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, mean_dist[c] / counts[c]);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / n;
}

/// F_Ncut = 1/2 * sum_i cut(A_i, complement) / vol(A_i).
inline double normalized_cut(const AffinityMatrix& aff,
                             const std::vector<int>& assignment) {
  const int n = static_cast<int>(aff.w.rows());
  int k = 0;
  for (int c : assignment) k = std::max(k, c + 1);
  const Eigen::VectorXd d = aff.w.rowwise().sum();

  std::vector<double> cut(k, 0.0), vol(k, 0.0);
  for (int i = 0; i < n; ++i) {
    vol[assignment[i]] += d[i];
    for (int j = 0; j < n; ++j)
      if (assignment[j] != assignment[i]) cut[assignment[i]] += aff.w(i, j);
  }
  double total = 0.0;
  for (int c = 0; c < k; ++c)
    if (vol[c] > 0) total += cut[c] / vol[c];
  return 0.5 * total;
}

/// Renumber clusters so ids appear in order of their lowest member row.
inline void canonicalize_labels(std::vector<int>& assignment) {
  std::vector<int> remap(assignment.size(), -1);
  int next = 0;
  for (int& c : assignment) {
    if (remap[c] < 0) remap[c] = next++;
    c = remap[c];
  }
}

/// Kernel widths to scan: sigma = 1/sqrt(2*gamma) for gamma in
/// {0.01, 0.1, 1}, plus the median pairwise row distance, ascending.
inline std::vector<double> default_sigmas(const SensitivityMatrix& sens) {
  std::vector<double> sigmas;
  for (double gamma : {0.01, 0.1, 1.0})
    sigmas.push_back(1.0 / std::sqrt(2.0 * gamma));

  const int n = static_cast<int>(sens.s.rows());
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dists.push_back((sens.s.row(i) - sens.s.row(j)).norm());
  if (!dists.empty()) {
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2,
                     dists.end());
    const double median = dists[dists.size() / 2];
    if (median > 0) sigmas.push_back(median);
  }
  std::sort(sigmas.begin(), sigmas.end());
  return sigmas;
}

inline ClusterDiagnostics diagnose_cluster(const Network& net,
                                           const std::vector<int>& buses,
                                           const std::vector<int>& assignment,
                                           int cluster) {
  ClusterDiagnostics diag;
  std::vector<int> members;
  for (std::size_t row = 0; row < assignment.size(); ++row)
    if (assignment[row] == cluster) members.push_back(buses[row]);
  diag.size = static_cast<int>(members.size());

  for (const PvUnit& pv : net.pvs)
    if (std::find(members.begin(), members.end(), pv.bus) != members.end())
      ++diag.pv_count;
  for (const SvcUnit& svc : net.svcs)
    if (std::find(members.begin(), members.end(), svc.bus) != members.end())
      ++diag.svc_count;

  // Connectivity of the induced feeder subgraph (slack excluded).
  if (!members.empty()) {
    std::vector<int> pos(net.n(), -1);
    for (std::size_t m = 0; m < members.size(); ++m) pos[members[m]] = static_cast<int>(m);
    std::vector<std::vector<int>> adj(members.size());
    for (const Branch& br : net.branches)
      if (pos[br.from] >= 0 && pos[br.to] >= 0) {
        adj[pos[br.from]].push_back(pos[br.to]);
        adj[pos[br.to]].push_back(pos[br.from]);
      }
    std::vector<char> seen(members.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t reached = 1;
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
    diag.contiguous = reached == members.size();
  }
  return diag;
}

/// Full (k, sigma) scan; best partition by Silhouette, ties broken by
/// smaller k then smaller sigma. `scan_log` (optional) records every grid
/// point in evaluation order.
/// Clusters at a single (k, sigma) grid point. The returned k counts the
/// labels actually produced, which a collapsed embedding can leave below
/// the request; such results carry no meaningful scores. Deterministic in
/// (seed, k, sigma) — re-running a scanned grid point reproduces its row.
inline PartitionResult partition_at(const Network& net,
                                    const SensitivityMatrix& sens, int k,
                                    double sigma, std::uint64_t seed) {
  AffinityMatrix aff = build_affinity(sens, sigma);
  auto [l_sym, d] = build_normalized_laplacian(aff);
  SpectralEmbedding emb = spectral_embed(l_sym, k);

  PartitionResult out;
  out.assignment = kmeans(emb.vectors, k, 10,
                          substream_seed(seed, "partition/k" + std::to_string(k)));
  canonicalize_labels(out.assignment);
  out.buses = sens.buses;
  out.sigma = sigma;
  out.k = 0;
  for (int c : out.assignment) out.k = std::max(out.k, c + 1);
  if (out.k < 2) {
    out.silhouette = -std::numeric_limits<double>::max();
    out.ncut = 0.0;
    return out;
  }

  // Score in the sensitivity-row space, not the k-dimensional embedding:
  // scores for different k are only comparable against the same
  // coordinates, and the rows are the electrical distances we care about.
  out.silhouette = silhouette_score(sens.s, out.assignment);
  out.ncut = normalized_cut(aff, out.assignment);
  for (int c = 0; c < out.k; ++c)
    out.clusters.push_back(diagnose_cluster(net, out.buses, out.assignment, c));
  return out;
}

inline PartitionResult select_partition(const Network& net,
                                        const SensitivityMatrix& sens,
                                        int k_min, int k_max,
                                        const std::vector<double>& sigmas,
                                        std::uint64_t seed,
                                        std::vector<ScanEntry>* scan_log = nullptr) {
  if (k_min < 2 || k_max < k_min)
    throw InvariantViolation("cluster-count range must satisfy 2 <= k_min <= k_max");
  if (sigmas.empty()) throw InvariantViolation("kernel width list is empty");

  PartitionResult best;
  best.silhouette = -std::numeric_limits<double>::max();
  bool found = false;

  for (int k = k_min; k <= k_max; ++k) {
    for (double sigma : sigmas) {
      PartitionResult cand = partition_at(net, sens, k, sigma, seed);
      if (cand.k < 2) continue;  // collapsed embedding; nothing to score
      if (scan_log)
        scan_log->push_back({k, sigma, cand.silhouette, cand.ncut});

      const bool better =
          cand.silhouette > best.silhouette + 1e-12 ||
          (std::abs(cand.silhouette - best.silhouette) <= 1e-12 &&
           (cand.k < best.k || (cand.k == best.k && sigma < best.sigma)));
      if (better) {
        best = cand;
        found = true;
      }
    }
  }
  if (!found)
    throw DegenerateClustering("no (k, sigma) grid point produced >= 2 clusters");
  return best;
}

}  // namespace gridvolt
