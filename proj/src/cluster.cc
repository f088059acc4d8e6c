// src/cluster.cc

// Copyright 2026 The ipltk Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ipltk/cluster.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ipltk/io.h"

namespace ipltk::cluster {

double Inertia(const Matrix &vectors, const Matrix &centroids,
               const std::vector<int> &assignment) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < vectors.rows(); i++)
    total += (vectors.row(i) - centroids.row(assignment[i])).squaredNorm();
  return total;
}

namespace {

// Nearest centroid by exact squared distance; ties go to the lowest index.
void Assign(const Matrix &vectors, const Matrix &centroids, int workers,
            std::vector<int> *assignment, std::vector<double> *dist) {
  const Eigen::Index k = centroids.rows();
  ParallelFor(vectors.rows(), workers, [&](size_t i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (Eigen::Index c = 0; c < k; c++) {
      double d = (vectors.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    (*assignment)[i] = arg;
    (*dist)[i] = best;
  });
}

Matrix PlusPlusSeeds(const Matrix &vectors, int k, Rng &rng) {
  const Eigen::Index n = vectors.rows();
  Matrix centroids(k, vectors.cols());
  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  centroids.row(0) = vectors.row(first);
  chosen[first] = true;
  std::vector<double> d2(n);
  for (Eigen::Index i = 0; i < n; i++)
    d2[i] = (vectors.row(i) - centroids.row(0)).squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c = 1; c < k; c++) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index next = -1;
    if (total > 0.0) {
      double target = unit(rng) * total, acc = 0.0;
      for (Eigen::Index i = 0; i < n; i++) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc >= target) {
          next = i;
          break;
        }
      }
      if (next < 0) {  // rounding at the tail
        for (Eigen::Index i = n; i-- > 0;)
          if (d2[i] > 0.0) { next = i; break; }
      }
    } else {
      // All remaining points coincide with a seed: take the first unused one.
      for (Eigen::Index i = 0; i < n; i++)
        if (!chosen[i]) { next = i; break; }
    }
    centroids.row(c) = vectors.row(next);
    chosen[next] = true;
    for (Eigen::Index i = 0; i < n; i++)
      d2[i] = std::min(d2[i], (vectors.row(i) - centroids.row(c)).squaredNorm());
  }
  return centroids;
}

// Recomputes centroids as member means; empty clusters take the point that
// is currently farthest from its own centroid.
void UpdateCentroids(const Matrix &vectors, int k, std::vector<int> *assignment,
                     Matrix *centroids) {
  const Eigen::Index n = vectors.rows();
  std::vector<int> counts(k, 0);
  Matrix sums = Matrix::Zero(k, vectors.cols());
  for (Eigen::Index i = 0; i < n; i++) {
    sums.row((*assignment)[i]) += vectors.row(i);
    counts[(*assignment)[i]]++;
  }
  for (int c = 0; c < k; c++)
    if (counts[c] > 0) centroids->row(c) = sums.row(c) / counts[c];
  for (int c = 0; c < k; c++) {
    if (counts[c] > 0) continue;
    Eigen::Index far = -1;
    double far_d = -1.0;
    for (Eigen::Index i = 0; i < n; i++) {
      int a = (*assignment)[i];
      if (counts[a] <= 1) continue;
      double d = (vectors.row(i) - centroids->row(a)).squaredNorm();
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far < 0) throw NumericalError("k-means: cannot re-seed empty cluster");
    int old = (*assignment)[far];
    spdlog::debug("k-means: re-seeding empty cluster {} at point {}", c, far);
    sums.row(old) -= vectors.row(far);
    counts[old]--;
    centroids->row(old) = sums.row(old) / counts[old];
    (*assignment)[far] = c;
    sums.row(c) = vectors.row(far);
    counts[c] = 1;
    centroids->row(c) = vectors.row(far);
  }
}

// One sweep of single-point moves: a point leaves its cluster whenever the
// exact change in inertia of moving it elsewhere is negative. Every local
// optimum of this sweep is also a Lloyd fixed point, but not vice versa.
// Returns true if any point moved.
bool SinglePointMoves(const Matrix &vectors, int k, std::vector<int> *assignment,
                      Matrix *centroids) {
  const Eigen::Index n = vectors.rows();
  std::vector<int> counts(k, 0);
  for (int a : *assignment) counts[a]++;
  bool moved = false;
  for (Eigen::Index i = 0; i < n; i++) {
    int a = (*assignment)[i];
    if (counts[a] <= 1) continue;
    double na = counts[a];
    double remove = na / (na - 1.0) * (vectors.row(i) - centroids->row(a)).squaredNorm();
    int best = a;
    double best_add = remove;
    for (int b = 0; b < k; b++) {
      if (b == a) continue;
      double nb = counts[b];
      double add = nb / (nb + 1.0) * (vectors.row(i) - centroids->row(b)).squaredNorm();
      if (add < best_add) {
        best_add = add;
        best = b;
      }
    }
    if (best == a || remove - best_add <= 1e-12 * (1.0 + remove)) continue;
    double nb = counts[best];
    centroids->row(a) = (na * centroids->row(a) - vectors.row(i)) / (na - 1.0);
    centroids->row(best) = (nb * centroids->row(best) + vectors.row(i)) / (nb + 1.0);
    counts[a]--;
    counts[best]++;
    (*assignment)[i] = best;
    moved = true;
  }
  return moved;
}

KMeansResult KMeansOnce(const Matrix &vectors, int k, int max_iters,
                        uint64_t seed, int workers) {
  Rng rng(seed);
  KMeansResult res;
  res.centroids = PlusPlusSeeds(vectors, k, rng);
  const Eigen::Index n = vectors.rows();
  res.assignment.assign(n, -1);
  std::vector<int> next(n);
  std::vector<double> dist(n);
  int it = 0;
  while (it < max_iters) {
    // Lloyd iterations to a fixed point, then a refinement sweep; repeat
    // until the sweep moves nothing or the iteration budget is spent.
    bool fixed_point = false;
    for (; it < max_iters; it++) {
      Assign(vectors, res.centroids, workers, &next, &dist);
      if (next == res.assignment) {
        fixed_point = true;
        break;
      }
      res.assignment = next;
      UpdateCentroids(vectors, k, &res.assignment, &res.centroids);
      res.inertia_history.push_back(Inertia(vectors, res.centroids, res.assignment));
      res.iterations = it + 1;
    }
    if (!fixed_point ||
        !SinglePointMoves(vectors, k, &res.assignment, &res.centroids))
      break;
    // Recompute centroids exactly to shed incremental rounding.
    UpdateCentroids(vectors, k, &res.assignment, &res.centroids);
    res.inertia_history.push_back(Inertia(vectors, res.centroids, res.assignment));
    res.iterations = ++it;
  }
  if (res.assignment[0] < 0) {  // max_iters == 0
    Assign(vectors, res.centroids, workers, &res.assignment, &dist);
  }
  res.inertia = Inertia(vectors, res.centroids, res.assignment);
  return res;
}

}  // namespace

KMeansResult KMeans(const Matrix &vectors, int k, const KMeansOptions &opts) {
  if (k < 1) throw ValidationError("k-means needs K >= 1");
  if (vectors.rows() < k)
    throw ValidationError("k-means needs n >= K (n=" + std::to_string(vectors.rows()) +
                          ", K=" + std::to_string(k) + ")");
  if (!vectors.allFinite()) throw ValidationError("k-means input is not finite");
  KMeansResult best;
  for (int r = 0; r < std::max(1, opts.restarts); r++) {
    KMeansResult res = KMeansOnce(vectors, k, opts.max_iters,
                                  DeriveSeed(opts.seed, static_cast<uint64_t>(r)),
                                  opts.workers);
    if (r == 0 || res.inertia < best.inertia) best = std::move(res);
  }
  return best;
}

Matrix CosineDistances(const Matrix &vectors) {
  Vector norms = vectors.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); i++)
    if (!(norms(i) > 0.0))
      throw ValidationError("cosine distance of zero vector (row " +
                            std::to_string(i) + ")");
  Matrix unit = norms.cwiseInverse().asDiagonal() * vectors;
  Matrix d = (1.0 - (unit * unit.transpose()).array()).matrix();
  for (Eigen::Index i = 0; i < d.rows(); i++) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < d.cols(); j++) {
      double v = std::max(0.0, d(i, j));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

AhcResult AhcAverageCosine(const Matrix &vectors, int k_target) {
  const int n = static_cast<int>(vectors.rows());
  if (k_target < 1 || n < k_target)
    throw ValidationError("AHC needs n >= K_target >= 1");
  Matrix dist = CosineDistances(vectors);
  std::vector<bool> active(n, true);
  std::vector<int> size(n, 1), node(n), slot_of_leaf(n);
  for (int i = 0; i < n; i++) node[i] = slot_of_leaf[i] = i;

  // Cached per-row minimum over active j > i (lowest j on ties).
  std::vector<double> row_min(n, std::numeric_limits<double>::infinity());
  std::vector<int> row_arg(n, -1);
  auto recompute_row = [&](int i) {
    row_min[i] = std::numeric_limits<double>::infinity();
    row_arg[i] = -1;
    for (int j = i + 1; j < n; j++) {
      if (active[j] && dist(i, j) < row_min[i]) {
        row_min[i] = dist(i, j);
        row_arg[i] = j;
      }
    }
  };
  for (int i = 0; i < n; i++) recompute_row(i);

  AhcResult res;
  res.dendrogram.num_leaves = n;
  for (int remaining = n; remaining > k_target; remaining--) {
    int a = -1;
    for (int i = 0; i < n; i++)
      if (active[i] && row_arg[i] >= 0 && (a < 0 || row_min[i] < row_min[a])) a = i;
    int b = row_arg[a];
    res.dendrogram.merges.push_back({node[a], node[b], row_min[a]});
    node[a] = n + static_cast<int>(res.dendrogram.merges.size()) - 1;
    // Lance-Williams update for unweighted average linkage.
    double wa = size[a], wb = size[b];
    for (int k = 0; k < n; k++) {
      if (!active[k] || k == a || k == b) continue;
      double v = (wa * dist(a, k) + wb * dist(b, k)) / (wa + wb);
      dist(a, k) = v;
      dist(k, a) = v;
    }
    size[a] += size[b];
    active[b] = false;
    recompute_row(a);
    for (int k = 0; k < b; k++) {
      if (!active[k] || k == a) continue;
      if (row_arg[k] == a || row_arg[k] == b) {
        recompute_row(k);
      } else if (k < a && (dist(k, a) < row_min[k] ||
                           (dist(k, a) == row_min[k] && a < row_arg[k]))) {
        row_min[k] = dist(k, a);
        row_arg[k] = a;
      }
    }
    for (int leaf = 0; leaf < n; leaf++)
      if (slot_of_leaf[leaf] == b) slot_of_leaf[leaf] = a;
  }
  res.labels = Densify(slot_of_leaf);
  return res;
}

std::vector<int> Densify(const std::vector<int> &labels, int *num_clusters) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (size_t i = 0; i < labels.size(); i++) {
    auto it = remap.find(labels[i]);
    if (it == remap.end()) it = remap.emplace(labels[i], static_cast<int>(remap.size())).first;
    out[i] = it->second;
  }
  if (num_clusters) *num_clusters = static_cast<int>(remap.size());
  return out;
}

std::map<std::string, int> ClusterAssignment::AsMap() const {
  std::map<std::string, int> m;
  for (size_t i = 0; i < utterance_ids.size(); i++) m[utterance_ids[i]] = labels[i];
  return m;
}

ClusterAssignment TwoStageCluster(const std::vector<std::string> &ids,
                                  const Matrix &vectors, int k_coarse,
                                  int k_final, const KMeansOptions &opts) {
  if (static_cast<Eigen::Index>(ids.size()) != vectors.rows())
    throw ValidationError("id count does not match vector count");
  if (!(vectors.rows() >= k_coarse && k_coarse >= k_final && k_final >= 1))
    throw ValidationError("two-stage clustering needs n >= K_coarse >= K_final >= 1");
  KMeansResult km = KMeans(vectors, k_coarse, opts);
  AhcResult ahc = AhcAverageCosine(km.centroids, k_final);
  ClusterAssignment out;
  out.utterance_ids = ids;
  std::vector<int> raw(ids.size());
  for (size_t i = 0; i < ids.size(); i++) raw[i] = ahc.labels[km.assignment[i]];
  out.labels = Densify(raw, &out.num_clusters);
  out.method = ClusterMethod::kTwoStage;
  out.inertia = km.inertia;
  out.dendrogram = std::move(ahc.dendrogram);
  return out;
}

ClusterAssignment KMeansCluster(const std::vector<std::string> &ids,
                                const Matrix &vectors, int k,
                                const KMeansOptions &opts) {
  if (static_cast<Eigen::Index>(ids.size()) != vectors.rows())
    throw ValidationError("id count does not match vector count");
  KMeansResult km = KMeans(vectors, k, opts);
  ClusterAssignment out;
  out.utterance_ids = ids;
  out.labels = Densify(km.assignment, &out.num_clusters);
  out.method = ClusterMethod::kKMeans;
  out.inertia = km.inertia;
  return out;
}

ClusterQuality ClusterMetrics(const std::map<std::string, int> &assignment,
                              const std::map<std::string, int> &ground_truth) {
  if (assignment.size() != ground_truth.size())
    throw ValidationError("cluster metrics: key sets differ in size");
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> clusters, classes;
  for (const auto &[id, k] : assignment) {
    auto it = ground_truth.find(id);
    if (it == ground_truth.end())
      throw ValidationError("cluster metrics: no ground truth for " + id);
    joint[{k, it->second}] += 1.0;
    clusters[k] += 1.0;
    classes[it->second] += 1.0;
  }
  const double n = static_cast<double>(assignment.size());
  ClusterQuality q;
  if (n == 0) return q;
  std::map<int, double> best;
  for (const auto &[kc, count] : joint) best[kc.first] = std::max(best[kc.first], count);
  for (const auto &[k, count] : best) q.purity += count;
  q.purity /= n;
  double mi = 0.0, hx = 0.0, hy = 0.0;
  for (const auto &[kc, count] : joint) {
    double pxy = count / n;
    mi += pxy * std::log(pxy / ((clusters[kc.first] / n) * (classes[kc.second] / n)));
  }
  for (const auto &[k, c] : clusters) hx -= (c / n) * std::log(c / n);
  for (const auto &[k, c] : classes) hy -= (c / n) * std::log(c / n);
  if (hx + hy <= 0.0) {
    q.nmi = 1.0;  // both partitions trivial, hence identical
  } else {
    q.nmi = std::clamp(2.0 * mi / (hx + hy), 0.0, 1.0);
  }
  return q;
}

void WriteAssignment(const std::filesystem::path &path,
                     const std::vector<std::string> &ids,
                     const std::vector<int> &labels) {
  std::ostringstream out;
  for (size_t i = 0; i < ids.size(); i++) out << ids[i] << '\t' << labels[i] << '\n';
  WriteFileAtomic(path, out.str());
}

std::map<std::string, int> ReadAssignment(const std::filesystem::path &path) {
  std::map<std::string, int> out;
  std::vector<std::string> lines = ReadLines(path);
  for (size_t i = 0; i < lines.size(); i++) {
    if (lines[i].empty()) continue;
    std::vector<std::string> f = SplitString(lines[i], '\t');
    int label = -1;
    if (f.size() != 2 || f[0].empty())
      throw ParseError(path.string(), i + 1, "expected `id<TAB>cluster`");
    auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), label);
    if (ec != std::errc() || ptr != f[1].data() + f[1].size() || label < 0)
      throw ParseError(path.string(), i + 1, "bad cluster index '" + f[1] + "'");
    if (!out.emplace(f[0], label).second)
      throw ParseError(path.string(), i + 1, "duplicate id " + f[0]);
  }
  return out;
}

void WriteDendrogram(const std::filesystem::path &path, const Dendrogram &d) {
  std::ostringstream out;
  out.precision(17);
  for (const Merge &m : d.merges)
    out << m.left << '\t' << m.right << '\t' << m.distance << '\n';
  WriteFileAtomic(path, out.str());
}

}  // namespace ipltk::cluster
