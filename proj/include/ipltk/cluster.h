// ipltk/cluster.h

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

#ifndef IPLTK_CLUSTER_H_
#define IPLTK_CLUSTER_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ipltk/base.h"

namespace ipltk::cluster {

struct KMeansOptions {
  int max_iters = 100;
  int restarts = 1;  // best-of-N by final inertia
  uint64_t seed = 0;
  int workers = 0;   // 0: library default
};

struct KMeansResult {
  Matrix centroids;               // K x R
  std::vector<int> assignment;    // n
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each Lloyd step or sweep
  int iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations; at each Lloyd fixed point a
// sweep of single-point moves (exact inertia change) may escape it, after
// which Lloyd resumes. The result is always a Lloyd fixed point unless the
// iteration budget runs out. Rows of `vectors` are the
// points. An empty cluster is re-seeded at the point farthest from its
// centroid. Throws ValidationError if n < K or K < 1.
KMeansResult KMeans(const Matrix &vectors, int k, const KMeansOptions &opts);

// Sum of squared distances to the assigned centroid.
double Inertia(const Matrix &vectors, const Matrix &centroids,
               const std::vector<int> &assignment);

struct Merge {
  int left = 0;    // node ids: leaves are 0..n-1, merge i creates n+i
  int right = 0;
  double distance = 0.0;
  bool operator==(const Merge &) const = default;
};

struct Dendrogram {
  int num_leaves = 0;
  std::vector<Merge> merges;
};

// Cosine-distance matrix (1 - cos) of the rows; throws on zero rows.
Matrix CosineDistances(const Matrix &vectors);

// Unweighted average-linkage AHC on cosine distance, merged down to
// `k_target` clusters using Lance-Williams updates. Equal distances are
// broken by the lowest (left, right) pair, where a cluster is identified
// by its smallest leaf index. `labels` are dense cluster ids numbered by
// first appearance.
struct AhcResult {
  Dendrogram dendrogram;
  std::vector<int> labels;
};
AhcResult AhcAverageCosine(const Matrix &vectors, int k_target);

enum class ClusterMethod { kKMeans, kTwoStage };

struct ClusterAssignment {
  std::vector<std::string> utterance_ids;
  std::vector<int> labels;  // dense, 0..num_clusters-1
  int num_clusters = 0;
  ClusterMethod method = ClusterMethod::kTwoStage;
  double inertia = 0.0;  // k-means stage
  Dendrogram dendrogram;  // AHC stage over centroids (two-stage only)

  std::map<std::string, int> AsMap() const;
};

// Relabels to 0..K-1 in order of first appearance.
std::vector<int> Densify(const std::vector<int> &labels, int *num_clusters = nullptr);

// k-means to k_coarse centroids, then AHC over the centroids down to
// k_final; every point inherits its centroid's AHC cluster.
ClusterAssignment TwoStageCluster(const std::vector<std::string> &ids,
                                  const Matrix &vectors, int k_coarse,
                                  int k_final, const KMeansOptions &opts);

// Plain k-means labels packaged as an assignment.
ClusterAssignment KMeansCluster(const std::vector<std::string> &ids,
                                const Matrix &vectors, int k,
                                const KMeansOptions &opts);

struct ClusterQuality {
  double purity = 0.0;
  double nmi = 0.0;
};

// Purity and NMI = 2 I(X;Y) / (H(X) + H(Y)). Throws if the key sets differ.
ClusterQuality ClusterMetrics(const std::map<std::string, int> &assignment,
                              const std::map<std::string, int> &ground_truth);

// Text rows `utterance_id<TAB>cluster_index`.
void WriteAssignment(const std::filesystem::path &path,
                     const std::vector<std::string> &ids,
                     const std::vector<int> &labels);
std::map<std::string, int> ReadAssignment(const std::filesystem::path &path);
// Text rows `left<TAB>right<TAB>distance`.
void WriteDendrogram(const std::filesystem::path &path, const Dendrogram &d);

}  // namespace ipltk::cluster

#endif  // IPLTK_CLUSTER_H_
