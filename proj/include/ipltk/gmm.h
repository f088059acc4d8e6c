// ipltk/gmm.h

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

#ifndef IPLTK_GMM_H_
#define IPLTK_GMM_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/features.h"

namespace ipltk::gmm {

enum class CovarianceType : uint8_t { kFull = 0, kDiagonal = 1 };

// Universal background model. Covariances are stored as D x D matrices in
// both modes; in diagonal mode only the diagonal is meaningful (and the
// off-diagonal entries are zero).
struct Gmm {
  Vector weights;                  // C
  Matrix means;                    // C x D
  std::vector<Matrix> covariances;  // C of D x D
  CovarianceType type = CovarianceType::kFull;

  int NumComponents() const { return static_cast<int>(weights.size()); }
  int Dim() const { return static_cast<int>(means.cols()); }
  // Throws ValidationError if dimensions are inconsistent, the weights do
  // not sum to one, or a covariance is not SPD.
  void Check() const;
};

// Per-component Cholesky factors and normalizers, computed once per model.
class GmmEvaluator {
 public:
  explicit GmmEvaluator(const Gmm &gmm);
  // T x C matrix of log(pi_c) + log N(x_t; m_c, Sigma_c).
  Matrix WeightedLogLikes(const Matrix &frames) const;
  // Per-frame log sum_c pi_c N(x_t; m_c, Sigma_c).
  Vector LogLikelihood(const Matrix &frames) const;
  // T x C responsibilities (rows sum to one); optionally per-frame loglik.
  Matrix Posteriors(const Matrix &frames, Vector *loglik = nullptr) const;
  const Gmm &gmm() const { return gmm_; }

 private:
  const Gmm &gmm_;
  std::vector<Matrix> chol_;  // lower Cholesky factor of each covariance
  Vector log_const_;          // log pi_c - 0.5 (D log 2pi + log|Sigma_c|)
};

Vector GmmLogLikelihood(const Gmm &gmm, const Matrix &frames);

struct BaumWelchStats {
  Vector n;  // C zeroth-order
  Matrix f;  // C x D first-order
  double total_frames = 0.0;
};

BaumWelchStats AccumulateStats(const Gmm &gmm, const features::FrameMatrix &utt);
BaumWelchStats AccumulateStats(const GmmEvaluator &eval, const Matrix &frames);

// Means from k-means (module cluster), uniform weights, the global sample
// covariance (or its diagonal) for every component. Throws ValidationError
// when the sample has fewer than C distinct rows.
Gmm GmmInitKMeans(const Matrix &sample, int num_components, CovarianceType type,
                  uint64_t seed);

struct EmOptions {
  double variance_floor_factor = 1e-4;  // times global per-dim variance
  double min_count = 1.0;                // starvation threshold
  int workers = 0;
};

struct EmStepResult {
  Gmm model;
  double avg_loglik = 0.0;  // of the input model
  int reseeded = 0;
  Vector variance_floor;    // per dimension
};

// One EM iteration over all frames of `data`.
EmStepResult GmmEmStep(const Gmm &model,
                       std::span<const features::FrameMatrix> data,
                       const EmOptions &opts = {});

// Flooring that guarantees Sigma - diag(floor) is PSD (full) or
// var >= floor (diagonal).
Matrix FloorCovariance(const Matrix &cov, const Vector &floor, CovarianceType type);

// Deterministic frame subsample (every k-th frame across utterances) of at
// most max_frames rows.
Matrix PooledSample(std::span<const features::FrameMatrix> data, size_t max_frames);

// GMM1 checkpoint.
void WriteGmm(const std::filesystem::path &path, const Gmm &gmm);
Gmm ReadGmm(const std::filesystem::path &path);

}  // namespace ipltk::gmm

#endif  // IPLTK_GMM_H_
