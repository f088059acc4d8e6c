// ipltk/ivector.h

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

#ifndef IPLTK_IVECTOR_H_
#define IPLTK_IVECTOR_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/gmm.h"

namespace ipltk::ivector {

// Total-variability model: the super-vector of an utterance is
// M = m + T w, with m and the residual covariances taken from the UBM and
// w ~ N(0, I). T is stored as one D x R block per UBM component.
class TvModel {
 public:
  TvModel() = default;
  TvModel(gmm::Gmm ubm, std::vector<Matrix> blocks);

  // T entries i.i.d. N(0, scale^2).
  static TvModel RandomInit(const gmm::Gmm &ubm, int rank, uint64_t seed,
                            double scale = 0.1);

  int Rank() const { return rank_; }
  int NumComponents() const { return static_cast<int>(blocks_.size()); }
  int Dim() const { return ubm_.Dim(); }
  const gmm::Gmm &ubm() const { return ubm_; }
  const std::vector<Matrix> &blocks() const { return blocks_; }
  // (C*D) x R stacked matrix.
  Matrix Stacked() const;
  const Matrix &SigmaInv(int c) const { return sigma_inv_[c]; }
  // T_c^T Sigma_c^-1 (R x D) and T_c^T Sigma_c^-1 T_c (R x R).
  const Matrix &TSigmaInv(int c) const { return t_sigma_inv_[c]; }
  const Matrix &Quadratic(int c) const { return quadratic_[c]; }

 private:
  void ComputeDerived();

  gmm::Gmm ubm_;
  std::vector<Matrix> blocks_;     // T_c, D x R
  int rank_ = 0;
  std::vector<Matrix> sigma_inv_;  // Sigma_c^-1
  std::vector<Matrix> t_sigma_inv_;
  std::vector<Matrix> quadratic_;
};

// Posterior of w given one utterance's statistics.
struct Posterior {
  Vector mean;       // R
  Matrix precision;  // R x R, L = I + sum_c N_c T_c^T Sigma_c^-1 T_c
  Matrix covariance; // L^-1
};

// sum_c T_c^T Sigma_c^-1 (F_c - N_c m_c)
Vector LinearTerm(const TvModel &model, const gmm::BaumWelchStats &stats);
Matrix PrecisionMatrix(const TvModel &model, const gmm::BaumWelchStats &stats);

// Throws NumericalError if the precision is not SPD.
Posterior TvPosterior(const TvModel &model, const gmm::BaumWelchStats &stats);

struct TvEmResult {
  TvModel model;
  // Marginal log-likelihood of the stats under the input model, up to
  // terms that do not depend on T, divided by the total frame count.
  double objective = 0.0;
};

// One EM iteration of T. Throws NumericalError naming the component if its
// accumulated second-order matrix is singular.
TvEmResult TvEmStep(const TvModel &model, std::span<const gmm::BaumWelchStats> stats,
                    int workers = 0);

// Same objective as TvEmStep reports, without updating.
double TvObjective(const TvModel &model, std::span<const gmm::BaumWelchStats> stats);

struct IVector {
  std::string utterance_id;
  Vector w;
  bool normalized = false;
};

IVector ExtractIVector(const TvModel &model, const gmm::BaumWelchStats &stats,
                       const std::string &utterance_id = "");

// Throws NumericalError("degenerate i-vector") for a zero vector.
IVector LengthNormalize(const IVector &v);

// TVM1 checkpoint plus `<path>.hdr` sidecar naming the UBM checkpoint.
void WriteTvModel(const std::filesystem::path &path, const TvModel &model,
                  const std::filesystem::path &ubm_path);
TvModel ReadTvModel(const std::filesystem::path &path);

// IVA1 archive. Also used for encoder embeddings.
void WriteIVectors(const std::filesystem::path &path, const std::vector<IVector> &vecs);
std::vector<IVector> ReadIVectors(const std::filesystem::path &path);

}  // namespace ipltk::ivector

#endif  // IPLTK_IVECTOR_H_
