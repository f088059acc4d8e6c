// tests/ivector_oracles.h

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

// Independent oracles for the total-variability model: a first-order MAP
// optimizer for the posterior mean, planted-subspace data, and principal
// angles between subspaces.

#ifndef IPLTK_TESTS_IVECTOR_ORACLES_H_
#define IPLTK_TESTS_IVECTOR_ORACLES_H_

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ipltk/gmm.h"
#include "ipltk/ivector.h"
#include "test_util.h"

namespace ipltk::testing {

inline ivector::TvModel RandomTv(int c, int d, int r, Rng &rng) {
  gmm::Gmm ubm;
  ubm.weights = Vector::Constant(c, 1.0 / c);
  ubm.means = RandomMatrix(c, d, rng, 2.0);
  for (int k = 0; k < c; ++k) ubm.covariances.push_back(RandomSpd(d, rng));
  std::vector<Matrix> blocks;
  for (int k = 0; k < c; ++k) blocks.push_back(RandomMatrix(d, r, rng));
  return ivector::TvModel(ubm, blocks);
}

inline gmm::BaumWelchStats RandomStats(const ivector::TvModel &tv, Rng &rng) {
  std::uniform_real_distribution<double> count(0.5, 5.0);
  const int c = tv.NumComponents(), d = tv.Dim();
  gmm::BaumWelchStats s;
  s.n.resize(c);
  s.f.resize(c, d);
  for (int k = 0; k < c; ++k) {
    s.n(k) = count(rng);
    s.f.row(k) = s.n(k) * (tv.ubm().means.row(k) + RandomMatrix(1, d, rng));
  }
  s.total_frames = s.n.sum();
  return s;
}

// Maximizes log N(w; 0, I) + sum_c [w' T_c' S_c^-1 (F_c - N_c m_c)
// - N_c/2 w' T_c' S_c^-1 T_c w] by plain gradient ascent with a step
// bounded by the Lipschitz constant; no closed form involved.
inline Vector MapOracle(const ivector::TvModel &tv, const gmm::BaumWelchStats &s) {
  const int c = tv.NumComponents(), r = tv.Rank();
  std::vector<Matrix> sinv(c);
  double lip = 1.0;
  for (int k = 0; k < c; ++k) {
    sinv[k] = tv.ubm().covariances[k].inverse();
    const Matrix &t = tv.blocks()[k];
    lip += s.n(k) * (t.transpose() * sinv[k] * t).norm();
  }
  auto grad = [&](const Vector &w) {
    Vector g = -w;
    for (int k = 0; k < c; ++k) {
      const Matrix &t = tv.blocks()[k];
      Vector resid = s.f.row(k).transpose() - s.n(k) * tv.ubm().means.row(k).transpose() -
                     s.n(k) * (t * w);
      g += t.transpose() * (sinv[k] * resid);
    }
    return g;
  };
  Vector w = Vector::Zero(r);
  for (int it = 0; it < 2000000; ++it) {
    Vector g = grad(w);
    if (g.norm() < 1e-13) break;
    w += g / lip;
  }
  return w;
}

struct PlantedTv {
  gmm::Gmm ubm;
  Matrix t_true;  // (C*D) x R
  std::vector<gmm::BaumWelchStats> stats;
};

// Frames drawn exactly from the model: per utterance w ~ N(0, I), per
// frame a component c ~ pi, x ~ N(m_c + T_c w, Sigma_c). Components are
// well separated so the UBM posteriors are nearly hard.
inline PlantedTv MakePlantedTv(int c, int d, int r, int utterances, int frames, Rng &rng) {
  PlantedTv p;
  p.ubm.weights = Vector::Constant(c, 1.0 / c);
  p.ubm.means = RandomMatrix(c, d, rng, 1.0);
  for (int k = 0; k < c; ++k) p.ubm.means(k, k % d) += 12.0 * (1 + k / d);
  std::vector<Matrix> chol;
  for (int k = 0; k < c; ++k) {
    Matrix s = RandomSpd(d, rng, 0.3) * 0.5;
    p.ubm.covariances.push_back(s);
    chol.push_back(Eigen::LLT<Matrix>(s).matrixL());
  }
  p.t_true = RandomMatrix(c * d, r, rng);
  std::uniform_int_distribution<int> pick(0, c - 1);
  for (int u = 0; u < utterances; ++u) {
    Vector w = RandomVector(r, rng);
    features::FrameMatrix fm;
    fm.data.resize(frames, d);
    for (int t = 0; t < frames; ++t) {
      int k = pick(rng);
      Vector x = p.ubm.means.row(k).transpose() + p.t_true.middleRows(k * d, d) * w +
                 chol[k] * RandomVector(d, rng);
      fm.data.row(t) = x.transpose();
    }
    p.stats.push_back(gmm::AccumulateStats(p.ubm, fm));
  }
  return p;
}

// Principal angles (radians, ascending) between the column spans.
inline Vector PrincipalAngles(const Matrix &a, const Matrix &b) {
  Eigen::HouseholderQR<Matrix> qa(a), qb(b);
  Matrix oa = qa.householderQ() * Matrix::Identity(a.rows(), a.cols());
  Matrix ob = qb.householderQ() * Matrix::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(oa.transpose() * ob);
  Vector s = svd.singularValues();
  Vector out(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) out(i) = std::acos(std::clamp(s(i), -1.0, 1.0));
  return out;
}

}  // namespace ipltk::testing

#endif  // IPLTK_TESTS_IVECTOR_ORACLES_H_
