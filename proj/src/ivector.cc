// src/ivector.cc

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

#include "ipltk/ivector.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ipltk/io.h"

namespace ipltk::ivector {

namespace {
constexpr size_t kStatsBlock = 16;
}

TvModel::TvModel(gmm::Gmm ubm, std::vector<Matrix> blocks)
    : ubm_(std::move(ubm)), blocks_(std::move(blocks)) {
  if (static_cast<int>(blocks_.size()) != ubm_.NumComponents())
    throw ValidationError("TV model needs one block per UBM component");
  rank_ = blocks_.empty() ? 0 : static_cast<int>(blocks_[0].cols());
  if (rank_ < 1) throw ValidationError("TV rank must be >= 1");
  if (rank_ > ubm_.NumComponents() * ubm_.Dim())
    throw ValidationError("TV rank exceeds super-vector dimension");
  for (const Matrix &b : blocks_) {
    if (b.rows() != ubm_.Dim() || b.cols() != rank_)
      throw ValidationError("TV block has wrong shape");
    if (!b.allFinite()) throw NumericalError("TV matrix has nonfinite entries");
  }
  ComputeDerived();
}

void TvModel::ComputeDerived() {
  const int c = NumComponents();
  sigma_inv_.resize(c);
  t_sigma_inv_.resize(c);
  quadratic_.resize(c);
  for (int i = 0; i < c; i++) {
    Eigen::LLT<Matrix> llt(ubm_.covariances[i]);
    if (llt.info() != Eigen::Success)
      throw NumericalError("UBM covariance " + std::to_string(i) + " not SPD");
    sigma_inv_[i] = llt.solve(Matrix::Identity(Dim(), Dim()));
    t_sigma_inv_[i] = blocks_[i].transpose() * sigma_inv_[i];
    quadratic_[i] = t_sigma_inv_[i] * blocks_[i];
    quadratic_[i] = 0.5 * (quadratic_[i] + quadratic_[i].transpose());
  }
}

TvModel TvModel::RandomInit(const gmm::Gmm &ubm, int rank, uint64_t seed,
                            double scale) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<Matrix> blocks(ubm.NumComponents(), Matrix(ubm.Dim(), rank));
  for (Matrix &b : blocks)
    for (Eigen::Index i = 0; i < b.rows(); i++)
      for (Eigen::Index j = 0; j < b.cols(); j++) b(i, j) = normal(rng);
  return TvModel(ubm, std::move(blocks));
}

Matrix TvModel::Stacked() const {
  Matrix out(NumComponents() * Dim(), rank_);
  for (int c = 0; c < NumComponents(); c++) out.middleRows(c * Dim(), Dim()) = blocks_[c];
  return out;
}

namespace {

void CheckStats(const TvModel &model, const gmm::BaumWelchStats &stats) {
  if (stats.n.size() != model.NumComponents() ||
      stats.f.rows() != model.NumComponents() || stats.f.cols() != model.Dim())
    throw ValidationError("Baum-Welch stats do not match the UBM dimensions");
}

}  // namespace

Vector LinearTerm(const TvModel &model, const gmm::BaumWelchStats &stats) {
  CheckStats(model, stats);
  Vector linear = Vector::Zero(model.Rank());
  for (int c = 0; c < model.NumComponents(); c++) {
    Vector centered = stats.f.row(c).transpose() - stats.n(c) * model.ubm().means.row(c).transpose();
    linear.noalias() += model.TSigmaInv(c) * centered;
  }
  return linear;
}

Matrix PrecisionMatrix(const TvModel &model, const gmm::BaumWelchStats &stats) {
  CheckStats(model, stats);
  Matrix precision = Matrix::Identity(model.Rank(), model.Rank());
  for (int c = 0; c < model.NumComponents(); c++)
    if (stats.n(c) != 0.0) precision.noalias() += stats.n(c) * model.Quadratic(c);
  return precision;
}

Posterior TvPosterior(const TvModel &model, const gmm::BaumWelchStats &stats) {
  Posterior post;
  post.precision = PrecisionMatrix(model, stats);
  Eigen::LLT<Matrix> llt(post.precision);
  if (llt.info() != Eigen::Success)
    throw NumericalError("i-vector precision is not SPD (corrupted model?)");
  post.covariance = llt.solve(Matrix::Identity(model.Rank(), model.Rank()));
  post.mean = llt.solve(LinearTerm(model, stats));
  return post;
}

namespace {

struct TvAccumulator {
  std::vector<Matrix> y;  // sum_s Ftilde_sc w_s^T (D x R)
  std::vector<Matrix> a;  // sum_s N_sc E[w w^T] (R x R)
  Vector count;
  double objective = 0.0, frames = 0.0;

  TvAccumulator(int c, int d, int r)
      : y(c, Matrix::Zero(d, r)), a(c, Matrix::Zero(r, r)), count(Vector::Zero(c)) {}

  void Add(const TvAccumulator &o) {
    for (size_t i = 0; i < y.size(); i++) {
      y[i] += o.y[i];
      a[i] += o.a[i];
    }
    count += o.count;
    objective += o.objective;
    frames += o.frames;
  }
};

// Per-utterance contribution to log p(stats | T), dropping T-independent
// terms: 0.5 b^T L^-1 b - 0.5 log|L|.
double UtteranceObjective(const Eigen::LLT<Matrix> &llt, const Vector &linear,
                          const Vector &mean) {
  double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
  return 0.5 * linear.dot(mean) - 0.5 * logdet;
}

TvAccumulator Accumulate(const TvModel &model,
                         std::span<const gmm::BaumWelchStats> stats, int workers,
                         bool with_updates) {
  const int c = model.NumComponents(), d = model.Dim(), r = model.Rank();
  const size_t num_blocks = (stats.size() + kStatsBlock - 1) / kStatsBlock;
  std::vector<TvAccumulator> blocks(num_blocks, TvAccumulator(with_updates ? c : 0, d, r));
  ParallelFor(num_blocks, workers, [&](size_t b) {
    TvAccumulator &acc = blocks[b];
    for (size_t s = b * kStatsBlock; s < std::min(stats.size(), (b + 1) * kStatsBlock); s++) {
      const gmm::BaumWelchStats &st = stats[s];
      Vector linear = LinearTerm(model, st);
      Eigen::LLT<Matrix> llt(PrecisionMatrix(model, st));
      if (llt.info() != Eigen::Success)
        throw NumericalError("i-vector precision is not SPD for utterance " +
                             std::to_string(s));
      Vector mean = llt.solve(linear);
      acc.objective += UtteranceObjective(llt, linear, mean);
      acc.frames += st.total_frames;
      if (!with_updates) continue;
      Matrix second = llt.solve(Matrix::Identity(r, r));
      second.noalias() += mean * mean.transpose();
      for (int i = 0; i < c; i++) {
        if (st.n(i) == 0.0) continue;
        Vector centered = st.f.row(i).transpose() - st.n(i) * model.ubm().means.row(i).transpose();
        acc.y[i].noalias() += centered * mean.transpose();
        acc.a[i].noalias() += st.n(i) * second;
        acc.count(i) += st.n(i);
      }
    }
  });
  TvAccumulator total(with_updates ? c : 0, d, r);
  for (const TvAccumulator &b : blocks) total.Add(b);
  return total;
}

}  // namespace

double TvObjective(const TvModel &model, std::span<const gmm::BaumWelchStats> stats) {
  if (stats.empty()) throw ValidationError("TV objective needs stats");
  TvAccumulator acc = Accumulate(model, stats, 0, false);
  return acc.objective / std::max(acc.frames, 1.0);
}

TvEmResult TvEmStep(const TvModel &model, std::span<const gmm::BaumWelchStats> stats,
                    int workers) {
  if (stats.empty()) throw ValidationError("TV EM step needs a nonempty stats list");
  const int c = model.NumComponents();
  TvAccumulator acc = Accumulate(model, stats, workers, true);
  std::vector<Matrix> blocks(c);
  for (int i = 0; i < c; i++) {
    Eigen::LLT<Matrix> llt(acc.a[i]);
    if (acc.count(i) < 1e-10 || llt.info() != Eigen::Success)
      throw NumericalError("TV M-step: accumulator for component " + std::to_string(i) +
                           " is singular (count " + std::to_string(acc.count(i)) + ")");
    // T_c = Y_c A_c^-1, solved as A_c T_c^T = Y_c^T.
    blocks[i] = llt.solve(acc.y[i].transpose()).transpose();
  }
  TvEmResult res{TvModel(model.ubm(), std::move(blocks)), 0.0};
  res.objective = acc.objective / std::max(acc.frames, 1.0);
  return res;
}

IVector ExtractIVector(const TvModel &model, const gmm::BaumWelchStats &stats,
                       const std::string &utterance_id) {
  IVector v;
  v.utterance_id = utterance_id;
  v.w = TvPosterior(model, stats).mean;
  return v;
}

IVector LengthNormalize(const IVector &v) {
  double norm = v.w.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw NumericalError("degenerate i-vector" +
                         (v.utterance_id.empty() ? "" : " for " + v.utterance_id));
  IVector out = v;
  out.w /= norm;
  out.normalized = true;
  return out;
}

void WriteTvModel(const std::filesystem::path &path, const TvModel &model,
                  const std::filesystem::path &ubm_path) {
  BinaryWriter w;
  w.Magic("TVM1");
  w.U32(model.NumComponents());
  w.U32(model.Dim());
  w.U32(model.Rank());
  for (const Matrix &b : model.blocks())
    for (Eigen::Index i = 0; i < b.rows(); i++)
      for (Eigen::Index j = 0; j < b.cols(); j++) w.F64(b(i, j));
  WriteFileAtomic(path, w.bytes());
  // The reference is stored relative to the TV checkpoint's directory.
  std::error_code ec;
  std::filesystem::path ref = std::filesystem::relative(
      std::filesystem::absolute(ubm_path),
      std::filesystem::absolute(path).parent_path(), ec);
  if (ec || ref.empty()) ref = std::filesystem::absolute(ubm_path);
  std::filesystem::path hdr = path;
  hdr += ".hdr";
  WriteFileAtomic(hdr, "ubm=" + ref.generic_string() + "\n");
}

TvModel ReadTvModel(const std::filesystem::path &path) {
  std::filesystem::path hdr = path;
  hdr += ".hdr";
  std::filesystem::path ubm_path;
  for (const std::string &line : ReadLines(hdr)) {
    if (line.rfind("ubm=", 0) == 0) ubm_path = line.substr(4);
  }
  if (ubm_path.empty()) throw ParseError(hdr.string(), 1, "missing ubm= entry");
  if (ubm_path.is_relative()) ubm_path = path.parent_path() / ubm_path;
  gmm::Gmm ubm = gmm::ReadGmm(ubm_path);
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("TVM1");
  const uint32_t c = r.U32(), d = r.U32(), rank = r.U32();
  if (static_cast<int>(c) != ubm.NumComponents() || static_cast<int>(d) != ubm.Dim())
    throw ParseError(path.string(), 0, "TV dimensions do not match the UBM");
  std::vector<Matrix> blocks(c, Matrix(d, rank));
  for (Matrix &b : blocks)
    for (uint32_t i = 0; i < d; i++)
      for (uint32_t j = 0; j < rank; j++) b(i, j) = r.F64();
  r.ExpectEnd();
  return TvModel(std::move(ubm), std::move(blocks));
}

void WriteIVectors(const std::filesystem::path &path, const std::vector<IVector> &vecs) {
  const uint32_t rank = vecs.empty() ? 0 : static_cast<uint32_t>(vecs[0].w.size());
  BinaryWriter w;
  w.Magic("IVA1");
  w.U32(static_cast<uint32_t>(vecs.size()));
  w.U32(rank);
  for (const IVector &v : vecs) {
    if (static_cast<uint32_t>(v.w.size()) != rank)
      throw ValidationError("i-vector archive entries differ in dimension");
    w.Str(v.utterance_id);
    for (Eigen::Index i = 0; i < v.w.size(); i++) w.F32(static_cast<float>(v.w(i)));
    w.U8(v.normalized ? 1 : 0);
  }
  WriteFileAtomic(path, w.bytes());
}

std::vector<IVector> ReadIVectors(const std::filesystem::path &path) {
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("IVA1");
  const uint32_t count = r.U32(), rank = r.U32();
  std::vector<IVector> out(count);
  for (IVector &v : out) {
    v.utterance_id = r.Str();
    v.w.resize(rank);
    for (uint32_t i = 0; i < rank; i++) v.w(i) = r.F32();
    v.normalized = r.U8() != 0;
  }
  r.ExpectEnd();
  return out;
}

}  // namespace ipltk::ivector
