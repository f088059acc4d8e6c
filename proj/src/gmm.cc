// src/gmm.cc

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

#include "ipltk/gmm.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "ipltk/cluster.h"
#include "ipltk/io.h"

namespace ipltk::gmm {

namespace {
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
constexpr size_t kStatsBlock = 16;  // utterances per reduction block
}  // namespace

void Gmm::Check() const {
  const int c = NumComponents(), d = Dim();
  if (c < 1 || d < 1) throw ValidationError("GMM has no components or zero dim");
  if (means.rows() != c || static_cast<int>(covariances.size()) != c)
    throw ValidationError("GMM component counts disagree");
  if (std::abs(weights.sum() - 1.0) > 1e-9 || (weights.array() < 0).any())
    throw ValidationError("GMM weights do not form a distribution");
  for (int i = 0; i < c; i++) {
    if (covariances[i].rows() != d || covariances[i].cols() != d)
      throw ValidationError("GMM covariance has wrong shape");
    Eigen::LLT<Matrix> llt(covariances[i]);
    if (llt.info() != Eigen::Success)
      throw ValidationError("GMM covariance " + std::to_string(i) + " is not SPD");
  }
}

GmmEvaluator::GmmEvaluator(const Gmm &gmm) : gmm_(gmm) {
  const int c = gmm.NumComponents(), d = gmm.Dim();
  chol_.resize(c);
  log_const_.resize(c);
  for (int i = 0; i < c; i++) {
    double logdet = 0.0;
    if (gmm.type == CovarianceType::kDiagonal) {
      Vector sd = gmm.covariances[i].diagonal().cwiseSqrt();
      if (!(sd.array() > 0).all())
        throw NumericalError("nonpositive variance in component " + std::to_string(i));
      chol_[i] = sd.asDiagonal();
      logdet = 2.0 * sd.array().log().sum();
    } else {
      Eigen::LLT<Matrix> llt(gmm.covariances[i]);
      if (llt.info() != Eigen::Success)
        throw NumericalError("Cholesky failed for component " + std::to_string(i));
      chol_[i] = llt.matrixL();
      logdet = 2.0 * chol_[i].diagonal().array().log().sum();
    }
    log_const_(i) = std::log(gmm.weights(i)) - 0.5 * (d * kLog2Pi + logdet);
  }
}

Matrix GmmEvaluator::WeightedLogLikes(const Matrix &frames) const {
  const int c = gmm_.NumComponents();
  if (frames.cols() != gmm_.Dim())
    throw ValidationError("frame dim " + std::to_string(frames.cols()) +
                          " does not match GMM dim " + std::to_string(gmm_.Dim()));
  Matrix out(frames.rows(), c);
  for (int i = 0; i < c; i++) {
    Matrix centered = (frames.rowwise() - gmm_.means.row(i)).transpose();
    if (gmm_.type == CovarianceType::kDiagonal) {
      centered = chol_[i].diagonal().cwiseInverse().asDiagonal() * centered;
    } else {
      chol_[i].triangularView<Eigen::Lower>().solveInPlace(centered);
    }
    out.col(i) = (log_const_(i) - 0.5 * centered.colwise().squaredNorm().array()).transpose();
  }
  return out;
}

Vector GmmEvaluator::LogLikelihood(const Matrix &frames) const {
  Vector loglik;
  Posteriors(frames, &loglik);
  return loglik;
}

Matrix GmmEvaluator::Posteriors(const Matrix &frames, Vector *loglik) const {
  Matrix post = WeightedLogLikes(frames);
  if (loglik) loglik->resize(frames.rows());
  for (Eigen::Index t = 0; t < post.rows(); t++) {
    double mx = post.row(t).maxCoeff();
    double total = (post.row(t).array() - mx).exp().sum();
    double lse = mx + std::log(total);
    post.row(t) = (post.row(t).array() - lse).exp();
    if (loglik) (*loglik)(t) = lse;
  }
  return post;
}

Vector GmmLogLikelihood(const Gmm &gmm, const Matrix &frames) {
  GmmEvaluator eval(gmm);
  return eval.LogLikelihood(frames);
}

BaumWelchStats AccumulateStats(const GmmEvaluator &eval, const Matrix &frames) {
  Matrix post = eval.Posteriors(frames);
  BaumWelchStats stats;
  stats.n = post.colwise().sum().transpose();
  stats.f = post.transpose() * frames;
  stats.total_frames = static_cast<double>(frames.rows());
  return stats;
}

BaumWelchStats AccumulateStats(const Gmm &gmm, const features::FrameMatrix &utt) {
  GmmEvaluator eval(gmm);
  return AccumulateStats(eval, utt.data);
}

Gmm GmmInitKMeans(const Matrix &sample, int num_components, CovarianceType type,
                  uint64_t seed) {
  if (num_components < 1) throw ValidationError("GMM needs >= 1 component");
  if (sample.rows() < num_components)
    throw ValidationError("GMM init: sample smaller than number of components");
  std::set<std::vector<double>> distinct;
  for (Eigen::Index i = 0; i < sample.rows() &&
                           static_cast<int>(distinct.size()) < num_components; i++) {
    Vector row = sample.row(i).transpose();
    distinct.emplace(row.data(), row.data() + row.size());
  }
  if (static_cast<int>(distinct.size()) < num_components)
    throw ValidationError("GMM init: fewer distinct points than components");

  const double n = static_cast<double>(sample.rows());
  Vector mean = sample.colwise().mean().transpose();
  Matrix centered = sample.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / n;
  if (type == CovarianceType::kDiagonal) cov = Matrix(cov.diagonal().asDiagonal());

  Gmm gmm;
  gmm.type = type;
  gmm.weights = Vector::Constant(num_components, 1.0 / num_components);
  if (num_components == 1) {
    gmm.means = mean.transpose();
  } else {
    cluster::KMeansOptions opts;
    opts.seed = seed;
    opts.max_iters = 20;
    gmm.means = cluster::KMeans(sample, num_components, opts).centroids;
  }
  gmm.covariances.assign(num_components, cov);
  return gmm;
}

Matrix FloorCovariance(const Matrix &cov, const Vector &floor, CovarianceType type) {
  if (type == CovarianceType::kDiagonal) {
    Vector v = cov.diagonal().cwiseMax(floor);
    return v.asDiagonal();
  }
  // Sigma' = F^1/2 max(F^-1/2 Sigma F^-1/2, I) F^1/2, so Sigma' >= F.
  Vector s = floor.cwiseSqrt();
  Matrix scaled = s.cwiseInverse().asDiagonal() * cov * s.cwiseInverse().asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scaled);
  Vector lambda = eig.eigenvalues();
  if ((lambda.array() >= 1.0).all()) return cov;
  lambda = lambda.cwiseMax(1.0);
  Matrix floored = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  Matrix out = s.asDiagonal() * floored * s.asDiagonal();
  return 0.5 * (out + out.transpose());
}

namespace {

struct EmAccumulator {
  Vector n;
  Matrix f;
  std::vector<Matrix> s;
  Vector sum, sum_sq;
  Matrix outer;
  double loglik = 0.0, frames = 0.0;
  // Lowest-likelihood frames seen, for re-seeding starved components.
  std::vector<std::pair<double, Vector>> worst;

  EmAccumulator(int c, int d, bool full)
      : n(Vector::Zero(c)), f(Matrix::Zero(c, d)),
        s(c, Matrix::Zero(full ? d : 1, d)),
        sum(Vector::Zero(d)), sum_sq(Vector::Zero(d)), outer(Matrix::Zero(d, d)) {}

  void KeepWorst(double ll, const Vector &x, size_t limit) {
    auto cmp = [](const auto &a, const auto &b) { return a.first < b.first; };
    if (worst.size() < limit) {
      worst.emplace_back(ll, x);
      std::sort(worst.begin(), worst.end(), cmp);
    } else if (ll < worst.back().first) {
      worst.back() = {ll, x};
      std::sort(worst.begin(), worst.end(), cmp);
    }
  }

  void Add(const EmAccumulator &o, size_t limit) {
    n += o.n;
    f += o.f;
    for (size_t i = 0; i < s.size(); i++) s[i] += o.s[i];
    sum += o.sum;
    sum_sq += o.sum_sq;
    outer += o.outer;
    loglik += o.loglik;
    frames += o.frames;
    for (const auto &w : o.worst) KeepWorst(w.first, w.second, limit);
  }
};

}  // namespace

EmStepResult GmmEmStep(const Gmm &model, std::span<const features::FrameMatrix> data,
                       const EmOptions &opts) {
  if (data.empty()) throw ValidationError("GMM EM step needs data");
  model.Check();
  const int c = model.NumComponents(), d = model.Dim();
  const bool full = model.type == CovarianceType::kFull;
  GmmEvaluator eval(model);
  const size_t num_blocks = (data.size() + kStatsBlock - 1) / kStatsBlock;
  std::vector<EmAccumulator> blocks(num_blocks, EmAccumulator(c, d, full));
  ParallelFor(num_blocks, opts.workers, [&](size_t b) {
    EmAccumulator &acc = blocks[b];
    for (size_t u = b * kStatsBlock; u < std::min(data.size(), (b + 1) * kStatsBlock); u++) {
      const Matrix &x = data[u].data;
      Vector ll;
      Matrix post = eval.Posteriors(x, &ll);
      acc.n += post.colwise().sum().transpose();
      acc.f += post.transpose() * x;
      for (int i = 0; i < c; i++) {
        if (full) {
          acc.s[i].noalias() += x.transpose() * post.col(i).asDiagonal() * x;
        } else {
          acc.s[i].noalias() += post.col(i).transpose() * x.cwiseAbs2();
        }
      }
      acc.sum += x.colwise().sum().transpose();
      acc.sum_sq += x.cwiseAbs2().colwise().sum().transpose();
      acc.outer.noalias() += x.transpose() * x;
      acc.loglik += ll.sum();
      acc.frames += static_cast<double>(x.rows());
      for (Eigen::Index t = 0; t < x.rows(); t++)
        acc.KeepWorst(ll(t), x.row(t).transpose(), c);
    }
  });
  EmAccumulator total(c, d, full);
  for (const EmAccumulator &b : blocks) total.Add(b, c);

  EmStepResult res;
  res.avg_loglik = total.loglik / total.frames;
  Vector global_mean = total.sum / total.frames;
  Vector global_var = (total.sum_sq / total.frames - global_mean.cwiseAbs2()).cwiseMax(0.0);
  res.variance_floor = (opts.variance_floor_factor * global_var).cwiseMax(1e-12);
  Matrix global_cov = total.outer / total.frames - global_mean * global_mean.transpose();
  if (!full) global_cov = Matrix(global_cov.diagonal().asDiagonal());

  Gmm &out = res.model;
  out.type = model.type;
  out.weights.resize(c);
  out.means.resize(c, d);
  out.covariances.resize(c);
  size_t next_worst = 0;
  for (int i = 0; i < c; i++) {
    double count = total.n(i);
    if (count < opts.min_count) {
      // Starved: restart at a badly modelled frame with the global covariance.
      Vector seed_point = next_worst < total.worst.size()
                              ? total.worst[next_worst++].second
                              : global_mean;
      spdlog::warn("GMM EM: component {} starved (count {:.3g}); re-seeding", i, count);
      out.means.row(i) = seed_point.transpose();
      out.covariances[i] = FloorCovariance(global_cov, res.variance_floor, model.type);
      out.weights(i) = opts.min_count;
      res.reseeded++;
      continue;
    }
    Vector mean = total.f.row(i).transpose() / count;
    Matrix cov;
    if (full) {
      cov = total.s[i] / count - mean * mean.transpose();
      cov = 0.5 * (cov + cov.transpose());
    } else {
      cov = Matrix((total.s[i].row(0).transpose() / count - mean.cwiseAbs2()).asDiagonal());
    }
    out.means.row(i) = mean.transpose();
    out.covariances[i] = FloorCovariance(cov, res.variance_floor, model.type);
    out.weights(i) = count;
  }
  out.weights /= out.weights.sum();
  return res;
}

Matrix PooledSample(std::span<const features::FrameMatrix> data, size_t max_frames) {
  size_t total = 0;
  for (const auto &m : data) total += static_cast<size_t>(m.NumFrames());
  if (total == 0) throw ValidationError("no frames to sample");
  const Eigen::Index dim = data[0].Dim();
  size_t stride = std::max<size_t>(1, (total + max_frames - 1) / max_frames);
  Matrix out((total + stride - 1) / stride, dim);
  size_t global = 0, row = 0;
  for (const auto &m : data) {
    if (m.Dim() != dim) throw ValidationError("utterances differ in feature dim");
    for (Eigen::Index t = 0; t < m.NumFrames(); t++, global++)
      if (global % stride == 0) out.row(row++) = m.data.row(t);
  }
  out.conservativeResize(row, dim);
  return out;
}

void WriteGmm(const std::filesystem::path &path, const Gmm &gmm) {
  gmm.Check();
  BinaryWriter w;
  w.Magic("GMM1");
  w.U8(static_cast<uint8_t>(gmm.type));
  const int c = gmm.NumComponents(), d = gmm.Dim();
  w.U32(c);
  w.U32(d);
  for (int i = 0; i < c; i++) w.F64(gmm.weights(i));
  for (int i = 0; i < c; i++)
    for (int j = 0; j < d; j++) w.F64(gmm.means(i, j));
  for (int i = 0; i < c; i++) {
    if (gmm.type == CovarianceType::kDiagonal) {
      for (int j = 0; j < d; j++) w.F64(gmm.covariances[i](j, j));
    } else {
      for (int j = 0; j < d; j++)
        for (int k = 0; k < d; k++) w.F64(gmm.covariances[i](j, k));
    }
  }
  WriteFileAtomic(path, w.bytes());
}

Gmm ReadGmm(const std::filesystem::path &path) {
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("GMM1");
  uint8_t mode = r.U8();
  if (mode > 1) throw ParseError(path.string(), 0, "bad GMM covariance mode");
  Gmm gmm;
  gmm.type = static_cast<CovarianceType>(mode);
  const uint32_t c = r.U32(), d = r.U32();
  gmm.weights.resize(c);
  gmm.means.resize(c, d);
  for (uint32_t i = 0; i < c; i++) gmm.weights(i) = r.F64();
  for (uint32_t i = 0; i < c; i++)
    for (uint32_t j = 0; j < d; j++) gmm.means(i, j) = r.F64();
  gmm.covariances.assign(c, Matrix::Zero(d, d));
  for (uint32_t i = 0; i < c; i++) {
    if (gmm.type == CovarianceType::kDiagonal) {
      for (uint32_t j = 0; j < d; j++) gmm.covariances[i](j, j) = r.F64();
    } else {
      for (uint32_t j = 0; j < d; j++)
        for (uint32_t k = 0; k < d; k++) gmm.covariances[i](j, k) = r.F64();
    }
  }
  r.ExpectEnd();
  gmm.Check();
  return gmm;
}

}  // namespace ipltk::gmm
