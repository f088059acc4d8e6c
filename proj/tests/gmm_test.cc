// tests/gmm_test.cc

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

#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "ipltk/gmm.h"
#include "test_util.h"

namespace ipltk::gmm {
namespace {

using testing::RandomMatrix;
using testing::RandomSpd;

Gmm RandomGmm(int c, int d, Rng &rng, CovarianceType type = CovarianceType::kFull) {
  Gmm g;
  g.type = type;
  g.weights = (RandomMatrix(c, 1, rng).array().abs() + 0.2).matrix().col(0);
  g.weights /= g.weights.sum();
  g.means = RandomMatrix(c, d, rng, 2.0);
  for (int k = 0; k < c; ++k) {
    Matrix s = RandomSpd(d, rng);
    if (type == CovarianceType::kDiagonal) s = Matrix(s.diagonal().asDiagonal());
    g.covariances.push_back(s);
  }
  return g;
}

// Direct (non-log-domain) mixture density.
double NaiveDensity(const Gmm &g, const Vector &x) {
  const int d = g.Dim();
  double p = 0.0;
  for (int c = 0; c < g.NumComponents(); ++c) {
    Vector r = x - g.means.row(c).transpose();
    double q = r.dot(g.covariances[c].inverse() * r);
    p += g.weights(c) * std::exp(-0.5 * q) /
         std::sqrt(std::pow(2.0 * std::numbers::pi, d) * g.covariances[c].determinant());
  }
  return p;
}

TEST_CASE("log-likelihood examples") {
  Gmm g;
  g.weights = Vector::Ones(1);
  g.means = Matrix::Zero(1, 2);
  g.covariances = {Matrix::Identity(2, 2)};
  Matrix x = Matrix::Zero(1, 2);
  CHECK(GmmLogLikelihood(g, x)(0) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-12));

  Gmm dup = g;
  dup.weights = Vector::Constant(2, 0.5);
  dup.means = Matrix::Zero(2, 2);
  dup.covariances = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  Rng rng(1);
  Matrix pts = RandomMatrix(5, 2, rng);
  CHECK((GmmLogLikelihood(dup, pts) - GmmLogLikelihood(g, pts)).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(GmmLogLikelihood(g, Matrix::Zero(1, 3)), ValidationError);
}

TEST_CASE("log-likelihood matches the naive density oracle") {
  Rng rng(2);
  for (auto type : {CovarianceType::kFull, CovarianceType::kDiagonal}) {
    Gmm g = RandomGmm(3, 4, rng, type);
    Matrix pts = RandomMatrix(20, 4, rng, 2.0);
    Vector ll = GmmLogLikelihood(g, pts);
    for (Eigen::Index t = 0; t < pts.rows(); ++t)
      CHECK(std::abs(ll(t) - std::log(NaiveDensity(g, pts.row(t).transpose()))) < 1e-9);
  }
}

TEST_CASE("posteriors sum to one and match the naive oracle") {
  Rng rng(3);
  Gmm g = RandomGmm(4, 3, rng);
  Matrix pts = RandomMatrix(30, 3, rng, 2.0);
  Matrix post = GmmEvaluator(g).Posteriors(pts);
  for (Eigen::Index t = 0; t < pts.rows(); ++t) {
    CHECK(std::abs(post.row(t).sum() - 1.0) < 1e-12);
    const Vector x = pts.row(t).transpose();
    double total = NaiveDensity(g, x);
    for (int c = 0; c < 4; ++c) {
      Gmm one = g;
      one.weights = Vector::Zero(4);
      one.weights(c) = 1.0;
      CHECK(std::abs(post(t, c) - g.weights(c) * NaiveDensity(one, x) / total) < 1e-9);
    }
  }
}

TEST_CASE("Baum-Welch statistics") {
  Rng rng(4);
  features::FrameMatrix u;
  u.data = RandomMatrix(25, 3, rng);

  Gmm single;
  single.weights = Vector::Ones(1);
  single.means = Matrix::Zero(1, 3);
  single.covariances = {Matrix::Identity(3, 3)};
  BaumWelchStats s1 = AccumulateStats(single, u);
  CHECK(s1.n(0) == doctest::Approx(25.0));
  CHECK((s1.f.row(0) - u.data.colwise().sum()).cwiseAbs().maxCoeff() < 1e-12);

  Gmm sym;
  sym.weights = Vector::Constant(2, 0.5);
  sym.means = Matrix::Zero(2, 1);
  sym.means << -1.0, 1.0;
  sym.covariances = {Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  features::FrameMatrix mid;
  mid.data = Matrix::Zero(1, 1);
  BaumWelchStats sm = AccumulateStats(sym, mid);
  CHECK(sm.n(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm.n(1) == doctest::Approx(0.5).epsilon(1e-15));

  Gmm g = RandomGmm(3, 3, rng);
  BaumWelchStats s = AccumulateStats(g, u);
  Vector n = Vector::Zero(3);
  Matrix f = Matrix::Zero(3, 3);
  for (Eigen::Index t = 0; t < u.data.rows(); ++t) {
    const Vector x = u.data.row(t).transpose();
    double total = NaiveDensity(g, x);
    for (int c = 0; c < 3; ++c) {
      Gmm one = g;
      one.weights = Vector::Zero(3);
      one.weights(c) = 1.0;
      double gamma = g.weights(c) * NaiveDensity(one, x) / total;
      n(c) += gamma;
      f.row(c) += gamma * x.transpose();
    }
  }
  CHECK((s.n - n).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((s.f - f).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(s.n.sum() - 25.0) < 1e-8 * 25.0);
  CHECK(s.total_frames == 25.0);
}

TEST_CASE("one EM step on a single Gaussian gives the sample moments") {
  Rng rng(5);
  features::FrameMatrix u;
  u.data = RandomMatrix(200, 3, rng) * 2.0;
  u.data.col(1).array() += 5.0;
  Gmm g;
  g.weights = Vector::Ones(1);
  g.means = Matrix::Zero(1, 3);
  g.covariances = {Matrix::Identity(3, 3)};
  std::vector<features::FrameMatrix> data = {u};
  EmStepResult r = GmmEmStep(g, data);
  Vector mean = u.data.colwise().mean().transpose();
  Matrix centered = u.data.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / 200.0;
  CHECK((r.model.means.row(0).transpose() - mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((r.model.covariances[0] - cov).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r.avg_loglik == doctest::Approx(GmmLogLikelihood(g, u.data).mean()).epsilon(1e-12));
}

TEST_CASE("EM log-likelihood is non-decreasing") {
  for (auto type : {CovarianceType::kFull, CovarianceType::kDiagonal}) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      auto data = testing::Blobs(rng, 10, 60, 3, 4);
      Matrix sample = PooledSample(data, 600);
      Gmm g = GmmInitKMeans(sample, 4, type, seed);
      double prev = -std::numeric_limits<double>::infinity();
      for (int it = 0; it < 15; ++it) {
        EmStepResult r = GmmEmStep(g, data);
        CHECK(r.avg_loglik >= prev - 1e-8);
        prev = r.avg_loglik;
        g = std::move(r.model);
        CHECK_NOTHROW(g.Check());
      }
    }
  }
}

TEST_CASE("covariances respect the floor after every M-step") {
  Rng rng(6);
  auto data = testing::Blobs(rng, 5, 40, 3, 3);
  // A nearly degenerate dimension forces flooring.
  for (auto &u : data) u.data.col(2) *= 1e-5;
  for (auto type : {CovarianceType::kFull, CovarianceType::kDiagonal}) {
    Gmm g = GmmInitKMeans(PooledSample(data, 200), 3, type, 1);
    for (int it = 0; it < 3; ++it) {
      EmStepResult r = GmmEmStep(g, data);
      for (const Matrix &s : r.model.covariances) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(s - Matrix(r.variance_floor.asDiagonal()));
        CHECK(es.eigenvalues().minCoeff() >= -1e-12);
      }
      g = std::move(r.model);
    }
  }
}

TEST_CASE("FloorCovariance") {
  Matrix cov(2, 2);
  cov << 1.0, 0.999, 0.999, 1.0;
  Vector floor = Vector::Constant(2, 0.1);
  Matrix f = FloorCovariance(cov, floor, CovarianceType::kFull);
  Eigen::SelfAdjointEigenSolver<Matrix> es(f - Matrix(floor.asDiagonal()));
  CHECK(es.eigenvalues().minCoeff() >= -1e-12);
  Matrix d = FloorCovariance(Matrix(Vector::Constant(2, 0.01).asDiagonal()), floor,
                             CovarianceType::kDiagonal);
  CHECK(d(0, 0) == doctest::Approx(0.1));
  CHECK(d(0, 1) == 0.0);
}

TEST_CASE("a starved component is re-seeded") {
  Rng rng(7);
  auto data = testing::Blobs(rng, 4, 50, 2, 2);
  Gmm g = GmmInitKMeans(PooledSample(data, 200), 2, CovarianceType::kFull, 1);
  g.means.row(1) = Vector::Constant(2, 1e4).transpose();  // far from every frame
  EmStepResult r = GmmEmStep(g, data);
  CHECK(r.reseeded == 1);
  CHECK(r.model.means.allFinite());
  CHECK_NOTHROW(r.model.Check());
}

TEST_CASE("k-means initialization") {
  Rng rng(8);
  Matrix x = RandomMatrix(50, 3, rng);
  Gmm one = GmmInitKMeans(x, 1, CovarianceType::kFull, 3);
  CHECK(one.weights(0) == 1.0);
  CHECK((one.means.row(0) - x.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  Matrix blobs(40, 2);
  for (int i = 0; i < 40; ++i) {
    double c = i < 20 ? -10.0 : 10.0;
    blobs.row(i) << c + 0.3 * std::sin(i), 0.3 * std::cos(i);
  }
  Gmm two = GmmInitKMeans(blobs, 2, CovarianceType::kDiagonal, 3);
  for (double c : {-10.0, 10.0}) {
    double best = std::min(std::abs(two.means(0, 0) - c), std::abs(two.means(1, 0) - c));
    CHECK(best < 0.1 * 20.0);
  }
  CHECK(two.weights.isApprox(Vector::Constant(2, 0.5)));

  Matrix few = Matrix::Ones(5, 2);
  CHECK_THROWS_AS(GmmInitKMeans(few, 2, CovarianceType::kFull, 1), ValidationError);
}

TEST_CASE("permuting components permutes statistics") {
  Rng rng(9);
  Gmm g = RandomGmm(3, 2, rng);
  Gmm p = g;
  const int perm[3] = {2, 0, 1};
  for (int c = 0; c < 3; ++c) {
    p.weights(c) = g.weights(perm[c]);
    p.means.row(c) = g.means.row(perm[c]);
    p.covariances[c] = g.covariances[perm[c]];
  }
  features::FrameMatrix u;
  u.data = RandomMatrix(30, 2, rng, 2.0);
  BaumWelchStats a = AccumulateStats(g, u), b = AccumulateStats(p, u);
  for (int c = 0; c < 3; ++c) {
    CHECK(std::abs(b.n(c) - a.n(perm[c])) < 1e-12);
    CHECK((b.f.row(c) - a.f.row(perm[c])).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("EM results do not depend on the worker count") {
  Rng rng(10);
  auto data = testing::Blobs(rng, 12, 40, 3, 3);
  Gmm g = GmmInitKMeans(PooledSample(data, 400), 3, CovarianceType::kFull, 2);
  EmOptions one, four;
  one.workers = 1;
  four.workers = 4;
  EmStepResult a = GmmEmStep(g, data, one), b = GmmEmStep(g, data, four);
  CHECK(a.avg_loglik == b.avg_loglik);
  CHECK(a.model.means == b.model.means);
}

TEST_CASE("GMM1 round trip and validation") {
  testing::TempDir dir("gmm");
  Rng rng(11);
  Gmm g = RandomGmm(3, 2, rng);
  WriteGmm(dir / "u.gmm1", g);
  Gmm r = ReadGmm(dir / "u.gmm1");
  CHECK(r.weights == g.weights);
  CHECK(r.means == g.means);
  CHECK(r.covariances[2] == g.covariances[2]);
  CHECK(r.type == g.type);

  Gmm bad = g;
  bad.weights(0) += 0.1;
  CHECK_THROWS_AS(bad.Check(), ValidationError);
  bad = g;
  bad.covariances[0] = -Matrix::Identity(2, 2);
  CHECK_THROWS_AS(bad.Check(), ValidationError);
  CHECK_THROWS_AS(ReadGmm(dir / "missing.gmm1"), Error);
}

}  // namespace
}  // namespace ipltk::gmm
