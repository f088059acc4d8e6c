// tests/augment_test.cc

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
#include <vector>

#include "doctest.h"
#include "ipltk/augment.h"
#include "ipltk/io.h"
#include "test_util.h"

namespace ipltk::augment {
namespace {

std::vector<double> Randn(size_t n, Rng &rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  std::vector<double> v(n);
  for (double &x : v) x = scale * normal(rng);
  return v;
}

double MeanSq(const std::vector<double> &v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

features::FrameMatrix Frames(const Matrix &m) {
  features::FrameMatrix f;
  f.data = m;
  f.source_id = "f";
  return f;
}

TEST_CASE("crop examples") {
  std::vector<double> w(100);
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
  Rng a(1);
  CHECK(CropSegment(w, 100, a) == w);
  Rng c(5), d(5);
  CHECK(CropSegment(w, 10, c) == CropSegment(w, 10, d));
  // Repetition padding when too short.
  std::vector<double> shortw = {1, 2, 3};
  CHECK(CropSegment(shortw, 7, c) == std::vector<double>{1, 2, 3, 1, 2, 3, 1});
  CHECK_THROWS_AS(CropSegment(std::vector<double>{}, 3, c), ValidationError);

  features::FrameMatrix f = Frames(Matrix::Random(20, 3));
  Rng e(2);
  CHECK(CropSegment(f, 20, e).data == f.data);
  features::FrameMatrix g = CropSegment(f, 5, e);
  CHECK(g.NumFrames() == 5);
  bool found = false;
  for (Eigen::Index off = 0; off <= 15; ++off)
    found = found || f.data.middleRows(off, 5) == g.data;
  CHECK(found);
}

TEST_CASE("crop offsets are uniform") {
  std::vector<double> w(100);
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
  Rng rng(3);
  std::vector<int> hist(91, 0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> s = CropSegment(w, 10, rng);
    int off = static_cast<int>(s[0]);
    REQUIRE(off >= 0);
    REQUIRE(off <= 90);
    hist[off]++;
  }
  double expected = 1000.0 / 91.0, chi2 = 0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // Upper 1% point of chi-square with 90 degrees of freedom.
  CHECK(chi2 < 124.116);
}

TEST_CASE("noise mixing gain") {
  std::vector<double> ones(16, 1.0), alt(16);
  for (size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  std::vector<double> m0 = MixNoiseAtSnr(ones, alt, 0.0);
  for (size_t i = 0; i < 16; ++i) CHECK(m0[i] == doctest::Approx(1.0 + alt[i]).epsilon(1e-15));
  std::vector<double> m10 = MixNoiseAtSnr(ones, alt, 10.0);
  for (size_t i = 0; i < 16; ++i) CHECK(std::abs(m10[i] - (1.0 + 0.31622776601683794 * alt[i])) < 1e-12);
  CHECK(MixNoiseAtSnr(ones, std::vector<double>(4, 0.0), 5.0) == ones);
  CHECK_THROWS_AS(MixNoiseAtSnr(std::vector<double>(4, 0.0), alt, 5.0), ValidationError);
}

TEST_CASE("achieved SNR equals the request") {
  Rng rng(4);
  std::uniform_real_distribution<double> snr(-5.0, 40.0);
  std::uniform_int_distribution<size_t> len(5, 400);
  for (int c = 0; c < 50; ++c) {
    std::vector<double> s = Randn(len(rng), rng, 0.3), n = Randn(len(rng), rng, 2.0);
    double want = snr(rng);
    std::vector<double> out = MixNoiseAtSnr(s, n, want);
    std::vector<double> added(s.size());
    for (size_t i = 0; i < s.size(); ++i) added[i] = out[i] - s[i];
    CHECK(std::abs(10.0 * std::log10(MeanSq(s) / MeanSq(added)) - want) < 1e-9);
  }
}

TEST_CASE("RIR convolution") {
  Rng rng(5);
  std::vector<double> x = Randn(50, rng);
  CHECK(ConvolveRir(x, std::vector<double>{1.0}) == x);

  std::vector<double> lag(6, 0.0);
  lag[5] = 0.5;
  std::vector<double> y = ConvolveRir(x, lag);
  double peak_x = 0, peak_shift = 0;
  for (double v : x) peak_x = std::max(peak_x, std::abs(v));
  for (size_t t = 0; t + 5 < x.size(); ++t) peak_shift = std::max(peak_shift, std::abs(x[t]));
  for (size_t t = 0; t < 5; ++t) CHECK(y[t] == 0.0);
  for (size_t t = 5; t < x.size(); ++t)
    CHECK(std::abs(y[t] - x[t - 5] * peak_x / peak_shift) < 1e-12);

  for (int c = 0; c < 20; ++c) {
    std::vector<double> s = Randn(80, rng), h = Randn(1 + c, rng);
    std::vector<double> direct(s.size(), 0.0);
    for (size_t n = 0; n < s.size(); ++n)
      for (size_t k = 0; k < h.size(); ++k)
        if (k <= n) direct[n] += h[k] * s[n - k];
    double ps = 0, pd = 0;
    for (size_t i = 0; i < s.size(); ++i) {
      ps = std::max(ps, std::abs(s[i]));
      pd = std::max(pd, std::abs(direct[i]));
    }
    std::vector<double> got = ConvolveRir(s, h);
    for (size_t i = 0; i < s.size(); ++i) CHECK(std::abs(got[i] - direct[i] * ps / pd) < 1e-9);
  }
  CHECK_THROWS_AS(ConvolveRir(x, std::vector<double>(3, 0.0)), ValidationError);
  CHECK_THROWS_AS(ConvolveRir(x, std::vector<double>{}), ValidationError);
}

TEST_CASE("synthetic RIR") {
  Rng a(6), b(6);
  CHECK(SynthRir(a, 64, 8.0) == SynthRir(b, 64, 8.0));
  std::vector<double> sharp = SynthRir(a, 64, 1e-3);
  CHECK(sharp[0] == 1.0);
  for (size_t t = 1; t < sharp.size(); ++t) CHECK(std::abs(sharp[t]) < 1e-100);

  // E[energy] = 1 + sum_t exp(-2t/decay); Var = sum_t 2 exp(-4t/decay).
  const size_t len = 200;
  const double decay = 15.0;
  double mean = 1.0, var = 0.0;
  for (size_t t = 1; t < len; ++t) {
    mean += std::exp(-2.0 * t / decay);
    var += 2.0 * std::exp(-4.0 * t / decay);
  }
  double avg = 0.0;
  for (uint64_t s = 0; s < 100; ++s) {
    Rng rng(100 + s);
    for (double v : SynthRir(rng, len, decay)) avg += v * v / 100.0;
  }
  CHECK(std::abs(avg - mean) < 3.0 * std::sqrt(var / 100.0));
  CHECK_THROWS_AS(SynthRir(a, 0, 1.0), ValidationError);
  CHECK_THROWS_AS(SynthRir(a, 4, 0.0), ValidationError);
}

TEST_CASE("frame smearing") {
  Rng rng(7);
  Matrix m = testing::RandomMatrix(30, 4, rng);
  std::vector<double> energy = {1.0, 0.5, 0.25, 0.125};
  features::FrameMatrix s = SmearFrames(Frames(m), energy);
  for (Eigen::Index i = 0; i < 30; ++i) {
    Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(4);
    double norm = 0;
    for (Eigen::Index k = 0; k < 4 && k <= i; ++k) {
      want += energy[k] * m.row(i - k);
      norm += energy[k];
    }
    CHECK((s.data.row(i) - want / norm).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Unit DC gain: constant frames are unchanged.
  Matrix c = Matrix::Constant(10, 3, 2.5);
  CHECK((SmearFrames(Frames(c), energy).data - c).cwiseAbs().maxCoeff() < 1e-12);
  // A single tap is the identity; causality.
  CHECK((SmearFrames(Frames(m), std::vector<double>{3.0}).data - m).cwiseAbs().maxCoeff() < 1e-15);
  Matrix m2 = m;
  m2.row(20).setConstant(100.0);
  features::FrameMatrix s2 = SmearFrames(Frames(m2), energy);
  CHECK(s2.data.topRows(20) == s.data.topRows(20));
  CHECK_THROWS_AS(SmearFrames(Frames(m), std::vector<double>{}), ValidationError);
  CHECK_THROWS_AS(SmearFrames(Frames(m), std::vector<double>{0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(SmearFrames(Frames(m), std::vector<double>{1.0, -0.1}), ValidationError);
}

TEST_CASE("feature-space augmenter") {
  Rng rng(8);
  features::FrameMatrix f = Frames(testing::RandomMatrix(40, 5, rng));
  AugmentConfig cfg;
  cfg.apply_noise_prob = 0.0;
  cfg.apply_rir_prob = 0.0;
  Rng r(1);
  CHECK(Augmenter(cfg).AugmentFrames(f, r).data == f.data);

  cfg.apply_noise_prob = 1.0;
  cfg.snr_low_db = cfg.snr_high_db = 12.0;
  for (int c = 0; c < 5; ++c) {
    features::FrameMatrix g = Augmenter(cfg).AugmentFrames(f, r);
    double added = (g.data - f.data).squaredNorm();
    CHECK(std::abs(10.0 * std::log10(f.data.squaredNorm() / added) - 12.0) < 1e-9);
  }

  // Noise recordings from a directory are used and still hit the SNR.
  testing::TempDir dir("augment");
  features::FrameMatrix noise = Frames(Matrix::Constant(7, 5, 1.0));
  features::WriteFrameMatrix(dir / "n.fmx", noise);
  cfg.noise_dir = dir.path();
  features::FrameMatrix g = Augmenter(cfg).AugmentFrames(f, r);
  Matrix diff = g.data - f.data;
  CHECK((diff.array() - diff(0, 0)).abs().maxCoeff() < 1e-12);  // a scaled constant
  CHECK(std::abs(10.0 * std::log10(f.data.squaredNorm() / diff.squaredNorm()) - 12.0) < 1e-9);

  AugmentConfig bad;
  bad.snr_low_db = 30;
  bad.snr_high_db = 10;
  CHECK_THROWS_AS(bad.Validate(), ValidationError);
  bad = AugmentConfig();
  bad.apply_rir_prob = 1.5;
  CHECK_THROWS_AS(bad.Validate(), ValidationError);
  bad = AugmentConfig();
  bad.noise_dir = dir / "missing";
  CHECK_THROWS_AS(Augmenter{bad}, ValidationError);
}

TEST_CASE("waveform augmenter keeps length and counts calls") {
  Rng rng(9);
  std::vector<double> w = Randn(4000, rng);
  AugmentConfig cfg;
  cfg.apply_noise_prob = cfg.apply_rir_prob = 1.0;
  Augmenter aug(cfg);
  uint64_t before = AugmentCallCount();
  Rng a(3), b(3);
  std::vector<double> x = aug.AugmentWave(w, a);
  CHECK(x.size() == w.size());
  CHECK(x != w);
  CHECK(aug.AugmentWave(w, b) == x);
  CHECK(AugmentCallCount() > before);
}

}  // namespace
}  // namespace ipltk::augment
