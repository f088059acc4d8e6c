// src/features.cc

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

#include "ipltk/features.h"

#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "ipltk/io.h"

namespace ipltk::features {

void FeatureConfig::Validate() const {
  if (!(sample_rate_hz > 0)) throw ValidationError("sample_rate_hz must be > 0");
  if (!(hop_ms > 0) || !(window_ms > hop_ms))
    throw ValidationError("need window_ms > hop_ms > 0");
  if (num_mel_filters < 1) throw ValidationError("num_mel_filters must be >= 1");
  if (num_cepstra < 1 || num_cepstra > num_mel_filters)
    throw ValidationError("need 1 <= num_cepstra <= num_mel_filters");
  if (delta_order < 0 || delta_order > 2)
    throw ValidationError("delta_order must be 0, 1 or 2");
  if (delta_window < 1) throw ValidationError("delta_window must be >= 1");
  if (!(preemphasis >= 0.0 && preemphasis < 1.0))
    throw ValidationError("preemphasis must be in [0, 1)");
  double high = high_freq_hz > 0 ? high_freq_hz : sample_rate_hz / 2;
  if (!(low_freq_hz >= 0 && low_freq_hz < high && high <= sample_rate_hz / 2))
    throw ValidationError("invalid filterbank frequency range");
}

int FeatureConfig::WindowSamples() const {
  return static_cast<int>(std::lround(sample_rate_hz * window_ms / 1000.0));
}

int FeatureConfig::HopSamples() const {
  return static_cast<int>(std::lround(sample_rate_hz * hop_ms / 1000.0));
}

int FeatureConfig::FftLength() const {
  int n = 1;
  while (n < WindowSamples()) n <<= 1;
  return n;
}

FeatureConfig MfccConfig() { return FeatureConfig{}; }

FeatureConfig LogMelConfig(int num_filters) {
  FeatureConfig cfg;
  cfg.use_log_mel = true;
  cfg.num_mel_filters = num_filters;
  cfg.num_cepstra = num_filters;
  cfg.delta_order = 0;
  return cfg;
}

MelFilterbank::MelFilterbank(const FeatureConfig &cfg) {
  int nfft = cfg.FftLength();
  int num_bins = nfft / 2 + 1;
  int m = cfg.num_mel_filters;
  double high = cfg.high_freq_hz > 0 ? cfg.high_freq_hz : cfg.sample_rate_hz / 2;
  double mel_low = HzToMel(cfg.low_freq_hz), mel_high = HzToMel(high);
  double step = (mel_high - mel_low) / (m + 1);
  std::vector<double> mel_edges(m + 2);
  edges_hz_.resize(m + 2);
  for (int i = 0; i < m + 2; i++) {
    mel_edges[i] = mel_low + i * step;
    edges_hz_[i] = MelToHz(mel_edges[i]);
  }
  weights_ = Matrix::Zero(m, num_bins);
  for (int f = 0; f < m; f++) {
    double left = mel_edges[f], center = mel_edges[f + 1], right = mel_edges[f + 2];
    for (int k = 0; k < num_bins; k++) {
      double mel = HzToMel(k * cfg.sample_rate_hz / nfft);
      if (mel > left && mel <= center)
        weights_(f, k) = (mel - left) / (center - left);
      else if (mel > center && mel < right)
        weights_(f, k) = (right - mel) / (right - center);
    }
  }
}

RowMatrix FrameSignal(std::span<const double> wave, const FeatureConfig &cfg) {
  cfg.Validate();
  const size_t win = cfg.WindowSamples(), hop = cfg.HopSamples();
  if (wave.size() < win) throw ValidationError("utterance too short");
  const size_t num_frames = (wave.size() - win) / hop + 1;
  RowMatrix frames(num_frames, win);
  std::vector<double> hamming(win);
  for (size_t i = 0; i < win; i++)
    hamming[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / (win - 1));
  for (size_t t = 0; t < num_frames; t++) {
    const double *x = wave.data() + t * hop;
    // Pre-emphasis inside the frame; the first sample uses itself as history.
    for (size_t i = win; i-- > 0;) {
      double prev = i > 0 ? x[i - 1] : x[0];
      frames(t, i) = (x[i] - cfg.preemphasis * prev) * hamming[i];
    }
  }
  return frames;
}

namespace {

// FFTW plans are created once per size; execution on fresh arrays is
// thread-safe, plan creation is not.
class FftCache {
 public:
  static fftw_plan Plan(int n) {
    static FftCache cache;
    std::lock_guard<std::mutex> lock(cache.mutex_);
    auto it = cache.plans_.find(n);
    if (it != cache.plans_.end()) return it->second;
    std::vector<double> in(n);
    std::vector<fftw_complex> out(n / 2 + 1);
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in.data(), out.data(),
                                       FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache.plans_[n] = p;
    return p;
  }
  ~FftCache() {
    for (auto &kv : plans_) fftw_destroy_plan(kv.second);
  }

 private:
  std::mutex mutex_;
  std::map<int, fftw_plan> plans_;
};

void PowerSpectrum(const double *frame, int win, int nfft, double *power) {
  std::vector<double> in(nfft, 0.0);
  std::copy(frame, frame + win, in.begin());
  std::vector<fftw_complex> out(nfft / 2 + 1);
  fftw_execute_dft_r2c(FftCache::Plan(nfft), in.data(), out.data());
  for (int k = 0; k <= nfft / 2; k++)
    power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
}

}  // namespace

Matrix LogMelEnergies(std::span<const double> wave, const FeatureConfig &cfg) {
  RowMatrix frames = FrameSignal(wave, cfg);
  const int nfft = cfg.FftLength(), win = cfg.WindowSamples();
  MelFilterbank fbank(cfg);
  Matrix power(frames.rows(), nfft / 2 + 1);
  Vector row(nfft / 2 + 1);
  for (Eigen::Index t = 0; t < frames.rows(); t++) {
    PowerSpectrum(frames.row(t).data(), win, nfft, row.data());
    power.row(t) = row.transpose();
  }
  Matrix energies = power * fbank.weights().transpose();
  return energies.unaryExpr([](double e) { return std::log(std::max(e, kLogFloor)); });
}

FrameMatrix ExtractFeatures(std::span<const double> wave,
                            const FeatureConfig &cfg,
                            const std::string &source_id) {
  Matrix log_mel = LogMelEnergies(wave, cfg);
  FrameMatrix base;
  base.frame_shift_ms = cfg.hop_ms;
  base.source_id = source_id;
  if (cfg.use_log_mel) {
    base.data = std::move(log_mel);
  } else {
    // Orthonormal DCT-II, keeping the first num_cepstra coefficients.
    const int m = cfg.num_mel_filters, c = cfg.num_cepstra;
    Matrix dct(m, c);
    for (int k = 0; k < c; k++) {
      double norm = k == 0 ? std::sqrt(1.0 / m) : std::sqrt(2.0 / m);
      for (int j = 0; j < m; j++)
        dct(j, k) = norm * std::cos(std::numbers::pi * k * (j + 0.5) / m);
    }
    base.data = log_mel * dct;
  }
  FrameMatrix out = cfg.delta_order > 0
                        ? AddDeltas(base, cfg.delta_order, cfg.delta_window)
                        : std::move(base);
  if (!out.data.allFinite())
    throw NumericalError("nonfinite features for '" + source_id +
                         "' (check filterbank configuration)");
  return out;
}

FrameMatrix ComputeFeatures(std::span<const double> wave,
                            const FeatureConfig &cfg,
                            const std::string &source_id) {
  FrameMatrix feats = ExtractFeatures(wave, cfg, source_id);
  if (cfg.apply_cmvn) feats = Cmvn(feats);
  return feats;
}

namespace {

Matrix Delta(const Matrix &c, int window) {
  const Eigen::Index num_frames = c.rows();
  double denom = 0.0;
  for (int n = 1; n <= window; n++) denom += n * n;
  denom *= 2.0;
  Matrix d = Matrix::Zero(num_frames, c.cols());
  for (Eigen::Index t = 0; t < num_frames; t++) {
    for (int n = 1; n <= window; n++) {
      Eigen::Index fwd = std::min<Eigen::Index>(t + n, num_frames - 1);
      Eigen::Index back = std::max<Eigen::Index>(t - n, 0);
      d.row(t) += n * (c.row(fwd) - c.row(back));
    }
  }
  return d / denom;
}

}  // namespace

FrameMatrix AddDeltas(const FrameMatrix &m, int order, int window) {
  if (order < 1 || order > 2) throw ValidationError("delta order must be 1 or 2");
  if (window < 1) throw ValidationError("delta window must be >= 1");
  if (m.NumFrames() < 1) throw ValidationError("AddDeltas needs T >= 1");
  const Eigen::Index dim = m.Dim();
  FrameMatrix out = m;
  out.data.resize(m.NumFrames(), dim * (1 + order));
  out.data.leftCols(dim) = m.data;
  Matrix d1 = Delta(m.data, window);
  out.data.middleCols(dim, dim) = d1;
  if (order == 2) out.data.rightCols(dim) = Delta(d1, window);
  return out;
}

FrameMatrix Cmvn(const FrameMatrix &m) {
  if (m.NumFrames() < 2) throw ValidationError("CMVN needs at least 2 frames");
  FrameMatrix out = m;
  const double num_frames = static_cast<double>(m.NumFrames());
  for (Eigen::Index d = 0; d < m.Dim(); d++) {
    auto col = out.data.col(d);
    double mean = col.sum() / num_frames;
    col.array() -= mean;
    double var = col.squaredNorm() / num_frames;
    double stddev = std::sqrt(var);
    if (stddev <= 1e-12 * std::max(1.0, std::abs(mean))) {
      col.setZero();
    } else {
      col /= stddev;
    }
  }
  return out;
}

std::string EncodeFrameMatrix(const FrameMatrix &m) {
  if (m.NumFrames() < 1 || m.Dim() < 1)
    throw ValidationError("FrameMatrix must have T >= 1 and D >= 1");
  if (!m.data.allFinite())
    throw ValidationError("FrameMatrix has nonfinite entries");
  BinaryWriter w;
  w.Magic("FMX1");
  w.U32(static_cast<uint32_t>(m.NumFrames()));
  w.U32(static_cast<uint32_t>(m.Dim()));
  w.F32(static_cast<float>(m.frame_shift_ms));
  for (Eigen::Index t = 0; t < m.NumFrames(); t++)
    for (Eigen::Index d = 0; d < m.Dim(); d++)
      w.F32(static_cast<float>(m.data(t, d)));
  return w.bytes();
}

void WriteFrameMatrix(const std::filesystem::path &path, const FrameMatrix &m) {
  WriteFileAtomic(path, EncodeFrameMatrix(m));
}

FrameMatrix ReadFrameMatrix(const std::filesystem::path &path) {
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("FMX1");
  uint32_t num_frames = r.U32(), dim = r.U32();
  if (num_frames < 1 || dim < 1)
    throw ParseError(path.string(), 0, "FrameMatrix with zero size");
  FrameMatrix m;
  m.frame_shift_ms = r.F32();
  m.source_id = path.stem().string();
  m.data.resize(num_frames, dim);
  for (uint32_t t = 0; t < num_frames; t++)
    for (uint32_t d = 0; d < dim; d++) m.data(t, d) = r.F32();
  r.ExpectEnd();
  if (!m.data.allFinite())
    throw ParseError(path.string(), 0, "nonfinite frame values");
  return m;
}

void WriteWave(const std::filesystem::path &path, std::span<const double> wave) {
  BinaryWriter w;
  w.Magic("WAV1");
  w.U32(static_cast<uint32_t>(wave.size()));
  for (double x : wave) w.F32(static_cast<float>(x));
  WriteFileAtomic(path, w.bytes());
}

std::vector<double> ReadWave(const std::filesystem::path &path) {
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("WAV1");
  uint32_t n = r.U32();
  std::vector<double> wave(n);
  for (uint32_t i = 0; i < n; i++) wave[i] = r.F32();
  r.ExpectEnd();
  return wave;
}

bool IsWaveFile(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  char head[4] = {0, 0, 0, 0};
  in.read(head, 4);
  return in.gcount() == 4 && std::string_view(head, 4) == "WAV1";
}

FrameMatrix LoadUtteranceFeatures(const std::filesystem::path &path,
                                  const FeatureConfig &cfg) {
  if (IsWaveFile(path)) {
    std::vector<double> wave = ReadWave(path);
    return ComputeFeatures(wave, cfg, path.stem().string());
  }
  return ReadFrameMatrix(path);
}

}  // namespace ipltk::features
