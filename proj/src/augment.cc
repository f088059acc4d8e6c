// src/augment.cc

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

#include "ipltk/augment.h"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "ipltk/io.h"

namespace ipltk::augment {

namespace {

std::atomic<uint64_t> g_augment_calls{0};

void CountCall() { g_augment_calls.fetch_add(1, std::memory_order_relaxed); }

double MeanSquare(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

// Sorted directory listing so file choice by index is reproducible.
std::vector<std::filesystem::path> ListFiles(const std::filesystem::path &dir) {
  if (!std::filesystem::is_directory(dir))
    throw ValidationError("augmentation directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto &e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

void AugmentConfig::Validate() const {
  if (!(snr_low_db <= snr_high_db))
    throw ValidationError("augment: snr_low_db must be <= snr_high_db");
  for (double p : {apply_noise_prob, apply_rir_prob})
    if (!(p >= 0.0 && p <= 1.0))
      throw ValidationError("augment: probabilities must lie in [0, 1]");
  if (!(rir_length_ms > 0.0) || !(rir_decay_ms > 0.0))
    throw ValidationError("augment: rir_length_ms and rir_decay_ms must be positive");
}

uint64_t AugmentCallCount() { return g_augment_calls.load(); }

std::vector<double> CropSegment(std::span<const double> wave, size_t length,
                                Rng &rng) {
  CountCall();
  if (wave.empty() || length == 0)
    throw ValidationError("crop: empty input or zero length");
  std::vector<double> out(length);
  if (wave.size() < length) {
    spdlog::debug("crop: input of {} samples shorter than {}, repeat-padding",
                  wave.size(), length);
    for (size_t i = 0; i < length; ++i) out[i] = wave[i % wave.size()];
    return out;
  }
  std::uniform_int_distribution<size_t> pick(0, wave.size() - length);
  size_t off = pick(rng);
  std::copy(wave.begin() + off, wave.begin() + off + length, out.begin());
  return out;
}

features::FrameMatrix CropSegment(const features::FrameMatrix &m, size_t length,
                                  Rng &rng) {
  CountCall();
  const size_t t = static_cast<size_t>(m.NumFrames());
  if (t == 0 || length == 0)
    throw ValidationError("crop: empty input or zero length");
  features::FrameMatrix out;
  out.frame_shift_ms = m.frame_shift_ms;
  out.source_id = m.source_id;
  if (t < length) {
    spdlog::debug("crop: {} has {} frames, shorter than {}, repeat-padding",
                  m.source_id, t, length);
    out.data.resize(static_cast<Eigen::Index>(length), m.Dim());
    for (size_t i = 0; i < length; ++i)
      out.data.row(static_cast<Eigen::Index>(i)) =
          m.data.row(static_cast<Eigen::Index>(i % t));
    return out;
  }
  std::uniform_int_distribution<size_t> pick(0, t - length);
  size_t off = pick(rng);
  out.data = m.data.middleRows(static_cast<Eigen::Index>(off),
                               static_cast<Eigen::Index>(length));
  return out;
}

std::vector<double> MixNoiseAtSnr(std::span<const double> signal,
                                  std::span<const double> noise, double snr_db) {
  CountCall();
  if (signal.empty() || noise.empty())
    throw ValidationError("mix: signal and noise must be nonempty");
  const double p_sig = MeanSquare(signal);
  if (p_sig == 0.0) throw ValidationError("mix: zero-power signal");
  std::vector<double> looped(signal.size());
  for (size_t i = 0; i < signal.size(); ++i) looped[i] = noise[i % noise.size()];
  const double p_noise = MeanSquare(looped);
  std::vector<double> out(signal.begin(), signal.end());
  if (p_noise == 0.0) {
    spdlog::debug("mix: zero-power noise, skipping");
    return out;
  }
  const double g = std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0)));
  for (size_t i = 0; i < out.size(); ++i) out[i] += g * looped[i];
  return out;
}

std::vector<double> ConvolveRir(std::span<const double> signal,
                                std::span<const double> rir) {
  CountCall();
  if (rir.empty()) throw ValidationError("rir: empty impulse response");
  if (std::all_of(rir.begin(), rir.end(), [](double v) { return v == 0.0; }))
    throw ValidationError("rir: all-zero impulse response");
  const size_t n = signal.size();
  std::vector<double> out(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    const size_t kmax = std::min(rir.size() - 1, t);
    double acc = 0.0;
    for (size_t k = 0; k <= kmax; ++k) acc += rir[k] * signal[t - k];
    out[t] = acc;
  }
  double peak_in = 0.0, peak_out = 0.0;
  for (double v : signal) peak_in = std::max(peak_in, std::abs(v));
  for (double v : out) peak_out = std::max(peak_out, std::abs(v));
  if (peak_out > 0.0) {
    const double s = peak_in / peak_out;
    for (double &v : out) v *= s;
  }
  return out;
}

std::vector<double> SynthRir(Rng &rng, size_t length, double decay) {
  if (length == 0 || !(decay > 0.0))
    throw ValidationError("synth_rir: length >= 1 and decay > 0 required");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> rir(length);
  rir[0] = 1.0;
  for (size_t t = 1; t < length; ++t)
    rir[t] = std::exp(-static_cast<double>(t) / decay) * normal(rng);
  return rir;
}

Augmenter::Augmenter(AugmentConfig cfg, double sample_rate_hz)
    : cfg_(std::move(cfg)), sample_rate_hz_(sample_rate_hz) {
  cfg_.Validate();
  if (!cfg_.noise_dir.empty()) {
    for (const auto &f : ListFiles(cfg_.noise_dir)) {
      if (features::IsWaveFile(f)) {
        noise_waves_.push_back(features::ReadWave(f));
      } else {
        noise_frames_.push_back(features::ReadFrameMatrix(f).data);
      }
    }
    spdlog::info("augment: {} noise waves, {} noise frame files from {}",
                 noise_waves_.size(), noise_frames_.size(),
                 cfg_.noise_dir.string());
  }
  if (!cfg_.rir_dir.empty()) {
    for (const auto &f : ListFiles(cfg_.rir_dir)) rirs_.push_back(features::ReadWave(f));
    spdlog::info("augment: {} RIRs from {}", rirs_.size(), cfg_.rir_dir.string());
  }
}

std::vector<double> Augmenter::AugmentWave(std::span<const double> wave,
                                           Rng &rng) const {
  CountCall();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(wave.begin(), wave.end());
  if (unit(rng) < cfg_.apply_rir_prob) {
    std::vector<double> rir;
    if (!rirs_.empty()) {
      std::uniform_int_distribution<size_t> pick(0, rirs_.size() - 1);
      rir = rirs_[pick(rng)];
    } else {
      size_t len = std::max<size_t>(
          1, static_cast<size_t>(cfg_.rir_length_ms * sample_rate_hz_ / 1000.0));
      rir = SynthRir(rng, len, cfg_.rir_decay_ms * sample_rate_hz_ / 1000.0);
    }
    out = ConvolveRir(out, rir);
  }
  if (unit(rng) < cfg_.apply_noise_prob) {
    std::uniform_real_distribution<double> snr(cfg_.snr_low_db, cfg_.snr_high_db);
    double snr_db = snr(rng);
    std::vector<double> noise;
    if (!noise_waves_.empty()) {
      std::uniform_int_distribution<size_t> pick(0, noise_waves_.size() - 1);
      noise = CropSegment(noise_waves_[pick(rng)], out.size(), rng);
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      noise.resize(out.size());
      for (double &v : noise) v = normal(rng);
    }
    if (MeanSquare(out) > 0.0) out = MixNoiseAtSnr(out, noise, snr_db);
  }
  return out;
}

features::FrameMatrix SmearFrames(const features::FrameMatrix &m,
                                  std::span<const double> energy) {
  CountCall();
  if (energy.empty()) throw ValidationError("augment: empty RIR energy envelope");
  double total = 0.0;
  for (double e : energy) {
    if (!(e >= 0.0)) throw ValidationError("augment: negative RIR energy");
    total += e;
  }
  if (total <= 0.0) throw ValidationError("augment: all-zero RIR energy envelope");
  features::FrameMatrix out = m;
  const Eigen::Index t = m.NumFrames();
  const Eigen::Index taps = static_cast<Eigen::Index>(energy.size());
  for (Eigen::Index i = 0; i < t; ++i) {
    out.data.row(i).setZero();
    double norm = 0.0;
    for (Eigen::Index k = 0; k < taps && k <= i; ++k) {
      out.data.row(i) += energy[static_cast<size_t>(k)] * m.data.row(i - k);
      norm += energy[static_cast<size_t>(k)];
    }
    if (norm > 0.0) {
      out.data.row(i) /= norm;
    } else {
      out.data.row(i) = m.data.row(i);
    }
  }
  return out;
}

features::FrameMatrix Augmenter::AugmentFrames(const features::FrameMatrix &m,
                                               Rng &rng) const {
  CountCall();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  features::FrameMatrix out = m;
  const Eigen::Index t = m.NumFrames(), d = m.Dim();
  if (unit(rng) < cfg_.apply_noise_prob) {
    std::uniform_real_distribution<double> snr(cfg_.snr_low_db, cfg_.snr_high_db);
    double snr_db = snr(rng);
    Matrix noise(t, d);
    std::vector<const Matrix *> usable;
    for (const Matrix &nf : noise_frames_)
      if (nf.cols() == d && nf.rows() > 0) usable.push_back(&nf);
    if (!usable.empty()) {
      std::uniform_int_distribution<size_t> pick(0, usable.size() - 1);
      const Matrix &src = *usable[pick(rng)];
      for (Eigen::Index i = 0; i < t; ++i) noise.row(i) = src.row(i % src.rows());
    } else {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < t; ++i) noise(i, j) = normal(rng);
    }
    double p_sig = out.data.squaredNorm() / static_cast<double>(t * d);
    double p_noise = noise.squaredNorm() / static_cast<double>(t * d);
    if (p_sig > 0.0 && p_noise > 0.0)
      out.data += std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0))) * noise;
  }
  if (unit(rng) < cfg_.apply_rir_prob) {
    const double shift_ms = m.frame_shift_ms > 0.0 ? m.frame_shift_ms : 10.0;
    std::vector<double> energy;
    if (!rirs_.empty()) {
      std::uniform_int_distribution<size_t> pick(0, rirs_.size() - 1);
      const std::vector<double> &rir = rirs_[pick(rng)];
      const size_t block =
          std::max<size_t>(1, static_cast<size_t>(std::lround(sample_rate_hz_ * shift_ms / 1000.0)));
      for (size_t i = 0; i < rir.size(); ++i) {
        if (i % block == 0) energy.push_back(0.0);
        energy.back() += rir[i] * rir[i];
      }
    } else {
      size_t len = std::max<size_t>(1, static_cast<size_t>(std::lround(cfg_.rir_length_ms / shift_ms)));
      for (double v : SynthRir(rng, len, cfg_.rir_decay_ms / shift_ms)) energy.push_back(v * v);
    }
    out = SmearFrames(out, energy);
  }
  return out;
}

}  // namespace ipltk::augment
