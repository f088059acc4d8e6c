// ipltk/features.h

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

#ifndef IPLTK_FEATURES_H_
#define IPLTK_FEATURES_H_

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ipltk/base.h"

namespace ipltk::features {

// T x D feature matrix, one row per frame.
struct FrameMatrix {
  Matrix data;
  double frame_shift_ms = 10.0;
  std::string source_id;

  Eigen::Index NumFrames() const { return data.rows(); }
  Eigen::Index Dim() const { return data.cols(); }
  bool operator==(const FrameMatrix &other) const {
    return data == other.data && frame_shift_ms == other.frame_shift_ms;
  }
};

struct FeatureConfig {
  double sample_rate_hz = 16000.0;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int num_mel_filters = 24;
  int num_cepstra = 24;
  bool use_log_mel = false;  // true: log-Mel energies, false: MFCC
  int delta_order = 2;
  int delta_window = 2;
  double preemphasis = 0.97;
  double low_freq_hz = 20.0;
  double high_freq_hz = 0.0;  // <= 0 means Nyquist
  bool apply_cmvn = true;     // applied by ComputeFeatures, not ExtractFeatures

  void Validate() const;
  int WindowSamples() const;
  int HopSamples() const;
  int FftLength() const;  // next power of two >= window
  int BaseDim() const { return use_log_mel ? num_mel_filters : num_cepstra; }
  int OutputDim() const { return BaseDim() * (1 + delta_order); }
};

// Presets: MFCC + deltas for the UBM path, log-Mel for the encoder path.
FeatureConfig MfccConfig();
FeatureConfig LogMelConfig(int num_filters = 40);

constexpr double kLogFloor = 1e-10;

inline double HzToMel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
inline double MelToHz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

// Triangular filters, equally spaced on the Mel scale.
class MelFilterbank {
 public:
  MelFilterbank(const FeatureConfig &cfg);
  // num_filters x (fft_length/2 + 1)
  const Matrix &weights() const { return weights_; }
  // Filter m spans (edges[m], edges[m+2]) and peaks at edges[m+1], in Hz.
  const std::vector<double> &edges_hz() const { return edges_hz_; }

 private:
  Matrix weights_;
  std::vector<double> edges_hz_;
};

// Splits a waveform into pre-emphasized, Hamming-windowed frames
// (num_frames x window_samples). Throws ValidationError("utterance too
// short") when the wave is shorter than one window.
RowMatrix FrameSignal(std::span<const double> wave, const FeatureConfig &cfg);

// Log Mel filterbank energies (num_frames x num_mel_filters), floored at
// kLogFloor before the log.
Matrix LogMelEnergies(std::span<const double> wave, const FeatureConfig &cfg);

// Full recipe without normalization: log-Mel or MFCC, then deltas.
FrameMatrix ExtractFeatures(std::span<const double> wave,
                            const FeatureConfig &cfg,
                            const std::string &source_id = "");

// ExtractFeatures followed by CMVN when cfg.apply_cmvn is set.
FrameMatrix ComputeFeatures(std::span<const double> wave,
                            const FeatureConfig &cfg,
                            const std::string &source_id = "");

// Appends delta (order 1) or delta and double-delta (order 2) coefficients,
// replicating edge frames.
FrameMatrix AddDeltas(const FrameMatrix &m, int order, int window);

// Per-utterance mean and variance normalization. Constant dimensions are
// set to zero. Requires at least two frames.
FrameMatrix Cmvn(const FrameMatrix &m);

// FMX1 binary format.
void WriteFrameMatrix(const std::filesystem::path &path, const FrameMatrix &m);
FrameMatrix ReadFrameMatrix(const std::filesystem::path &path);
std::string EncodeFrameMatrix(const FrameMatrix &m);

// WAV1 binary format (u32 count, f32 samples).
void WriteWave(const std::filesystem::path &path, std::span<const double> wave);
std::vector<double> ReadWave(const std::filesystem::path &path);

// Reads a stored utterance: FMX1 files are returned as is, WAV1 files go
// through ComputeFeatures with `cfg`.
FrameMatrix LoadUtteranceFeatures(const std::filesystem::path &path,
                                  const FeatureConfig &cfg);

// True if the file starts with the WAV1 magic.
bool IsWaveFile(const std::filesystem::path &path);

}  // namespace ipltk::features

#endif  // IPLTK_FEATURES_H_
