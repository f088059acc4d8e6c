// ipltk/augment.h

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

#ifndef IPLTK_AUGMENT_H_
#define IPLTK_AUGMENT_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/features.h"

namespace ipltk::augment {

struct AugmentConfig {
  double snr_low_db = 10.0;
  double snr_high_db = 25.0;
  // Empty directory: synthetic white noise / synthetic RIRs. A directory may
  // hold WAV1 (waveform path) or FMX1 (feature path) noise recordings.
  std::filesystem::path noise_dir;
  std::filesystem::path rir_dir;
  double apply_noise_prob = 0.6;
  double apply_rir_prob = 0.3;
  double rir_length_ms = 100.0;  // synthetic RIR length
  double rir_decay_ms = 20.0;    // synthetic RIR e-folding time
  uint64_t seed = 0;

  // Throws ValidationError.
  void Validate() const;
};

// Number of augmentation operations performed by this process so far.
// Used to verify that embedding extraction never augments.
uint64_t AugmentCallCount();

// Uniformly random contiguous window of `length` samples. If the input is
// shorter, the full input is repeated up to `length` (logged).
std::vector<double> CropSegment(std::span<const double> wave, size_t length,
                                Rng &rng);
features::FrameMatrix CropSegment(const features::FrameMatrix &m, size_t length,
                                  Rng &rng);

// signal + g * noise with g = sqrt(P_sig / (P_noise 10^(snr/10))) and P the
// mean square. The noise is looped or cropped to the signal length.
// Zero-power noise leaves the signal unchanged (logged); zero-power signal
// throws ValidationError.
std::vector<double> MixNoiseAtSnr(std::span<const double> signal,
                                  std::span<const double> noise, double snr_db);

// Linear convolution truncated to the signal length and rescaled so the
// output peak equals the input peak. Throws on an empty or all-zero RIR.
std::vector<double> ConvolveRir(std::span<const double> signal,
                                std::span<const double> rir);

// Unit impulse followed by exp(-t / decay) n_t, n_t ~ N(0, 1), for
// t = 1..length-1 (t and decay in samples).
std::vector<double> SynthRir(Rng &rng, size_t length, double decay);

// Feature-space reverberation: each frame becomes the causal weighted sum
// y_t = sum_k w_k x_{t-k} with w_k proportional to the squared RIR
// envelope `energy` (one value per frame shift). Weights are renormalized
// over the taps available at the start so the DC gain is exactly 1.
// Throws ValidationError on an empty, negative or all-zero envelope.
features::FrameMatrix SmearFrames(const features::FrameMatrix &m,
                                  std::span<const double> energy);

// Applies the configured random noise and reverberation to unaltered
// samples. Noise/RIR directories are scanned once at construction.
class Augmenter {
 public:
  explicit Augmenter(AugmentConfig cfg, double sample_rate_hz = 16000.0);

  // Waveform path: noise at Uniform(snr_low, snr_high) dB with
  // apply_noise_prob, RIR convolution with apply_rir_prob.
  std::vector<double> AugmentWave(std::span<const double> wave, Rng &rng) const;

  // Feature-space path: additive noise at a sampled SNR relative to the
  // segment's mean square (frames from FMX1 noise files, else white
  // Gaussian) with apply_noise_prob; SmearFrames with a frame-rate RIR
  // energy envelope (from the RIR files, else synthetic) with
  // apply_rir_prob.
  features::FrameMatrix AugmentFrames(const features::FrameMatrix &m,
                                      Rng &rng) const;

  const AugmentConfig &config() const { return cfg_; }

 private:
  AugmentConfig cfg_;
  double sample_rate_hz_;
  std::vector<std::vector<double>> noise_waves_;
  std::vector<Matrix> noise_frames_;
  std::vector<std::vector<double>> rirs_;
};

}  // namespace ipltk::augment

#endif  // IPLTK_AUGMENT_H_
