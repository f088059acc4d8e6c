// ipltk/corpus.h

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

#ifndef IPLTK_CORPUS_H_
#define IPLTK_CORPUS_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/features.h"

namespace ipltk::corpus {

struct ManifestEntry {
  std::string utterance_id;
  std::string source;  // relative to the manifest's directory
  uint64_t num_samples = 0;  // frames for FMX1 sources, samples for WAV1
  std::optional<int> speaker_label;

  bool operator==(const ManifestEntry &) const = default;
};

// Corpus index: utterance ids bound to stored audio/features and
// (pseudo-)labels. Immutable once built.
class UtteranceManifest {
 public:
  UtteranceManifest() = default;
  UtteranceManifest(std::vector<ManifestEntry> entries,
                    std::filesystem::path base_dir);

  const std::vector<ManifestEntry> &entries() const { return entries_; }
  const std::filesystem::path &base_dir() const { return base_dir_; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ManifestEntry &operator[](size_t i) const { return entries_[i]; }

  std::filesystem::path SourcePath(size_t i) const;
  // Index of an utterance id, or nullopt.
  std::optional<size_t> Find(const std::string &utterance_id) const;
  bool AllLabeled() const;
  bool AnyLabeled() const;

  bool operator==(const UtteranceManifest &other) const {
    return entries_ == other.entries_;
  }

 private:
  std::vector<ManifestEntry> entries_;
  std::filesystem::path base_dir_;
  std::map<std::string, size_t> index_;
};

// Throws ParseError naming the line for malformed rows, duplicate ids,
// negative labels (other than the -1 "unlabeled" marker) or missing files.
UtteranceManifest LoadManifest(const std::filesystem::path &path);
void SaveManifest(const UtteranceManifest &manifest,
                  const std::filesystem::path &path);

// Returns a copy with every label replaced from `labels`. Throws
// ValidationError listing ids absent from the map.
UtteranceManifest Relabel(const UtteranceManifest &manifest,
                          const std::map<std::string, int> &labels);

UtteranceManifest StripLabels(const UtteranceManifest &manifest);

// Keeps the n entries with the most samples (ties broken by manifest
// order), preserving manifest order in the result.
UtteranceManifest SelectLongest(const UtteranceManifest &manifest, size_t n);

enum class SynthMode { kFeatures, kWaveform };

struct SynthSpec {
  int num_speakers = 50;
  int utterances_per_speaker = 20;
  int min_frames = 150;
  int max_frames = 300;
  int feature_dim = 20;
  double speaker_spread = 1.0;
  double session_spread = 0.3;
  double frame_noise = 3.0;
  uint64_t seed = 1;
  // Optional low-rank nuisance ("channel") subspace shared by every corpus
  // generated with the same world_seed. channel_rank = 0 disables it.
  int channel_rank = 0;
  double channel_spread = 0.0;
  uint64_t world_seed = 1;
  std::string id_prefix = "utt";
  SynthMode mode = SynthMode::kFeatures;
  double sample_rate_hz = 16000.0;  // waveform mode only

  // Throws ValidationError; logs a warning when session variability
  // exceeds speaker variability.
  void Validate() const;
};

struct SynthUtterance {
  std::string utterance_id;
  int speaker = 0;
  features::FrameMatrix frames;  // features mode
  std::vector<double> wave;      // waveform mode
};

// In-memory generation. Feature values are rounded to float precision so
// the stored FMX1 files reproduce them exactly.
std::vector<SynthUtterance> SynthGenerateInMemory(const SynthSpec &spec);

// Generates the corpus into `out_dir` (one file per utterance plus
// manifest.tsv) and returns the manifest, which carries ground truth.
UtteranceManifest SynthGenerate(const SynthSpec &spec,
                                const std::filesystem::path &out_dir);

// Speech-free "environment" recordings of the world described by `world`
// (features mode): each recording has its own channel-subspace offset and
// session offset plus white frame noise of std `frame_noise`, and no
// speaker component. Used as
// the additive-noise corpus for feature-space augmentation. Files are
// written as <out_dir>/noise-NNNN.fmx; deterministic in `seed`.
std::vector<features::FrameMatrix> SynthNoiseInMemory(const SynthSpec &world,
                                                      int num_recordings, int num_frames,
                                                      double frame_noise, uint64_t seed);
void SynthGenerateNoise(const SynthSpec &world, int num_recordings, int num_frames,
                        double frame_noise, uint64_t seed, const std::filesystem::path &out_dir);

// Waveform length (samples) that frames into exactly `frames` frames.
int WaveformSamplesForFrames(int frames, const features::FeatureConfig &cfg);

}  // namespace ipltk::corpus

#endif  // IPLTK_CORPUS_H_
