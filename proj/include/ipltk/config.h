// ipltk/config.h

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

#ifndef IPLTK_CONFIG_H_
#define IPLTK_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>

#include "ipltk/augment.h"
#include "ipltk/cluster.h"
#include "ipltk/corpus.h"
#include "ipltk/encoder.h"
#include "ipltk/features.h"
#include "ipltk/gmm.h"

namespace ipltk {

struct CorpusConfig {
  corpus::SynthSpec train;  // training corpus (labels used for diagnostics only)
  // Held-out evaluation corpus: same world (channel subspace), new speakers.
  int eval_num_speakers = 60;
  int eval_utterances_per_speaker = 12;
  uint64_t eval_seed = 1001;
  // The first eval_validation_speakers eval speakers form the validation
  // trial list, the rest the test list.
  int eval_validation_speakers = 20;
  // Speech-free recordings of the synthetic world, used as the noise corpus
  // for feature-space augmentation (features mode; 0 disables).
  int noise_recordings = 40;
  int noise_frames = 300;
  double noise_frame_noise = 1.0;  // per-frame std of the noise recordings
  uint64_t noise_seed = 2002;
  // External manifests replace synthetic generation when set.
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;

  corpus::SynthSpec EvalSpec() const;
};

struct TrialConfig {
  int validation_target = 1200;
  int validation_nontarget = 1200;
  int test_target = 2000;
  int test_nontarget = 2000;
  // External trial lists replace synthetic ones when set.
  std::filesystem::path validation_list;
  std::filesystem::path test_list;
};

struct UbmConfig {
  int num_components = 64;
  gmm::CovarianceType covariance = gmm::CovarianceType::kFull;
  int em_iterations = 10;
  int init_sample_frames = 20000;
  double variance_floor_factor = 1e-4;
  double min_count = 1.0;
};

struct TvConfig {
  int rank = 32;
  int em_iterations = 10;
  // Train T on the N longest training utterances only (0: all).
  int longest_utterances = 0;
};

struct ClusterConfig {
  int k_coarse = 208;
  int k_final = 62;
  cluster::ClusterMethod method = cluster::ClusterMethod::kTwoStage;
  int kmeans_iterations = 100;
  int kmeans_restarts = 1;
};

struct IplSettings {
  int num_iterations = 5;
  // "ivector", or the path of an ENC1 checkpoint used as g^0.
  std::string initial_model = "ivector";
  bool augment_enabled = true;
};

// Every knob of a pipeline run. Loaded from a JSON file whose keys mirror
// the fields below; unknown keys are rejected.
struct RunConfig {
  uint64_t seed = 1;
  int workers = 1;
  std::filesystem::path workspace = "workspace";
  // Where corpora, trial lists and i-vector artifacts live; defaults to the
  // workspace. Ablation cells point this at the matrix root to share them.
  std::filesystem::path shared_dir;
  CorpusConfig corpus;
  TrialConfig trials;
  features::FeatureConfig ubm_features;      // waveform corpora only
  features::FeatureConfig encoder_features;  // waveform corpora only
  UbmConfig ubm;
  TvConfig tv;
  ClusterConfig cluster;
  encoder::EncoderArch encoder;  // input_dim / num_classes set at run time
  encoder::TrainConfig train;
  augment::AugmentConfig augment;
  IplSettings ipl;

  RunConfig();
  // Throws ValidationError describing the first problem.
  void Validate() const;
  std::filesystem::path SharedDir() const {
    return shared_dir.empty() ? workspace : shared_dir;
  }
  // Canonical JSON (sorted keys).
  std::string ToJson() const;
  // Hash of everything that affects results, excluding num_iterations,
  // workers and paths, used to guard resumption.
  std::string ResultHash() const;
};

// Parses JSON text; unknown keys and type mismatches throw ValidationError.
// Relative paths are kept as written (resolved against the working
// directory).
RunConfig ParseRunConfig(const std::string &json_text, const std::string &source);
RunConfig LoadRunConfig(const std::filesystem::path &path);

}  // namespace ipltk

#endif  // IPLTK_CONFIG_H_
