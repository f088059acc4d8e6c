// ipltk/eval.h

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

#ifndef IPLTK_EVAL_H_
#define IPLTK_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/corpus.h"

namespace ipltk::eval {

struct Trial {
  bool is_target = false;
  std::string enroll_id;
  std::string test_id;
  bool operator==(const Trial &) const = default;
};

using TrialList = std::vector<Trial>;

struct Score {
  bool is_target = false;
  double score = 0.0;
};

using ScoreSet = std::vector<Score>;

// Cosine similarity per trial. Throws ValidationError listing missing ids,
// or on a zero embedding.
ScoreSet ScoreTrials(const std::map<std::string, Vector> &embeddings,
                     const TrialList &trials);

struct EerResult {
  double eer_percent = 0.0;
  double threshold = 0.0;
};

// Equal error rate from a threshold sweep over score midpoints, linearly
// interpolated between the two operating points that bracket FRR = FAR.
// A trial with score >= threshold is accepted. Throws ValidationError
// without at least one target and one nontarget.
EerResult ComputeEer(const ScoreSet &scores);

// Samples distinct same-speaker (target) and cross-speaker (nontarget)
// utterance pairs from a manifest carrying ground truth.
TrialList MakeSyntheticTrials(const corpus::UtteranceManifest &manifest,
                              int num_target, int num_nontarget, uint64_t seed);

// `label enroll test` rows, label 1 for target.
void WriteTrials(const std::filesystem::path &path, const TrialList &trials);
TrialList ReadTrials(const std::filesystem::path &path);

// `label<TAB>score` rows.
void WriteScores(const std::filesystem::path &path, const ScoreSet &scores);
ScoreSet ReadScores(const std::filesystem::path &path);

}  // namespace ipltk::eval

#endif  // IPLTK_EVAL_H_
