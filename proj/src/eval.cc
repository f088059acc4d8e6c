// src/eval.cc

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

#include "ipltk/eval.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ipltk/io.h"

namespace ipltk::eval {

ScoreSet ScoreTrials(const std::map<std::string, Vector> &embeddings,
                     const TrialList &trials) {
  std::set<std::string> missing;
  for (const Trial &t : trials) {
    if (!embeddings.count(t.enroll_id)) missing.insert(t.enroll_id);
    if (!embeddings.count(t.test_id)) missing.insert(t.test_id);
  }
  if (!missing.empty()) {
    std::string msg = "embeddings missing for trial ids:";
    for (const auto &id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  ScoreSet scores;
  scores.reserve(trials.size());
  for (const Trial &t : trials) {
    const Vector &a = embeddings.at(t.enroll_id);
    const Vector &b = embeddings.at(t.test_id);
    if (a.size() != b.size())
      throw ValidationError("embedding dimension mismatch in trial " +
                            t.enroll_id + " " + t.test_id);
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0)
      throw ValidationError("zero embedding in trial " + t.enroll_id + " " +
                            t.test_id);
    scores.push_back({t.is_target, a.dot(b) / (na * nb)});
  }
  return scores;
}

EerResult ComputeEer(const ScoreSet &scores) {
  std::vector<double> tgt, non;
  for (const Score &s : scores) {
    if (!std::isfinite(s.score)) throw ValidationError("nonfinite score");
    (s.is_target ? tgt : non).push_back(s.score);
  }
  if (tgt.empty() || non.empty())
    throw ValidationError("EER needs at least one target and one nontarget trial");
  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());

  std::vector<double> all(tgt);
  all.insert(all.end(), non.begin(), non.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  // Candidate thresholds: below everything, score midpoints, above
  // everything. FRR rises and FAR falls along this sweep.
  std::vector<double> thresholds;
  thresholds.reserve(all.size() + 1);
  thresholds.push_back(all.front() - 1.0);
  for (size_t i = 0; i + 1 < all.size(); ++i)
    thresholds.push_back(0.5 * (all[i] + all[i + 1]));
  thresholds.push_back(all.back() + 1.0);

  const double nt = static_cast<double>(tgt.size());
  const double nn = static_cast<double>(non.size());
  auto frr = [&](double t) {
    // targets with score < t
    return static_cast<double>(std::lower_bound(tgt.begin(), tgt.end(), t) -
                               tgt.begin()) / nt;
  };
  auto far = [&](double t) {
    // nontargets with score >= t
    return static_cast<double>(non.end() -
                               std::lower_bound(non.begin(), non.end(), t)) / nn;
  };

  double prev_frr = frr(thresholds[0]), prev_far = far(thresholds[0]);
  if (prev_frr >= prev_far) return {100.0 * prev_frr, thresholds[0]};
  for (size_t i = 1; i < thresholds.size(); ++i) {
    double r = frr(thresholds[i]), a = far(thresholds[i]);
    if (r >= a) {
      // Crossing of the segment between the bracketing operating points.
      double denom = (r - prev_frr) - (a - prev_far);
      double alpha = (prev_far - prev_frr) / denom;
      double eer = prev_frr + alpha * (r - prev_frr);
      double thr = thresholds[i - 1] + alpha * (thresholds[i] - thresholds[i - 1]);
      return {100.0 * eer, thr};
    }
    prev_frr = r;
    prev_far = a;
  }
  // Unreachable: at the top threshold FRR = 1 and FAR = 0.
  throw NumericalError("EER sweep failed to cross");
}

TrialList MakeSyntheticTrials(const corpus::UtteranceManifest &manifest,
                              int num_target, int num_nontarget, uint64_t seed) {
  if (num_target < 0 || num_nontarget < 0)
    throw ValidationError("trial counts must be nonnegative");
  std::map<int, std::vector<size_t>> by_speaker;
  for (size_t i = 0; i < manifest.size(); ++i) {
    if (!manifest[i].speaker_label)
      throw ValidationError("synthetic trials need ground-truth labels; " +
                            manifest[i].utterance_id + " is unlabeled");
    by_speaker[*manifest[i].speaker_label].push_back(i);
  }
  std::vector<int> multi;  // speakers with at least two utterances
  for (const auto &[spk, utts] : by_speaker)
    if (utts.size() >= 2) multi.push_back(spk);
  if (by_speaker.size() < 2 || multi.size() < 2)
    throw ValidationError(
        "synthetic trials need at least 2 speakers with at least 2 utterances");

  const double n = static_cast<double>(manifest.size());
  double same_pairs = 0.0;
  for (const auto &[spk, utts] : by_speaker) {
    double m = static_cast<double>(utts.size());
    same_pairs += m * (m - 1) / 2;
  }
  if (num_target > same_pairs || num_nontarget > n * (n - 1) / 2 - same_pairs)
    throw ValidationError("corpus too small for the requested trial counts");

  Rng rng(DeriveSeed(seed, "trials"));
  std::set<std::pair<size_t, size_t>> used;
  TrialList trials;
  auto add = [&](size_t a, size_t b, bool target) {
    auto key = std::minmax(a, b);
    if (!used.insert(key).second) return false;
    trials.push_back({target, manifest[key.first].utterance_id,
                      manifest[key.second].utterance_id});
    return true;
  };
  std::uniform_int_distribution<size_t> pick_multi(0, multi.size() - 1);
  while (static_cast<int>(trials.size()) < num_target) {
    const auto &utts = by_speaker[multi[pick_multi(rng)]];
    std::uniform_int_distribution<size_t> pick(0, utts.size() - 1);
    size_t a = pick(rng), b = pick(rng);
    if (a != b) add(utts[a], utts[b], true);
  }
  std::uniform_int_distribution<size_t> pick_any(0, manifest.size() - 1);
  int made = 0;
  while (made < num_nontarget) {
    size_t a = pick_any(rng), b = pick_any(rng);
    if (*manifest[a].speaker_label == *manifest[b].speaker_label) continue;
    if (add(a, b, false)) ++made;
  }
  return trials;
}

void WriteTrials(const std::filesystem::path &path, const TrialList &trials) {
  std::ostringstream os;
  for (const Trial &t : trials)
    os << (t.is_target ? 1 : 0) << ' ' << t.enroll_id << ' ' << t.test_id << '\n';
  WriteFileAtomic(path, os.str());
}

TrialList ReadTrials(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("trial list not found: " + path.string());
  TrialList trials;
  auto lines = ReadLines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    std::string label, enroll, test, extra;
    if (!(is >> label >> enroll >> test) || (is >> extra))
      throw ParseError(path.string(), i + 1, "expected `label enroll test`");
    if (label != "0" && label != "1")
      throw ParseError(path.string(), i + 1, "label must be 0 or 1");
    trials.push_back({label == "1", enroll, test});
  }
  return trials;
}

void WriteScores(const std::filesystem::path &path, const ScoreSet &scores) {
  std::ostringstream os;
  os.precision(17);
  for (const Score &s : scores) os << (s.is_target ? 1 : 0) << '\t' << s.score << '\n';
  WriteFileAtomic(path, os.str());
}

ScoreSet ReadScores(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("score file not found: " + path.string());
  ScoreSet scores;
  auto lines = ReadLines(path);
  for (size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = SplitString(lines[i], '\t');
    if (f.size() != 2 || (f[0] != "0" && f[0] != "1"))
      throw ParseError(path.string(), i + 1, "expected `label<TAB>score`");
    double v = 0.0;
    try {
      size_t used = 0;
      v = std::stod(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception &) {
      throw ParseError(path.string(), i + 1, "bad score value");
    }
    scores.push_back({f[0] == "1", v});
  }
  return scores;
}

}  // namespace ipltk::eval
