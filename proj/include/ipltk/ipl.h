// ipltk/ipl.h

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

#ifndef IPLTK_IPL_H_
#define IPLTK_IPL_H_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ipltk/cluster.h"
#include "ipltk/config.h"
#include "ipltk/corpus.h"
#include "ipltk/encoder.h"
#include "ipltk/eval.h"

namespace ipltk::ipl {

namespace fs = std::filesystem;

// Names of the verification trial lists.
inline constexpr const char *kValidationList = "validation";
inline constexpr const char *kTestList = "test";

// Artifact locations. Shared artifacts (corpora, trial lists, i-vector
// models) live under the shared directory; per-run artifacts under the
// workspace:
//   <shared>/corpus/{train,eval}/manifest.tsv   synthetic corpora
//   <shared>/corpus/noise/noise-NNNN.fmx        synthetic noise corpus
//   <shared>/trials/{validation,test}.txt
//   <shared>/ivector/{ubm.gmm1,tv.tvm1,train.iva1,eval.iva1}
//   <workspace>/iter_<q>/{labels.tsv,encoder.enc1,record.json,...}
//   <workspace>/{state.json,matrix.csv,curves.csv}
class Workspace {
 public:
  explicit Workspace(const RunConfig &cfg);

  const fs::path &root() const { return root_; }
  const fs::path &shared() const { return shared_; }
  fs::path TrainManifest() const;
  fs::path EvalManifest() const;
  fs::path Trials(const std::string &list) const;
  fs::path NoiseDir() const { return shared_ / "corpus" / "noise"; }
  fs::path PrepStamp() const { return shared_ / "prep.json"; }
  fs::path UbmPath() const { return shared_ / "ivector" / "ubm.gmm1"; }
  fs::path TvPath() const { return shared_ / "ivector" / "tv.tvm1"; }
  fs::path IVectors(const std::string &which) const {
    return shared_ / "ivector" / (which + ".iva1");
  }
  fs::path IterDir(int q) const { return root_ / ("iter_" + std::to_string(q)); }
  fs::path Labels(int q) const { return IterDir(q) / "labels.tsv"; }
  fs::path Encoder(int q) const { return IterDir(q) / "encoder.enc1"; }
  fs::path Record(int q) const { return IterDir(q) / "record.json"; }
  fs::path Embeddings(int q, const std::string &which) const {
    return IterDir(q) / (which + "_emb.iva1");
  }
  fs::path State() const { return root_ / "state.json"; }
  fs::path MatrixCsv() const { return root_ / "matrix.csv"; }
  fs::path CurvesCsv() const { return root_ / "curves.csv"; }

 private:
  fs::path root_;
  fs::path shared_;
  fs::path train_manifest_, eval_manifest_;
  fs::path validation_list_, test_list_;
};

// ---- Stages. Each reads and writes only the documented artifacts, so a
// pipeline of individual CLI stages reproduces ipl-run bit for bit. ----

// Synthetic train/eval corpora and validation/test trial lists (skipped
// for parts supplied externally).
void SynthStage(const RunConfig &cfg);

// Features for every utterance of a manifest: stored FMX1 as is, WAV1
// through the given recipe.
std::vector<features::FrameMatrix> LoadCorpusFeatures(
    const corpus::UtteranceManifest &manifest, const features::FeatureConfig &cfg,
    int workers);

void TrainUbmStage(const RunConfig &cfg);
void TrainTvStage(const RunConfig &cfg);
// Length-normalized i-vectors of the train and eval corpora.
void ExtractIVectorsStage(const RunConfig &cfg);
// Runs every missing preparation stage (synthesis through i-vectors).
void PrepareShared(const RunConfig &cfg);

// Clusters the (length-normalized) vectors of an IVA1 archive with the
// configured method; the clustering seed depends on `iteration`. Writes
// `labels_out` (and a dendrogram dump next to it for two-stage runs).
cluster::ClusterAssignment ClusterStage(const RunConfig &cfg,
                                        const fs::path &embeddings,
                                        const fs::path &labels_out, int iteration);

struct TrainOutcome {
  int best_epoch = 0;  // 1-based
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  std::vector<double> epoch_validation_eer;
  int num_classes = 0;
};

// Trains a freshly initialized encoder (seeded by `iteration`) on
// augmented segments labeled from `labels`, keeps the epoch with the best
// validation EER, and writes it to `encoder_out`.
TrainOutcome TrainEncoderStage(const RunConfig &cfg, const fs::path &labels,
                               int iteration, const fs::path &encoder_out);

// Embeds every unaltered utterance of the train or eval corpus.
void EmbedStage(const RunConfig &cfg, const fs::path &encoder_path,
                const std::string &which, const fs::path &out);

// Cosine-scores a trial list against an embedding archive; optionally
// dumps the scores.
eval::EerResult EvaluateStage(const fs::path &embeddings, const fs::path &trials,
                              const fs::path &scores_out = {});

struct IterationRecord {
  int iteration = 0;
  std::map<std::string, double> eer;  // trial list -> EER %
  std::optional<double> purity;       // labels produced at this iteration
  std::optional<double> nmi;
  std::optional<double> train_label_purity;  // labels used for training
  int num_clusters = 0;
  int best_epoch = 0;  // 0 for the bootstrap record
  std::vector<double> epoch_loss;
  std::vector<double> epoch_validation_eer;
  std::map<std::string, std::string> checkpoints;  // relative to iter dir

  std::string ToJson() const;
  static IterationRecord FromJson(const std::string &text, const std::string &source);
};

// Initial pseudo-labels from g^0: i-vectors (or an initial encoder
// checkpoint) of the unaltered training utterances, clustered. Writes
// iter_0/{labels.tsv,record.json}; the record carries the baseline EERs.
IterationRecord BootstrapLabels(const RunConfig &cfg);

// Iteration q >= 1: fresh encoder trained on iter_{q-1}/labels.tsv,
// evaluated, and used to label iter_q/labels.tsv.
IterationRecord RunIteration(const RunConfig &cfg, int q);

struct RunOptions {
  // Stop (as if killed) after this iteration has been persisted; -1: never.
  int stop_after = -1;
  std::string setup_id = "run";
};

// Bootstrap plus cfg.ipl.num_iterations iterations, resuming after the
// last completed iteration recorded in state.json. Refuses to resume a
// workspace whose state is inconsistent. Returns records 0..N.
std::vector<IterationRecord> RunIpl(const RunConfig &cfg, const RunOptions &opts = {});

// One ablation axis, parsed from `name=v1,v2,...`. Names: clusters
// (values like 0.5x relative to the true speaker count, or absolute
// counts), aug (on|off), clustering (two_stage|kmeans_only), encoder
// (conv channel width), init (ivector|checkpoint path).
struct AblationAxis {
  std::string name;
  std::vector<std::string> values;
};
AblationAxis ParseAxis(const std::string &spec);

struct CellResult {
  std::string id;
  RunConfig cfg;
  bool ok = false;
  std::string error;
  std::vector<IterationRecord> records;
  int best_iteration = -1;  // lowest test EER over iterations >= 1
};

// Applies one axis value to a configuration (used for every cell).
void ApplyAxisValue(const std::string &axis, const std::string &value, RunConfig *cfg);

// Cross product of the axes, each cell run in <workspace>/cells/<id>/ with
// the preparation stages shared. A failing cell is recorded and skipped.
// Writes <workspace>/matrix.csv with one row per cell.
std::vector<CellResult> RunAblation(const RunConfig &base,
                                    const std::vector<AblationAxis> &axes);

// Ground-truth speaker labels of a manifest (diagnostics only).
std::map<std::string, int> GroundTruth(const corpus::UtteranceManifest &manifest);

}  // namespace ipltk::ipl

#endif  // IPLTK_IPL_H_
