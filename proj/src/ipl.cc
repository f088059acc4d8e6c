// src/ipl.cc

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

#include "ipltk/ipl.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "ipltk/augment.h"
#include "ipltk/gmm.h"
#include "ipltk/io.h"
#include "ipltk/ivector.h"
#include "json.hpp"

namespace ipltk::ipl {

using nlohmann::json;

namespace {

corpus::UtteranceManifest LoadRequiredManifest(const fs::path &path) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string(), "synth-gen");
  return corpus::LoadManifest(path);
}

corpus::UtteranceManifest CorpusManifest(const Workspace &ws, const std::string &which) {
  if (which == "train") return LoadRequiredManifest(ws.TrainManifest());
  if (which == "eval") return LoadRequiredManifest(ws.EvalManifest());
  throw ValidationError("corpus must be `train` or `eval`, got `" + which + "`");
}

// Subset of a manifest, in manifest order.
corpus::UtteranceManifest Filter(const corpus::UtteranceManifest &m,
                                 const std::function<bool(const corpus::ManifestEntry &)> &keep) {
  std::vector<corpus::ManifestEntry> entries;
  for (const auto &e : m.entries())
    if (keep(e)) entries.push_back(e);
  return corpus::UtteranceManifest(std::move(entries), m.base_dir());
}

std::vector<gmm::BaumWelchStats> CorpusStats(const gmm::Gmm &ubm,
                                             const std::vector<features::FrameMatrix> &feats,
                                             int workers) {
  gmm::GmmEvaluator ev(ubm);
  std::vector<gmm::BaumWelchStats> stats(feats.size());
  ParallelFor(feats.size(), workers,
              [&](size_t i) { stats[i] = gmm::AccumulateStats(ev, feats[i].data); });
  return stats;
}

std::map<std::string, Vector> ReadEmbeddingMap(const fs::path &path,
                                               const std::string &producer) {
  if (!fs::exists(path)) throw MissingArtifactError(path.string(), producer);
  std::map<std::string, Vector> out;
  for (auto &v : ivector::ReadIVectors(path)) out.emplace(v.utterance_id, std::move(v.w));
  return out;
}

json OptionalJson(const std::optional<double> &v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> OptionalFromJson(const json &j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::string MethodName(cluster::ClusterMethod m) {
  return m == cluster::ClusterMethod::kTwoStage ? "two_stage" : "kmeans_only";
}

std::string EncoderName(const encoder::EncoderArch &a) {
  std::string s = "conv";
  for (size_t i = 0; i < a.channels.size(); ++i)
    s += (i ? "-" : "") + std::to_string(a.channels[i]);
  return s + "_e" + std::to_string(a.embed_dim);
}

std::string FormatDouble(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

// Purity/NMI of a label file against ground truth, when available.
void LabelQuality(const fs::path &labels, const std::map<std::string, int> &truth,
                  std::optional<double> *purity, std::optional<double> *nmi) {
  if (truth.empty()) return;
  auto assignment = cluster::ReadAssignment(labels);
  if (assignment.size() != truth.size()) return;
  auto q = cluster::ClusterMetrics(assignment, truth);
  *purity = q.purity;
  if (nmi) *nmi = q.nmi;
}

std::string PrepHash(const RunConfig &cfg) {
  json j = json::parse(cfg.ToJson());
  json sub;
  for (const char *k : {"seed", "corpus", "trials", "ubm_features", "ubm", "tv"}) sub[k] = j[k];
  return sub.dump();
}

void WriteState(const Workspace &ws, const std::string &hash, int completed) {
  json s = {{"config_hash", hash}, {"completed_iteration", completed}};
  WriteFileAtomic(ws.State(), s.dump(2) + "\n");
}

[[noreturn]] void CorruptWorkspace(const Workspace &ws, const std::string &what) {
  throw Error("corrupted workspace state in " + ws.root().string() + ": " + what +
              ". Refusing to resume. To recover, delete " + ws.State().string() +
              " and every iter_* directory (or the whole workspace) and rerun; "
              "shared preparation artifacts in " + ws.shared().string() +
              " are reused.");
}

void WriteRunTables(const Workspace &ws, const RunConfig &cfg, const std::string &setup_id,
                    const std::vector<IterationRecord> &records);

}  // namespace

Workspace::Workspace(const RunConfig &cfg)
    : root_(cfg.workspace),
      shared_(cfg.SharedDir()),
      train_manifest_(cfg.corpus.train_manifest),
      eval_manifest_(cfg.corpus.eval_manifest),
      validation_list_(cfg.trials.validation_list),
      test_list_(cfg.trials.test_list) {}

fs::path Workspace::TrainManifest() const {
  return train_manifest_.empty() ? shared_ / "corpus" / "train" / "manifest.tsv"
                                 : train_manifest_;
}

fs::path Workspace::EvalManifest() const {
  return eval_manifest_.empty() ? shared_ / "corpus" / "eval" / "manifest.tsv"
                                : eval_manifest_;
}

fs::path Workspace::Trials(const std::string &list) const {
  if (list == kValidationList)
    return validation_list_.empty() ? shared_ / "trials" / "validation.txt" : validation_list_;
  if (list == kTestList)
    return test_list_.empty() ? shared_ / "trials" / "test.txt" : test_list_;
  throw ValidationError("unknown trial list `" + list + "`");
}

std::map<std::string, int> GroundTruth(const corpus::UtteranceManifest &manifest) {
  std::map<std::string, int> gt;
  for (const auto &e : manifest.entries())
    if (e.speaker_label) gt[e.utterance_id] = *e.speaker_label;
  if (gt.size() != manifest.size()) gt.clear();
  return gt;
}

static bool SynthNoiseExpected(const RunConfig &cfg) {
  return cfg.corpus.train_manifest.empty() && cfg.corpus.noise_recordings > 0 &&
         cfg.corpus.train.mode == corpus::SynthMode::kFeatures;
}

void SynthStage(const RunConfig &cfg) {
  Workspace ws(cfg);
  if (cfg.corpus.train_manifest.empty()) {
    spdlog::info("synth-gen: train corpus -> {}", ws.TrainManifest().parent_path().string());
    corpus::SynthGenerate(cfg.corpus.train, ws.TrainManifest().parent_path());
  }
  if (SynthNoiseExpected(cfg)) {
    spdlog::info("synth-gen: noise corpus -> {}", ws.NoiseDir().string());
    corpus::SynthGenerateNoise(cfg.corpus.train, cfg.corpus.noise_recordings,
                               cfg.corpus.noise_frames, cfg.corpus.noise_frame_noise,
                               cfg.corpus.noise_seed, ws.NoiseDir());
  }
  if (cfg.corpus.eval_manifest.empty()) {
    spdlog::info("synth-gen: eval corpus -> {}", ws.EvalManifest().parent_path().string());
    corpus::SynthGenerate(cfg.corpus.EvalSpec(), ws.EvalManifest().parent_path());
  }
  if (!cfg.trials.validation_list.empty() && !cfg.trials.test_list.empty()) return;

  // Validation and test lists come from disjoint eval speakers.
  auto eval_m = LoadRequiredManifest(ws.EvalManifest());
  std::set<int> speakers;
  for (const auto &e : eval_m.entries()) {
    if (!e.speaker_label)
      throw ValidationError("synthetic trial lists need a labeled eval manifest");
    speakers.insert(*e.speaker_label);
  }
  std::set<int> val_speakers;
  for (int s : speakers)
    if (static_cast<int>(val_speakers.size()) < cfg.corpus.eval_validation_speakers)
      val_speakers.insert(s);
  auto val_m = Filter(eval_m, [&](const auto &e) { return val_speakers.count(*e.speaker_label) > 0; });
  auto test_m = Filter(eval_m, [&](const auto &e) { return val_speakers.count(*e.speaker_label) == 0; });
  const uint64_t trial_seed = DeriveSeed(cfg.corpus.eval_seed, "trial-lists");
  if (cfg.trials.validation_list.empty())
    eval::WriteTrials(ws.Trials(kValidationList),
                      eval::MakeSyntheticTrials(val_m, cfg.trials.validation_target,
                                                cfg.trials.validation_nontarget,
                                                DeriveSeed(trial_seed, 1)));
  if (cfg.trials.test_list.empty())
    eval::WriteTrials(ws.Trials(kTestList),
                      eval::MakeSyntheticTrials(test_m, cfg.trials.test_target,
                                                cfg.trials.test_nontarget,
                                                DeriveSeed(trial_seed, 2)));
}

std::vector<features::FrameMatrix> LoadCorpusFeatures(
    const corpus::UtteranceManifest &manifest, const features::FeatureConfig &cfg,
    int workers) {
  std::vector<features::FrameMatrix> feats(manifest.size());
  ParallelFor(manifest.size(), workers, [&](size_t i) {
    feats[i] = features::LoadUtteranceFeatures(manifest.SourcePath(i), cfg);
    feats[i].source_id = manifest[i].utterance_id;
  });
  return feats;
}

void TrainUbmStage(const RunConfig &cfg) {
  Workspace ws(cfg);
  auto m = LoadRequiredManifest(ws.TrainManifest());
  auto feats = LoadCorpusFeatures(m, cfg.ubm_features, cfg.workers);
  Matrix sample = gmm::PooledSample(feats, static_cast<size_t>(cfg.ubm.init_sample_frames));
  gmm::Gmm g = gmm::GmmInitKMeans(sample, cfg.ubm.num_components, cfg.ubm.covariance,
                                  DeriveSeed(cfg.seed, "ubm-init"));
  gmm::EmOptions opts;
  opts.variance_floor_factor = cfg.ubm.variance_floor_factor;
  opts.min_count = cfg.ubm.min_count;
  opts.workers = cfg.workers;
  for (int it = 0; it < cfg.ubm.em_iterations; ++it) {
    gmm::EmStepResult r = gmm::GmmEmStep(g, feats, opts);
    spdlog::info("train-ubm: iteration {} avg loglik {:.6f} (reseeded {})", it + 1,
                 r.avg_loglik, r.reseeded);
    g = std::move(r.model);
  }
  gmm::WriteGmm(ws.UbmPath(), g);
}

void TrainTvStage(const RunConfig &cfg) {
  Workspace ws(cfg);
  if (!fs::exists(ws.UbmPath())) throw MissingArtifactError(ws.UbmPath().string(), "train-ubm");
  gmm::Gmm ubm = gmm::ReadGmm(ws.UbmPath());
  auto m = LoadRequiredManifest(ws.TrainManifest());
  if (cfg.tv.longest_utterances > 0)
    m = corpus::SelectLongest(m, static_cast<size_t>(cfg.tv.longest_utterances));
  auto feats = LoadCorpusFeatures(m, cfg.ubm_features, cfg.workers);
  auto stats = CorpusStats(ubm, feats, cfg.workers);
  spdlog::info("train-tv: {} utterances, rank {}", m.size(), cfg.tv.rank);
  ivector::TvModel tv =
      ivector::TvModel::RandomInit(ubm, cfg.tv.rank, DeriveSeed(cfg.seed, "tv-init"));
  for (int it = 0; it < cfg.tv.em_iterations; ++it) {
    ivector::TvEmResult r = ivector::TvEmStep(tv, stats, cfg.workers);
    spdlog::info("train-tv: iteration {} objective {:.6f}", it + 1, r.objective);
    tv = std::move(r.model);
  }
  ivector::WriteTvModel(ws.TvPath(), tv, ws.UbmPath());
}

void ExtractIVectorsStage(const RunConfig &cfg) {
  Workspace ws(cfg);
  if (!fs::exists(ws.TvPath())) throw MissingArtifactError(ws.TvPath().string(), "train-tv");
  ivector::TvModel tv = ivector::ReadTvModel(ws.TvPath());
  for (const std::string which : {"train", "eval"}) {
    auto m = CorpusManifest(ws, which);
    auto feats = LoadCorpusFeatures(m, cfg.ubm_features, cfg.workers);
    auto stats = CorpusStats(tv.ubm(), feats, cfg.workers);
    std::vector<ivector::IVector> vecs(m.size());
    ParallelFor(m.size(), cfg.workers, [&](size_t i) {
      vecs[i] = ivector::LengthNormalize(
          ivector::ExtractIVector(tv, stats[i], m[i].utterance_id));
    });
    ivector::WriteIVectors(ws.IVectors(which), vecs);
    spdlog::info("extract-ivectors: {} {} i-vectors", vecs.size(), which);
  }
}

void PrepareShared(const RunConfig &cfg) {
  Workspace ws(cfg);
  const std::string hash = PrepHash(cfg);
  if (fs::exists(ws.PrepStamp())) {
    std::string stored = ReadFileToString(ws.PrepStamp());
    if (stored != hash + "\n")
      throw ValidationError("shared directory " + ws.shared().string() +
                            " was prepared with a different corpus/UBM/TV configuration; "
                            "use a fresh workspace or delete it");
  }
  if (!fs::exists(ws.TrainManifest()) || !fs::exists(ws.EvalManifest()) ||
      !fs::exists(ws.Trials(kValidationList)) || !fs::exists(ws.Trials(kTestList)) ||
      (SynthNoiseExpected(cfg) && !fs::exists(ws.NoiseDir())))
    SynthStage(cfg);
  if (!fs::exists(ws.UbmPath())) TrainUbmStage(cfg);
  if (!fs::exists(ws.TvPath())) TrainTvStage(cfg);
  if (!fs::exists(ws.IVectors("train")) || !fs::exists(ws.IVectors("eval")))
    ExtractIVectorsStage(cfg);
  WriteFileAtomic(ws.PrepStamp(), hash + "\n");
}

cluster::ClusterAssignment ClusterStage(const RunConfig &cfg, const fs::path &embeddings,
                                        const fs::path &labels_out, int iteration) {
  if (!fs::exists(embeddings))
    throw MissingArtifactError(embeddings.string(), "extract-ivectors` or `ipltk embed");
  auto vecs = ivector::ReadIVectors(embeddings);
  if (vecs.empty()) throw ValidationError("no vectors in " + embeddings.string());
  const Eigen::Index r = vecs[0].w.size();
  Matrix x(static_cast<Eigen::Index>(vecs.size()), r);
  std::vector<std::string> ids;
  for (size_t i = 0; i < vecs.size(); ++i) {
    if (vecs[i].w.size() != r) throw ValidationError("inconsistent vector dims in archive");
    // Cosine geometry: cluster unit vectors.
    x.row(static_cast<Eigen::Index>(i)) =
        ivector::LengthNormalize(vecs[i]).w.transpose();
    ids.push_back(vecs[i].utterance_id);
  }
  cluster::KMeansOptions opts;
  opts.max_iters = cfg.cluster.kmeans_iterations;
  opts.restarts = cfg.cluster.kmeans_restarts;
  opts.seed = DeriveSeed(cfg.seed, "cluster-" + std::to_string(iteration));
  opts.workers = cfg.workers;
  cluster::ClusterAssignment a =
      cfg.cluster.method == cluster::ClusterMethod::kTwoStage
          ? cluster::TwoStageCluster(ids, x, cfg.cluster.k_coarse, cfg.cluster.k_final, opts)
          : cluster::KMeansCluster(ids, x, cfg.cluster.k_final, opts);
  cluster::WriteAssignment(labels_out, a.utterance_ids, a.labels);
  if (a.method == cluster::ClusterMethod::kTwoStage)
    cluster::WriteDendrogram(labels_out.parent_path() / "dendrogram.txt", a.dendrogram);
  spdlog::info("cluster: {} vectors -> {} clusters ({})", ids.size(), a.num_clusters,
               MethodName(a.method));
  return a;
}

TrainOutcome TrainEncoderStage(const RunConfig &cfg, const fs::path &labels,
                               int iteration, const fs::path &encoder_out) {
  Workspace ws(cfg);
  if (!fs::exists(labels)) throw MissingArtifactError(labels.string(), "cluster");
  const auto manifest = LoadRequiredManifest(ws.TrainManifest());
  // Training never sees ground truth: labels are stripped, then replaced.
  std::map<std::string, int> pseudo = cluster::ReadAssignment(labels);
  std::vector<int> raw;
  {
    auto relabeled = corpus::Relabel(corpus::StripLabels(manifest), pseudo);
    for (const auto &e : relabeled.entries()) raw.push_back(*e.speaker_label);
  }
  int num_classes = 0;
  std::vector<int> dense = cluster::Densify(raw, &num_classes);
  std::map<std::string, int> dense_map;
  for (size_t i = 0; i < manifest.size(); ++i) dense_map[manifest[i].utterance_id] = dense[i];
  const auto training = corpus::Relabel(corpus::StripLabels(manifest), dense_map);

  // Unaltered samples held in memory; waveforms are featurized per segment.
  const size_t n = training.size();
  std::vector<features::FrameMatrix> frames(n);
  std::vector<std::vector<double>> waves(n);
  std::vector<char> is_wave(n, 0);
  ParallelFor(n, cfg.workers, [&](size_t i) {
    fs::path src = training.SourcePath(i);
    if (features::IsWaveFile(src)) {
      is_wave[i] = 1;
      waves[i] = features::ReadWave(src);
    } else {
      frames[i] = features::ReadFrameMatrix(src);
      frames[i].source_id = training[i].utterance_id;
    }
  });
  const bool any_wave = std::any_of(is_wave.begin(), is_wave.end(), [](char c) { return c; });
  const int input_dim = is_wave[0] ? cfg.encoder_features.OutputDim()
                                   : static_cast<int>(frames[0].Dim());
  for (size_t i = 0; i < n; ++i)
    if (!is_wave[i] && frames[i].Dim() != input_dim)
      throw ValidationError("train-encoder: mixed feature dimensions in the corpus");
  if (any_wave && input_dim != cfg.encoder_features.OutputDim())
    throw ValidationError("train-encoder: corpus mixes FMX1 and WAV1 sources of different dims");

  encoder::EncoderArch arch = cfg.encoder;
  arch.input_dim = input_dim;
  arch.num_classes = num_classes;
  const double shift_ms = any_wave ? cfg.encoder_features.hop_ms : frames[0].frame_shift_ms;
  const size_t seg_frames = static_cast<size_t>(std::max<double>(
      arch.ReceptiveField(), std::round(cfg.train.segment_seconds * 1000.0 / shift_ms)));
  const size_t seg_samples =
      static_cast<size_t>(corpus::WaveformSamplesForFrames(static_cast<int>(seg_frames),
                                                           cfg.encoder_features));

  std::optional<augment::Augmenter> augmenter;
  if (cfg.ipl.augment_enabled) {
    augment::AugmentConfig ac = cfg.augment;
    if (ac.noise_dir.empty() && SynthNoiseExpected(cfg)) {
      if (!fs::exists(ws.NoiseDir())) throw MissingArtifactError(ws.NoiseDir().string(), "synth-gen");
      ac.noise_dir = ws.NoiseDir();
    }
    augmenter.emplace(ac, cfg.encoder_features.sample_rate_hz);
  }
  encoder::SegmentFn segment = [&](size_t i, Rng &rng) {
    if (is_wave[i]) {
      std::vector<double> w = augment::CropSegment(waves[i], seg_samples, rng);
      if (augmenter) w = augmenter->AugmentWave(w, rng);
      return features::ComputeFeatures(w, cfg.encoder_features, training[i].utterance_id);
    }
    features::FrameMatrix f = augment::CropSegment(frames[i], seg_frames, rng);
    if (augmenter) f = augmenter->AugmentFrames(f, rng);
    return f;
  };

  // Validation utterances (unaltered) for best-epoch selection.
  const fs::path val_path = ws.Trials(kValidationList);
  if (!fs::exists(val_path)) throw MissingArtifactError(val_path.string(), "synth-gen");
  const eval::TrialList val_trials = eval::ReadTrials(val_path);
  std::set<std::string> val_ids;
  for (const auto &t : val_trials) {
    val_ids.insert(t.enroll_id);
    val_ids.insert(t.test_id);
  }
  auto eval_m = LoadRequiredManifest(ws.EvalManifest());
  auto val_m = Filter(eval_m, [&](const auto &e) { return val_ids.count(e.utterance_id) > 0; });
  auto val_feats = LoadCorpusFeatures(val_m, cfg.encoder_features, cfg.workers);

  const std::string q = std::to_string(iteration);
  encoder::EncoderModel model = encoder::EncoderModel::Init(
      arch, DeriveSeed(cfg.seed, "encoder-" + q), cfg.train.margin, cfg.train.scale);
  if (any_wave) {
    model.FitInputNormalization(LoadCorpusFeatures(training, cfg.encoder_features, cfg.workers));
  } else {
    model.FitInputNormalization(frames);
  }
  encoder::AdamState state = encoder::AdamState::For(model);
  encoder::TrainConfig tc = cfg.train;
  tc.seed = DeriveSeed(cfg.seed, "train-" + q);

  TrainOutcome out;
  out.num_classes = num_classes;
  encoder::EncoderModel best_model = model;
  encoder::AdamState best_state = state;
  double best_eer = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    encoder::EpochResult er =
        encoder::TrainEpoch(&model, &state, training, segment, tc, epoch, cfg.workers);
    std::map<std::string, Vector> emb;
    std::vector<Vector> ev(val_feats.size());
    ParallelFor(val_feats.size(), cfg.workers,
                [&](size_t i) { ev[i] = encoder::Embed(model, val_feats[i]); });
    for (size_t i = 0; i < val_feats.size(); ++i) emb[val_m[i].utterance_id] = ev[i];
    double eer = eval::ComputeEer(eval::ScoreTrials(emb, val_trials)).eer_percent;
    spdlog::info("train-encoder: iter {} epoch {} loss {:.4f} acc {:.3f} val EER {:.2f}%",
                 iteration, epoch, er.mean_loss, er.accuracy, eer);
    out.epoch_loss.push_back(er.mean_loss);
    out.epoch_accuracy.push_back(er.accuracy);
    out.epoch_validation_eer.push_back(eer);
    if (eer < best_eer) {
      best_eer = eer;
      best_model = model;
      best_state = state;
      out.best_epoch = epoch;
    }
  }
  encoder::WriteEncoder(encoder_out, best_model, &best_state);
  return out;
}

void EmbedStage(const RunConfig &cfg, const fs::path &encoder_path,
                const std::string &which, const fs::path &out) {
  Workspace ws(cfg);
  encoder::EncoderModel model = encoder::ReadEncoder(encoder_path);
  auto m = CorpusManifest(ws, which);
  auto feats = LoadCorpusFeatures(m, cfg.encoder_features, cfg.workers);
  std::vector<ivector::IVector> vecs(m.size());
  ParallelFor(m.size(), cfg.workers, [&](size_t i) {
    vecs[i] = {m[i].utterance_id, encoder::Embed(model, feats[i]), false};
  });
  ivector::WriteIVectors(out, vecs);
}

eval::EerResult EvaluateStage(const fs::path &embeddings, const fs::path &trials,
                              const fs::path &scores_out) {
  auto emb = ReadEmbeddingMap(embeddings, "embed");
  eval::ScoreSet scores = eval::ScoreTrials(emb, eval::ReadTrials(trials));
  if (!scores_out.empty()) eval::WriteScores(scores_out, scores);
  return eval::ComputeEer(scores);
}

std::string IterationRecord::ToJson() const {
  json j;
  j["iteration"] = iteration;
  j["eer"] = eer;
  j["purity"] = OptionalJson(purity);
  j["nmi"] = OptionalJson(nmi);
  j["train_label_purity"] = OptionalJson(train_label_purity);
  j["num_clusters"] = num_clusters;
  j["best_epoch"] = best_epoch;
  j["epoch_loss"] = epoch_loss;
  j["epoch_validation_eer"] = epoch_validation_eer;
  j["checkpoints"] = checkpoints;
  return j.dump(2) + "\n";
}

IterationRecord IterationRecord::FromJson(const std::string &text, const std::string &source) {
  IterationRecord r;
  try {
    json j = json::parse(text);
    r.iteration = j.at("iteration").get<int>();
    r.eer = j.at("eer").get<std::map<std::string, double>>();
    r.purity = OptionalFromJson(j.at("purity"));
    r.nmi = OptionalFromJson(j.at("nmi"));
    r.train_label_purity = OptionalFromJson(j.at("train_label_purity"));
    r.num_clusters = j.at("num_clusters").get<int>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.epoch_validation_eer = j.at("epoch_validation_eer").get<std::vector<double>>();
    r.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
  } catch (const json::exception &e) {
    throw ParseError(source, 0, std::string("bad iteration record: ") + e.what());
  }
  return r;
}

IterationRecord BootstrapLabels(const RunConfig &cfg) {
  Workspace ws(cfg);
  fs::create_directories(ws.IterDir(0));
  fs::path train_emb, eval_emb;
  if (cfg.ipl.initial_model == "ivector") {
    train_emb = ws.IVectors("train");
    eval_emb = ws.IVectors("eval");
    for (const auto &p : {train_emb, eval_emb})
      if (!fs::exists(p)) throw MissingArtifactError(p.string(), "extract-ivectors");
  } else {
    if (!fs::exists(cfg.ipl.initial_model))
      throw MissingArtifactError(cfg.ipl.initial_model, "train-encoder");
    train_emb = ws.Embeddings(0, "train");
    eval_emb = ws.Embeddings(0, "eval");
    EmbedStage(cfg, cfg.ipl.initial_model, "train", train_emb);
    EmbedStage(cfg, cfg.ipl.initial_model, "eval", eval_emb);
  }
  cluster::ClusterAssignment a = ClusterStage(cfg, train_emb, ws.Labels(0), 0);

  IterationRecord rec;
  rec.iteration = 0;
  for (const std::string list : {kValidationList, kTestList})
    rec.eer[list] = EvaluateStage(eval_emb, ws.Trials(list)).eer_percent;
  auto truth = GroundTruth(LoadRequiredManifest(ws.TrainManifest()));
  LabelQuality(ws.Labels(0), truth, &rec.purity, &rec.nmi);
  rec.num_clusters = a.num_clusters;
  rec.checkpoints["labels"] = "labels.tsv";
  WriteFileAtomic(ws.Record(0), rec.ToJson());
  spdlog::info("bootstrap: baseline EER test {:.2f}% validation {:.2f}%", rec.eer[kTestList],
               rec.eer[kValidationList]);
  return rec;
}

IterationRecord RunIteration(const RunConfig &cfg, int q) {
  if (q < 1) throw ValidationError("run_iteration: q must be >= 1");
  Workspace ws(cfg);
  if (!fs::exists(ws.Labels(q - 1)))
    throw MissingArtifactError(ws.Labels(q - 1).string(), q == 1 ? "cluster" : "ipl-run");
  fs::create_directories(ws.IterDir(q));
  TrainOutcome t = TrainEncoderStage(cfg, ws.Labels(q - 1), q, ws.Encoder(q));
  EmbedStage(cfg, ws.Encoder(q), "train", ws.Embeddings(q, "train"));
  EmbedStage(cfg, ws.Encoder(q), "eval", ws.Embeddings(q, "eval"));

  IterationRecord rec;
  rec.iteration = q;
  for (const std::string list : {kValidationList, kTestList})
    rec.eer[list] = EvaluateStage(ws.Embeddings(q, "eval"), ws.Trials(list)).eer_percent;
  cluster::ClusterAssignment a =
      ClusterStage(cfg, ws.Embeddings(q, "train"), ws.Labels(q), q);
  auto truth = GroundTruth(LoadRequiredManifest(ws.TrainManifest()));
  LabelQuality(ws.Labels(q), truth, &rec.purity, &rec.nmi);
  LabelQuality(ws.Labels(q - 1), truth, &rec.train_label_purity, nullptr);
  rec.num_clusters = a.num_clusters;
  rec.best_epoch = t.best_epoch;
  rec.epoch_loss = t.epoch_loss;
  rec.epoch_validation_eer = t.epoch_validation_eer;
  rec.checkpoints = {{"encoder", "encoder.enc1"},
                     {"labels", "labels.tsv"},
                     {"train_embeddings", "train_emb.iva1"},
                     {"eval_embeddings", "eval_emb.iva1"}};
  WriteFileAtomic(ws.Record(q), rec.ToJson());
  spdlog::info("iteration {}: EER test {:.2f}% validation {:.2f}% (best epoch {})", q,
               rec.eer[kTestList], rec.eer[kValidationList], rec.best_epoch);
  return rec;
}

std::vector<IterationRecord> RunIpl(const RunConfig &cfg, const RunOptions &opts) {
  cfg.Validate();
  Workspace ws(cfg);
  const std::string hash = cfg.ResultHash();
  int completed = -1;
  if (fs::exists(ws.State())) {
    json st;
    try {
      st = json::parse(ReadFileToString(ws.State()));
      completed = st.at("completed_iteration").get<int>();
      if (st.at("config_hash").get<std::string>() != hash)
        throw ValidationError("workspace " + ws.root().string() +
                              " holds a run with a different configuration; use a "
                              "fresh workspace or delete this one");
    } catch (const json::exception &e) {
      CorruptWorkspace(ws, std::string("unreadable state.json (") + e.what() + ")");
    }
    for (int k = 0; k <= completed; ++k) {
      if (!fs::exists(ws.Labels(k))) CorruptWorkspace(ws, ws.Labels(k).string() + " is missing");
      if (k >= 1 && !fs::exists(ws.Encoder(k)))
        CorruptWorkspace(ws, ws.Encoder(k).string() + " is missing");
      if (!fs::exists(ws.Record(k))) CorruptWorkspace(ws, ws.Record(k).string() + " is missing");
      try {
        IterationRecord::FromJson(ReadFileToString(ws.Record(k)), ws.Record(k).string());
      } catch (const Error &e) {
        CorruptWorkspace(ws, e.what());
      }
    }
  } else if (fs::exists(ws.root())) {
    for (const auto &e : fs::directory_iterator(ws.root()))
      if (e.is_directory() && e.path().filename().string().rfind("iter_", 0) == 0)
        CorruptWorkspace(ws, "iteration directories exist but state.json is missing");
  }
  fs::create_directories(ws.root());
  PrepareShared(cfg);

  if (completed < 0) {
    BootstrapLabels(cfg);
    completed = 0;
    WriteState(ws, hash, completed);
  }
  for (int q = completed + 1; q <= cfg.ipl.num_iterations; ++q) {
    RunIteration(cfg, q);
    WriteState(ws, hash, q);
    if (opts.stop_after == q) {
      spdlog::warn("ipl-run: stopping after iteration {} as requested", q);
      std::vector<IterationRecord> partial;
      for (int k = 0; k <= q; ++k)
        partial.push_back(
            IterationRecord::FromJson(ReadFileToString(ws.Record(k)), ws.Record(k).string()));
      return partial;
    }
  }
  std::vector<IterationRecord> records;
  for (int k = 0; k <= cfg.ipl.num_iterations; ++k)
    records.push_back(
        IterationRecord::FromJson(ReadFileToString(ws.Record(k)), ws.Record(k).string()));
  WriteRunTables(ws, cfg, opts.setup_id, records);
  return records;
}

namespace {

int BestIteration(const std::vector<IterationRecord> &records) {
  int best = -1;
  double best_eer = std::numeric_limits<double>::infinity();
  for (const auto &r : records) {
    if (r.iteration < 1) continue;
    double e = r.eer.at(kTestList);
    if (e < best_eer) {
      best_eer = e;
      best = r.iteration;
    }
  }
  return best;
}

const char *kMatrixHeader =
    "setup_id,init_model,encoder,clustering,aug,num_clusters,best_iteration,"
    "eer_validation,eer_test,baseline_eer_test,status\n";

std::string MatrixRow(const std::string &id, const RunConfig &cfg,
                      const std::vector<IterationRecord> &records, bool ok) {
  std::ostringstream os;
  const std::string init = cfg.ipl.initial_model == "ivector"
                               ? "ivector"
                               : fs::path(cfg.ipl.initial_model).filename().string();
  os << id << ',' << init << ',' << EncoderName(cfg.encoder) << ','
     << MethodName(cfg.cluster.method) << ',' << (cfg.ipl.augment_enabled ? "on" : "off")
     << ',' << cfg.cluster.k_final << ',';
  int best = ok ? BestIteration(records) : -1;
  if (best >= 1) {
    const auto &r = records[static_cast<size_t>(best)];
    os << best << ',' << FormatDouble(r.eer.at(kValidationList)) << ','
       << FormatDouble(r.eer.at(kTestList)) << ','
       << FormatDouble(records[0].eer.at(kTestList)) << ",ok\n";
  } else {
    os << ",,,," << (ok ? "ok" : "failed") << '\n';
  }
  return os.str();
}

void WriteRunTables(const Workspace &ws, const RunConfig &cfg, const std::string &setup_id,
                    const std::vector<IterationRecord> &records) {
  WriteFileAtomic(ws.MatrixCsv(),
                  std::string(kMatrixHeader) + MatrixRow(setup_id, cfg, records, true));
  std::ostringstream curves;
  curves << "iteration,eer_validation,eer_test,purity,nmi,best_epoch\n";
  for (const auto &r : records) {
    curves << r.iteration << ',' << FormatDouble(r.eer.at(kValidationList)) << ','
           << FormatDouble(r.eer.at(kTestList)) << ','
           << (r.purity ? FormatDouble(*r.purity) : "") << ','
           << (r.nmi ? FormatDouble(*r.nmi) : "") << ',' << r.best_epoch << '\n';
  }
  WriteFileAtomic(ws.CurvesCsv(), curves.str());
}

}  // namespace

AblationAxis ParseAxis(const std::string &spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
    throw ValidationError("ablation axis must look like name=v1,v2: `" + spec + "`");
  AblationAxis axis;
  axis.name = spec.substr(0, eq);
  static const std::set<std::string> kNames = {"clusters", "aug", "clustering", "encoder",
                                                "init"};
  if (!kNames.count(axis.name))
    throw ValidationError("unknown ablation axis `" + axis.name +
                          "` (expected clusters, aug, clustering, encoder or init)");
  for (const auto &v : SplitString(spec.substr(eq + 1), ','))
    if (!v.empty()) axis.values.push_back(v);
  if (axis.values.empty()) throw ValidationError("ablation axis `" + axis.name + "` has no values");
  return axis;
}

void ApplyAxisValue(const std::string &axis, const std::string &value, RunConfig *cfg) {
  auto parse_positive = [&](const std::string &s) {
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    if (used != s.size() || !(v > 0.0))
      throw ValidationError("bad value `" + value + "` for ablation axis " + axis);
    return v;
  };
  if (axis == "clusters") {
    int k_final = 0;
    if (!value.empty() && value.back() == 'x') {
      double f = parse_positive(value.substr(0, value.size() - 1));
      int k_true = 0;
      if (cfg->corpus.train_manifest.empty()) {
        k_true = cfg->corpus.train.num_speakers;
      } else {
        auto truth = GroundTruth(corpus::LoadManifest(cfg->corpus.train_manifest));
        std::set<int> spk;
        for (const auto &[id, l] : truth) spk.insert(l);
        k_true = static_cast<int>(spk.size());
        if (k_true == 0)
          throw ValidationError("relative cluster counts need a labeled train manifest");
      }
      k_final = std::max(1, static_cast<int>(std::lround(f * k_true)));
    } else {
      k_final = static_cast<int>(parse_positive(value));
    }
    const double ratio = static_cast<double>(cfg->cluster.k_coarse) / cfg->cluster.k_final;
    cfg->cluster.k_final = k_final;
    cfg->cluster.k_coarse =
        std::max(k_final, static_cast<int>(std::lround(k_final * ratio)));
  } else if (axis == "aug") {
    if (value != "on" && value != "off")
      throw ValidationError("ablation axis aug takes on|off");
    cfg->ipl.augment_enabled = value == "on";
  } else if (axis == "clustering") {
    if (value == "two_stage") cfg->cluster.method = cluster::ClusterMethod::kTwoStage;
    else if (value == "kmeans_only") cfg->cluster.method = cluster::ClusterMethod::kKMeans;
    else throw ValidationError("ablation axis clustering takes two_stage|kmeans_only");
  } else if (axis == "encoder") {
    int width = static_cast<int>(parse_positive(value));
    for (int &c : cfg->encoder.channels) c = width;
  } else if (axis == "init") {
    cfg->ipl.initial_model = value;
  } else {
    throw ValidationError("unknown ablation axis `" + axis + "`");
  }
}

std::vector<CellResult> RunAblation(const RunConfig &base,
                                    const std::vector<AblationAxis> &axes) {
  base.Validate();
  RunConfig shared_cfg = base;
  shared_cfg.shared_dir = base.SharedDir();
  fs::create_directories(base.workspace);
  PrepareShared(shared_cfg);

  // Cross product in axis order, last axis varying fastest.
  std::vector<std::vector<std::pair<std::string, std::string>>> cells = {{}};
  for (const auto &axis : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto &c : cells)
      for (const auto &v : axis.values) {
        auto c2 = c;
        c2.emplace_back(axis.name, v);
        next.push_back(std::move(c2));
      }
    cells = std::move(next);
  }

  std::vector<CellResult> results;
  std::string table = kMatrixHeader;
  for (const auto &cell : cells) {
    CellResult res;
    for (const auto &[name, value] : cell) {
      std::string v = value;
      for (char &ch : v)
        if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
      res.id += (res.id.empty() ? "" : "_") + name + "-" + v;
    }
    if (res.id.empty()) res.id = "base";
    res.cfg = shared_cfg;
    try {
      for (const auto &[name, value] : cell) ApplyAxisValue(name, value, &res.cfg);
      res.cfg.workspace = base.workspace / "cells" / res.id;
      res.cfg.Validate();
      spdlog::info("ablate: cell {}", res.id);
      res.records = RunIpl(res.cfg, {.stop_after = -1, .setup_id = res.id});
      res.ok = true;
      res.best_iteration = BestIteration(res.records);
    } catch (const std::exception &e) {
      res.ok = false;
      res.error = e.what();
      spdlog::error("ablate: cell {} failed: {}", res.id, res.error);
    }
    table += MatrixRow(res.id, res.cfg, res.records, res.ok);
    results.push_back(std::move(res));
  }
  WriteFileAtomic(base.workspace / "matrix.csv", table);
  return results;
}

}  // namespace ipltk::ipl
