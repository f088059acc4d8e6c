// tools/ipltk_main.cc

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

// Command-line driver: every pipeline stage plus full IPL runs and
// ablation matrices. Exit codes: 0 success, 1 validation error, 2 runtime
// error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>

#include "CLI11.hpp"
#include "ipltk/config.h"
#include "ipltk/eval.h"
#include "ipltk/io.h"
#include "ipltk/ipl.h"
#include "ipltk/ivector.h"
#include "json.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace ipltk;

struct GlobalOptions {
  std::string config;
  int workers = -1;
  bool json = false;
  std::string log_level = "info";
  long long seed = -1;
};

RunConfig LoadConfig(const GlobalOptions &g) {
  if (g.config.empty()) throw ValidationError("--config is required for this command");
  RunConfig cfg = LoadRunConfig(g.config);
  if (g.workers >= 0) cfg.workers = g.workers;
  if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
  cfg.Validate();
  SetDefaultWorkers(cfg.workers);
  return cfg;
}

void Emit(const GlobalOptions &g, const json &j, const std::string &text) {
  if (g.json) {
    std::cout << j.dump(2) << std::endl;
  } else if (!text.empty()) {
    std::cout << text << std::endl;
  }
}

json RecordJson(const ipl::IterationRecord &r) { return json::parse(r.ToJson()); }

void AddCommon(CLI::App *cmd, GlobalOptions *g, bool needs_config = true) {
  auto *opt = cmd->add_option("--config", g->config, "Run configuration (JSON)");
  if (needs_config) opt->required();
  cmd->add_option("--workers", g->workers, "Worker threads (-1: from config)")
      ->capture_default_str();
  cmd->add_option("--seed", g->seed, "Global seed override (-1: from config)")
      ->capture_default_str();
  cmd->add_flag("--json", g->json, "Print machine-readable JSON on stdout");
  cmd->add_option("--log-level", g->log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char **argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("ipltk"));
  CLI::App app{"ipltk: unsupervised speaker embeddings by iterative pseudo-labeling"};
  app.require_subcommand(1);
  GlobalOptions g;

  // synth-gen
  auto *synth = app.add_subcommand("synth-gen", "Generate synthetic train/eval corpora and trial lists");
  AddCommon(synth, &g);

  // features
  std::string feat_input, feat_view = "ubm", feat_out;
  auto *feats = app.add_subcommand("features", "Materialize FMX1 features of a manifest");
  AddCommon(feats, &g);
  feats->add_option("--input", feat_input, "Input manifest")->required();
  feats->add_option("--view", feat_view, "Feature recipe: ubm (MFCC) or encoder (log-Mel)")
      ->check(CLI::IsMember({"ubm", "encoder"}))
      ->capture_default_str();
  feats->add_option("--out", feat_out, "Output directory")->required();

  auto *ubm = app.add_subcommand("train-ubm", "Train the GMM-UBM");
  AddCommon(ubm, &g);
  int longest = -1;
  auto *tv = app.add_subcommand("train-tv", "Train the total-variability matrix");
  AddCommon(tv, &g);
  tv->add_option("--longest", longest,
                 "Train on the N longest utterances (0: all; -1: from config)")
      ->capture_default_str();
  auto *ivec = app.add_subcommand("extract-ivectors", "Extract length-normalized i-vectors");
  AddCommon(ivec, &g);

  // cluster
  std::string cl_emb, cl_out;
  int cl_iter = 0, k_final = -1;
  std::string cl_method;
  auto *clus = app.add_subcommand("cluster", "Cluster embeddings into pseudo-labels");
  AddCommon(clus, &g);
  clus->add_option("--embeddings", cl_emb, "IVA1 archive (default: train i-vectors)");
  clus->add_option("--out", cl_out, "Labels file (default: <workspace>/iter_<q>/labels.tsv)");
  clus->add_option("--iteration", cl_iter, "Iteration index q (selects the clustering seed)")
      ->capture_default_str();
  clus->add_option("--k-final", k_final, "Final cluster count (-1: from config)")
      ->capture_default_str();
  clus->add_option("--method", cl_method, "two_stage or kmeans_only (default: from config)")
      ->check(CLI::IsMember({"two_stage", "kmeans_only"}));

  // train-encoder
  std::string te_labels, te_out;
  int te_iter = 1;
  bool no_augment = false;
  auto *tenc = app.add_subcommand("train-encoder", "Train an encoder on pseudo-labels");
  AddCommon(tenc, &g);
  tenc->add_option("--labels", te_labels, "Labels file (default: <workspace>/iter_<q-1>/labels.tsv)");
  tenc->add_option("--iteration", te_iter, "Iteration index q >= 1 (selects seeds)")
      ->capture_default_str();
  tenc->add_option("--out", te_out, "Checkpoint (default: <workspace>/iter_<q>/encoder.enc1)");
  tenc->add_flag("--no-augment", no_augment, "Disable augmentation");

  // embed
  std::string em_encoder, em_corpus = "train", em_out;
  auto *emb = app.add_subcommand("embed", "Embed unaltered utterances with an encoder");
  AddCommon(emb, &g);
  emb->add_option("--encoder", em_encoder, "ENC1 checkpoint")->required();
  emb->add_option("--corpus", em_corpus, "train or eval")
      ->check(CLI::IsMember({"train", "eval"}))
      ->capture_default_str();
  emb->add_option("--out", em_out, "Output IVA1 archive")->required();

  // evaluate
  std::string ev_emb, ev_trials, ev_scores_out, ev_scores_in;
  auto *evl = app.add_subcommand("evaluate", "Cosine scoring and EER");
  AddCommon(evl, &g, /*needs_config=*/false);
  evl->add_option("--embeddings", ev_emb, "IVA1 archive of embeddings");
  evl->add_option("--trials", ev_trials, "Trial list (label enroll test)");
  evl->add_option("--dump-scores", ev_scores_out, "Write label<TAB>score rows here");
  evl->add_option("--scores", ev_scores_in, "Compute the EER of an existing score file instead");

  // ipl-run
  int iterations = -1, stop_after = -1;
  auto *run = app.add_subcommand("ipl-run", "Bootstrap plus iterative pseudo-labeling");
  AddCommon(run, &g);
  run->add_option("--iterations", iterations, "Number of IPL iterations (-1: from config)")
      ->capture_default_str();
  run->add_option("--k-final", k_final, "Final cluster count (-1: from config)")
      ->capture_default_str();
  run->add_flag("--no-augment", no_augment, "Disable augmentation");
  run->add_option("--stop-after", stop_after,
                  "Stop after persisting this iteration (-1: run to completion)")
      ->capture_default_str();

  // ablate
  std::vector<std::string> axes;
  auto *abl = app.add_subcommand("ablate", "Run an ablation matrix");
  AddCommon(abl, &g);
  abl->add_option("--axis", axes,
                  "Axis name=v1,v2 (clusters, aug, clustering, encoder, init); repeatable");
  abl->add_option("--iterations", iterations, "Number of IPL iterations (-1: from config)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 1;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  auto apply_k_final = [&](RunConfig *cfg) {
    if (k_final < 0) return;
    ipl::ApplyAxisValue("clusters", std::to_string(k_final), cfg);
  };

  try {
    if (*synth) {
      RunConfig cfg = LoadConfig(g);
      ipl::SynthStage(cfg);
      ipl::Workspace ws(cfg);
      Emit(g, {{"status", "ok"},
               {"train_manifest", ws.TrainManifest().string()},
               {"eval_manifest", ws.EvalManifest().string()}},
           "wrote " + ws.TrainManifest().string() + " and " + ws.EvalManifest().string());
    } else if (*feats) {
      RunConfig cfg = LoadConfig(g);
      const auto &fc = feat_view == "ubm" ? cfg.ubm_features : cfg.encoder_features;
      auto m = corpus::LoadManifest(feat_input);
      auto fm = ipl::LoadCorpusFeatures(m, fc, cfg.workers);
      std::vector<corpus::ManifestEntry> entries;
      for (size_t i = 0; i < m.size(); ++i) {
        std::string rel = "data/" + m[i].utterance_id + ".fmx";
        features::WriteFrameMatrix(fs::path(feat_out) / rel, fm[i]);
        entries.push_back({m[i].utterance_id, rel,
                           static_cast<uint64_t>(fm[i].NumFrames()), m[i].speaker_label});
      }
      corpus::UtteranceManifest out(entries, feat_out);
      corpus::SaveManifest(out, fs::path(feat_out) / "manifest.tsv");
      Emit(g, {{"status", "ok"}, {"utterances", m.size()}},
           "wrote " + std::to_string(m.size()) + " feature files to " + feat_out);
    } else if (*ubm) {
      RunConfig cfg = LoadConfig(g);
      ipl::TrainUbmStage(cfg);
      Emit(g, {{"status", "ok"}, {"ubm", ipl::Workspace(cfg).UbmPath().string()}}, "");
    } else if (*tv) {
      RunConfig cfg = LoadConfig(g);
      if (longest >= 0) cfg.tv.longest_utterances = longest;
      ipl::TrainTvStage(cfg);
      Emit(g, {{"status", "ok"}, {"tv", ipl::Workspace(cfg).TvPath().string()}}, "");
    } else if (*ivec) {
      RunConfig cfg = LoadConfig(g);
      ipl::ExtractIVectorsStage(cfg);
      ipl::Workspace ws(cfg);
      Emit(g, {{"status", "ok"},
               {"train", ws.IVectors("train").string()},
               {"eval", ws.IVectors("eval").string()}},
           "");
    } else if (*clus) {
      RunConfig cfg = LoadConfig(g);
      apply_k_final(&cfg);
      if (!cl_method.empty()) ipl::ApplyAxisValue("clustering", cl_method, &cfg);
      cfg.Validate();
      ipl::Workspace ws(cfg);
      fs::path in = cl_emb.empty() ? ws.IVectors("train") : fs::path(cl_emb);
      fs::path out = cl_out.empty() ? ws.Labels(cl_iter) : fs::path(cl_out);
      auto a = ipl::ClusterStage(cfg, in, out, cl_iter);
      json j = {{"status", "ok"}, {"labels", out.string()}, {"num_clusters", a.num_clusters}};
      auto truth = ipl::GroundTruth(corpus::LoadManifest(ws.TrainManifest()));
      std::string text = std::to_string(a.num_clusters) + " clusters -> " + out.string();
      if (!truth.empty() && truth.size() == a.utterance_ids.size()) {
        auto q = cluster::ClusterMetrics(a.AsMap(), truth);
        j["purity"] = q.purity;
        j["nmi"] = q.nmi;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " (purity %.4f, NMI %.4f)", q.purity, q.nmi);
        text += buf;
      }
      Emit(g, j, text);
    } else if (*tenc) {
      RunConfig cfg = LoadConfig(g);
      if (no_augment) cfg.ipl.augment_enabled = false;
      if (te_iter < 1) throw ValidationError("--iteration must be >= 1");
      ipl::Workspace ws(cfg);
      fs::path labels = te_labels.empty() ? ws.Labels(te_iter - 1) : fs::path(te_labels);
      fs::path out = te_out.empty() ? ws.Encoder(te_iter) : fs::path(te_out);
      auto t = ipl::TrainEncoderStage(cfg, labels, te_iter, out);
      const double best = t.epoch_validation_eer[static_cast<size_t>(t.best_epoch - 1)];
      char buf[128];
      std::snprintf(buf, sizeof(buf), "best epoch %d, validation EER %.2f%% -> %s",
                    t.best_epoch, best, out.string().c_str());
      Emit(g, {{"status", "ok"},
               {"encoder", out.string()},
               {"best_epoch", t.best_epoch},
               {"num_classes", t.num_classes},
               {"epoch_loss", t.epoch_loss},
               {"epoch_validation_eer", t.epoch_validation_eer}},
           buf);
    } else if (*emb) {
      RunConfig cfg = LoadConfig(g);
      ipl::EmbedStage(cfg, em_encoder, em_corpus, em_out);
      Emit(g, {{"status", "ok"}, {"embeddings", em_out}}, "wrote " + em_out);
    } else if (*evl) {
      eval::ScoreSet scores;
      if (!ev_scores_in.empty()) {
        scores = eval::ReadScores(ev_scores_in);
      } else {
        if (ev_emb.empty() || ev_trials.empty())
          throw ValidationError("evaluate needs --scores, or --embeddings and --trials");
        std::map<std::string, Vector> m;
        if (!fs::exists(ev_emb)) throw MissingArtifactError(ev_emb, "embed");
        for (auto &v : ivector::ReadIVectors(ev_emb)) m.emplace(v.utterance_id, v.w);
        scores = eval::ScoreTrials(m, eval::ReadTrials(ev_trials));
        if (!ev_scores_out.empty()) eval::WriteScores(ev_scores_out, scores);
      }
      auto r = eval::ComputeEer(scores);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "EER %.2f%% (threshold %.6f, %zu trials)", r.eer_percent,
                    r.threshold, scores.size());
      Emit(g, {{"eer_percent", r.eer_percent}, {"threshold", r.threshold},
               {"num_trials", scores.size()}},
           buf);
    } else if (*run) {
      RunConfig cfg = LoadConfig(g);
      if (iterations >= 0) cfg.ipl.num_iterations = iterations;
      apply_k_final(&cfg);
      if (no_augment) cfg.ipl.augment_enabled = false;
      cfg.Validate();
      auto records = ipl::RunIpl(cfg, {.stop_after = stop_after, .setup_id = "run"});
      json j = {{"status", "ok"}, {"records", json::array()}};
      std::string text;
      for (const auto &r : records) {
        j["records"].push_back(RecordJson(r));
        char buf[128];
        std::snprintf(buf, sizeof(buf), "iteration %d: EER test %.2f%% validation %.2f%%\n",
                      r.iteration, r.eer.at(ipl::kTestList), r.eer.at(ipl::kValidationList));
        text += buf;
      }
      if (!text.empty()) text.pop_back();
      Emit(g, j, text);
    } else if (*abl) {
      RunConfig cfg = LoadConfig(g);
      if (iterations >= 0) cfg.ipl.num_iterations = iterations;
      std::vector<ipl::AblationAxis> parsed;
      for (const auto &a : axes) parsed.push_back(ipl::ParseAxis(a));
      auto cells = ipl::RunAblation(cfg, parsed);
      json j = {{"status", "ok"}, {"cells", json::array()}};
      std::string text = ReadFileToString(cfg.workspace / "matrix.csv");
      if (!text.empty() && text.back() == '\n') text.pop_back();
      for (const auto &c : cells) {
        json cj = {{"id", c.id}, {"ok", c.ok}, {"best_iteration", c.best_iteration}};
        if (!c.ok) cj["error"] = c.error;
        if (c.ok && c.best_iteration >= 1)
          cj["eer"] = c.records[static_cast<size_t>(c.best_iteration)].eer;
        j["cells"].push_back(cj);
      }
      Emit(g, j, text);
    }
  } catch (const ValidationError &e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception &e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
