// src/config.cc

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

#include "ipltk/config.h"

#include <cstdio>
#include <set>

#include "ipltk/io.h"
#include "json.hpp"

namespace ipltk {

using nlohmann::json;

namespace {

// A JSON object being consumed; keys not read by the time Finish() is
// called are rejected.
class Section {
 public:
  Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object())
      throw ValidationError("config: " + Name() + " must be an object");
  }

  template <typename T>
  void Get(const std::string &key, T *out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      *out = it->get<T>();
    } catch (const json::exception &) {
      throw ValidationError("config: " + Key(key) + " has the wrong type");
    }
  }

  void GetPath(const std::string &key, std::filesystem::path *out) {
    std::string s = out->string();
    Get(key, &s);
    *out = s;
  }

  void GetU64(const std::string &key, uint64_t *out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_unsigned())
      throw ValidationError("config: " + Key(key) + " must be a nonnegative integer");
    *out = it->get<uint64_t>();
  }

  void GetInt(const std::string &key, int *out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number_integer())
      throw ValidationError("config: " + Key(key) + " must be an integer");
    *out = it->get<int>();
  }

  void GetDouble(const std::string &key, double *out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_number()) throw ValidationError("config: " + Key(key) + " must be a number");
    *out = it->get<double>();
  }

  void GetBool(const std::string &key, bool *out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_boolean()) throw ValidationError("config: " + Key(key) + " must be a boolean");
    *out = it->get<bool>();
  }

  template <typename Fn>
  void Sub(const std::string &key, Fn fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, Key(key));
    fn(s);
    s.Finish();
  }

  std::string GetEnum(const std::string &key, const std::string &def,
                      const std::set<std::string> &allowed) {
    std::string v = def;
    Get(key, &v);
    if (!allowed.count(v)) {
      std::string msg = "config: " + Key(key) + " must be one of";
      for (const auto &a : allowed) msg += " " + a;
      throw ValidationError(msg);
    }
    return v;
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ValidationError("config: unknown key " + Key(it.key()));
  }

 private:
  std::string Name() const { return path_.empty() ? "top level" : path_; }
  std::string Key(const std::string &k) const {
    return path_.empty() ? k : path_ + "." + k;
  }
  const json &j_;
  std::string path_;
  std::set<std::string> seen_;
};

void ReadFeatureConfig(Section &s, features::FeatureConfig *f) {
  s.GetDouble("sample_rate_hz", &f->sample_rate_hz);
  s.GetDouble("window_ms", &f->window_ms);
  s.GetDouble("hop_ms", &f->hop_ms);
  s.GetInt("num_mel_filters", &f->num_mel_filters);
  s.GetInt("num_cepstra", &f->num_cepstra);
  s.GetBool("use_log_mel", &f->use_log_mel);
  s.GetInt("delta_order", &f->delta_order);
  s.GetInt("delta_window", &f->delta_window);
  s.GetDouble("preemphasis", &f->preemphasis);
  s.GetDouble("low_freq_hz", &f->low_freq_hz);
  s.GetDouble("high_freq_hz", &f->high_freq_hz);
  s.GetBool("apply_cmvn", &f->apply_cmvn);
}

json FeatureJson(const features::FeatureConfig &f) {
  return {{"sample_rate_hz", f.sample_rate_hz}, {"window_ms", f.window_ms},
          {"hop_ms", f.hop_ms},                 {"num_mel_filters", f.num_mel_filters},
          {"num_cepstra", f.num_cepstra},       {"use_log_mel", f.use_log_mel},
          {"delta_order", f.delta_order},       {"delta_window", f.delta_window},
          {"preemphasis", f.preemphasis},       {"low_freq_hz", f.low_freq_hz},
          {"high_freq_hz", f.high_freq_hz},     {"apply_cmvn", f.apply_cmvn}};
}

void ReadSynth(Section &s, corpus::SynthSpec *sp) {
  s.GetInt("num_speakers", &sp->num_speakers);
  s.GetInt("utterances_per_speaker", &sp->utterances_per_speaker);
  s.GetInt("min_frames", &sp->min_frames);
  s.GetInt("max_frames", &sp->max_frames);
  s.GetInt("feature_dim", &sp->feature_dim);
  s.GetDouble("speaker_spread", &sp->speaker_spread);
  s.GetDouble("session_spread", &sp->session_spread);
  s.GetDouble("frame_noise", &sp->frame_noise);
  s.GetU64("seed", &sp->seed);
  s.GetInt("channel_rank", &sp->channel_rank);
  s.GetDouble("channel_spread", &sp->channel_spread);
  s.GetU64("world_seed", &sp->world_seed);
  s.Get("id_prefix", &sp->id_prefix);
  std::string mode = s.GetEnum(
      "mode", sp->mode == corpus::SynthMode::kFeatures ? "features" : "waveform",
      {"features", "waveform"});
  sp->mode = mode == "features" ? corpus::SynthMode::kFeatures : corpus::SynthMode::kWaveform;
  s.GetDouble("sample_rate_hz", &sp->sample_rate_hz);
}

std::string HexFnv(const std::string &s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

corpus::SynthSpec CorpusConfig::EvalSpec() const {
  corpus::SynthSpec s = train;
  s.num_speakers = eval_num_speakers;
  s.utterances_per_speaker = eval_utterances_per_speaker;
  s.seed = eval_seed;
  s.id_prefix = train.id_prefix + "eval";
  return s;
}

RunConfig::RunConfig() {
  corpus.train.channel_rank = 4;
  corpus.train.channel_spread = 4.0;
  ubm_features = features::MfccConfig();
  encoder_features = features::LogMelConfig(40);
  train.learning_rate = 0.004;
  train.warmup_steps = 64;
  train.epochs = 30;
  train.segment_seconds = 1.5;
}

void RunConfig::Validate() const {
  if (workers < 0) throw ValidationError("config: workers must be >= 0");
  if (workspace.empty()) throw ValidationError("config: workspace must be set");
  if (corpus.train_manifest.empty()) {
    corpus.train.Validate();
  }
  if (corpus.eval_manifest.empty()) {
    corpus.EvalSpec().Validate();
    if (corpus.noise_recordings < 0 || corpus.noise_frames < 1 ||
        !(corpus.noise_frame_noise >= 0))
      throw ValidationError("corpus.noise_recordings must be >= 0, noise_frames >= 1, noise_frame_noise >= 0");
    if (corpus.eval_validation_speakers < 2 ||
        corpus.eval_num_speakers - corpus.eval_validation_speakers < 2)
      throw ValidationError(
          "config: eval corpus needs >= 2 validation and >= 2 test speakers");
  }
  for (int n : {trials.validation_target, trials.validation_nontarget,
                trials.test_target, trials.test_nontarget})
    if (n < 1) throw ValidationError("config: trial counts must be >= 1");
  ubm_features.Validate();
  encoder_features.Validate();
  if (ubm.num_components < 1) throw ValidationError("config: ubm.num_components must be >= 1");
  if (ubm.em_iterations < 0) throw ValidationError("config: ubm.em_iterations must be >= 0");
  if (ubm.init_sample_frames < ubm.num_components)
    throw ValidationError("config: ubm.init_sample_frames must be >= num_components");
  if (!(ubm.variance_floor_factor > 0.0))
    throw ValidationError("config: ubm.variance_floor_factor must be > 0");
  if (tv.rank < 1) throw ValidationError("config: tv.rank must be >= 1");
  if (tv.longest_utterances < 0)
    throw ValidationError("config: tv.longest_utterances must be >= 0");
  if (tv.em_iterations < 0) throw ValidationError("config: tv.em_iterations must be >= 0");
  if (cluster.k_final < 1) throw ValidationError("config: cluster.k_final must be >= 1");
  if (cluster.method == cluster::ClusterMethod::kTwoStage &&
      cluster.k_coarse < cluster.k_final)
    throw ValidationError("config: cluster.k_final must be <= cluster.k_coarse");
  if (cluster.kmeans_iterations < 1 || cluster.kmeans_restarts < 1)
    throw ValidationError("config: kmeans iterations and restarts must be >= 1");
  encoder::EncoderArch arch = encoder;
  arch.input_dim = 1;
  arch.num_classes = 1;
  arch.Validate();
  train.Validate();
  augment.Validate();
  if (ipl.num_iterations < 1) throw ValidationError("config: ipl.num_iterations must be >= 1");
  if (ipl.initial_model != "ivector" && !std::filesystem::exists(ipl.initial_model))
    throw ValidationError("config: ipl.initial_model must be \"ivector\" or an existing "
                          "encoder checkpoint");
}

std::string RunConfig::ToJson() const {
  const auto &sp = corpus.train;
  json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["workspace"] = workspace.string();
  j["shared_dir"] = shared_dir.string();
  j["corpus"] = {
      {"synth",
       {{"num_speakers", sp.num_speakers},
        {"utterances_per_speaker", sp.utterances_per_speaker},
        {"min_frames", sp.min_frames},
        {"max_frames", sp.max_frames},
        {"feature_dim", sp.feature_dim},
        {"speaker_spread", sp.speaker_spread},
        {"session_spread", sp.session_spread},
        {"frame_noise", sp.frame_noise},
        {"seed", sp.seed},
        {"channel_rank", sp.channel_rank},
        {"channel_spread", sp.channel_spread},
        {"world_seed", sp.world_seed},
        {"id_prefix", sp.id_prefix},
        {"mode", sp.mode == corpus::SynthMode::kFeatures ? "features" : "waveform"},
        {"sample_rate_hz", sp.sample_rate_hz}}},
      {"eval_num_speakers", corpus.eval_num_speakers},
      {"eval_utterances_per_speaker", corpus.eval_utterances_per_speaker},
      {"eval_seed", corpus.eval_seed},
      {"eval_validation_speakers", corpus.eval_validation_speakers},
      {"noise_recordings", corpus.noise_recordings},
      {"noise_frames", corpus.noise_frames},
      {"noise_frame_noise", corpus.noise_frame_noise},
      {"noise_seed", corpus.noise_seed},
      {"train_manifest", corpus.train_manifest.string()},
      {"eval_manifest", corpus.eval_manifest.string()}};
  j["trials"] = {{"validation_target", trials.validation_target},
                 {"validation_nontarget", trials.validation_nontarget},
                 {"test_target", trials.test_target},
                 {"test_nontarget", trials.test_nontarget},
                 {"validation_list", trials.validation_list.string()},
                 {"test_list", trials.test_list.string()}};
  j["ubm_features"] = FeatureJson(ubm_features);
  j["encoder_features"] = FeatureJson(encoder_features);
  j["ubm"] = {{"num_components", ubm.num_components},
              {"covariance", ubm.covariance == gmm::CovarianceType::kFull ? "full" : "diagonal"},
              {"em_iterations", ubm.em_iterations},
              {"init_sample_frames", ubm.init_sample_frames},
              {"variance_floor_factor", ubm.variance_floor_factor},
              {"min_count", ubm.min_count}};
  j["tv"] = {{"rank", tv.rank},
             {"em_iterations", tv.em_iterations},
             {"longest_utterances", tv.longest_utterances}};
  j["cluster"] = {{"k_coarse", cluster.k_coarse},
                  {"k_final", cluster.k_final},
                  {"method", cluster.method == cluster::ClusterMethod::kTwoStage
                                 ? "two_stage" : "kmeans_only"},
                  {"kmeans_iterations", cluster.kmeans_iterations},
                  {"kmeans_restarts", cluster.kmeans_restarts}};
  j["encoder"] = {{"channels", encoder.channels},
                  {"dilations", encoder.dilations},
                  {"kernel", encoder.kernel},
                  {"embed_dim", encoder.embed_dim},
                  {"aggregate_layers", encoder.aggregate_layers}};
  j["train"] = {{"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"weight_decay", train.weight_decay},
                {"warmup_steps", train.warmup_steps},
                {"epochs", train.epochs},
                {"margin", train.margin},
                {"scale", train.scale},
                {"segment_seconds", train.segment_seconds}};
  j["augment"] = {{"snr_low_db", augment.snr_low_db},
                  {"snr_high_db", augment.snr_high_db},
                  {"noise_dir", augment.noise_dir.string()},
                  {"rir_dir", augment.rir_dir.string()},
                  {"apply_noise_prob", augment.apply_noise_prob},
                  {"apply_rir_prob", augment.apply_rir_prob},
                  {"rir_length_ms", augment.rir_length_ms},
                  {"rir_decay_ms", augment.rir_decay_ms}};
  j["ipl"] = {{"num_iterations", ipl.num_iterations},
              {"initial_model", ipl.initial_model},
              {"augment_enabled", ipl.augment_enabled}};
  return j.dump(2);
}

std::string RunConfig::ResultHash() const {
  json j = json::parse(ToJson());
  j.erase("workers");
  j.erase("workspace");
  j.erase("shared_dir");
  j["ipl"].erase("num_iterations");
  return HexFnv(j.dump());
}

RunConfig ParseRunConfig(const std::string &json_text, const std::string &source) {
  json j;
  try {
    j = json::parse(json_text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error &e) {
    throw ValidationError("config: " + source + ": " + e.what());
  }
  RunConfig c;
  Section top(j, "");
  top.GetU64("seed", &c.seed);
  top.GetInt("workers", &c.workers);
  top.GetPath("workspace", &c.workspace);
  top.GetPath("shared_dir", &c.shared_dir);
  top.Sub("corpus", [&](Section &s) {
    s.Sub("synth", [&](Section &t) { ReadSynth(t, &c.corpus.train); });
    s.GetInt("eval_num_speakers", &c.corpus.eval_num_speakers);
    s.GetInt("eval_utterances_per_speaker", &c.corpus.eval_utterances_per_speaker);
    s.GetU64("eval_seed", &c.corpus.eval_seed);
    s.GetInt("eval_validation_speakers", &c.corpus.eval_validation_speakers);
    s.GetInt("noise_recordings", &c.corpus.noise_recordings);
    s.GetInt("noise_frames", &c.corpus.noise_frames);
    s.GetDouble("noise_frame_noise", &c.corpus.noise_frame_noise);
    s.GetU64("noise_seed", &c.corpus.noise_seed);
    s.GetPath("train_manifest", &c.corpus.train_manifest);
    s.GetPath("eval_manifest", &c.corpus.eval_manifest);
  });
  top.Sub("trials", [&](Section &s) {
    s.GetInt("validation_target", &c.trials.validation_target);
    s.GetInt("validation_nontarget", &c.trials.validation_nontarget);
    s.GetInt("test_target", &c.trials.test_target);
    s.GetInt("test_nontarget", &c.trials.test_nontarget);
    s.GetPath("validation_list", &c.trials.validation_list);
    s.GetPath("test_list", &c.trials.test_list);
  });
  top.Sub("ubm_features", [&](Section &s) { ReadFeatureConfig(s, &c.ubm_features); });
  top.Sub("encoder_features", [&](Section &s) { ReadFeatureConfig(s, &c.encoder_features); });
  top.Sub("ubm", [&](Section &s) {
    s.GetInt("num_components", &c.ubm.num_components);
    std::string cov = s.GetEnum(
        "covariance", c.ubm.covariance == gmm::CovarianceType::kFull ? "full" : "diagonal",
        {"full", "diagonal"});
    c.ubm.covariance = cov == "full" ? gmm::CovarianceType::kFull : gmm::CovarianceType::kDiagonal;
    s.GetInt("em_iterations", &c.ubm.em_iterations);
    s.GetInt("init_sample_frames", &c.ubm.init_sample_frames);
    s.GetDouble("variance_floor_factor", &c.ubm.variance_floor_factor);
    s.GetDouble("min_count", &c.ubm.min_count);
  });
  top.Sub("tv", [&](Section &s) {
    s.GetInt("rank", &c.tv.rank);
    s.GetInt("em_iterations", &c.tv.em_iterations);
    s.GetInt("longest_utterances", &c.tv.longest_utterances);
  });
  top.Sub("cluster", [&](Section &s) {
    s.GetInt("k_coarse", &c.cluster.k_coarse);
    s.GetInt("k_final", &c.cluster.k_final);
    std::string m = s.GetEnum(
        "method",
        c.cluster.method == cluster::ClusterMethod::kTwoStage ? "two_stage" : "kmeans_only",
        {"two_stage", "kmeans_only"});
    c.cluster.method =
        m == "two_stage" ? cluster::ClusterMethod::kTwoStage : cluster::ClusterMethod::kKMeans;
    s.GetInt("kmeans_iterations", &c.cluster.kmeans_iterations);
    s.GetInt("kmeans_restarts", &c.cluster.kmeans_restarts);
  });
  top.Sub("encoder", [&](Section &s) {
    s.Get("channels", &c.encoder.channels);
    s.Get("dilations", &c.encoder.dilations);
    s.GetInt("kernel", &c.encoder.kernel);
    s.GetInt("embed_dim", &c.encoder.embed_dim);
    s.GetBool("aggregate_layers", &c.encoder.aggregate_layers);
  });
  top.Sub("train", [&](Section &s) {
    s.GetInt("batch_size", &c.train.batch_size);
    s.GetDouble("learning_rate", &c.train.learning_rate);
    s.GetDouble("weight_decay", &c.train.weight_decay);
    s.GetInt("warmup_steps", &c.train.warmup_steps);
    s.GetInt("epochs", &c.train.epochs);
    s.GetDouble("margin", &c.train.margin);
    s.GetDouble("scale", &c.train.scale);
    s.GetDouble("segment_seconds", &c.train.segment_seconds);
  });
  top.Sub("augment", [&](Section &s) {
    s.GetDouble("snr_low_db", &c.augment.snr_low_db);
    s.GetDouble("snr_high_db", &c.augment.snr_high_db);
    s.GetPath("noise_dir", &c.augment.noise_dir);
    s.GetPath("rir_dir", &c.augment.rir_dir);
    s.GetDouble("apply_noise_prob", &c.augment.apply_noise_prob);
    s.GetDouble("apply_rir_prob", &c.augment.apply_rir_prob);
    s.GetDouble("rir_length_ms", &c.augment.rir_length_ms);
    s.GetDouble("rir_decay_ms", &c.augment.rir_decay_ms);
  });
  top.Sub("ipl", [&](Section &s) {
    s.GetInt("num_iterations", &c.ipl.num_iterations);
    s.Get("initial_model", &c.ipl.initial_model);
    s.GetBool("augment_enabled", &c.ipl.augment_enabled);
  });
  top.Finish();
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path &path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("config file not found: " + path.string());
  return ParseRunConfig(ReadFileToString(path), path.string());
}

}  // namespace ipltk
