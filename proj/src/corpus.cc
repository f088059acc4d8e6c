// src/corpus.cc

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

#include "ipltk/corpus.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ipltk/io.h"

namespace ipltk::corpus {

UtteranceManifest::UtteranceManifest(std::vector<ManifestEntry> entries,
                                     std::filesystem::path base_dir)
    : entries_(std::move(entries)), base_dir_(std::move(base_dir)) {
  for (size_t i = 0; i < entries_.size(); i++) {
    const ManifestEntry &e = entries_[i];
    if (e.utterance_id.empty())
      throw ValidationError("empty utterance id at entry " + std::to_string(i));
    if (e.speaker_label && *e.speaker_label < 0)
      throw ValidationError("negative label for " + e.utterance_id);
    if (!index_.emplace(e.utterance_id, i).second)
      throw ValidationError("duplicate utterance id " + e.utterance_id);
  }
}

std::filesystem::path UtteranceManifest::SourcePath(size_t i) const {
  std::filesystem::path p(entries_.at(i).source);
  return p.is_absolute() ? p : base_dir_ / p;
}

std::optional<size_t> UtteranceManifest::Find(const std::string &id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool UtteranceManifest::AllLabeled() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const ManifestEntry &e) { return e.speaker_label.has_value(); });
}

bool UtteranceManifest::AnyLabeled() const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [](const ManifestEntry &e) { return e.speaker_label.has_value(); });
}

namespace {

template <typename T>
bool ParseNumber(const std::string &s, T *out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

UtteranceManifest LoadManifest(const std::filesystem::path &path) {
  std::vector<std::string> lines = ReadLines(path);
  std::filesystem::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  std::map<std::string, size_t> seen;
  for (size_t i = 0; i < lines.size(); i++) {
    const size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    std::vector<std::string> f = SplitString(lines[i], '\t');
    if (f.size() != 4)
      throw ParseError(path.string(), line_no, "expected 4 tab-separated fields");
    ManifestEntry e;
    e.utterance_id = f[0];
    e.source = f[1];
    if (e.utterance_id.empty() || e.source.empty())
      throw ParseError(path.string(), line_no, "empty id or path");
    if (!ParseNumber(f[2], &e.num_samples))
      throw ParseError(path.string(), line_no, "bad num_samples '" + f[2] + "'");
    int label;
    if (!ParseNumber(f[3], &label))
      throw ParseError(path.string(), line_no, "bad label '" + f[3] + "'");
    if (label < -1)
      throw ParseError(path.string(), line_no, "negative label " + f[3]);
    if (label >= 0) e.speaker_label = label;
    if (!seen.emplace(e.utterance_id, line_no).second)
      throw ParseError(path.string(), line_no,
                       "duplicate utterance id '" + e.utterance_id + "'");
    std::filesystem::path src(e.source);
    if (!src.is_absolute()) src = base / src;
    if (!std::filesystem::is_regular_file(src))
      throw ParseError(path.string(), line_no, "missing file " + src.string());
    entries.push_back(std::move(e));
  }
  return UtteranceManifest(std::move(entries), base);
}

void SaveManifest(const UtteranceManifest &manifest,
                  const std::filesystem::path &path) {
  std::ostringstream out;
  for (const ManifestEntry &e : manifest.entries()) {
    out << e.utterance_id << '\t' << e.source << '\t' << e.num_samples << '\t'
        << (e.speaker_label ? *e.speaker_label : -1) << '\n';
  }
  WriteFileAtomic(path, out.str());
}

UtteranceManifest Relabel(const UtteranceManifest &manifest,
                          const std::map<std::string, int> &labels) {
  std::vector<ManifestEntry> entries = manifest.entries();
  std::vector<std::string> missing;
  for (ManifestEntry &e : entries) {
    auto it = labels.find(e.utterance_id);
    if (it == labels.end()) {
      missing.push_back(e.utterance_id);
      continue;
    }
    e.speaker_label = it->second;
  }
  if (!missing.empty()) {
    std::string msg = "labels missing for " + std::to_string(missing.size()) +
                      " utterance(s):";
    for (const std::string &id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  return UtteranceManifest(std::move(entries), manifest.base_dir());
}

UtteranceManifest StripLabels(const UtteranceManifest &manifest) {
  std::vector<ManifestEntry> entries = manifest.entries();
  for (ManifestEntry &e : entries) e.speaker_label.reset();
  return UtteranceManifest(std::move(entries), manifest.base_dir());
}

UtteranceManifest SelectLongest(const UtteranceManifest &manifest, size_t n) {
  if (n >= manifest.size()) return manifest;
  std::vector<size_t> order(manifest.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return manifest[a].num_samples > manifest[b].num_samples;
  });
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<ManifestEntry> entries;
  for (size_t i : order) entries.push_back(manifest[i]);
  return UtteranceManifest(std::move(entries), manifest.base_dir());
}

void SynthSpec::Validate() const {
  if (num_speakers < 1 || utterances_per_speaker < 1 || min_frames < 1 ||
      feature_dim < 1)
    throw ValidationError("synth spec counts must all be >= 1");
  if (max_frames < min_frames)
    throw ValidationError("synth spec needs max_frames >= min_frames");
  if (!(speaker_spread >= 0) || !(session_spread >= 0) || !(channel_spread >= 0))
    throw ValidationError("synth spreads must be nonnegative");
  if (!(frame_noise > 0)) throw ValidationError("frame_noise must be > 0");
  if (channel_rank < 0 || channel_rank > feature_dim)
    throw ValidationError("channel_rank must be in [0, feature_dim]");
  if (mode == SynthMode::kWaveform && !(sample_rate_hz > 0))
    throw ValidationError("sample_rate_hz must be > 0");
  double session_var = session_spread * session_spread * feature_dim +
                       channel_spread * channel_spread * channel_rank;
  if (session_var >= speaker_spread * speaker_spread * feature_dim)
    spdlog::warn("synth: session variability ({:.3g}) is not below speaker "
                 "variability ({:.3g})",
                 session_var, speaker_spread * speaker_spread * feature_dim);
}

int WaveformSamplesForFrames(int frames, const features::FeatureConfig &cfg) {
  return (frames - 1) * cfg.HopSamples() + cfg.WindowSamples();
}

namespace {

Matrix ChannelBasis(const SynthSpec &spec) {
  if (spec.channel_rank == 0) return Matrix(spec.feature_dim, 0);
  Rng rng(DeriveSeed(spec.world_seed, "channel-basis"));
  std::normal_distribution<double> normal;
  Matrix g(spec.feature_dim, spec.channel_rank);
  for (Eigen::Index j = 0; j < g.cols(); j++)
    for (Eigen::Index i = 0; i < g.rows(); i++) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(spec.feature_dim, spec.channel_rank);
}

std::string UtteranceId(const SynthSpec &spec, int speaker, int utt) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "-s%04d-u%04d", speaker, utt);
  return spec.id_prefix + buf;
}

std::vector<SynthUtterance> GenerateFeatures(const SynthSpec &spec) {
  Rng rng(spec.seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> length(spec.min_frames, spec.max_frames);
  const int dim = spec.feature_dim;
  Matrix channel = ChannelBasis(spec);
  std::vector<SynthUtterance> out;
  out.reserve(static_cast<size_t>(spec.num_speakers) * spec.utterances_per_speaker);
  for (int s = 0; s < spec.num_speakers; s++) {
    Vector mu(dim);
    for (int d = 0; d < dim; d++) mu(d) = spec.speaker_spread * normal(rng);
    for (int u = 0; u < spec.utterances_per_speaker; u++) {
      Vector offset(dim);
      for (int d = 0; d < dim; d++) offset(d) = spec.session_spread * normal(rng);
      Vector z(spec.channel_rank);
      for (int r = 0; r < spec.channel_rank; r++) z(r) = spec.channel_spread * normal(rng);
      Vector center = mu + offset + channel * z;
      int num_frames = length(rng);
      SynthUtterance utt;
      utt.utterance_id = UtteranceId(spec, s, u);
      utt.speaker = s;
      utt.frames.source_id = utt.utterance_id;
      utt.frames.data.resize(num_frames, dim);
      for (int t = 0; t < num_frames; t++)
        for (int d = 0; d < dim; d++)
          utt.frames.data(t, d) = static_cast<float>(center(d) + spec.frame_noise * normal(rng));
      out.push_back(std::move(utt));
    }
  }
  return out;
}

// Each speaker is a few sinusoidal partials at speaker-specific Mel-uniform
// frequencies and log-normal amplitudes; sessions perturb the amplitudes.
std::vector<SynthUtterance> GenerateWaveforms(const SynthSpec &spec) {
  constexpr int kPartials = 3;
  Rng rng(spec.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::uniform_int_distribution<int> length(spec.min_frames, spec.max_frames);
  features::FeatureConfig frame_cfg;
  frame_cfg.sample_rate_hz = spec.sample_rate_hz;
  const double mel_lo = features::HzToMel(150.0);
  const double mel_hi = features::HzToMel(std::min(3500.0, 0.45 * spec.sample_rate_hz));
  std::vector<SynthUtterance> out;
  for (int s = 0; s < spec.num_speakers; s++) {
    double freq[kPartials], amp[kPartials];
    for (int k = 0; k < kPartials; k++) {
      freq[k] = features::MelToHz(mel_lo + (mel_hi - mel_lo) * uniform(rng));
      amp[k] = std::exp(spec.speaker_spread * normal(rng));
    }
    for (int u = 0; u < spec.utterances_per_speaker; u++) {
      double session_amp[kPartials], phase[kPartials];
      for (int k = 0; k < kPartials; k++) {
        session_amp[k] = amp[k] * std::exp(spec.session_spread * normal(rng));
        phase[k] = 2.0 * std::numbers::pi * uniform(rng);
      }
      int n = WaveformSamplesForFrames(length(rng), frame_cfg);
      SynthUtterance utt;
      utt.utterance_id = UtteranceId(spec, s, u);
      utt.speaker = s;
      utt.wave.resize(n);
      for (int i = 0; i < n; i++) {
        double t = i / spec.sample_rate_hz, x = 0.0;
        for (int k = 0; k < kPartials; k++)
          x += session_amp[k] * std::sin(2.0 * std::numbers::pi * freq[k] * t + phase[k]);
        utt.wave[i] = static_cast<float>(x + spec.frame_noise * normal(rng));
      }
      out.push_back(std::move(utt));
    }
  }
  return out;
}

}  // namespace

std::vector<SynthUtterance> SynthGenerateInMemory(const SynthSpec &spec) {
  spec.Validate();
  return spec.mode == SynthMode::kFeatures ? GenerateFeatures(spec)
                                           : GenerateWaveforms(spec);
}

std::vector<features::FrameMatrix> SynthNoiseInMemory(const SynthSpec &world,
                                                      int num_recordings, int num_frames,
                                                      double frame_noise, uint64_t seed) {
  world.Validate();
  if (world.mode != SynthMode::kFeatures)
    throw ValidationError("synth: noise recordings are generated in features mode only");
  if (!(frame_noise >= 0.0)) throw ValidationError("synth: noise frame_noise must be >= 0");
  if (num_recordings < 1 || num_frames < 1)
    throw ValidationError("synth: noise corpus needs >= 1 recording of >= 1 frame");
  Rng rng(DeriveSeed(seed, "noise-corpus"));
  std::normal_distribution<double> normal;
  const int dim = world.feature_dim;
  Matrix channel = ChannelBasis(world);
  std::vector<features::FrameMatrix> out;
  for (int r = 0; r < num_recordings; r++) {
    Vector center(dim);
    for (int d = 0; d < dim; d++) center(d) = world.session_spread * normal(rng);
    Vector z(world.channel_rank);
    for (int k = 0; k < world.channel_rank; k++) z(k) = world.channel_spread * normal(rng);
    center += channel * z;
    features::FrameMatrix f;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "noise-%04d", r);
    f.source_id = buf;
    f.data.resize(num_frames, dim);
    for (int t = 0; t < num_frames; t++)
      for (int d = 0; d < dim; d++)
        f.data(t, d) = static_cast<float>(center(d) + frame_noise * normal(rng));
    out.push_back(std::move(f));
  }
  return out;
}

void SynthGenerateNoise(const SynthSpec &world, int num_recordings, int num_frames,
                        double frame_noise, uint64_t seed, const std::filesystem::path &out_dir) {
  auto recs = SynthNoiseInMemory(world, num_recordings, num_frames, frame_noise, seed);
  std::filesystem::create_directories(out_dir);
  for (const auto &f : recs)
    features::WriteFrameMatrix(out_dir / (f.source_id + ".fmx"), f);
}

UtteranceManifest SynthGenerate(const SynthSpec &spec,
                                const std::filesystem::path &out_dir) {
  std::vector<SynthUtterance> utts = SynthGenerateInMemory(spec);
  std::filesystem::create_directories(out_dir / "data");
  std::vector<ManifestEntry> entries;
  entries.reserve(utts.size());
  for (const SynthUtterance &u : utts) {
    ManifestEntry e;
    e.utterance_id = u.utterance_id;
    e.speaker_label = u.speaker;
    if (spec.mode == SynthMode::kFeatures) {
      e.source = "data/" + u.utterance_id + ".fmx";
      e.num_samples = static_cast<uint64_t>(u.frames.NumFrames());
      features::WriteFrameMatrix(out_dir / e.source, u.frames);
    } else {
      e.source = "data/" + u.utterance_id + ".wav1";
      e.num_samples = u.wave.size();
      features::WriteWave(out_dir / e.source, u.wave);
    }
    entries.push_back(std::move(e));
  }
  UtteranceManifest manifest(std::move(entries), out_dir);
  SaveManifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

}  // namespace ipltk::corpus
