// tests/acceptance.cc

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

// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any hard criterion fails. Usage: acceptance [work_dir]
// (default ./acceptance_work, wiped at start).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "cluster_oracles.h"
#include "encoder_oracles.h"
#include "eval_oracles.h"
#include "ipltk/augment.h"
#include "ipltk/cluster.h"
#include "ipltk/config.h"
#include "ipltk/encoder.h"
#include "ipltk/eval.h"
#include "ipltk/gmm.h"
#include "ipltk/io.h"
#include "ipltk/ipl.h"
#include "ipltk/ivector.h"
#include "ivector_oracles.h"
#include "test_util.h"

namespace ipltk {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using testing::RandomMatrix;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

std::string Fmt(const char *format, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

class Report {
 public:
  void Line(const std::string &id, const std::string &name, bool pass,
            const std::string &detail) {
    std::printf("%s %-3s %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failed_;
  }
  // Runs `body`; an exception is a failure of that criterion.
  void Guard(const std::string &id, const std::string &name,
             const std::function<void()> &body) {
    try {
      body();
    } catch (const std::exception &e) {
      Line(id, name, false, std::string("exception: ") + e.what());
    }
  }
  int failed() const { return failed_; }

 private:
  int failed_ = 0;
};

// ---- 1: EM monotonicity ---------------------------------------------------
void EmMonotonicity(Report *rep) {
  auto t0 = Clock::now();
  double worst_drop = 0;
  int runs = 0;
  for (auto type : {gmm::CovarianceType::kFull, gmm::CovarianceType::kDiagonal}) {
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      auto data = testing::Blobs(rng, 10, 60, 3, 4);
      gmm::Gmm g = gmm::GmmInitKMeans(gmm::PooledSample(data, 600), 4, type, seed);
      double prev = -std::numeric_limits<double>::infinity();
      for (int it = 0; it < 15; ++it) {
        gmm::EmStepResult r = gmm::GmmEmStep(g, data);
        worst_drop = std::max(worst_drop, prev - r.avg_loglik);
        prev = r.avg_loglik;
        g = std::move(r.model);
      }
      ++runs;
    }
  }
  double secs = Seconds(t0);
  rep->Line("1", "EM monotonicity", worst_drop <= 1e-8 && secs < 30.0,
            Fmt("%g runs x 15 iterations (full+diagonal), largest decrease %.3g (tol 1e-8), "
                "%.1f s (limit 30 s)",
                runs, std::max(0.0, worst_drop), secs));
}

// ---- 2: TV subspace recovery ------------------------------------------------
void TvRecovery(Report *rep) {
  auto t0 = Clock::now();
  Rng rng(5);
  testing::PlantedTv planted = testing::MakePlantedTv(4, 4, 2, 500, 60, rng);
  ivector::TvModel tv = ivector::TvModel::RandomInit(planted.ubm, 2, 17);
  double prev = -std::numeric_limits<double>::infinity(), worst_rel_drop = 0;
  for (int it = 0; it < 20; ++it) {
    ivector::TvEmResult r = ivector::TvEmStep(tv, planted.stats);
    if (std::isfinite(prev))
      worst_rel_drop = std::max(worst_rel_drop, (prev - r.objective) / std::abs(prev));
    prev = r.objective;
    tv = std::move(r.model);
  }
  double max_angle = testing::PrincipalAngles(tv.Stacked(), planted.t_true).maxCoeff();
  double secs = Seconds(t0);
  rep->Line("2", "TV subspace recovery",
            max_angle < 0.1 && worst_rel_drop <= 1e-6 && secs < 60.0,
            Fmt("C=4 D=4 R=2, 500 utterances, 20 EM steps: max principal angle %.4f rad "
                "(limit 0.1), largest relative objective decrease %.3g (tol 1e-6), %.1f s",
                max_angle, std::max(0.0, worst_rel_drop), secs));
}

// ---- 3: i-vector posterior oracle ---------------------------------------------
void PosteriorOracle(Report *rep) {
  double worst = 0;
  const int cases = 12;
  for (uint64_t seed = 1; seed <= cases; ++seed) {
    Rng rng(seed);
    ivector::TvModel tv = testing::RandomTv(2 + seed % 2, 2, 2, rng);
    gmm::BaumWelchStats s = testing::RandomStats(tv, rng);
    Vector mean = ivector::TvPosterior(tv, s).mean;
    worst = std::max(worst, (mean - testing::MapOracle(tv, s)).cwiseAbs().maxCoeff());
  }
  rep->Line("3", "i-vector posterior oracle", worst < 1e-6,
            Fmt("%g random instances, max |mean - numerical MAP| %.3g (tol 1e-6)", cases, worst));
}

// ---- 4: gradient correctness ------------------------------------------------
void Gradients(Report *rep) {
  using namespace encoder;
  const double h = 1e-5;
  double worst = 0;
  int checked = 0, skipped = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    EncoderModel m = testing::RandomTinyModel(seed);
    Rng rng(seed);
    std::vector<features::FrameMatrix> segs;
    for (int i = 0; i < 3; ++i) segs.push_back(testing::Frames(RandomMatrix(20, 4, rng)));
    std::vector<int> labels = {0, 2, 1};
    BatchResult br = BatchGradients(m, segs, labels, 1);
    std::vector<Matrix> pattern = testing::ReluPattern(m, segs);
    auto params = m.Tensors();
    auto grads = br.grads.Tensors();
    for (size_t t = 0; t < params.size(); ++t) {
      Matrix &p = *params[t];
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
          const double keep = p(i, j);
          p(i, j) = keep + h;
          double up = BatchGradients(m, segs, labels, 1).loss;
          bool same = testing::ReluPattern(m, segs) == pattern;
          p(i, j) = keep - h;
          double dn = BatchGradients(m, segs, labels, 1).loss;
          same = same && testing::ReluPattern(m, segs) == pattern;
          p(i, j) = keep;
          if (!same) {  // the step crosses a ReLU kink
            ++skipped;
            continue;
          }
          ++checked;
          double fd = (up - dn) / (2 * h), g = (*grads[t])(i, j);
          worst = std::max(worst, std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4}));
        }
    }
  }
  double am_worst = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    Matrix x = RandomMatrix(5, 6, rng), w = RandomMatrix(4, 6, rng);
    std::vector<int> y = {0, 3, 1, 1, 2};
    for (double scale : {1.0, 7.0, 30.0})
      am_worst = std::max(am_worst, std::abs(AmSoftmaxLoss(x, y, w, 0.0, scale).loss -
                                             testing::CosineCrossEntropy(x, y, w, 0.0, scale)));
  }
  rep->Line("4", "gradient correctness",
            worst < 1e-5 && am_worst <= 1e-12 && skipped * 100 < checked,
            Fmt("10 seeds, %g coordinates (%g skipped at ReLU kinks), max relative error %.3g "
                "(tol 1e-5); AM-softmax margin 0 vs scaled cross-entropy %.3g (tol 1e-12)",
                checked, skipped, worst, am_worst));
}

// ---- 5: clustering oracles ----------------------------------------------------
void ClusteringOracles(Report *rep) {
  int ahc_mismatch = 0;
  double ahc_dist = 0;
  Rng sizes(11);
  std::uniform_int_distribution<int> pick_n(2, 64);
  for (int c = 0; c < 100; ++c) {
    const int n = c < 2 ? (c == 0 ? 2 : 64) : pick_n(sizes);
    Rng rng(1000 + c);
    Matrix v = RandomMatrix(n, 4, rng);
    std::vector<cluster::Merge> naive = testing::NaiveAverageLinkage(v);
    cluster::AhcResult r = cluster::AhcAverageCosine(v, 1);
    bool same = r.dendrogram.merges.size() == naive.size();
    for (size_t i = 0; same && i < naive.size(); ++i) {
      same = r.dendrogram.merges[i].left == naive[i].left &&
             r.dendrogram.merges[i].right == naive[i].right;
      ahc_dist = std::max(ahc_dist, std::abs(r.dendrogram.merges[i].distance - naive[i].distance));
    }
    ahc_mismatch += !same;
  }
  double inertia_rise = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    cluster::KMeansOptions opts;
    opts.seed = seed;
    cluster::KMeansResult r = cluster::KMeans(RandomMatrix(80, 3, rng), 6, opts);
    for (size_t i = 1; i < r.inertia_history.size(); ++i)
      inertia_rise = std::max(inertia_rise, r.inertia_history[i] - r.inertia_history[i - 1]);
  }
  double opt_gap = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Matrix x = RandomMatrix(8, 2, rng);
    cluster::KMeansOptions opts;
    opts.seed = seed;
    opts.restarts = 20;
    opt_gap = std::max(opt_gap, std::abs(cluster::KMeans(x, 3, opts).inertia -
                                         testing::ExhaustiveKMeansOptimum(x, 3)));
  }
  rep->Line("5", "clustering oracles",
            ahc_mismatch == 0 && ahc_dist < 1e-9 && inertia_rise <= 1e-9 && opt_gap < 1e-9,
            Fmt("AHC merge sequences differing from naive recomputation: %g/100 (max distance "
                "diff %.3g); max k-means inertia increase %.3g; exhaustive-optimum gap "
                "(n=8, K=3, 20 restarts) %.3g (tol 1e-9)",
                ahc_mismatch, ahc_dist, std::max(0.0, inertia_rise), opt_gap));
}

// ---- 6: EER oracle --------------------------------------------------------------
void EerOracle(Report *rep) {
  Rng rng(21);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> count(1, 80);
  double worst = 0, invariance = 0;
  for (int c = 0; c < 100; ++c) {
    eval::ScoreSet s;
    const int nt = count(rng), nn = count(rng);
    const bool quantize = c % 3 == 0;  // exercise ties
    auto draw = [&](double mu) {
      double v = normal(rng) + mu;
      return quantize ? std::round(v * 2.0) / 2.0 : v;
    };
    for (int i = 0; i < nt; ++i) s.push_back({true, draw(1.0)});
    for (int i = 0; i < nn; ++i) s.push_back({false, draw(0.0)});
    double got = eval::ComputeEer(s).eer_percent;
    worst = std::max(worst, std::abs(got - testing::BruteForceEerPercent(s)));
    eval::ScoreSet e = s, a = s;
    for (auto &x : e) x.score = std::exp(x.score);
    for (auto &x : a) x.score = 3.0 * x.score - 7.0;
    invariance = std::max({invariance, std::abs(eval::ComputeEer(e).eer_percent - got),
                           std::abs(eval::ComputeEer(a).eer_percent - got)});
  }
  rep->Line("6", "EER oracle", worst < 1e-9 && invariance == 0.0,
            Fmt("100 score sets: max |interpolated - brute force| %.3g (tol 1e-9); "
                "max change under exp/affine transforms %.3g (must be 0)",
                worst, invariance));
}

// ---- 7: SNR exactness ---------------------------------------------------------
void SnrExactness(Report *rep) {
  Rng rng(4);
  std::uniform_real_distribution<double> snr(10.0, 25.0);
  std::uniform_int_distribution<size_t> len(5, 4000);
  std::normal_distribution<double> normal;
  auto mean_sq = [](const std::vector<double> &v) {
    double s = 0;
    for (double x : v) s += x * x;
    return s / static_cast<double>(v.size());
  };
  double worst = 0;
  const int cases = 200;
  for (int c = 0; c < cases; ++c) {
    std::vector<double> s(len(rng)), n(len(rng));
    for (double &x : s) x = 0.3 * normal(rng);
    for (double &x : n) x = 2.0 * normal(rng);
    const double want = c == 0 ? 10.0 : c == 1 ? 25.0 : snr(rng);
    std::vector<double> out = augment::MixNoiseAtSnr(s, n, want);
    std::vector<double> added(s.size());
    for (size_t i = 0; i < s.size(); ++i) added[i] = out[i] - s[i];
    worst = std::max(worst, std::abs(10.0 * std::log10(mean_sq(s) / mean_sq(added)) - want));
  }
  rep->Line("7", "SNR exactness", worst < 1e-9,
            Fmt("%g mixes over [10, 25] dB: max |achieved - requested| %.3g dB (tol 1e-9)",
                cases, worst));
}

// ---- 8/9: pipeline trends --------------------------------------------------------
double TestEer(const ipl::IterationRecord &r) { return r.eer.at(ipl::kTestList); }

double BestEer(const std::vector<ipl::IterationRecord> &records) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto &r : records)
    if (r.iteration >= 1) best = std::min(best, TestEer(r));
  return best;
}

std::string Curve(const std::vector<ipl::IterationRecord> &records) {
  std::ostringstream os;
  for (size_t i = 0; i < records.size(); ++i)
    os << (i ? " -> " : "") << Fmt("%.2f", TestEer(records[i]));
  return os.str();
}

RunConfig BaseConfig(const fs::path &work) {
  RunConfig cfg;  // desk-scale defaults: 50 speakers x 20 utterances
  cfg.workers = std::max(1u, std::thread::hardware_concurrency());
  cfg.ipl.num_iterations = 3;
  cfg.workspace = work / "base";
  return cfg;
}

std::vector<ipl::IterationRecord> RunCell(const RunConfig &base, const fs::path &work,
                                          const std::string &name,
                                          const std::string &axis, const std::string &value) {
  RunConfig cfg = base;
  ipl::ApplyAxisValue(axis, value, &cfg);
  cfg.workspace = work / name;
  cfg.shared_dir = base.workspace;  // share corpora and i-vector artifacts
  auto t0 = Clock::now();
  auto records = ipl::RunIpl(cfg, {.stop_after = -1, .setup_id = name});
  std::printf("  %-13s test EER %% %s (%.0f s)\n", name.c_str(), Curve(records).c_str(),
              Seconds(t0));
  std::fflush(stdout);
  return records;
}

void PipelineTrends(Report *rep, const fs::path &work) {
  RunConfig base = BaseConfig(work);
  std::vector<ipl::IterationRecord> main;
  rep->Guard("8", "end-to-end IPL trend", [&] {
    auto t0 = Clock::now();
    main = ipl::RunIpl(base, {.stop_after = -1, .setup_id = "base"});
    double secs = Seconds(t0);
    double e0 = TestEer(main.at(0)), e1 = TestEer(main.at(1)), e3 = TestEer(main.back());
    rep->Line("8", "end-to-end IPL trend", e3 < e1 && e1 < e0 && secs < 900.0,
              "50 spk x 20 utt, 3 iterations, test EER % (i-vector baseline -> iterations) " +
                  Curve(main) +
                  Fmt("; need final %.2f < iter1 %.2f < baseline %.2f; %.0f s (limit 900 s)",
                      e3, e1, e0, secs));
  });
  if (main.empty()) {
    rep->Line("9a", "under- vs over-clustering", false, "base run failed");
    rep->Line("9b", "two-stage vs k-means only", false, "base run failed");
    rep->Line("9c", "augmentation on vs off", false, "base run failed");
    return;
  }
  const double base_best = BestEer(main);
  rep->Guard("9a", "under- vs over-clustering", [&] {
    double under = BestEer(RunCell(base, work, "clusters_0.5x", "clusters", "0.5x"));
    double over = BestEer(RunCell(base, work, "clusters_2x", "clusters", "2x"));
    rep->Line("9a", "under- vs over-clustering", over < under,
              Fmt("best test EER: 0.5x true speakers %.2f%%, 2x true speakers %.2f%% "
                  "(need 2x < 0.5x)",
                  under, over));
  });
  rep->Guard("9b", "two-stage vs k-means only", [&] {
    double kmeans = BestEer(RunCell(base, work, "kmeans_only", "clustering", "kmeans_only"));
    rep->Line("9b", "two-stage vs k-means only", base_best <= kmeans,
              Fmt("best test EER: two-stage %.2f%%, k-means only %.2f%% (need two-stage <= "
                  "k-means only)",
                  base_best, kmeans));
  });
  rep->Guard("9c", "augmentation on vs off", [&] {
    double off = BestEer(RunCell(base, work, "aug_off", "aug", "off"));
    // Soft: a loss within 20% relative is reported but not failed.
    const bool holds = base_best <= off;
    const double margin = (base_best - off) / std::max(off, 1e-12);
    rep->Line("9c", "augmentation on vs off", holds || margin <= 0.2,
              Fmt("best test EER: aug on %.2f%%, aug off %.2f%%; ", base_best, off) +
                  (holds ? std::string("on <= off")
                         : Fmt("off wins by %.1f%% relative (soft, hard limit 20%%)",
                               100.0 * margin)));
  });
}

// ---- 10: determinism and resume ---------------------------------------------------
const char *kSmallConfig = R"({
  "seed": 11,
  "corpus": {
    "synth": {"num_speakers": 12, "utterances_per_speaker": 10, "min_frames": 80,
              "max_frames": 140, "feature_dim": 10, "channel_rank": 2,
              "channel_spread": 2.0},
    "eval_num_speakers": 12, "eval_utterances_per_speaker": 6,
    "eval_validation_speakers": 4, "noise_recordings": 6, "noise_frames": 120
  },
  "trials": {"validation_target": 60, "validation_nontarget": 60,
             "test_target": 100, "test_nontarget": 100},
  "ubm": {"num_components": 8, "em_iterations": 4, "init_sample_frames": 4000},
  "tv": {"rank": 8, "em_iterations": 4},
  "cluster": {"k_coarse": 30, "k_final": 15},
  "encoder": {"channels": [16, 16], "dilations": [1, 2], "embed_dim": 16},
  "train": {"batch_size": 16, "epochs": 3, "warmup_steps": 8, "segment_seconds": 0.8},
  "ipl": {"num_iterations": 3}
})";

// Every file under `root`, keyed by relative path, with the root's own path
// replaced so that path-bearing artifacts compare by content.
std::map<std::string, std::string> Snapshot(const fs::path &root) {
  std::map<std::string, std::string> out;
  const std::string prefix = root.string();
  for (const auto &e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string bytes = ReadFileToString(e.path());
    for (size_t pos = bytes.find(prefix); pos != std::string::npos;
         pos = bytes.find(prefix, pos))
      bytes.replace(pos, prefix.size(), "<ws>");
    out[fs::relative(e.path(), root).string()] = std::move(bytes);
  }
  return out;
}

int CountDifferences(const std::map<std::string, std::string> &a,
                     const std::map<std::string, std::string> &b, std::string *first) {
  std::set<std::string> keys;
  for (const auto &[k, v] : a) keys.insert(k);
  for (const auto &[k, v] : b) keys.insert(k);
  int diff = 0;
  for (const auto &k : keys) {
    auto ia = a.find(k), ib = b.find(k);
    if (ia == a.end() || ib == b.end() || ia->second != ib->second) {
      if (diff++ == 0) *first = k;
    }
  }
  return diff;
}

void DeterminismAndResume(Report *rep, const fs::path &work) {
  RunConfig cfg = ParseRunConfig(kSmallConfig, "acceptance");
  RunConfig a = cfg, b = cfg, c = cfg;
  a.workspace = work / "det_a";
  b.workspace = work / "det_b";
  c.workspace = work / "det_resume";
  a.workers = 1;
  b.workers = std::max(2u, std::thread::hardware_concurrency());
  ipl::RunIpl(a);
  ipl::RunIpl(b);
  auto partial = ipl::RunIpl(c, {.stop_after = 1});
  const bool stopped = partial.size() == 2 && !fs::exists(ipl::Workspace(c).IterDir(2));
  ipl::RunIpl(c);
  auto sa = Snapshot(a.workspace);
  std::string first_ab, first_ac;
  int ab = CountDifferences(sa, Snapshot(b.workspace), &first_ab);
  int ac = CountDifferences(sa, Snapshot(c.workspace), &first_ac);
  rep->Line("10", "determinism and resume", ab == 0 && ac == 0 && stopped,
            Fmt("%g workspace files; repeat run (1 vs %g workers) differs in %g, "
                "kill after iteration 1 + resume differs in %g",
                sa.size(), b.workers, ab, ac) +
                (ab ? " first: " + first_ab : "") + (ac ? " first: " + first_ac : "") +
                (stopped ? "" : "; stop_after did not stop"));
}

}  // namespace
}  // namespace ipltk

int main(int argc, char **argv) {
  using namespace ipltk;
  spdlog::set_level(spdlog::level::warn);
  const fs::path work = fs::absolute(argc > 1 ? argv[1] : "acceptance_work");
  fs::remove_all(work);
  fs::create_directories(work);
  Report rep;
  rep.Guard("1", "EM monotonicity", [&] { EmMonotonicity(&rep); });
  rep.Guard("2", "TV subspace recovery", [&] { TvRecovery(&rep); });
  rep.Guard("3", "i-vector posterior oracle", [&] { PosteriorOracle(&rep); });
  rep.Guard("4", "gradient correctness", [&] { Gradients(&rep); });
  rep.Guard("5", "clustering oracles", [&] { ClusteringOracles(&rep); });
  rep.Guard("6", "EER oracle", [&] { EerOracle(&rep); });
  rep.Guard("7", "SNR exactness", [&] { SnrExactness(&rep); });
  PipelineTrends(&rep, work);
  rep.Guard("10", "determinism and resume", [&] { DeterminismAndResume(&rep, work); });
  std::printf("%d criterion line(s) failed\n", rep.failed());
  return rep.failed() == 0 ? 0 : 1;
}
