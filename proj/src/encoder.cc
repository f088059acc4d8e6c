// src/encoder.cc

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

#include "ipltk/encoder.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ipltk/io.h"

namespace ipltk::encoder {

namespace {

constexpr uint32_t kEncoderVersion = 2;  // 2 adds aggregate_layers

// S(:, t) = h(:, (t + offset) mod T): circular time shift.
Matrix Shifted(const Matrix &h, int offset) {
  const Eigen::Index t = h.cols();
  const Eigen::Index o = ((offset % t) + t) % t;
  if (o == 0) return h;
  Matrix s(h.rows(), t);
  s.leftCols(t - o) = h.rightCols(t - o);
  s.rightCols(o) = h.leftCols(o);
  return s;
}

int TapOffset(int j, int kernel, int dilation) {
  return (j - (kernel - 1) / 2) * dilation;
}

Matrix Gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng &rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

void WriteTensor(BinaryWriter *w, const Matrix &m) {
  w->U32(static_cast<uint32_t>(m.rows()));
  w->U32(static_cast<uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) w->F32(static_cast<float>(m(i, j)));
}

void ReadTensor(BinaryReader *r, Matrix *m) {
  uint32_t rows = r->U32(), cols = r->U32();
  if (rows != m->rows() || cols != m->cols())
    throw ParseError(r->source(), 0,
                     "tensor shape mismatch: stored " + std::to_string(rows) +
                         "x" + std::to_string(cols) + ", expected " +
                         std::to_string(m->rows()) + "x" +
                         std::to_string(m->cols()));
  for (Eigen::Index i = 0; i < m->rows(); ++i)
    for (Eigen::Index j = 0; j < m->cols(); ++j) (*m)(i, j) = r->F32();
}

}  // namespace

void EncoderArch::Validate() const {
  if (input_dim < 1) throw ValidationError("encoder: input_dim must be >= 1");
  if (channels.empty()) throw ValidationError("encoder: need at least one conv layer");
  if (channels.size() != dilations.size())
    throw ValidationError("encoder: channels and dilations differ in length");
  for (int c : channels)
    if (c < 1) throw ValidationError("encoder: channel counts must be >= 1");
  for (int d : dilations)
    if (d < 1) throw ValidationError("encoder: dilations must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw ValidationError("encoder: kernel must be odd and >= 1");
  if (embed_dim < 2) throw ValidationError("encoder: embed_dim must be >= 2");
  if (num_classes < 1) throw ValidationError("encoder: num_classes must be >= 1");
}

int EncoderArch::PooledChannels() const {
  if (!aggregate_layers) return channels.back();
  int total = 0;
  for (int c : channels) total += c;
  return total;
}

int EncoderArch::ReceptiveField() const {
  int rf = 1;
  for (int d : dilations) rf += (kernel - 1) * d;
  return rf;
}

EncoderModel EncoderModel::Init(const EncoderArch &arch, uint64_t seed,
                                double margin, double scale) {
  arch.Validate();
  Rng rng(DeriveSeed(seed, "encoder-init"));
  EncoderModel m;
  m.arch = arch;
  m.margin = margin;
  m.scale = scale;
  int c_in = arch.input_dim;
  for (size_t l = 0; l < arch.channels.size(); ++l) {
    ConvLayer layer;
    layer.dilation = arch.dilations[l];
    const double std_he = std::sqrt(2.0 / (c_in * arch.kernel));
    for (int j = 0; j < arch.kernel; ++j)
      layer.taps.push_back(Gaussian(arch.channels[l], c_in, std_he, rng));
    layer.bias = Matrix::Zero(arch.channels[l], 1);
    m.conv.push_back(std::move(layer));
    c_in = arch.channels[l];
  }
  const int pooled = arch.PooledChannels();
  m.embed_w = Gaussian(arch.embed_dim, 2 * pooled, std::sqrt(1.0 / (2 * pooled)), rng);
  m.embed_b = Matrix::Zero(arch.embed_dim, 1);
  m.proj_w = Gaussian(arch.embed_dim, arch.embed_dim,
                      std::sqrt(1.0 / arch.embed_dim), rng);
  m.proj_b = Matrix::Zero(arch.embed_dim, 1);
  m.class_w = Gaussian(arch.num_classes, arch.embed_dim, 1.0, rng);
  m.NormalizeClassWeights();
  m.input_mean = Vector::Zero(arch.input_dim);
  m.input_inv_std = Vector::Ones(arch.input_dim);
  return m;
}

void EncoderModel::FitInputNormalization(const std::vector<features::FrameMatrix> &corpus) {
  const Eigen::Index d = arch.input_dim;
  Vector sum = Vector::Zero(d), sq = Vector::Zero(d);
  double count = 0.0;
  for (const auto &f : corpus) {
    if (f.Dim() != d)
      throw ValidationError("encoder: normalization frames have dim " +
                            std::to_string(f.Dim()) + ", expected " + std::to_string(d));
    sum += f.data.colwise().sum().transpose();
    sq += f.data.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(f.NumFrames());
  }
  if (count < 2) throw ValidationError("encoder: too few frames to fit input normalization");
  input_mean = sum / count;
  input_inv_std.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    double var = sq(i) / count - input_mean(i) * input_mean(i);
    input_inv_std(i) = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
}

EncoderModel EncoderModel::ZerosLike() const {
  EncoderModel z = *this;
  for (Matrix *t : z.Tensors()) t->setZero();
  return z;
}

std::vector<Matrix *> EncoderModel::Tensors() {
  std::vector<Matrix *> out;
  for (ConvLayer &layer : conv) {
    for (Matrix &tap : layer.taps) out.push_back(&tap);
    out.push_back(&layer.bias);
  }
  for (Matrix *m : {&embed_w, &embed_b, &proj_w, &proj_b, &class_w}) out.push_back(m);
  return out;
}

std::vector<const Matrix *> EncoderModel::Tensors() const {
  std::vector<const Matrix *> out;
  for (Matrix *m : const_cast<EncoderModel *>(this)->Tensors()) out.push_back(m);
  return out;
}

size_t EncoderModel::NumParameters() const {
  size_t n = 0;
  for (const Matrix *m : Tensors()) n += static_cast<size_t>(m->size());
  return n;
}

bool EncoderModel::AllFinite() const {
  for (const Matrix *m : Tensors())
    if (!m->allFinite()) return false;
  return true;
}

void EncoderModel::NormalizeClassWeights() {
  for (Eigen::Index k = 0; k < class_w.rows(); ++k) {
    double n = class_w.row(k).norm();
    if (n == 0.0) throw NumericalError("encoder: zero class weight row " + std::to_string(k));
    class_w.row(k) /= n;
  }
}

void EncoderModel::RoundToFloat() {
  for (Matrix *m : Tensors())
    *m = m->cast<float>().cast<double>();
}

Vector StatsPool(const Matrix &h) {
  const Eigen::Index c = h.rows();
  const double t = static_cast<double>(h.cols());
  Vector mean = h.rowwise().sum() / t;
  Vector out(2 * c);
  out.head(c) = mean;
  for (Eigen::Index i = 0; i < c; ++i) {
    double var = (h.row(i).array() - mean(i)).square().sum() / t;
    out(c + i) = std::sqrt(var + kPoolEpsilon) - std::sqrt(kPoolEpsilon);
  }
  return out;
}

Vector Forward(const EncoderModel &model, const features::FrameMatrix &frames,
               ForwardCache *cache) {
  const EncoderArch &arch = model.arch;
  if (frames.Dim() != arch.input_dim)
    throw ValidationError("encoder: input dim " + std::to_string(frames.Dim()) +
                          " != model input dim " + std::to_string(arch.input_dim));
  const int rf = arch.ReceptiveField();
  if (frames.NumFrames() < rf)
    throw ValidationError("encoder: utterance " + frames.source_id + " has " +
                          std::to_string(frames.NumFrames()) +
                          " frames; at least " + std::to_string(rf) +
                          " (the receptive field) are required");
  const Eigen::Index t = frames.NumFrames();
  ForwardCache local;
  ForwardCache &c = cache ? *cache : local;
  c.layer_in.clear();
  c.layer_pre.clear();

  Matrix h = ((frames.data.rowwise() - model.input_mean.transpose()).array().rowwise() *
               model.input_inv_std.transpose().array())
                  .matrix()
                  .transpose();  // C x T
  Matrix all;  // concatenated layer outputs when aggregating
  if (arch.aggregate_layers) all.resize(arch.PooledChannels(), t);
  Eigen::Index row = 0;
  for (const ConvLayer &layer : model.conv) {
    Matrix z = layer.bias * Eigen::RowVectorXd::Ones(t);
    for (int j = 0; j < arch.kernel; ++j)
      z.noalias() += layer.taps[j] * Shifted(h, TapOffset(j, arch.kernel, layer.dilation));
    if (cache) c.layer_in.push_back(std::move(h));
    h = z.cwiseMax(0.0);
    if (cache) c.layer_pre.push_back(std::move(z));
    if (arch.aggregate_layers) {
      all.middleRows(row, h.rows()) = h;
      row += h.rows();
    }
  }
  if (arch.aggregate_layers) h = std::move(all);
  const Eigen::Index ch = h.rows();
  Vector pooled = StatsPool(h);
  Vector e = model.embed_w * pooled + model.embed_b.col(0);
  if (cache) {
    c.mean = pooled.head(ch);
    c.stddev = (pooled.tail(ch).array() + std::sqrt(kPoolEpsilon)).matrix();
    c.last = std::move(h);
    c.pooled = pooled;
    c.embedding = e;
    c.projected = (model.proj_w * e + model.proj_b.col(0)).array().tanh().matrix();
  }
  return e;
}

AmSoftmaxResult AmSoftmaxLoss(const Matrix &inputs, const std::vector<int> &labels,
                              const Matrix &class_w, double margin, double scale) {
  const Eigen::Index b = inputs.rows(), k = class_w.rows();
  if (static_cast<size_t>(b) != labels.size())
    throw ValidationError("am-softmax: batch size and label count differ");
  if (inputs.cols() != class_w.cols())
    throw ValidationError("am-softmax: input and class weight dims differ");
  if (b == 0) throw ValidationError("am-softmax: empty batch");

  Vector in_norm = inputs.rowwise().norm();
  Vector w_norm = class_w.rowwise().norm();
  for (Eigen::Index i = 0; i < b; ++i)
    if (in_norm(i) == 0.0) throw ValidationError("am-softmax: zero-norm embedding");
  for (Eigen::Index j = 0; j < k; ++j)
    if (w_norm(j) == 0.0) throw ValidationError("am-softmax: zero-norm class weight");
  Matrix u = in_norm.cwiseInverse().asDiagonal() * inputs;    // B x E
  Matrix wn = w_norm.cwiseInverse().asDiagonal() * class_w;   // K x E
  Matrix cos = u * wn.transpose();                             // B x K

  AmSoftmaxResult res;
  Matrix d_cos(b, k);
  res.predictions.resize(b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k)
      throw ValidationError("am-softmax: label " + std::to_string(y) +
                            " outside [0, " + std::to_string(k) + ")");
    Eigen::RowVectorXd logits = scale * cos.row(i);
    logits(y) -= scale * margin;
    const double mx = logits.maxCoeff();
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    const double z = p.sum();
    total += mx + std::log(z) - logits(y);
    p /= z;
    p(y) -= 1.0;
    d_cos.row(i) = scale * p / static_cast<double>(b);
    Eigen::Index arg;
    cos.row(i).maxCoeff(&arg);
    res.predictions[i] = static_cast<int>(arg);
  }
  res.loss = total / static_cast<double>(b);

  // Back through the row normalizations: d x = (d u - u (u . d u)) / |x|.
  Matrix du = d_cos * wn;              // B x E
  Matrix dwn = d_cos.transpose() * u;  // K x E
  res.d_inputs.resize(b, inputs.cols());
  for (Eigen::Index i = 0; i < b; ++i)
    res.d_inputs.row(i) = (du.row(i) - u.row(i) * u.row(i).dot(du.row(i))) / in_norm(i);
  res.d_class_w.resize(k, class_w.cols());
  for (Eigen::Index j = 0; j < k; ++j)
    res.d_class_w.row(j) = (dwn.row(j) - wn.row(j) * wn.row(j).dot(dwn.row(j))) / w_norm(j);
  return res;
}

void Backward(const EncoderModel &model, const ForwardCache &cache,
              const Vector &d_projected, EncoderModel *grads) {
  const EncoderArch &arch = model.arch;
  if (cache.layer_in.size() != model.conv.size() ||
      cache.layer_pre.size() != model.conv.size() ||
      cache.embedding.size() != arch.embed_dim ||
      d_projected.size() != arch.embed_dim || cache.pooled.size() != model.embed_w.cols())
    throw ValidationError("encoder: forward cache does not match the model");
  if (grads->conv.size() != model.conv.size() ||
      grads->embed_w.rows() != model.embed_w.rows() ||
      grads->embed_w.cols() != model.embed_w.cols())
    throw ValidationError("encoder: gradient buffer does not match the model");

  // Projector: f = tanh(a), a = W_p e + b_p.
  Vector da = d_projected.array() * (1.0 - cache.projected.array().square());
  grads->proj_w.noalias() += da * cache.embedding.transpose();
  grads->proj_b.col(0) += da;
  Vector de = model.proj_w.transpose() * da;

  // Embedding layer.
  grads->embed_w.noalias() += de * cache.pooled.transpose();
  grads->embed_b.col(0) += de;
  Vector dp = model.embed_w.transpose() * de;

  // Statistics pooling.
  const Matrix &h = cache.last;
  const Eigen::Index ch = h.rows();
  const double t = static_cast<double>(h.cols());
  Vector dmean = dp.head(ch);
  Vector coef = (dp.tail(ch).array() / (t * cache.stddev.array())).matrix();
  Matrix dh = (h.colwise() - cache.mean);
  dh = coef.asDiagonal() * dh;
  dh.colwise() += dmean / t;

  // Conv stack in reverse. With aggregation every layer output receives its
  // block of the pooling gradient plus what flows back from the layer above.
  const size_t num_layers = model.conv.size();
  Matrix dpool = std::move(dh);
  Eigen::Index row = ch;
  for (size_t l = num_layers; l-- > 0;) {
    const ConvLayer &layer = model.conv[l];
    ConvLayer &g = grads->conv[l];
    if (arch.aggregate_layers) {
      const Eigen::Index c_out = arch.channels[l];
      row -= c_out;
      if (l + 1 == num_layers) dh = dpool.middleRows(row, c_out);
      else dh += dpool.middleRows(row, c_out);
    } else if (l + 1 == num_layers) {
      dh = std::move(dpool);
    }
    Matrix dz = (cache.layer_pre[l].array() > 0.0).select(dh, 0.0);
    g.bias.col(0) += dz.rowwise().sum();
    const Matrix &in = cache.layer_in[l];
    Matrix din = Matrix::Zero(in.rows(), in.cols());
    for (int j = 0; j < arch.kernel; ++j) {
      const int off = TapOffset(j, arch.kernel, layer.dilation);
      g.taps[j].noalias() += dz * Shifted(in, off).transpose();
      if (l > 0) din += Shifted(layer.taps[j].transpose() * dz, -off);
    }
    if (l > 0) dh = std::move(din);
  }
}

void TrainConfig::Validate() const {
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ValidationError("train: learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("train: weight_decay must be >= 0");
  if (warmup_steps < 1) throw ValidationError("train: warmup_steps must be >= 1");
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (!(margin >= 0.0 && margin < 1.0)) throw ValidationError("train: margin must lie in [0, 1)");
  if (!(scale > 0.0)) throw ValidationError("train: scale must be > 0");
  if (!(segment_seconds > 0.0)) throw ValidationError("train: segment_seconds must be > 0");
}

double EffectiveLearningRate(const TrainConfig &cfg, int64_t step) {
  return cfg.learning_rate *
         std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
}

AdamState AdamState::For(const EncoderModel &model) {
  return AdamState{model.ZerosLike(), model.ZerosLike(), 0};
}

void OptimizerStep(EncoderModel *model, AdamState *state,
                   const EncoderModel &grads, const TrainConfig &cfg) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  auto params = model->Tensors();
  auto g = grads.Tensors();
  auto m = state->m.Tensors();
  auto v = state->v.Tensors();
  if (g.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw ValidationError("optimizer: parameter/gradient layout mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    if (g[i]->rows() != params[i]->rows() || g[i]->cols() != params[i]->cols())
      throw ValidationError("optimizer: gradient shape mismatch");
    if (!g[i]->allFinite())
      throw NumericalError("optimizer: nonfinite gradient (training diverged)");
  }
  state->step += 1;
  const double lr = EffectiveLearningRate(cfg, state->step);
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state->step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state->step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    *m[i] = kBeta1 * *m[i] + (1.0 - kBeta1) * *g[i];
    *v[i] = kBeta2 * *v[i] + (1.0 - kBeta2) * g[i]->cwiseAbs2();
    Matrix update = ((*m[i] / bc1).array() /
                     ((*v[i] / bc2).array().sqrt() + kEps)).matrix();
    *params[i] = decay * *params[i] - lr * update;
  }
  model->NormalizeClassWeights();
}

BatchResult BatchGradients(const EncoderModel &model,
                           const std::vector<features::FrameMatrix> &segments,
                           const std::vector<int> &labels, int workers) {
  const size_t b = segments.size();
  if (b == 0 || labels.size() != b)
    throw ValidationError("batch: segments and labels must be nonempty and aligned");
  std::vector<ForwardCache> caches(b);
  ParallelFor(b, workers, [&](size_t i) { Forward(model, segments[i], &caches[i]); });

  Matrix projected(static_cast<Eigen::Index>(b), model.arch.embed_dim);
  for (size_t i = 0; i < b; ++i)
    projected.row(static_cast<Eigen::Index>(i)) = caches[i].projected.transpose();
  AmSoftmaxResult head =
      AmSoftmaxLoss(projected, labels, model.class_w, model.margin, model.scale);

  std::vector<EncoderModel> partial(b);
  ParallelFor(b, workers, [&](size_t i) {
    partial[i] = model.ZerosLike();
    Backward(model, caches[i], head.d_inputs.row(static_cast<Eigen::Index>(i)).transpose(),
             &partial[i]);
    caches[i] = ForwardCache();
  });

  BatchResult res;
  res.loss = head.loss;
  res.grads = model.ZerosLike();
  auto acc = res.grads.Tensors();
  for (size_t i = 0; i < b; ++i) {
    auto p = partial[i].Tensors();
    for (size_t j = 0; j < acc.size(); ++j) *acc[j] += *p[j];
  }
  res.grads.class_w = head.d_class_w;
  for (size_t i = 0; i < b; ++i)
    if (head.predictions[i] == labels[i]) ++res.correct;
  return res;
}

EpochResult TrainEpoch(EncoderModel *model, AdamState *state,
                       const std::vector<int> &labels, const SegmentFn &segment,
                       const TrainConfig &cfg, int epoch, int workers) {
  cfg.Validate();
  const size_t n = labels.size();
  if (n == 0) throw ValidationError("train: no training utterances");
  for (int y : labels)
    if (y < 0 || y >= model->arch.num_classes)
      throw ValidationError("train: label " + std::to_string(y) +
                            " outside the classifier's range");

  const uint64_t epoch_seed = DeriveSeed(cfg.seed, "epoch-" + std::to_string(epoch));
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng shuffle_rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  double loss_sum = 0.0;
  int correct = 0;
  const size_t bs = static_cast<size_t>(cfg.batch_size);
  for (size_t start = 0; start < n; start += bs) {
    const size_t end = std::min(n, start + bs);
    std::vector<features::FrameMatrix> segs(end - start);
    std::vector<int> ys(end - start);
    ParallelFor(end - start, workers, [&](size_t i) {
      const size_t idx = order[start + i];
      Rng rng(DeriveSeed(epoch_seed, idx));
      segs[i] = segment(idx, rng);
    });
    for (size_t i = start; i < end; ++i) ys[i - start] = labels[order[i]];
    BatchResult br = BatchGradients(*model, segs, ys, workers);
    if (!std::isfinite(br.loss))
      throw NumericalError("train: nonfinite loss (training diverged)");
    OptimizerStep(model, state, br.grads, cfg);
    loss_sum += br.loss * static_cast<double>(end - start);
    correct += br.correct;
  }
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

EpochResult TrainEpoch(EncoderModel *model, AdamState *state,
                       const corpus::UtteranceManifest &manifest,
                       const SegmentFn &segment, const TrainConfig &cfg,
                       int epoch, int workers) {
  std::vector<int> labels;
  labels.reserve(manifest.size());
  for (const auto &e : manifest.entries()) {
    if (!e.speaker_label)
      throw ValidationError("train: utterance " + e.utterance_id + " has no label");
    labels.push_back(*e.speaker_label);
  }
  return TrainEpoch(model, state, labels, segment, cfg, epoch, workers);
}

void WriteEncoder(const std::filesystem::path &path, const EncoderModel &model,
                  const AdamState *state) {
  BinaryWriter w;
  w.Magic("ENC1");
  w.U32(kEncoderVersion);
  const EncoderArch &a = model.arch;
  w.U32(static_cast<uint32_t>(a.input_dim));
  w.U32(static_cast<uint32_t>(a.kernel));
  w.U32(static_cast<uint32_t>(a.channels.size()));
  for (size_t l = 0; l < a.channels.size(); ++l) {
    w.U32(static_cast<uint32_t>(a.channels[l]));
    w.U32(static_cast<uint32_t>(a.dilations[l]));
  }
  w.U32(static_cast<uint32_t>(a.embed_dim));
  w.U32(static_cast<uint32_t>(a.num_classes));
  w.U8(a.aggregate_layers ? 1 : 0);
  w.F64(model.margin);
  w.F64(model.scale);
  for (Eigen::Index i = 0; i < a.input_dim; ++i) w.F64(model.input_mean(i));
  for (Eigen::Index i = 0; i < a.input_dim; ++i) w.F64(model.input_inv_std(i));
  for (const Matrix *t : model.Tensors()) WriteTensor(&w, *t);
  w.U8(state ? 1 : 0);
  if (state) {
    w.F64(static_cast<double>(state->step));
    for (const Matrix *t : state->m.Tensors()) WriteTensor(&w, *t);
    for (const Matrix *t : state->v.Tensors()) WriteTensor(&w, *t);
  }
  WriteFileAtomic(path, w.bytes());
}

EncoderModel ReadEncoder(const std::filesystem::path &path,
                         std::optional<AdamState> *state) {
  if (!std::filesystem::exists(path))
    throw MissingArtifactError(path.string(), "train-encoder");
  BinaryReader r = BinaryReader::FromFile(path);
  r.ExpectMagic("ENC1");
  uint32_t version = r.U32();
  if (version != 1 && version != kEncoderVersion)
    throw ParseError(path.string(), 0, "unsupported ENC1 version " + std::to_string(version));
  EncoderArch a;
  a.input_dim = static_cast<int>(r.U32());
  a.kernel = static_cast<int>(r.U32());
  uint32_t layers = r.U32();
  if (layers == 0 || layers > 1024) throw ParseError(path.string(), 0, "bad layer count");
  a.channels.clear();
  a.dilations.clear();
  for (uint32_t l = 0; l < layers; ++l) {
    a.channels.push_back(static_cast<int>(r.U32()));
    a.dilations.push_back(static_cast<int>(r.U32()));
  }
  a.embed_dim = static_cast<int>(r.U32());
  a.num_classes = static_cast<int>(r.U32());
  a.aggregate_layers = version >= 2 && r.U8() != 0;  // version 1 pooled the last layer
  try {
    a.Validate();
  } catch (const ValidationError &e) {
    throw ParseError(path.string(), 0, e.what());
  }
  double margin = r.F64(), scale = r.F64();
  // Shapes come from a deterministic init; values are overwritten.
  EncoderModel model = EncoderModel::Init(a, 0, margin, scale);
  for (Eigen::Index i = 0; i < a.input_dim; ++i) model.input_mean(i) = r.F64();
  for (Eigen::Index i = 0; i < a.input_dim; ++i) model.input_inv_std(i) = r.F64();
  for (Matrix *t : model.Tensors()) ReadTensor(&r, t);
  uint8_t has_state = r.U8();
  if (has_state) {
    AdamState s = AdamState::For(model);
    s.step = static_cast<int64_t>(r.F64());
    for (Matrix *t : s.m.Tensors()) ReadTensor(&r, t);
    for (Matrix *t : s.v.Tensors()) ReadTensor(&r, t);
    if (state) *state = std::move(s);
  } else if (state) {
    state->reset();
  }
  r.ExpectEnd();
  if (!model.AllFinite()) throw ParseError(path.string(), 0, "nonfinite parameters");
  return model;
}

}  // namespace ipltk::encoder
