// ipltk/encoder.h

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

#ifndef IPLTK_ENCODER_H_
#define IPLTK_ENCODER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "ipltk/base.h"
#include "ipltk/corpus.h"
#include "ipltk/features.h"

namespace ipltk::encoder {

// Variance floor inside the std pooling square root.
constexpr double kPoolEpsilon = 1e-8;

struct EncoderArch {
  int input_dim = 20;
  std::vector<int> channels = {32, 32, 32};  // one entry per conv layer
  std::vector<int> dilations = {1, 2, 3};
  int kernel = 3;  // odd
  int embed_dim = 32;
  int num_classes = 2;
  // Pool the concatenated outputs of every conv layer (multi-layer feature
  // aggregation) instead of the last layer only.
  bool aggregate_layers = true;

  void Validate() const;
  // Frames spanned by one output frame of the conv stack.
  int ReceptiveField() const;
  // Channels entering statistics pooling.
  int PooledChannels() const;
  bool operator==(const EncoderArch &) const = default;
};

struct ConvLayer {
  std::vector<Matrix> taps;  // kernel matrices, each C_out x C_in
  Matrix bias;               // C_out x 1
  int dilation = 1;
};

// Frame encoder g (dilated temporal convolutions with ReLU, mean||std
// pooling of the last or of all layer outputs, linear embedding), projector f (tanh(W_p e + b_p)) and
// AM-softmax class weights (unit rows). All tensors are held as matrices so
// that gradients and optimizer moments can reuse the same layout.
struct EncoderModel {
  EncoderArch arch;
  std::vector<ConvLayer> conv;
  Matrix embed_w;  // E x 2P, P = arch.PooledChannels()
  Matrix embed_b;  // E x 1
  Matrix proj_w;   // E x E
  Matrix proj_b;   // E x 1
  Matrix class_w;  // K x E, unit rows
  // Fixed global input standardization x' = (x - input_mean) * input_inv_std,
  // estimated once from the training corpus; not trained.
  Vector input_mean;
  Vector input_inv_std;
  double margin = 0.2;
  double scale = 30.0;

  // Random initialization (He-normal convs, unit-norm class rows, zero
  // biases), deterministic in `seed`.
  static EncoderModel Init(const EncoderArch &arch, uint64_t seed,
                           double margin = 0.2, double scale = 30.0);
  // Sets the input standardization from the pooled frames of a corpus
  // (per-dimension mean and inverse standard deviation).
  void FitInputNormalization(const std::vector<features::FrameMatrix> &corpus);
  // Same shapes, all tensors zero.
  EncoderModel ZerosLike() const;

  // Every parameter tensor in a fixed order.
  std::vector<Matrix *> Tensors();
  std::vector<const Matrix *> Tensors() const;
  size_t NumParameters() const;
  bool AllFinite() const;
  // Rescales each class weight row to unit norm.
  void NormalizeClassWeights();
  // Rounds every tensor to float precision (the checkpoint precision).
  void RoundToFloat();
};

// Intermediate values of one forward pass, consumed by Backward.
struct ForwardCache {
  std::vector<Matrix> layer_in;   // input of each conv layer, C_in x T
  std::vector<Matrix> layer_pre;  // pre-activation of each conv layer
  Matrix last;                    // pooled frame features h, P x T
  Vector mean;                    // per-channel mean of h
  Vector stddev;                  // sqrt(var + eps)
  Vector pooled;                  // [mean; sqrt(var + eps) - sqrt(eps)]
  Vector embedding;               // e
  Vector projected;               // f(e) = tanh(W_p e + b_p)
};

// Mean||std statistics pooling of C x T frame features:
// [mean_t h; sqrt(var_t h + eps) - sqrt(eps)], with population variance.
Vector StatsPool(const Matrix &h);

// Embedding e (before the projector). Throws ValidationError naming the
// required minimum if the input is shorter than the receptive field.
Vector Forward(const EncoderModel &model, const features::FrameMatrix &frames,
               ForwardCache *cache = nullptr);

// Verification embedding of an unaltered utterance.
inline Vector Embed(const EncoderModel &model, const features::FrameMatrix &frames) {
  return Forward(model, frames);
}

struct AmSoftmaxResult {
  double loss = 0.0;       // batch mean
  Matrix d_inputs;         // B x E gradient w.r.t. the inputs
  Matrix d_class_w;        // K x E gradient w.r.t. the raw class weights
  std::vector<int> predictions;  // argmax cosine per sample
};

// Additive-margin softmax over rows of `inputs` (B x E). Both inputs and
// class rows are L2-normalized inside the loss; gradients include the
// normalization Jacobians. Throws ValidationError on a zero-norm row or a
// label outside [0, K).
AmSoftmaxResult AmSoftmaxLoss(const Matrix &inputs, const std::vector<int> &labels,
                              const Matrix &class_w, double margin, double scale);

// Reverse-mode pass from d(loss)/d(projected output) to every encoder and
// projector parameter; accumulates into `grads` (shaped like `model`).
// Throws ValidationError if the cache does not match the model.
void Backward(const EncoderModel &model, const ForwardCache &cache,
              const Vector &d_projected, EncoderModel *grads);

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 0.008;
  double weight_decay = 1e-8;
  int warmup_steps = 2000;
  int epochs = 10;
  double margin = 0.2;
  double scale = 30.0;
  double segment_seconds = 2.0;
  uint64_t seed = 0;

  void Validate() const;
};

// lr * min(1, step / warmup_steps) for the 1-based step index.
double EffectiveLearningRate(const TrainConfig &cfg, int64_t step);

struct AdamState {
  EncoderModel m;  // first moments
  EncoderModel v;  // second moments
  int64_t step = 0;

  static AdamState For(const EncoderModel &model);
};

// One Adam step with bias correction, warm-up, decoupled weight decay and
// class-row renormalization. Throws NumericalError on nonfinite gradients.
void OptimizerStep(EncoderModel *model, AdamState *state,
                   const EncoderModel &grads, const TrainConfig &cfg);

struct BatchResult {
  double loss = 0.0;
  EncoderModel grads;
  int correct = 0;
};

// Forward/backward over one batch of segments. Per-sample work runs on
// `workers` threads; gradients are summed in sample order.
BatchResult BatchGradients(const EncoderModel &model,
                           const std::vector<features::FrameMatrix> &segments,
                           const std::vector<int> &labels, int workers = 0);

// Produces the training segment for utterance `index` (crop and optional
// augmentation), drawing randomness only from `rng`.
using SegmentFn = std::function<features::FrameMatrix(size_t index, Rng &rng)>;

struct EpochResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // fraction of training segments classified right
};

// One pass over all utterances in a (seed, epoch)-determined order. Every
// sample's randomness comes from its own stream, so results do not depend
// on the worker count.
EpochResult TrainEpoch(EncoderModel *model, AdamState *state,
                       const std::vector<int> &labels, const SegmentFn &segment,
                       const TrainConfig &cfg, int epoch, int workers = 0);

// Manifest form: every entry must carry a label in [0, K).
EpochResult TrainEpoch(EncoderModel *model, AdamState *state,
                       const corpus::UtteranceManifest &manifest,
                       const SegmentFn &segment, const TrainConfig &cfg,
                       int epoch, int workers = 0);

// ENC1 checkpoint: architecture, f32 tensors, optional Adam state.
void WriteEncoder(const std::filesystem::path &path, const EncoderModel &model,
                  const AdamState *state = nullptr);
EncoderModel ReadEncoder(const std::filesystem::path &path,
                         std::optional<AdamState> *state = nullptr);

}  // namespace ipltk::encoder

#endif  // IPLTK_ENCODER_H_
