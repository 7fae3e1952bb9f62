// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "pmae/nn.hpp"
#include "pmae/optim.hpp"

namespace pmae {

struct Checkpoint;

/// Pretrained (or freshly initialised) encoder followed by the bottleneck
/// head: class-token feature -> LayerNorm -> hidden -> GELU -> logits.
/// There is no decoder in this model.
template <typename T>
class FinetuneModel {
 public:
  FinetuneModel(const EncoderConfig& cfg, std::size_t num_labels, std::size_t hidden, Rng& rng);

  std::size_t num_labels() const { return classifier.bias.numel(); }
  std::size_t depth() const { return encoder.config().depth; }
  // Encoder groups keep their depth index; the head shares the top group.
  ParamList<T> parameters() const;

  Encoder<T> encoder;
  LayerNorm<T> head_norm;
  Linear<T> hidden;
  Linear<T> classifier;
};

/// Builds the fine-tuning model for `data_grid`. With a checkpoint the
/// encoder weights are copied verbatim and its architecture must match
/// `expected` (a mismatch throws ConfigError listing every differing key);
/// without one the encoder is randomly initialised (scratch baseline).
/// All blocks are reconfigured to `drop_path_rate`.
FinetuneModel<float> build_finetune_model(const EncoderConfig& expected, const Checkpoint* pretrained, std::size_t num_labels,
                                          std::size_t hidden, double drop_path_rate, Rng& rng);

// patches: [batch*N x P]; returns logits [batch x num_labels].
template <typename T>
Tensor<T> classify_forward(const FinetuneModel<T>& model, const Tensor<T>& patches, std::size_t batch, bool train,
                           Rng& drop_rng);

// Head only, applied to class-token features [batch x D].
template <typename T>
Tensor<T> classifier_head(const FinetuneModel<T>& model, const Tensor<T>& features);

template <typename T>
Tensor<T> label_smoothed_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels, double epsilon);

/// One supervised update. Per-parameter lr = lr * plan.multiplier(layer).
template <typename T>
double finetune_step(const FinetuneModel<T>& model, AdamW<T>& optimizer, const Tensor<T>& patches,
                     std::span<const std::size_t> labels, double lr, const LlrdPlan& plan, double label_smoothing,
                     Rng& drop_rng);

std::vector<std::size_t> argmax_rows(const Tensor<float>& logits);

}  // namespace pmae
