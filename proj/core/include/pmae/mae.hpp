// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pmae/nn.hpp"
#include "pmae/optim.hpp"

namespace pmae {

/// Per-image partition of patch indices into masked and visible sets, both
/// kept in ascending order.
struct MaskSet {
  std::size_t num_patches = 0;
  double ratio = 0.0;
  std::vector<std::size_t> masked;
  std::vector<std::size_t> visible;

  std::size_t num_masked() const { return masked.size(); }
  std::vector<std::uint8_t> masked_flags() const;
  void validate() const;
};

// floor(ratio * N) patches chosen uniformly without replacement.
MaskSet sample_mask(std::size_t num_patches, double ratio, Rng& rng);
std::size_t masked_count(std::size_t num_patches, double ratio);

struct DecoderConfig {
  std::size_t depth = 2;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;

  bool operator==(const DecoderConfig&) const = default;
};

struct MaeConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  double mask_ratio = 0.75;
  bool normalize_targets = true;
  double target_eps = 1e-6;

  void validate() const;
};

/// Lightweight decoder: projects encoder tokens to its own width, fills
/// masked positions with one shared learnable token, adds its positional
/// table and predicts every patch's pixels.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const PatchGrid& grid, std::size_t encoder_dim, const DecoderConfig& cfg, Rng& rng);

  void collect(ParamList<T>& out, const std::string& prefix, int layer) const;

  PatchGrid grid;
  DecoderConfig config;
  Linear<T> embed;
  Tensor<T> mask_token;  // [1 x Dd]
  Tensor<T> pos_table;   // constant [(1 + N) x Dd]
  std::vector<Block<T>> blocks;
  LayerNorm<T> norm;
  Linear<T> head;  // Dd -> patch pixels
};

template <typename T>
class MaeModel {
 public:
  MaeModel(const MaeConfig& cfg, Rng& rng);

  const MaeConfig& config() const { return config_; }
  ParamList<T> parameters() const;

  Encoder<T> encoder;
  Decoder<T> decoder;

 private:
  MaeConfig config_;
};

/// Encodes only the visible patches; the sequence is the class token followed
/// by the visible patches in mask order, each carrying the positional row of
/// its original index. Returns [B*(|V|+1) x D].
template <typename T>
Tensor<T> encode_visible(const Encoder<T>& encoder, const Tensor<T>& patches, std::span<const MaskSet> masks);

// Returns predictions for all N patches of every image: [B*N x P].
template <typename T>
Tensor<T> decode_with_mask_tokens(const Decoder<T>& decoder, const Tensor<T>& latent, std::span<const MaskSet> masks);

// Per-patch standardisation (x - mean) / sqrt(var + eps), biased variance.
template <typename T>
Tensor<T> patch_target_normalize(const Tensor<T>& patches, T eps);

template <typename T>
struct ReconstructionBatch {
  Tensor<T> targets;      // raw patch pixels [B*N x P]
  Tensor<T> predictions;  // [B*N x P]
  std::span<const MaskSet> masks;
  bool normalize_targets = true;
  T eps = T(1e-6);
};

/// Mean over masked patches of the per-patch pixel-mean squared error.
/// Visible patches never contribute, not even through the gradient.
template <typename T>
Tensor<T> masked_reconstruction_loss(const ReconstructionBatch<T>& batch);

// Full forward pass to the loss for one batch of patchified images.
template <typename T>
Tensor<T> mae_loss(const MaeModel<T>& model, const Tensor<T>& patches, std::span<const MaskSet> masks);

template <typename T>
struct PretrainBatch {
  Tensor<T> patches;  // [B*N x P]
  std::vector<MaskSet> masks;
};

/// One optimizer step over the given micro-batches (gradient accumulation
/// when there is more than one). Returns the mean loss.
template <typename T>
double pretrain_step(const MaeModel<T>& model, AdamW<T>& optimizer, std::span<const PretrainBatch<T>> micro_batches,
                     double lr);

}  // namespace pmae
