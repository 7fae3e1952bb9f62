// SPDX-License-Identifier: Apache-2.0
#pragma once

// Vision-transformer building blocks shared by the masked autoencoder and
// the fine-tuning classifier. Activations are 2-D: [sequences*tokens x dim].

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pmae/ops.hpp"
#include "pmae/random.hpp"
#include "pmae/tensor.hpp"

namespace pmae {

struct PatchGrid {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;

  std::size_t per_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return per_side() * per_side(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  void validate() const;

  bool operator==(const PatchGrid&) const = default;
};

struct BlockConfig {
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.0;

  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim)); }
  void validate() const;

  bool operator==(const BlockConfig&) const = default;
};

struct EncoderConfig {
  PatchGrid grid;
  std::size_t depth = 4;
  BlockConfig block;
  bool use_class_token = true;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// A trainable tensor plus the metadata the optimizer needs: whether weight
/// decay applies and which depth group it belongs to for layer-wise decay
/// (0 = patch embedding, 1..L = blocks, L+1 = everything after the blocks).
template <typename T>
struct Param {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
  int layer = 0;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

// [C x H x W] or [B x C x H x W] -> [(B*)N x C*p*p], patches in row-major
// order, pixels inside a patch ordered (row, col, channel). Result is a
// constant tensor.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, const PatchGrid& grid);

// Inverse of patchify; [B*N x P] -> [B x C x H x W], or [C x H x W] when B = 1.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const PatchGrid& grid);

/// Deterministic 2-D sine-cosine table with one row per patch; the first half
/// of each row encodes the patch column, the second half its row. With
/// `leading_zero_row` an all-zero row is prepended for the class token.
template <typename T>
Tensor<T> sincos_positional_table(const PatchGrid& grid, std::size_t dim, bool leading_zero_row = false);

/// Stochastic depth. `branch` holds `batch` equally sized samples; in train
/// mode each sample is zeroed with probability `rate`, survivors scaled by
/// 1/(1-rate). Identity in eval mode or when rate is 0.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, bool train, Rng& rng, std::size_t batch);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix, int layer) const;

  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, T eps = T(1e-6));

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix, int layer) const;

  Tensor<T> gain;
  Tensor<T> bias;
  T eps = T(1e-6);
};

template <typename T>
class Attention {
 public:
  Attention() = default;
  Attention(const BlockConfig& cfg, Rng& rng);

  // tokens: [batch*T x D]
  Tensor<T> operator()(const Tensor<T>& tokens, std::size_t batch) const;
  void collect(ParamList<T>& out, const std::string& prefix, int layer) const;

  std::size_t num_heads = 1;
  Linear<T> query, key, value, proj;
};

/// Pre-norm residual block:
///   x + DropPath(Attn(LN(x))), then + DropPath(MLP(LN(x))).
template <typename T>
class Block {
 public:
  Block() = default;
  Block(const BlockConfig& cfg, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& tokens, std::size_t batch, bool train, Rng& drop_rng) const;
  void collect(ParamList<T>& out, const std::string& prefix, int layer) const;

  BlockConfig config;
  LayerNorm<T> norm1, norm2;
  Attention<T> attn;
  Linear<T> fc1, fc2;
};

/// Patch embedding + optional class token + fixed positional table + blocks +
/// final norm. Works on any per-image subset of patches, so the masked
/// autoencoder can feed only the visible ones.
template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  std::size_t embed_dim() const { return config_.block.embed_dim; }

  // patches: [batch*N x P]; keep[b] lists the patch indices of image b that
  // enter the encoder, in sequence order (all images keep the same count).
  // Returns [batch*(K + cls) x D].
  Tensor<T> forward(const Tensor<T>& patches, std::span<const std::vector<std::size_t>> keep, bool train,
                    Rng& drop_rng) const;
  Tensor<T> forward_all(const Tensor<T>& patches, std::size_t batch, bool train, Rng& drop_rng) const;

  void set_drop_path_rate(double rate);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Linear<T> patch_embed;
  Tensor<T> class_token;  // [1 x D], undefined without a class token
  Tensor<T> pos_table;    // constant [(cls + N) x D]
  std::vector<Block<T>> blocks;
  LayerNorm<T> norm;

 private:
  EncoderConfig config_;
};

}  // namespace pmae
