// SPDX-License-Identifier: Apache-2.0
#include "pmae/mae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmae/error.hpp"

namespace pmae {

std::vector<std::uint8_t> MaskSet::masked_flags() const {
  std::vector<std::uint8_t> flags(num_patches, 0);
  for (auto i : masked) flags[i] = 1;
  return flags;
}

void MaskSet::validate() const {
  std::vector<std::uint8_t> seen(num_patches, 0);
  for (const auto* part : {&masked, &visible}) {
    for (auto i : *part) {
      if (i >= num_patches) throw ShapeError("mask: index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw ShapeError("mask: index " + std::to_string(i) + " listed twice");
    }
  }
  if (masked.size() + visible.size() != num_patches) throw ShapeError("mask: masked and visible sets do not cover the grid");
}

std::size_t masked_count(std::size_t num_patches, double ratio) {
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_patches) + 1e-9));
}

MaskSet sample_mask(std::size_t num_patches, double ratio, Rng& rng) {
  if (num_patches == 0) throw ConfigError("num_patches", "must be at least 1");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1) so some patches stay visible");
  std::vector<std::size_t> order(num_patches);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order.begin(), order.end(), rng);
  const auto count = masked_count(num_patches, ratio);
  MaskSet mask{num_patches, ratio, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count)},
               {order.begin() + static_cast<std::ptrdiff_t>(count), order.end()}};
  std::sort(mask.masked.begin(), mask.masked.end());
  std::sort(mask.visible.begin(), mask.visible.end());
  return mask;
}

void MaeConfig::validate() const {
  encoder.validate();
  BlockConfig dec{decoder.embed_dim, decoder.num_heads, decoder.mlp_ratio, 0.0};
  dec.validate();
  if (decoder.depth == 0) throw ConfigError("decoder_depth", "decoder needs at least one block");
  if (decoder.embed_dim > encoder.block.embed_dim) {
    throw ConfigError("decoder_dim", "decoder width must not exceed encoder width");
  }
  if (decoder.embed_dim % 4 != 0) throw ConfigError("decoder_dim", "must be a multiple of 4");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio", "must lie in [0, 1)");
  if (!(target_eps > 0.0)) throw ConfigError("target_eps", "must be positive");
}

template <typename T>
Decoder<T>::Decoder(const PatchGrid& grid_, std::size_t encoder_dim, const DecoderConfig& cfg, Rng& rng)
    : grid(grid_), config(cfg) {
  BlockConfig block{cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, 0.0};
  block.validate();
  embed = Linear<T>(encoder_dim, cfg.embed_dim, rng);
  mask_token = Tensor<T>::zeros({1, cfg.embed_dim}, true);
  fill_truncated_normal(mask_token.mutable_values(), rng, 0.02);
  pos_table = sincos_positional_table<T>(grid, cfg.embed_dim, true);
  for (std::size_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(block, rng);
  norm = LayerNorm<T>(cfg.embed_dim);
  head = Linear<T>(cfg.embed_dim, grid.patch_dim(), rng);
}

template <typename T>
void Decoder<T>::collect(ParamList<T>& out, const std::string& prefix, int layer) const {
  embed.collect(out, prefix + ".embed", layer);
  out.push_back({prefix + ".mask_token", mask_token, false, layer});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".blocks." + std::to_string(i), layer);
  norm.collect(out, prefix + ".norm", layer);
  head.collect(out, prefix + ".head", layer);
}

template <typename T>
MaeModel<T>::MaeModel(const MaeConfig& cfg, Rng& rng) : config_(cfg) {
  cfg.validate();
  encoder = Encoder<T>(cfg.encoder, rng);
  decoder = Decoder<T>(cfg.encoder.grid, cfg.encoder.block.embed_dim, cfg.decoder, rng);
}

template <typename T>
ParamList<T> MaeModel<T>::parameters() const {
  ParamList<T> params;
  encoder.collect(params, "encoder");
  decoder.collect(params, "decoder", static_cast<int>(config_.encoder.depth) + 1);
  return params;
}

namespace {

void check_masks(std::span<const MaskSet> masks, std::size_t num_patches) {
  if (masks.empty()) throw ShapeError("mask list is empty");
  for (const auto& m : masks) {
    if (m.num_patches != num_patches) {
      throw ShapeError("mask covers " + std::to_string(m.num_patches) + " patches, grid has " + std::to_string(num_patches));
    }
    if (m.visible.size() != masks[0].visible.size()) throw ShapeError("masks in one batch must hide the same count");
  }
}

}  // namespace

template <typename T>
Tensor<T> encode_visible(const Encoder<T>& encoder, const Tensor<T>& patches, std::span<const MaskSet> masks) {
  check_masks(masks, encoder.config().grid.num_patches());
  std::vector<std::vector<std::size_t>> keep;
  keep.reserve(masks.size());
  for (const auto& m : masks) keep.push_back(m.visible);
  Rng unused(0);
  return encoder.forward(patches, keep, false, unused);
}

template <typename T>
Tensor<T> decode_with_mask_tokens(const Decoder<T>& decoder, const Tensor<T>& latent, std::span<const MaskSet> masks) {
  const auto n = decoder.grid.num_patches();
  check_masks(masks, n);
  const auto batch = masks.size();
  const auto kept = masks[0].visible.size();
  if (latent.rank() != 2 || latent.dim(0) % batch != 0) {
    throw ShapeError("decoder: latent " + shape_str(latent.shape()) + " does not split into " + std::to_string(batch) + " sequences");
  }
  const auto per_seq = latent.dim(0) / batch;
  if (per_seq != kept && per_seq != kept + 1) {
    throw ShapeError("decoder: latent sequences of " + std::to_string(per_seq) + " tokens do not match " +
                     std::to_string(kept) + " visible patches");
  }
  const std::size_t lead = per_seq - kept;
  const auto width = decoder.config.embed_dim;

  auto x = decoder.embed(latent);
  std::vector<std::ptrdiff_t> rows;
  rows.reserve(batch * (lead + n));
  std::vector<std::ptrdiff_t> slot(n);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(slot.begin(), slot.end(), -1);
    for (std::size_t j = 0; j < kept; ++j) slot[masks[b].visible[j]] = static_cast<std::ptrdiff_t>(b * per_seq + lead + j);
    if (lead) rows.push_back(static_cast<std::ptrdiff_t>(b * per_seq));
    rows.insert(rows.end(), slot.begin(), slot.end());
  }
  x = gather_rows(x, std::span<const std::ptrdiff_t>(rows), decoder.mask_token);

  auto table_values = decoder.pos_table.values();
  std::vector<T> table(table_values.begin() + static_cast<std::ptrdiff_t>((1 - lead) * width), table_values.end());
  x = add_tiled(x, Tensor<T>({lead + n, width}, std::move(table)));

  Rng unused(0);
  for (const auto& block : decoder.blocks) x = block(x, batch, false, unused);
  auto pred = decoder.head(decoder.norm(x));
  if (!lead) return pred;
  std::vector<std::ptrdiff_t> patch_rows;
  patch_rows.reserve(batch * n);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) patch_rows.push_back(static_cast<std::ptrdiff_t>(b * (n + 1) + 1 + i));
  }
  return gather_rows(pred, std::span<const std::ptrdiff_t>(patch_rows));
}

template <typename T>
Tensor<T> patch_target_normalize(const Tensor<T>& patches, T eps) {
  if (!(eps > T(0))) throw ConfigError("target_eps", "must be positive");
  if (patches.rank() != 2) throw ShapeError("patch_target_normalize: expected [rows x pixels], got " + shape_str(patches.shape()));
  const auto rows = patches.dim(0), width = patches.dim(1);
  auto src = patches.values();
  std::vector<T> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src.data() + r * width;
    T mu = 0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= T(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(width);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (row[j] - mu) * inv;
  }
  return Tensor<T>(patches.shape(), std::move(out));
}

template <typename T>
Tensor<T> masked_reconstruction_loss(const ReconstructionBatch<T>& batch) {
  if (batch.masks.empty()) throw ShapeError("reconstruction loss: no masks");
  const auto n = batch.masks[0].num_patches;
  check_masks(batch.masks, n);
  if (batch.predictions.rank() != 2 || batch.predictions.dim(0) != batch.masks.size() * n) {
    throw ShapeError("reconstruction loss: predictions " + shape_str(batch.predictions.shape()) + " do not cover " +
                     std::to_string(batch.masks.size()) + " images of " + std::to_string(n) + " patches");
  }
  std::vector<std::uint8_t> selected;
  selected.reserve(batch.masks.size() * n);
  std::size_t total_masked = 0;
  for (const auto& m : batch.masks) {
    auto flags = m.masked_flags();
    total_masked += m.num_masked();
    selected.insert(selected.end(), flags.begin(), flags.end());
  }
  if (total_masked == 0) throw ConfigError("mask_ratio", "no masked patches, reconstruction loss is undefined");
  const auto target = batch.normalize_targets ? patch_target_normalize(batch.targets, batch.eps) : batch.targets;
  return masked_row_mse(batch.predictions, target, std::span<const std::uint8_t>(selected));
}

template <typename T>
Tensor<T> mae_loss(const MaeModel<T>& model, const Tensor<T>& patches, std::span<const MaskSet> masks) {
  auto latent = encode_visible(model.encoder, patches, masks);
  auto pred = decode_with_mask_tokens(model.decoder, latent, masks);
  ReconstructionBatch<T> batch{patches, pred, masks, model.config().normalize_targets,
                               static_cast<T>(model.config().target_eps)};
  return masked_reconstruction_loss(batch);
}

template <typename T>
double pretrain_step(const MaeModel<T>& model, AdamW<T>& optimizer, std::span<const PretrainBatch<T>> micro_batches,
                     double lr) {
  return accumulate_gradients<T>(
      optimizer, micro_batches.size(),
      [&](std::size_t i) {
        return mae_loss(model, micro_batches[i].patches, std::span<const MaskSet>(micro_batches[i].masks));
      },
      lr);
}

#define PMAE_INSTANTIATE_MAE(T)                                                                                  \
  template class Decoder<T>;                                                                                     \
  template class MaeModel<T>;                                                                                    \
  template Tensor<T> encode_visible(const Encoder<T>&, const Tensor<T>&, std::span<const MaskSet>);              \
  template Tensor<T> decode_with_mask_tokens(const Decoder<T>&, const Tensor<T>&, std::span<const MaskSet>);     \
  template Tensor<T> patch_target_normalize(const Tensor<T>&, T);                                                \
  template Tensor<T> masked_reconstruction_loss(const ReconstructionBatch<T>&);                                  \
  template Tensor<T> mae_loss(const MaeModel<T>&, const Tensor<T>&, std::span<const MaskSet>);                   \
  template double pretrain_step(const MaeModel<T>&, AdamW<T>&, std::span<const PretrainBatch<T>>, double);

PMAE_INSTANTIATE_MAE(float)
PMAE_INSTANTIATE_MAE(double)

#undef PMAE_INSTANTIATE_MAE

}  // namespace pmae
