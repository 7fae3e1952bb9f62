// SPDX-License-Identifier: Apache-2.0
#include "pmae/nn.hpp"

#include <cmath>

#include "pmae/error.hpp"

namespace pmae {

void PatchGrid::validate() const {
  if (image_size == 0 || patch_size == 0 || channels == 0) throw ConfigError("patch_grid", "extents must be positive");
  if (image_size % patch_size != 0) {
    throw ConfigError("patch_size", "patch size " + std::to_string(patch_size) + " does not divide image size " +
                                        std::to_string(image_size));
  }
}

void BlockConfig::validate() const {
  if (embed_dim == 0 || num_heads == 0) throw ConfigError("embed_dim", "width and head count must be positive");
  if (embed_dim % num_heads != 0) {
    throw ConfigError("num_heads", std::to_string(num_heads) + " heads do not divide width " + std::to_string(embed_dim));
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio", "must be positive");
  if (!(drop_path_rate >= 0.0 && drop_path_rate <= 1.0)) throw ConfigError("drop_path_rate", "must lie in [0, 1]");
}

void EncoderConfig::validate() const {
  grid.validate();
  block.validate();
  if (depth == 0) throw ConfigError("depth", "encoder needs at least one block");
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, const PatchGrid& grid) {
  grid.validate();
  const auto& shape = images.shape();
  if (shape.size() != 3 && shape.size() != 4) {
    throw ShapeError("patchify: expected [C x H x W] or [B x C x H x W], got " + shape_str(shape));
  }
  const std::size_t batch = shape.size() == 4 ? shape[0] : 1;
  const std::size_t off = shape.size() == 4 ? 1 : 0;
  const auto c = shape[off], h = shape[off + 1], w = shape[off + 2];
  if (c != grid.channels || h != grid.image_size || w != grid.image_size) {
    throw ShapeError("patchify: image " + shape_str(shape) + " does not match a " + std::to_string(grid.channels) + "x" +
                     std::to_string(grid.image_size) + "x" + std::to_string(grid.image_size) + " grid");
  }
  const auto p = grid.patch_size, side = grid.per_side(), n = grid.num_patches(), dim = grid.patch_dim();
  auto src = images.values();
  std::vector<T> out(batch * n * dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t pr = 0; pr < side; ++pr) {
      for (std::size_t pc = 0; pc < side; ++pc) {
        T* dst = out.data() + ((b * n) + pr * side + pc) * dim;
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              dst[(y * p + x) * c + ch] = src[((b * c + ch) * h + pr * p + y) * w + pc * p + x];
            }
          }
        }
      }
    }
  }
  return Tensor<T>({batch * n, dim}, std::move(out));
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const PatchGrid& grid) {
  grid.validate();
  const auto n = grid.num_patches(), dim = grid.patch_dim();
  if (patches.rank() != 2 || patches.dim(1) != dim || patches.dim(0) % n != 0) {
    throw ShapeError("unpatchify: " + shape_str(patches.shape()) + " is not a stack of " + std::to_string(n) + "x" +
                     std::to_string(dim) + " patch sets");
  }
  const auto batch = patches.dim(0) / n;
  const auto p = grid.patch_size, side = grid.per_side(), c = grid.channels, s = grid.image_size;
  auto src = patches.values();
  std::vector<T> out(batch * c * s * s);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t pr = 0; pr < side; ++pr) {
      for (std::size_t pc = 0; pc < side; ++pc) {
        const T* row = src.data() + ((b * n) + pr * side + pc) * dim;
        for (std::size_t y = 0; y < p; ++y) {
          for (std::size_t x = 0; x < p; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              out[((b * c + ch) * s + pr * p + y) * s + pc * p + x] = row[(y * p + x) * c + ch];
            }
          }
        }
      }
    }
  }
  if (batch == 1) return Tensor<T>({c, s, s}, std::move(out));
  return Tensor<T>({batch, c, s, s}, std::move(out));
}

template <typename T>
Tensor<T> sincos_positional_table(const PatchGrid& grid, std::size_t dim, bool leading_zero_row) {
  grid.validate();
  if (dim == 0 || dim % 4 != 0) {
    throw ConfigError("embed_dim", "positional table width " + std::to_string(dim) + " must be a positive multiple of 4");
  }
  const auto side = grid.per_side();
  const std::size_t lead = leading_zero_row ? 1 : 0;
  const std::size_t quarter = dim / 4;
  std::vector<T> table((lead + side * side) * dim, T(0));
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      T* row = table.data() + (lead + r * side + c) * dim;
      const double coords[2] = {static_cast<double>(c), static_cast<double>(r)};
      for (std::size_t half = 0; half < 2; ++half) {
        T* dst = row + half * 2 * quarter;
        for (std::size_t i = 0; i < quarter; ++i) {
          const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
          dst[i] = static_cast<T>(std::sin(coords[half] * omega));
          dst[quarter + i] = static_cast<T>(std::cos(coords[half] * omega));
        }
      }
    }
  }
  return Tensor<T>({lead + side * side, dim}, std::move(table));
}

template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, bool train, Rng& rng, std::size_t batch) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("drop_path_rate", "must lie in [0, 1], got " + std::to_string(rate));
  if (!train || rate == 0.0) return branch;
  const double keep = 1.0 - rate;
  std::vector<T> factors(batch);
  for (auto& f : factors) {
    const bool survive = uniform01(rng) < keep;
    f = survive ? static_cast<T>(1.0 / keep) : T(0);
  }
  return scale_groups(branch, std::span<const T>(factors));
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(Tensor<T>::zeros({in, out}, true)), bias(Tensor<T>::zeros({out}, true)) {
  fill_truncated_normal(weight.mutable_values(), rng, 0.02);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return add_bias(matmul(x, weight), bias);
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix, int layer) const {
  out.push_back({prefix + ".weight", weight, true, layer});
  out.push_back({prefix + ".bias", bias, false, layer});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim, T eps)
    : gain(Tensor<T>::full({dim}, T(1), true)), bias(Tensor<T>::zeros({dim}, true)), eps(eps) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gain, bias, eps);
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out, const std::string& prefix, int layer) const {
  out.push_back({prefix + ".gain", gain, false, layer});
  out.push_back({prefix + ".bias", bias, false, layer});
}

template <typename T>
Attention<T>::Attention(const BlockConfig& cfg, Rng& rng)
    : num_heads(cfg.num_heads),
      query(cfg.embed_dim, cfg.embed_dim, rng),
      key(cfg.embed_dim, cfg.embed_dim, rng),
      value(cfg.embed_dim, cfg.embed_dim, rng),
      proj(cfg.embed_dim, cfg.embed_dim, rng) {
  cfg.validate();
}

template <typename T>
Tensor<T> Attention<T>::operator()(const Tensor<T>& tokens, std::size_t batch) const {
  if (tokens.rank() != 2 || tokens.dim(1) != query.weight.dim(0)) {
    throw ShapeError("attention: tokens " + shape_str(tokens.shape()) + " do not match width " +
                     std::to_string(query.weight.dim(0)));
  }
  auto mixed = multi_head_attention(query(tokens), key(tokens), value(tokens), batch, num_heads);
  return proj(mixed);
}

template <typename T>
void Attention<T>::collect(ParamList<T>& out, const std::string& prefix, int layer) const {
  query.collect(out, prefix + ".query", layer);
  key.collect(out, prefix + ".key", layer);
  value.collect(out, prefix + ".value", layer);
  proj.collect(out, prefix + ".proj", layer);
}

template <typename T>
Block<T>::Block(const BlockConfig& cfg, Rng& rng)
    : config(cfg),
      norm1(cfg.embed_dim),
      norm2(cfg.embed_dim),
      attn(cfg, rng),
      fc1(cfg.embed_dim, cfg.hidden_dim(), rng),
      fc2(cfg.hidden_dim(), cfg.embed_dim, rng) {}

template <typename T>
Tensor<T> Block<T>::operator()(const Tensor<T>& tokens, std::size_t batch, bool train, Rng& drop_rng) const {
  auto x = add(tokens, drop_path(attn(norm1(tokens), batch), config.drop_path_rate, train, drop_rng, batch));
  auto hidden = gelu(fc1(norm2(x)));
  return add(x, drop_path(fc2(hidden), config.drop_path_rate, train, drop_rng, batch));
}

template <typename T>
void Block<T>::collect(ParamList<T>& out, const std::string& prefix, int layer) const {
  norm1.collect(out, prefix + ".norm1", layer);
  attn.collect(out, prefix + ".attn", layer);
  norm2.collect(out, prefix + ".norm2", layer);
  fc1.collect(out, prefix + ".fc1", layer);
  fc2.collect(out, prefix + ".fc2", layer);
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg, Rng& rng) : config_(cfg) {
  cfg.validate();
  const auto dim = cfg.block.embed_dim;
  patch_embed = Linear<T>(cfg.grid.patch_dim(), dim, rng);
  if (cfg.use_class_token) {
    class_token = Tensor<T>::zeros({1, dim}, true);
    fill_truncated_normal(class_token.mutable_values(), rng, 0.02);
  }
  pos_table = sincos_positional_table<T>(cfg.grid, dim, cfg.use_class_token);
  for (std::size_t i = 0; i < cfg.depth; ++i) blocks.emplace_back(cfg.block, rng);
  norm = LayerNorm<T>(dim);
}

template <typename T>
Tensor<T> Encoder<T>::forward(const Tensor<T>& patches, std::span<const std::vector<std::size_t>> keep, bool train,
                              Rng& drop_rng) const {
  const auto n = config_.grid.num_patches();
  const auto dim = embed_dim();
  const auto batch = keep.size();
  if (batch == 0) throw ShapeError("encoder: empty batch");
  if (patches.rank() != 2 || patches.dim(1) != config_.grid.patch_dim() || patches.dim(0) != batch * n) {
    throw ShapeError("encoder: patches " + shape_str(patches.shape()) + " do not match " + std::to_string(batch) + " images of " +
                     std::to_string(n) + " patches");
  }
  const auto kept = keep[0].size();
  if (kept == 0) throw ShapeError("encoder: no patches kept");
  const std::size_t lead = config_.use_class_token ? 1 : 0;

  std::vector<std::ptrdiff_t> rows;
  rows.reserve(batch * kept);
  std::vector<T> pos(batch * kept * dim);
  auto table = pos_table.values();
  for (std::size_t b = 0; b < batch; ++b) {
    if (keep[b].size() != kept) throw ShapeError("encoder: images keep different patch counts");
    for (std::size_t i = 0; i < kept; ++i) {
      const auto idx = keep[b][i];
      if (idx >= n) throw ShapeError("encoder: patch index " + std::to_string(idx) + " out of range");
      std::copy_n(table.begin() + (lead + idx) * dim, dim, pos.begin() + (rows.size()) * dim);
      rows.push_back(static_cast<std::ptrdiff_t>(b * n + idx));
    }
  }
  auto x = patch_embed(gather_rows(patches, std::span<const std::ptrdiff_t>(rows)));
  x = add(x, Tensor<T>({batch * kept, dim}, std::move(pos)));
  if (config_.use_class_token) {
    // Class token sits at position 0 of each sequence; its positional row is zero.
    std::vector<std::ptrdiff_t> order;
    order.reserve(batch * (kept + 1));
    for (std::size_t b = 0; b < batch; ++b) {
      order.push_back(-1);
      for (std::size_t i = 0; i < kept; ++i) order.push_back(static_cast<std::ptrdiff_t>(b * kept + i));
    }
    x = gather_rows(x, std::span<const std::ptrdiff_t>(order), class_token);
  }
  for (const auto& block : blocks) x = block(x, batch, train, drop_rng);
  return norm(x);
}

template <typename T>
Tensor<T> Encoder<T>::forward_all(const Tensor<T>& patches, std::size_t batch, bool train, Rng& drop_rng) const {
  std::vector<std::size_t> all(config_.grid.num_patches());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::vector<std::vector<std::size_t>> keep(batch, all);
  return forward(patches, keep, train, drop_rng);
}

template <typename T>
void Encoder<T>::set_drop_path_rate(double rate) {
  config_.block.drop_path_rate = rate;
  config_.block.validate();
  for (auto& block : blocks) block.config.drop_path_rate = rate;
}

template <typename T>
void Encoder<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  patch_embed.collect(out, prefix + ".patch_embed", 0);
  if (class_token.defined()) out.push_back({prefix + ".class_token", class_token, false, 0});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(out, prefix + ".blocks." + std::to_string(i), static_cast<int>(i) + 1);
  }
  norm.collect(out, prefix + ".norm", static_cast<int>(blocks.size()) + 1);
}

#define PMAE_INSTANTIATE_NN(T)                                                                                   \
  template Tensor<T> patchify(const Tensor<T>&, const PatchGrid&);                                              \
  template Tensor<T> unpatchify(const Tensor<T>&, const PatchGrid&);                                            \
  template Tensor<T> sincos_positional_table(const PatchGrid&, std::size_t, bool);                               \
  template Tensor<T> drop_path(const Tensor<T>&, double, bool, Rng&, std::size_t);                               \
  template class Linear<T>;                                                                                      \
  template class LayerNorm<T>;                                                                                   \
  template class Attention<T>;                                                                                   \
  template class Block<T>;                                                                                       \
  template class Encoder<T>;

PMAE_INSTANTIATE_NN(float)
PMAE_INSTANTIATE_NN(double)

#undef PMAE_INSTANTIATE_NN

}  // namespace pmae
