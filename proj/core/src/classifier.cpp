// SPDX-License-Identifier: Apache-2.0
#include "pmae/classifier.hpp"

#include <algorithm>

#include "pmae/checkpoint.hpp"
#include "pmae/config.hpp"
#include "pmae/error.hpp"

namespace pmae {

template <typename T>
FinetuneModel<T>::FinetuneModel(const EncoderConfig& cfg, std::size_t num_labels, std::size_t hidden_width, Rng& rng)
    : encoder(cfg, rng), head_norm(cfg.block.embed_dim) {
  if (!cfg.use_class_token) throw ConfigError("use_class_token", "the classifier reads the class token");
  if (num_labels < 2) throw ConfigError("num_labels", "need at least two labels");
  if (hidden_width == 0) throw ConfigError("hidden", "must be positive");
  hidden = Linear<T>(cfg.block.embed_dim, hidden_width, rng);
  classifier = Linear<T>(hidden_width, num_labels, rng);
}

template <typename T>
ParamList<T> FinetuneModel<T>::parameters() const {
  ParamList<T> params;
  encoder.collect(params, "encoder");
  const int top = static_cast<int>(depth()) + 1;
  head_norm.collect(params, "head.norm", top);
  hidden.collect(params, "head.hidden", top);
  classifier.collect(params, "head.classifier", top);
  return params;
}

FinetuneModel<float> build_finetune_model(const EncoderConfig& expected, const Checkpoint* pretrained, std::size_t num_labels,
                                          std::size_t hidden, double drop_path_rate, Rng& rng) {
  EncoderConfig cfg = expected;
  cfg.block.drop_path_rate = drop_path_rate;
  if (pretrained) {
    if (!pretrained->meta.contains("model")) throw ConfigError("checkpoint", "no model configuration recorded");
    const auto stored = encoder_config_from_json(pretrained->meta.at("model"));
    auto diffs = diff_json(encoder_config_to_json(expected), encoder_config_to_json(stored));
    std::erase_if(diffs, [](const ConfigDiff& d) { return d.key == "drop_path_rate"; });
    if (!diffs.empty()) throw ConfigError("checkpoint", "encoder mismatch: " + format_diffs(diffs));
  }
  FinetuneModel<float> model(cfg, num_labels, hidden, rng);
  if (pretrained) {
    ParamList<float> encoder_params;
    model.encoder.collect(encoder_params, "encoder");
    import_parameters(encoder_params, *pretrained);
  }
  model.encoder.set_drop_path_rate(drop_path_rate);
  return model;
}

template <typename T>
Tensor<T> classifier_head(const FinetuneModel<T>& model, const Tensor<T>& features) {
  return model.classifier(gelu(model.hidden(model.head_norm(features))));
}

template <typename T>
Tensor<T> classify_forward(const FinetuneModel<T>& model, const Tensor<T>& patches, std::size_t batch, bool train,
                           Rng& drop_rng) {
  auto tokens = model.encoder.forward_all(patches, batch, train, drop_rng);
  const auto per_seq = tokens.dim(0) / batch;
  std::vector<std::ptrdiff_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = static_cast<std::ptrdiff_t>(b * per_seq);
  return classifier_head(model, gather_rows(tokens, std::span<const std::ptrdiff_t>(rows)));
}

template <typename T>
Tensor<T> label_smoothed_cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ConfigError("label_smoothing", "must lie in [0, 1)");
  return smoothed_cross_entropy(logits, labels, static_cast<T>(epsilon));
}

template <typename T>
double finetune_step(const FinetuneModel<T>& model, AdamW<T>& optimizer, const Tensor<T>& patches,
                     std::span<const std::size_t> labels, double lr, const LlrdPlan& plan, double label_smoothing,
                     Rng& drop_rng) {
  return accumulate_gradients<T>(
      optimizer, 1,
      [&](std::size_t) {
        auto logits = classify_forward(model, patches, labels.size(), true, drop_rng);
        return label_smoothed_cross_entropy(logits, labels, label_smoothing);
      },
      lr, &plan);
}

std::vector<std::size_t> argmax_rows(const Tensor<float>& logits) {
  const auto rows = logits.dim(0), cols = logits.dim(1);
  auto v = logits.values();
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto* row = v.data() + r * cols;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
  }
  return out;
}

#define PMAE_INSTANTIATE_CLS(T)                                                                               \
  template class FinetuneModel<T>;                                                                            \
  template Tensor<T> classifier_head(const FinetuneModel<T>&, const Tensor<T>&);                              \
  template Tensor<T> classify_forward(const FinetuneModel<T>&, const Tensor<T>&, std::size_t, bool, Rng&);    \
  template Tensor<T> label_smoothed_cross_entropy(const Tensor<T>&, std::span<const std::size_t>, double);    \
  template double finetune_step(const FinetuneModel<T>&, AdamW<T>&, const Tensor<T>&,                         \
                                std::span<const std::size_t>, double, const LlrdPlan&, double, Rng&);

PMAE_INSTANTIATE_CLS(float)
PMAE_INSTANTIATE_CLS(double)

#undef PMAE_INSTANTIATE_CLS

}  // namespace pmae
