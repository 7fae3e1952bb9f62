// SPDX-License-Identifier: Apache-2.0
#include "pmae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmae/error.hpp"

namespace pmae {
namespace {

MaeModel<float> init_mae(const RunConfig& cfg) {
  auto rng = make_rng(cfg.seed, stream::kInit, {0});
  return MaeModel<float>(cfg.mae_config(), rng);
}

std::vector<std::uint64_t> with_ids(std::span<const std::uint64_t> prefix, std::initializer_list<std::uint64_t> ids) {
  std::vector<std::uint64_t> out(prefix.begin(), prefix.end());
  out.insert(out.end(), ids);
  return out;
}

void export_moments(const AdamW<float>& opt, Checkpoint& ckpt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.tensors.push_back({"optim.m/" + params[i].name, params[i].tensor.shape(), opt.first_moment(i)});
    ckpt.tensors.push_back({"optim.v/" + params[i].name, params[i].tensor.shape(), opt.second_moment(i)});
  }
}

void import_moments(AdamW<float>& opt, const Checkpoint& ckpt) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"optim.m/", &opt.first_moment(i)}, std::pair{"optim.v/", &opt.second_moment(i)}}) {
      const auto* rec = ckpt.find(prefix + params[i].name);
      if (!rec) throw ConfigError("resume", "checkpoint lacks optimizer state for " + params[i].name);
      if (rec->values.size() != dst->size()) throw ConfigError("resume", "optimizer state shape mismatch for " + params[i].name);
      *dst = rec->values;
    }
  }
}

}  // namespace

AugmentParams augment_params(const RunConfig& cfg) {
  AugmentParams p;
  p.working_size = cfg.working_size;
  p.out_size = cfg.image_size;
  p.scale_min = cfg.crop_scale_min;
  p.scale_max = cfg.crop_scale_max;
  p.hflip_prob = cfg.hflip_prob;
  p.vflip_prob = cfg.vflip_prob;
  return p;
}

std::vector<ImageF> prepare_manifest_images(const SampleManifest& manifest, const RunConfig& cfg) {
  std::vector<ImageF> out;
  out.reserve(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto raw = read_image(manifest.resolve(i));
    if (cfg.crop_width > 0 && cfg.crop_height > 0) raw = crop_raw(raw, cfg.crop_x, cfg.crop_y, cfg.crop_width, cfg.crop_height);
    auto rng = make_rng(cfg.seed, stream::kPad, {i});
    const auto padded = pad_to_square(raw, estimate_background(raw), rng, cfg.noise_padding);
    out.push_back(prepare_image(padded, cfg.working_size));
  }
  return out;
}

DatasetStats stats_of(std::span<const ImageF> images) {
  StatsAccumulator acc;
  for (const auto& img : images) acc.add(img);
  return acc.finish();
}

Tensor<float> make_batch(std::span<const ImageF> images, std::span<const std::size_t> rows, const RunConfig& cfg,
                         const DatasetStats& stats, bool train, std::uint64_t seed,
                         std::span<const std::uint64_t> stream_prefix, std::size_t epoch) {
  const auto params = augment_params(cfg);
  const std::size_t per = cfg.channels * cfg.image_size * cfg.image_size;
  std::vector<float> values;
  values.reserve(rows.size() * per);
  for (auto r : rows) {
    Tensor<float> img;
    if (train) {
      auto rng = make_rng(seed, stream::kAugment, with_ids(stream_prefix, {r, epoch}));
      img = augment_prepared(images[r], params, stats, rng);
    } else {
      img = eval_prepared(images[r], cfg.image_size, stats);
    }
    if (img.numel() != per) throw ShapeError("image tensor does not match the configured grid");
    auto v = img.values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return Tensor<float>({rows.size(), cfg.channels, cfg.image_size, cfg.image_size}, std::move(values));
}

MaeTrainer::MaeTrainer(const RunConfig& cfg, std::vector<ImageF> images, DatasetStats stats)
    : cfg_(cfg),
      images_(std::move(images)),
      stats_(std::move(stats)),
      model_(init_mae(cfg)),
      optimizer_(model_.parameters(), AdamWConfig{cfg.pretrain_beta1, cfg.pretrain_beta2, 1e-8, cfg.pretrain_weight_decay}) {
  if (images_.empty()) throw DataError("no images to pretrain on");
  batch_ = std::min(cfg_.pretrain_batch, images_.size());
  if (batch_ % cfg_.accumulation_steps != 0) {
    throw ConfigError("accumulation_steps", "must divide the batch size " + std::to_string(batch_));
  }
  steps_per_epoch_ = images_.size() / batch_;
  schedule_.base_lr = scaled_base_lr(cfg_.reference_lr, cfg_.pretrain_batch);
  schedule_.warmup_epochs = cfg_.pretrain_warmup_fraction * static_cast<double>(cfg_.pretrain_epochs);
  schedule_.total_epochs = static_cast<double>(cfg_.pretrain_epochs);
  schedule_.steps_per_epoch = steps_per_epoch_;
  schedule_.validate();
}

void MaeTrainer::resume(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "mae") throw ConfigError("resume", "not a pretraining checkpoint");
  auto diffs = diff_json(training_snapshot(cfg_), ckpt.meta.value("config", nlohmann::json::object()));
  if (!diffs.empty()) throw ConfigError("resume", "configuration differs from checkpoint: " + format_diffs(diffs));
  import_parameters(model_.parameters(), ckpt);
  import_moments(optimizer_, ckpt);
  optimizer_.set_step_count(ckpt.meta.at("optimizer").at("step").get<std::size_t>());
  epoch_ = ckpt.meta.at("epoch").get<std::size_t>();
}

double MaeTrainer::run_epoch() {
  if (finished()) throw ConfigError("pretrain_epochs", "schedule already completed");
  std::vector<std::size_t> order(images_.size());
  std::iota(order.begin(), order.end(), 0);
  auto shuffle_rng = make_rng(cfg_.seed, stream::kShuffle, {epoch_});
  shuffle(order.begin(), order.end(), shuffle_rng);

  const auto grid = cfg_.encoder_config().grid;
  const std::size_t micro = cfg_.accumulation_steps;
  const std::size_t micro_size = batch_ / micro;
  double total = 0.0;
  for (std::size_t s = 0; s < steps_per_epoch_; ++s) {
    std::vector<PretrainBatch<float>> batches;
    for (std::size_t m = 0; m < micro; ++m) {
      std::span<const std::size_t> rows(order.data() + s * batch_ + m * micro_size, micro_size);
      PretrainBatch<float> b;
      b.patches = patchify(make_batch(images_, rows, cfg_, stats_, true, cfg_.seed, {}, epoch_), grid);
      for (auto r : rows) {
        auto rng = make_rng(cfg_.seed, stream::kMask, {epoch_, r});
        b.masks.push_back(sample_mask(grid.num_patches(), cfg_.mask_ratio, rng));
      }
      batches.push_back(std::move(b));
    }
    const double lr = cosine_warmup_lr(schedule_, optimizer_.step_count());
    const double loss = pretrain_step(model_, optimizer_, std::span<const PretrainBatch<float>>(batches), lr);
    if (!std::isfinite(loss)) throw NumericError("non-finite pretraining loss at epoch " + std::to_string(epoch_ + 1));
    total += loss;
  }
  ++epoch_;
  return total / static_cast<double>(steps_per_epoch_);
}

Checkpoint MaeTrainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "mae"},
               {"model", encoder_config_to_json(cfg_.encoder_config())},
               {"mae", mae_config_to_json(cfg_.mae_config())},
               {"config", training_snapshot(cfg_)},
               {"stats", stats_to_json(stats_)},
               {"epoch", epoch_},
               {"optimizer", {{"step", optimizer_.step_count()}}},
               {"rng", {{"seed", cfg_.seed}, {"next_epoch", epoch_}}}};
  export_parameters(model_.parameters(), ckpt);
  export_moments(optimizer_, ckpt);
  return ckpt;
}

RawImage MaeTrainer::reconstruction_grid(std::size_t count) const {
  count = std::min(count, images_.size());
  const auto grid = cfg_.encoder_config().grid;
  const std::size_t size = cfg_.image_size;
  const std::size_t gap = 2;
  RawImage out(3 * size + 2 * gap, count * size + (count - 1) * gap, 1, 255);
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), 0);
  const auto images = make_batch(images_, rows, cfg_, stats_, false, cfg_.seed, {}, epoch_);
  const auto patches = patchify(images, grid);
  std::vector<MaskSet> masks;
  for (std::size_t i = 0; i < count; ++i) {
    auto rng = make_rng(cfg_.seed, stream::kMask, {epoch_, i, 1});
    masks.push_back(sample_mask(grid.num_patches(), cfg_.mask_ratio, rng));
  }
  const auto latent = encode_visible(model_.encoder, patches, std::span<const MaskSet>(masks));
  const auto pred = decode_with_mask_tokens(model_.decoder, latent, std::span<const MaskSet>(masks));

  const std::size_t n = grid.num_patches(), p = grid.patch_dim();
  auto src = patches.values();
  auto prd = pred.values();
  std::vector<float> masked(src.begin(), src.end());
  std::vector<float> recon(src.begin(), src.end());
  for (std::size_t i = 0; i < count; ++i) {
    for (auto m : masks[i].masked) {
      const float* orig = src.data() + (i * n + m) * p;
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < p; ++j) mean += orig[j];
      mean /= static_cast<double>(p);
      for (std::size_t j = 0; j < p; ++j) var += (orig[j] - mean) * (orig[j] - mean);
      var /= static_cast<double>(p);
      const double scale = cfg_.normalize_targets ? std::sqrt(var + model_.config().target_eps) : 1.0;
      const double shift = cfg_.normalize_targets ? mean : 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        masked[(i * n + m) * p + j] = static_cast<float>((0.5 - stats_.mean[0]) / stats_.std[0]);
        recon[(i * n + m) * p + j] = static_cast<float>(prd[(i * n + m) * p + j] * scale + shift);
      }
    }
  }
  const Shape shape{count * n, p};
  const std::vector<Tensor<float>> panels = {
      unpatchify(Tensor<float>(shape, {src.begin(), src.end()}), grid),
      unpatchify(Tensor<float>(shape, masked), grid),
      unpatchify(Tensor<float>(shape, recon), grid)};
  for (std::size_t k = 0; k < panels.size(); ++k) {
    auto v = panels[k].values();
    for (std::size_t i = 0; i < count; ++i) {
      const auto tile = to_u8(destandardize(v.subspan(i * size * size, size * size), size, stats_));
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) out.at(k * (size + gap) + x, i * (size + gap) + y) = tile.at(x, y);
      }
    }
  }
  return out;
}

Checkpoint finetune_checkpoint(const FinetuneModel<float>& model, const RunConfig& cfg,
                               const std::vector<std::string>& label_names, const DatasetStats& stats,
                               std::size_t fold) {
  Checkpoint ckpt;
  ckpt.meta = {{"kind", "finetune"},
               {"model", encoder_config_to_json(model.encoder.config())},
               {"head", {{"num_labels", model.num_labels()}, {"hidden", model.hidden.bias.numel()}, {"labels", label_names}}},
               {"config", training_snapshot(cfg)},
               {"stats", stats_to_json(stats)},
               {"fold", fold}};
  export_parameters(model.parameters(), ckpt);
  return ckpt;
}

FinetuneModel<float> load_finetuned(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "finetune") throw ConfigError("checkpoint", "not a fine-tuned checkpoint");
  const auto enc = encoder_config_from_json(ckpt.meta.at("model"));
  const auto& head = ckpt.meta.at("head");
  Rng rng(0);
  FinetuneModel<float> model(enc, head.at("num_labels").get<std::size_t>(), head.at("hidden").get<std::size_t>(), rng);
  import_parameters(model.parameters(), ckpt);
  return model;
}

std::vector<std::size_t> predict(const FinetuneModel<float>& model, std::span<const ImageF> images,
                                 std::span<const std::size_t> rows, const RunConfig& cfg, const DatasetStats& stats) {
  constexpr std::size_t kChunk = 256;
  const auto grid = model.encoder.config().grid;
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  Rng unused(0);
  for (std::size_t begin = 0; begin < rows.size(); begin += kChunk) {
    auto chunk = rows.subspan(begin, std::min(kChunk, rows.size() - begin));
    const auto patches = patchify(make_batch(images, chunk, cfg, stats, false, cfg.seed, {}, 0), grid);
    const auto pred = argmax_rows(classify_forward(model, patches, chunk.size(), false, unused));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

FoldOutcome finetune_fold(const RunConfig& cfg, std::span<const ImageF> images, const SampleManifest& manifest,
                          std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                          std::span<const std::size_t> test_rows, const DatasetStats& stats,
                          const Checkpoint* pretrained, std::size_t fold) {
  if (train_rows.empty()) throw DataError("fold " + std::to_string(fold) + " has no training samples");
  const std::uint64_t tag = fold + 1;
  auto init = make_rng(cfg.seed, stream::kInit, {tag});
  auto model = build_finetune_model(cfg.encoder_config(), pretrained, manifest.num_labels(), cfg.head_hidden,
                                    cfg.drop_path, init);
  AdamW<float> optimizer(model.parameters(),
                         AdamWConfig{cfg.finetune_beta1, cfg.finetune_beta2, 1e-8, cfg.finetune_weight_decay});
  const auto plan = llrd_multipliers(model.depth(), cfg.layer_decay);
  const auto grid = cfg.encoder_config().grid;

  const std::size_t batch = std::min(cfg.finetune_batch, train_rows.size());
  const std::size_t steps = (train_rows.size() + batch - 1) / batch;
  Schedule schedule{cfg.finetune_lr, cfg.finetune_warmup_epochs, static_cast<double>(cfg.finetune_epochs), steps, 0.0};
  schedule.validate();

  const auto labels = manifest.label_indices();
  auto labels_of = [&](std::span<const std::size_t> rows) {
    std::vector<std::size_t> out;
    for (auto r : rows) out.push_back(labels[r]);
    return out;
  };
  const auto val_labels = labels_of(val_rows);
  const std::uint64_t prefix[] = {tag};

  FoldOutcome outcome;
  outcome.fold = fold;
  outcome.train_rows.assign(train_rows.begin(), train_rows.end());
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    auto shuffle_rng = make_rng(cfg.seed, stream::kShuffle, {tag, epoch});
    std::copy(train_rows.begin(), train_rows.end(), order.begin());
    shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t begin = s * batch;
      std::span<const std::size_t> rows(order.data() + begin, std::min(batch, order.size() - begin));
      const auto patches = patchify(make_batch(images, rows, cfg, stats, true, cfg.seed, prefix, epoch), grid);
      const auto y = labels_of(rows);
      auto drop_rng = make_rng(cfg.seed, stream::kDropPath, {tag, epoch, s});
      rec.lr = cosine_warmup_lr(schedule, optimizer.step_count());
      const double loss = finetune_step(model, optimizer, patches, std::span<const std::size_t>(y), rec.lr, plan,
                                        cfg.label_smoothing, drop_rng);
      if (!std::isfinite(loss)) throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch + 1));
      rec.loss += loss / static_cast<double>(steps);
    }
    if (!val_rows.empty()) {
      rec.val_accuracy = accuracy(predict(model, images, val_rows, cfg, stats), val_labels);
      if (epoch == 0) outcome.first_val_accuracy = rec.val_accuracy;
    }
    outcome.history.push_back(rec);
  }

  if (!test_rows.empty()) {
    const auto pred = predict(model, images, test_rows, cfg, stats);
    const auto truth = labels_of(test_rows);
    outcome.test_accuracy = accuracy(pred, truth);
    outcome.confusion = ConfusionMatrix::from(pred, truth, manifest.num_labels());
  } else {
    outcome.confusion = ConfusionMatrix(manifest.num_labels());
  }
  outcome.checkpoint = finetune_checkpoint(model, cfg, manifest.labels, stats, fold);
  return outcome;
}

}  // namespace pmae
