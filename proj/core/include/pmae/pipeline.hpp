// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training and evaluation loops shared by the command-line tool and the
// acceptance suite. Everything here runs serially; all randomness is drawn
// from named seed streams keyed by (seed, epoch, sample index, ...).

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmae/checkpoint.hpp"
#include "pmae/classifier.hpp"
#include "pmae/config.hpp"
#include "pmae/data.hpp"
#include "pmae/eval.hpp"
#include "pmae/imaging.hpp"
#include "pmae/mae.hpp"
#include "pmae/optim.hpp"

namespace pmae {

AugmentParams augment_params(const RunConfig& cfg);

/// Reads every manifest image, applies the optional rectangular crop, pads it
/// to a square (seeded per record) and converts it to a working-size
/// grayscale float image.
std::vector<ImageF> prepare_manifest_images(const SampleManifest& manifest, const RunConfig& cfg);
DatasetStats stats_of(std::span<const ImageF> images);

// [n x 1 x S x S] batch of augmented (train) or center-cropped (eval) images.
Tensor<float> make_batch(std::span<const ImageF> images, std::span<const std::size_t> rows, const RunConfig& cfg,
                         const DatasetStats& stats, bool train, std::uint64_t seed,
                         std::span<const std::uint64_t> stream_prefix, std::size_t epoch);

class MaeTrainer {
 public:
  MaeTrainer(const RunConfig& cfg, std::vector<ImageF> images, DatasetStats stats);

  // Restores parameters, optimizer moments and the epoch counter. The stored
  // training configuration must equal the current one.
  void resume(const Checkpoint& checkpoint);

  std::size_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  const Schedule& schedule() const { return schedule_; }
  bool finished() const { return epoch_ >= cfg_.pretrain_epochs; }

  // Trains one epoch and returns its mean masked loss.
  double run_epoch();
  Checkpoint checkpoint() const;

  // Rows of [original | masked input | reconstruction] for the first images.
  RawImage reconstruction_grid(std::size_t count) const;

  const MaeModel<float>& model() const { return model_; }
  const DatasetStats& stats() const { return stats_; }

 private:
  RunConfig cfg_;
  std::vector<ImageF> images_;
  DatasetStats stats_;
  MaeModel<float> model_;
  AdamW<float> optimizer_;
  Schedule schedule_;
  std::size_t batch_;
  std::size_t steps_per_epoch_;
  std::size_t epoch_ = 0;
};

Checkpoint finetune_checkpoint(const FinetuneModel<float>& model, const RunConfig& cfg,
                               const std::vector<std::string>& label_names, const DatasetStats& stats,
                               std::size_t fold);
// Rebuilds a fine-tuned model; throws ConfigError if the checkpoint is not one.
FinetuneModel<float> load_finetuned(const Checkpoint& checkpoint);

std::vector<std::size_t> predict(const FinetuneModel<float>& model, std::span<const ImageF> images,
                                 std::span<const std::size_t> rows, const RunConfig& cfg, const DatasetStats& stats);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_accuracy;
};

struct FoldOutcome {
  std::size_t fold = 0;
  std::vector<std::size_t> train_rows;
  double test_accuracy = 0.0;
  std::optional<double> first_val_accuracy;
  ConfusionMatrix confusion{1};
  std::vector<EpochRecord> history;
  Checkpoint checkpoint;
};

/// Fine-tunes on `train_rows` (already subset), tracking validation accuracy
/// each epoch, and evaluates the final model on `test_rows`.
FoldOutcome finetune_fold(const RunConfig& cfg, std::span<const ImageF> images, const SampleManifest& manifest,
                          std::span<const std::size_t> train_rows, std::span<const std::size_t> val_rows,
                          std::span<const std::size_t> test_rows, const DatasetStats& stats,
                          const Checkpoint* pretrained, std::size_t fold);

}  // namespace pmae
