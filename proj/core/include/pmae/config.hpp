// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmae/mae.hpp"
#include "pmae/nn.hpp"

namespace pmae {

/// Every tunable of a run, flat so that a JSON config file maps one key to
/// one field. Defaults are the desk-scale model with the reference
/// hyperparameters of the training protocol.
struct RunConfig {
  std::string mode = "pretrain";
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // Data.
  std::string manifest;
  std::string stats_file;
  std::string input_dir;
  std::string checkpoint;
  std::string resume;
  bool scratch = false;
  bool dump_recon = false;

  // Model.
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t working_size = 36;
  std::size_t encoder_depth = 4;
  std::size_t encoder_dim = 64;
  std::size_t encoder_heads = 4;
  std::size_t decoder_depth = 2;
  std::size_t decoder_dim = 32;
  std::size_t decoder_heads = 4;
  double mlp_ratio = 4.0;
  double mask_ratio = 0.75;
  bool normalize_targets = true;

  // Pretraining.
  std::size_t pretrain_epochs = 100;
  std::size_t pretrain_batch = 64;
  std::size_t accumulation_steps = 1;
  double reference_lr = 1.5e-4;
  double pretrain_weight_decay = 0.05;
  double pretrain_warmup_fraction = 0.05;
  double pretrain_beta1 = 0.9;
  double pretrain_beta2 = 0.95;
  std::size_t checkpoint_every = 10;
  // Stop (with a checkpoint) after this epoch; 0 runs the whole schedule.
  std::size_t stop_after_epoch = 0;
  std::size_t recon_samples = 8;

  // Augmentation and preprocessing.
  double crop_scale_min = 0.4;
  double crop_scale_max = 1.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  bool noise_padding = true;
  std::size_t crop_x = 0;
  std::size_t crop_y = 0;
  std::size_t crop_width = 0;
  std::size_t crop_height = 0;

  // Fine-tuning.
  std::size_t finetune_epochs = 50;
  std::size_t finetune_batch = 128;
  double finetune_lr = 2e-3;
  double finetune_weight_decay = 0.01;
  double finetune_warmup_epochs = 5;
  double finetune_beta1 = 0.9;
  double finetune_beta2 = 0.999;
  double label_smoothing = 0.1;
  double drop_path = 0.2;
  double layer_decay = 0.75;
  std::size_t head_hidden = 512;
  std::size_t num_folds = 5;
  std::vector<std::size_t> folds;
  double subset_fraction = 1.0;
  double val_fraction = 0.15;

  // Synthetic corpus.
  std::size_t synth_labels = 6;
  std::size_t synth_per_label = 100;
  std::size_t synth_image_size = 36;
  double synth_difficulty = 1.0;

  EncoderConfig encoder_config() const;
  MaeConfig mae_config() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Only the keys that influence training results (no paths or run control);
// stored in checkpoints and compared on resume.
nlohmann::json training_snapshot(const RunConfig& cfg);
// Starts from `base` and overrides every key present in `j`. Unknown keys and
// wrongly typed values throw ConfigError naming the key.
RunConfig merge_config(const RunConfig& base, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void write_config(const std::filesystem::path& path, const RunConfig& cfg);

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json mae_config_to_json(const MaeConfig& cfg);
MaeConfig mae_config_from_json(const nlohmann::json& j);

}  // namespace pmae
