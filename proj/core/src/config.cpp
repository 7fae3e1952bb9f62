// SPDX-License-Identifier: Apache-2.0
#include "pmae/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "pmae/error.hpp"

namespace pmae {
namespace {

template <typename Cfg, typename F>
void visit_fields(Cfg& c, F&& f) {
  f("mode", c.mode);
  f("seed", c.seed);
  f("out_dir", c.out_dir);
  f("manifest", c.manifest);
  f("stats_file", c.stats_file);
  f("input_dir", c.input_dir);
  f("checkpoint", c.checkpoint);
  f("resume", c.resume);
  f("scratch", c.scratch);
  f("dump_recon", c.dump_recon);
  f("image_size", c.image_size);
  f("patch_size", c.patch_size);
  f("channels", c.channels);
  f("working_size", c.working_size);
  f("encoder_depth", c.encoder_depth);
  f("encoder_dim", c.encoder_dim);
  f("encoder_heads", c.encoder_heads);
  f("decoder_depth", c.decoder_depth);
  f("decoder_dim", c.decoder_dim);
  f("decoder_heads", c.decoder_heads);
  f("mlp_ratio", c.mlp_ratio);
  f("mask_ratio", c.mask_ratio);
  f("normalize_targets", c.normalize_targets);
  f("pretrain_epochs", c.pretrain_epochs);
  f("pretrain_batch", c.pretrain_batch);
  f("accumulation_steps", c.accumulation_steps);
  f("reference_lr", c.reference_lr);
  f("pretrain_weight_decay", c.pretrain_weight_decay);
  f("pretrain_warmup_fraction", c.pretrain_warmup_fraction);
  f("pretrain_beta1", c.pretrain_beta1);
  f("pretrain_beta2", c.pretrain_beta2);
  f("checkpoint_every", c.checkpoint_every);
  f("stop_after_epoch", c.stop_after_epoch);
  f("recon_samples", c.recon_samples);
  f("crop_scale_min", c.crop_scale_min);
  f("crop_scale_max", c.crop_scale_max);
  f("hflip_prob", c.hflip_prob);
  f("vflip_prob", c.vflip_prob);
  f("noise_padding", c.noise_padding);
  f("crop_x", c.crop_x);
  f("crop_y", c.crop_y);
  f("crop_width", c.crop_width);
  f("crop_height", c.crop_height);
  f("finetune_epochs", c.finetune_epochs);
  f("finetune_batch", c.finetune_batch);
  f("finetune_lr", c.finetune_lr);
  f("finetune_weight_decay", c.finetune_weight_decay);
  f("finetune_warmup_epochs", c.finetune_warmup_epochs);
  f("finetune_beta1", c.finetune_beta1);
  f("finetune_beta2", c.finetune_beta2);
  f("label_smoothing", c.label_smoothing);
  f("drop_path", c.drop_path);
  f("layer_decay", c.layer_decay);
  f("head_hidden", c.head_hidden);
  f("num_folds", c.num_folds);
  f("folds", c.folds);
  f("subset_fraction", c.subset_fraction);
  f("val_fraction", c.val_fraction);
  f("synth_labels", c.synth_labels);
  f("synth_per_label", c.synth_per_label);
  f("synth_image_size", c.synth_image_size);
  f("synth_difficulty", c.synth_difficulty);
}

template <typename V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  const auto& v = j.at(key);
  bool ok = false;
  if constexpr (std::is_same_v<V, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_same_v<V, std::string>) {
    ok = v.is_string();
  } else if constexpr (std::is_floating_point_v<V>) {
    ok = v.is_number();
  } else if constexpr (std::is_integral_v<V>) {
    ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  } else {
    ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const auto& e) {
           return e.is_number_unsigned() || (e.is_number_integer() && e.template get<std::int64_t>() >= 0);
         });
  }
  if (!ok) throw ConfigError(key, "wrong type for value " + v.dump());
  out = v.get<V>();
}

void require(bool cond, const char* field, const std::string& msg) {
  if (!cond) throw ConfigError(field, msg);
}

}  // namespace

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e;
  e.grid = {image_size, patch_size, channels};
  e.depth = encoder_depth;
  e.block = {encoder_dim, encoder_heads, mlp_ratio, 0.0};
  return e;
}

MaeConfig RunConfig::mae_config() const {
  MaeConfig m;
  m.encoder = encoder_config();
  m.decoder = {decoder_depth, decoder_dim, decoder_heads, mlp_ratio};
  m.mask_ratio = mask_ratio;
  m.normalize_targets = normalize_targets;
  return m;
}

void RunConfig::validate() const {
  static const std::set<std::string> modes = {"pretrain", "finetune", "eval", "preprocess", "synth"};
  require(modes.contains(mode), "mode", "unknown mode '" + mode + "'");
  require(working_size >= image_size, "working_size", "must be at least image_size");
  require(pretrain_batch > 0, "pretrain_batch", "must be positive");
  require(accumulation_steps > 0, "accumulation_steps", "must be positive");
  require(pretrain_batch % accumulation_steps == 0, "accumulation_steps", "must divide pretrain_batch");
  require(finetune_batch > 0, "finetune_batch", "must be positive");
  require(reference_lr > 0, "reference_lr", "must be positive");
  require(finetune_lr > 0, "finetune_lr", "must be positive");
  require(pretrain_warmup_fraction >= 0 && pretrain_warmup_fraction <= 1, "pretrain_warmup_fraction", "must lie in [0,1]");
  require(finetune_warmup_epochs >= 0 && finetune_warmup_epochs < static_cast<double>(finetune_epochs),
          "finetune_warmup_epochs", "must lie in [0, finetune_epochs)");
  require(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1, "crop_scale_min",
          "crop scale range must satisfy 0 < min <= max <= 1");
  require(hflip_prob >= 0 && hflip_prob <= 1, "hflip_prob", "must lie in [0,1]");
  require(vflip_prob >= 0 && vflip_prob <= 1, "vflip_prob", "must lie in [0,1]");
  require(label_smoothing >= 0 && label_smoothing < 1, "label_smoothing", "must lie in [0,1)");
  require(drop_path >= 0 && drop_path < 1, "drop_path", "must lie in [0,1)");
  require(layer_decay > 0 && layer_decay <= 1, "layer_decay", "must lie in (0,1]");
  require(num_folds >= 2, "num_folds", "need at least 2 folds");
  for (auto f : folds) require(f < num_folds, "folds", "fold " + std::to_string(f) + " out of range");
  require(subset_fraction > 0 && subset_fraction <= 1, "subset_fraction", "must lie in (0,1]");
  require(val_fraction >= 0 && val_fraction < 1, "val_fraction", "must lie in [0,1)");
  require(synth_labels >= 2, "synth_labels", "need at least 2 labels");
  require(synth_per_label >= 1, "synth_per_label", "must be positive");
  require(synth_difficulty > 0, "synth_difficulty", "must be positive");
  require(head_hidden > 0, "head_hidden", "must be positive");
  require(checkpoint_every > 0, "checkpoint_every", "must be positive");
  mae_config().validate();
}

nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  visit_fields(cfg, [&](const char* key, const auto& v) { j[key] = v; });
  return j;
}

nlohmann::json training_snapshot(const RunConfig& cfg) {
  auto j = to_json(cfg);
  for (const char* key : {"mode", "out_dir", "manifest", "stats_file", "input_dir", "checkpoint", "resume", "dump_recon",
                          "stop_after_epoch", "checkpoint_every", "recon_samples", "folds", "synth_labels",
                          "synth_per_label", "synth_image_size", "synth_difficulty", "crop_x", "crop_y", "crop_width",
                          "crop_height"}) {
    j.erase(key);
  }
  return j;
}

RunConfig merge_config(const RunConfig& base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
  std::set<std::string> known;
  RunConfig out = base;
  visit_fields(out, [&](const char* key, auto& v) {
    known.insert(key);
    if (j.contains(key)) read_field(j, key, v);
  });
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError(it.key(), "unknown configuration key");
  }
  return out;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", path.string() + ": " + e.what());
  }
  return merge_config(RunConfig{}, j);
}

void write_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"image_size", cfg.grid.image_size},
          {"patch_size", cfg.grid.patch_size},
          {"channels", cfg.grid.channels},
          {"depth", cfg.depth},
          {"embed_dim", cfg.block.embed_dim},
          {"num_heads", cfg.block.num_heads},
          {"mlp_ratio", cfg.block.mlp_ratio},
          {"drop_path_rate", cfg.block.drop_path_rate},
          {"use_class_token", cfg.use_class_token}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  try {
    EncoderConfig cfg;
    cfg.grid.image_size = j.at("image_size").get<std::size_t>();
    cfg.grid.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.grid.channels = j.at("channels").get<std::size_t>();
    cfg.depth = j.at("depth").get<std::size_t>();
    cfg.block.embed_dim = j.at("embed_dim").get<std::size_t>();
    cfg.block.num_heads = j.at("num_heads").get<std::size_t>();
    cfg.block.mlp_ratio = j.at("mlp_ratio").get<double>();
    cfg.block.drop_path_rate = j.at("drop_path_rate").get<double>();
    cfg.use_class_token = j.at("use_class_token").get<bool>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model", e.what());
  }
}

nlohmann::json mae_config_to_json(const MaeConfig& cfg) {
  return {{"encoder", encoder_config_to_json(cfg.encoder)},
          {"decoder",
           {{"depth", cfg.decoder.depth},
            {"embed_dim", cfg.decoder.embed_dim},
            {"num_heads", cfg.decoder.num_heads},
            {"mlp_ratio", cfg.decoder.mlp_ratio}}},
          {"mask_ratio", cfg.mask_ratio},
          {"normalize_targets", cfg.normalize_targets},
          {"target_eps", cfg.target_eps}};
}

MaeConfig mae_config_from_json(const nlohmann::json& j) {
  try {
    MaeConfig cfg;
    cfg.encoder = encoder_config_from_json(j.at("encoder"));
    const auto& d = j.at("decoder");
    cfg.decoder.depth = d.at("depth").get<std::size_t>();
    cfg.decoder.embed_dim = d.at("embed_dim").get<std::size_t>();
    cfg.decoder.num_heads = d.at("num_heads").get<std::size_t>();
    cfg.decoder.mlp_ratio = d.at("mlp_ratio").get<double>();
    cfg.mask_ratio = j.at("mask_ratio").get<double>();
    cfg.normalize_targets = j.at("normalize_targets").get<bool>();
    cfg.target_eps = j.at("target_eps").get<double>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model", e.what());
  }
}

}  // namespace pmae
