// SPDX-License-Identifier: Apache-2.0
#include "pmae/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "pmae/data.hpp"
#include "pmae/error.hpp"
#include "pmae/eval.hpp"
#include "pmae/pipeline.hpp"

namespace fs = std::filesystem;

namespace pmae {
namespace {

std::string fmt(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string epoch_tag(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04zu", epoch);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

SampleManifest require_manifest(const RunConfig& cfg, std::ostream& log) {
  if (cfg.manifest.empty()) throw ConfigError("manifest", "a manifest file is required");
  auto manifest = load_manifest(cfg.manifest);
  for (const auto& w : manifest.warnings) log << "warning: " << w << '\n';
  if (!manifest.warnings.empty()) throw DataError(std::to_string(manifest.warnings.size()) + " manifest images missing");
  return manifest;
}

DatasetStats resolve_stats(const RunConfig& cfg, std::span<const ImageF> images, std::ostream& log) {
  if (!cfg.stats_file.empty()) return load_stats(cfg.stats_file);
  auto stats = stats_of(images);
  save_stats(fs::path(cfg.out_dir) / "stats.json", stats);
  log << "dataset stats: mean " << fmt(stats.mean[0]) << " std " << fmt(stats.std[0]) << '\n';
  return stats;
}

void begin(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  write_config(fs::path(cfg.out_dir) / "config.json", cfg);
}

void write_confusion(const fs::path& stem, const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  write_text(stem.string() + ".csv", cm.to_csv(names));
  write_text(stem.string() + ".txt", cm.to_text(names));
  write_png(stem.string() + ".png", cm.heat_map());
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".pgm" || ext == ".ppm";
}

}  // namespace

void cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  begin(cfg);
  const auto manifest = require_manifest(cfg, log);
  auto images = prepare_manifest_images(manifest, cfg);
  auto stats = resolve_stats(cfg, images, log);
  MaeTrainer trainer(cfg, std::move(images), std::move(stats));
  const fs::path out(cfg.out_dir);
  const auto log_path = out / "pretrain_log.csv";
  if (!cfg.resume.empty()) {
    trainer.resume(load_checkpoint(cfg.resume));
    log << "resumed at epoch " << trainer.epoch() << '\n';
  }
  if (cfg.resume.empty() || !fs::exists(log_path)) write_text(log_path, "epoch,loss,lr\n");

  while (!trainer.finished()) {
    const double lr = cosine_warmup_lr(trainer.schedule(), trainer.epoch() * trainer.steps_per_epoch());
    const double loss = trainer.run_epoch();
    const auto epoch = trainer.epoch();
    std::ofstream(log_path, std::ios::app) << epoch << ',' << fmt(loss, 8) << ',' << fmt(lr, 10) << '\n';
    log << "epoch " << epoch << " loss " << fmt(loss) << '\n';
    const bool stop = cfg.stop_after_epoch > 0 && epoch >= cfg.stop_after_epoch;
    if (epoch % cfg.checkpoint_every == 0 || trainer.finished() || stop) {
      const auto ckpt = trainer.checkpoint();
      save_checkpoint(out / "checkpoints" / (epoch_tag(epoch) + ".bin"), ckpt);
      save_checkpoint(out / "checkpoint.bin", ckpt);
      if (cfg.dump_recon) write_png(out / "recon" / (epoch_tag(epoch) + ".png"), trainer.reconstruction_grid(cfg.recon_samples));
    }
    if (stop) break;
  }
}

void cmd_finetune(const RunConfig& cfg, std::ostream& log) {
  begin(cfg);
  std::optional<Checkpoint> pretrained;
  if (!cfg.scratch) {
    if (cfg.checkpoint.empty()) throw ConfigError("checkpoint", "a pretrained checkpoint is required unless --scratch is set");
    pretrained = load_checkpoint(cfg.checkpoint);
    if (pretrained->meta.value("kind", "") != "mae") throw ConfigError("checkpoint", "not a pretraining checkpoint");
  }
  const auto manifest = require_manifest(cfg, log);
  const auto images = prepare_manifest_images(manifest, cfg);
  const auto stats = resolve_stats(cfg, images, log);
  const auto splits = stratified_kfold(manifest, cfg.num_folds, cfg.seed, cfg.val_fraction);
  std::vector<std::size_t> folds = cfg.folds;
  if (folds.empty()) {
    for (std::size_t k = 0; k < cfg.num_folds; ++k) folds.push_back(k);
  }

  const fs::path out(cfg.out_dir);
  std::vector<FoldResult> results;
  ConfusionMatrix total(manifest.num_labels());
  for (auto k : folds) {
    const auto& split = splits.at(k);
    const fs::path dir = out / ("fold" + std::to_string(k));
    write_split_files(out / "splits", manifest, split);
    const auto train = sample_label_subset(manifest, split.indices(Part::train), cfg.subset_fraction, cfg.seed);
    save_manifest(dir / "train_subset.csv", manifest, train, "train");
    const auto counts = manifest.label_counts(train);
    log << "fold " << k << ": " << train.size() << " training samples (per label min "
        << *std::min_element(counts.begin(), counts.end()) << ", max " << *std::max_element(counts.begin(), counts.end())
        << ")\n";

    const auto outcome = finetune_fold(cfg, images, manifest, train, split.indices(Part::val), split.indices(Part::test),
                                       stats, pretrained ? &*pretrained : nullptr, k);
    std::string history = "epoch,loss,lr,val_accuracy\n";
    for (const auto& r : outcome.history) {
      history += std::to_string(r.epoch) + ',' + fmt(r.loss, 8) + ',' + fmt(r.lr, 10) + ',' +
                 (r.val_accuracy ? fmt(*r.val_accuracy) : std::string()) + '\n';
    }
    write_text(dir / "train_log.csv", history);
    write_confusion(dir / "confusion", outcome.confusion, manifest.labels);
    save_checkpoint(dir / "checkpoint.bin", outcome.checkpoint);
    results.push_back({k, cfg.subset_fraction, outcome.test_accuracy});
    total.merge(outcome.confusion);
    log << "fold " << k << " test accuracy " << fmt(outcome.test_accuracy) << '\n';
  }
  write_results(out / "results.csv", results);
  write_confusion(out / "confusion", total, manifest.labels);
  std::vector<double> acc;
  for (const auto& r : results) acc.push_back(r.accuracy);
  log << (cfg.scratch ? "scratch" : "pretrained") << " accuracy (%): " << aggregate_folds(acc).format() << '\n';
}

void cmd_eval(const RunConfig& base, std::ostream& log) {
  begin(base);
  if (base.checkpoint.empty()) throw ConfigError("checkpoint", "a fine-tuned checkpoint is required");
  if (!fs::exists(base.checkpoint)) throw IoError("checkpoint not found: " + base.checkpoint);
  const auto ckpt = load_checkpoint(base.checkpoint);
  const auto model = load_finetuned(ckpt);
  RunConfig cfg = base;
  const auto grid = model.encoder.config().grid;
  cfg.image_size = grid.image_size;
  cfg.patch_size = grid.patch_size;
  cfg.channels = grid.channels;
  if (ckpt.meta.contains("config")) cfg.working_size = ckpt.meta["config"].value("working_size", cfg.working_size);
  const auto stats = cfg.stats_file.empty() ? stats_from_json(ckpt.meta.at("stats")) : load_stats(cfg.stats_file);

  const auto manifest = require_manifest(cfg, log);
  const auto names = ckpt.meta.at("head").at("labels").get<std::vector<std::string>>();
  std::vector<std::size_t> truth;
  for (const auto& r : manifest.records) {
    const auto it = std::find(names.begin(), names.end(), r.label);
    if (it == names.end()) throw DataError("label '" + r.label + "' is unknown to the checkpoint");
    truth.push_back(static_cast<std::size_t>(it - names.begin()));
  }
  const auto images = prepare_manifest_images(manifest, cfg);
  std::vector<std::size_t> rows(manifest.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto pred = predict(model, images, rows, cfg, stats);
  const auto cm = ConfusionMatrix::from(pred, truth, names.size());

  nlohmann::json metrics = {{"num_samples", pred.size()}, {"accuracy", accuracy(pred, truth)}};
  const auto per_label = cm.per_label_accuracy();
  for (std::size_t l = 0; l < names.size(); ++l) {
    metrics["per_label_accuracy"][names[l]] = per_label[l] ? nlohmann::json(*per_label[l]) : nlohmann::json(nullptr);
  }
  const fs::path out(cfg.out_dir);
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::string lines = "path,label,predicted\n";
  for (std::size_t i = 0; i < pred.size(); ++i) lines += manifest.records[i].path + ',' + manifest.records[i].label + ',' + names[pred[i]] + '\n';
  write_text(out / "predictions.csv", lines);
  write_confusion(out / "confusion", cm, names);
  log << "accuracy " << fmt(metrics["accuracy"].get<double>()) << " on " << pred.size() << " images\n" << cm.to_text(names);
}

void cmd_preprocess(const RunConfig& cfg, std::ostream& log) {
  begin(cfg);
  if (cfg.input_dir.empty()) throw ConfigError("input_dir", "an input directory is required");
  const fs::path in(cfg.input_dir);
  if (!fs::is_directory(in)) throw IoError("not a directory: " + cfg.input_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(in)) {
    if (e.is_regular_file() && is_image_file(e.path())) files.push_back(fs::relative(e.path(), in));
  }
  std::sort(files.begin(), files.end());

  const fs::path out(cfg.out_dir);
  std::vector<ManifestRecord> records;
  StatsAccumulator acc;
  for (std::size_t i = 0; i < files.size(); ++i) {
    RawImage raw;
    try {
      raw = read_image(in / files[i]);
      if (cfg.crop_width > 0 && cfg.crop_height > 0) raw = crop_raw(raw, cfg.crop_x, cfg.crop_y, cfg.crop_width, cfg.crop_height);
    } catch (const Error& e) {
      log << "skipped " << (in / files[i]).string() << ": " << e.what() << '\n';
      continue;
    }
    auto rng = make_rng(cfg.seed, stream::kPad, {i});
    const auto padded = pad_to_square(raw, estimate_background(raw), rng, cfg.noise_padding);
    auto rel = fs::path("images") / files[i];
    rel.replace_extension(".png");
    write_png(out / rel, padded);
    acc.add(prepare_image(padded, cfg.working_size));
    const auto label = files[i].has_parent_path() ? files[i].begin()->string() : std::string("unlabeled");
    records.push_back({rel.generic_string(), label, "preprocess", 0});
  }
  if (records.empty()) throw DataError("no readable images under " + cfg.input_dir);
  const auto manifest = make_manifest(std::move(records), out);
  save_manifest(out / "manifest.csv", manifest);
  const auto stats = acc.finish();
  save_stats(out / "stats.json", stats);
  log << "preprocessed " << manifest.size() << " images; mean " << fmt(stats.mean[0]) << " std " << fmt(stats.std[0]) << '\n';
}

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  begin(cfg);
  SyntheticSpec spec{cfg.synth_labels, cfg.synth_per_label, cfg.synth_image_size, cfg.synth_difficulty, cfg.seed};
  const auto manifest = generate_synthetic_dataset(spec, cfg.out_dir);
  log << "wrote " << manifest.size() << " images in " << manifest.num_labels() << " labels to " << cfg.out_dir << '\n';
}

void run_command(const RunConfig& cfg, std::ostream& log) {
  if (cfg.mode == "pretrain") return cmd_pretrain(cfg, log);
  if (cfg.mode == "finetune") return cmd_finetune(cfg, log);
  if (cfg.mode == "eval") return cmd_eval(cfg, log);
  if (cfg.mode == "preprocess") return cmd_preprocess(cfg, log);
  if (cfg.mode == "synth") return cmd_synth(cfg, log);
  throw ConfigError("mode", "unknown mode '" + cfg.mode + "'");
}

}  // namespace pmae
