// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pmae/commands.hpp"
#include "pmae/config.hpp"
#include "pmae/error.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> fraction;
  std::optional<std::string> folds;
  bool scratch = false;
  std::optional<std::string> resume;
  bool dump_recon = false;
  std::optional<std::string> manifest;
  std::optional<std::string> checkpoint;
  std::optional<std::string> input;
  std::optional<std::string> stats;
};

int error_line(const std::string& kind, const std::string& message, const std::string& field = "") {
  nlohmann::json j = {{"status", "error"}, {"kind", kind}, {"message", message}};
  if (!field.empty()) j["field"] = field;
  std::cerr << j.dump() << '\n';
  if (kind == "config") return 2;
  if (kind == "io" || kind == "data") return 3;
  if (kind == "numeric") return 4;
  return 1;
}

std::vector<std::size_t> parse_folds(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw pmae::ConfigError("folds", "expected a comma-separated list of fold indices, got '" + text + "'");
    }
    out.push_back(std::stoul(item));
  }
  return out;
}

pmae::RunConfig build_config(const std::string& mode, const Flags& f) {
  pmae::RunConfig cfg = f.config.empty() ? pmae::RunConfig{} : pmae::load_config(f.config);
  cfg.mode = mode;
  if (f.seed) cfg.seed = *f.seed;
  if (f.out) cfg.out_dir = *f.out;
  if (f.fraction) {
    const double p = *f.fraction;
    if (p != 0.01 && p != 0.05 && p != 0.1 && p != 1.0) {
      throw pmae::ConfigError("fraction", "must be one of 0.01, 0.05, 0.1, 1.0");
    }
    cfg.subset_fraction = p;
  }
  if (f.folds) cfg.folds = parse_folds(*f.folds);
  if (f.scratch) cfg.scratch = true;
  if (f.resume) cfg.resume = *f.resume;
  if (f.dump_recon) cfg.dump_recon = true;
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.input) cfg.input_dir = *f.input;
  if (f.stats) cfg.stats_file = *f.stats;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-autoencoder pretraining and few-shot fine-tuning for plankton images"};
  app.require_subcommand(1);
  Flags flags;

  std::string mode;
  for (const char* name : {"pretrain", "finetune", "eval", "preprocess", "synth"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Run seed");
    sub->add_option("--out", flags.out, "Output directory");
    sub->add_option("--manifest", flags.manifest, "Manifest CSV (path,label,source)");
    sub->add_option("--stats", flags.stats, "Dataset statistics JSON");
    sub->add_option("--checkpoint", flags.checkpoint, "Pretrained or fine-tuned checkpoint");
    if (std::string(name) == "finetune") {
      sub->add_option("--fraction", flags.fraction, "Label budget: 0.01, 0.05, 0.1 or 1.0");
      sub->add_option("--folds", flags.folds, "Comma-separated fold indices");
      sub->add_flag("--scratch", flags.scratch, "Random encoder initialisation");
    }
    if (std::string(name) == "pretrain") {
      sub->add_option("--resume", flags.resume, "Checkpoint to resume from");
      sub->add_flag("--dump-recon", flags.dump_recon, "Write reconstruction grids with checkpoints");
    }
    if (std::string(name) == "preprocess") sub->add_option("--input", flags.input, "Input image tree");
    sub->callback([&mode, name] { mode = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return error_line("usage", e.what());
  }

  try {
    const auto cfg = build_config(mode, flags);
    pmae::run_command(cfg, std::cout);
  } catch (const pmae::ConfigError& e) {
    return error_line(e.kind(), e.what(), e.field());
  } catch (const pmae::Error& e) {
    return error_line(e.kind(), e.what());
  } catch (const std::exception& e) {
    return error_line("internal", e.what());
  }
  std::cout << nlohmann::json{{"status", "ok"}, {"command", mode}}.dump() << '\n';
  return 0;
}
