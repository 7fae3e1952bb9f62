// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>

#include "pmae/config.hpp"

namespace pmae {

// Each command validates the config, writes the effective config to
// <out_dir>/config.json and its outputs under <out_dir>. Errors are thrown as
// pmae::Error subclasses.
void cmd_pretrain(const RunConfig& cfg, std::ostream& log);
void cmd_finetune(const RunConfig& cfg, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& log);
void cmd_preprocess(const RunConfig& cfg, std::ostream& log);
void cmd_synth(const RunConfig& cfg, std::ostream& log);

// Dispatches on cfg.mode.
void run_command(const RunConfig& cfg, std::ostream& log);

}  // namespace pmae
