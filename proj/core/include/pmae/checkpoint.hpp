// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint layout (all integers little-endian):
//   "MAEM" | u32 version | u32 json length | json metadata
//   then until EOF, one record per tensor:
//   u32 name length | name | u32 rank | u32 extents[rank] | f32 values[]

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmae/nn.hpp"

namespace pmae {

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ConfigDiff {
  std::string key;
  nlohmann::json expected;
  nlohmann::json actual;
};

// Flat key-by-key comparison of two JSON objects (nested keys joined by '.').
std::vector<ConfigDiff> diff_json(const nlohmann::json& expected, const nlohmann::json& actual);
std::string format_diffs(const std::vector<ConfigDiff>& diffs);

void export_parameters(const ParamList<float>& params, Checkpoint& checkpoint, const std::string& prefix = "");
// Copies every parameter's values from the record of the same name. Missing
// records or shape mismatches throw ConfigError.
void import_parameters(const ParamList<float>& params, const Checkpoint& checkpoint, const std::string& prefix = "");

}  // namespace pmae
