// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pmae {

struct ManifestRecord {
  std::string path;
  std::string label;
  std::string source;
  std::size_t label_index = 0;
};

/// Validated list of labelled images. Label indices follow the sorted label
/// names. Relative paths resolve against `root` (the manifest's directory).
struct SampleManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  std::vector<std::string> labels;
  std::vector<std::string> warnings;

  std::size_t size() const { return records.size(); }
  std::size_t num_labels() const { return labels.size(); }
  std::filesystem::path resolve(std::size_t i) const;
  std::vector<std::size_t> label_indices() const;
  std::vector<std::size_t> label_counts(std::span<const std::size_t> subset) const;
};

// Rejects empty input, empty fields and duplicate paths; assigns label indices.
SampleManifest make_manifest(std::vector<ManifestRecord> records, std::filesystem::path root = {});
// CSV with header `path,label,source` (source may be empty or absent).
SampleManifest load_manifest(const std::filesystem::path& path);
// Writes the given rows (all rows when `rows` is empty). A non-empty `split`
// adds a fourth column with that value.
void save_manifest(const std::filesystem::path& path, const SampleManifest& manifest,
                   std::span<const std::size_t> rows = {}, const std::string& split = "");

enum class Part : std::uint8_t { train, val, test };
const char* part_name(Part p);

struct FoldSplit {
  std::size_t fold = 0;
  std::size_t num_folds = 0;
  std::uint64_t seed = 0;
  std::vector<Part> assignment;

  std::vector<std::size_t> indices(Part p) const;
};

/// Per-label seeded shuffle, then contiguous K-way slices give the test
/// parts. Validation rows are taken per label from the rest so that every
/// part stays within one sample of its nominal per-label share.
std::vector<FoldSplit> stratified_kfold(const SampleManifest& manifest, std::size_t num_folds, std::uint64_t seed,
                                        double val_fraction = 0.15);

void write_split_files(const std::filesystem::path& dir, const SampleManifest& manifest, const FoldSplit& split);

// max(1, round-half-up(p * n)).
std::size_t budget_count(std::size_t n, double fraction);

/// Per-label seeded draw without replacement from `part`. The draw order per
/// label depends only on (seed, label), so smaller fractions give subsets of
/// larger ones. Result is sorted.
std::vector<std::size_t> sample_label_subset(const SampleManifest& manifest, std::span<const std::size_t> part,
                                             double fraction, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t num_labels = 6;
  std::size_t per_label = 100;
  std::size_t image_size = 36;
  double difficulty = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RawImage;

// Label names are "<family>_<variant>", e.g. "chain_0".
std::string synthetic_label_name(std::size_t label);
RawImage synthesize_image(const SyntheticSpec& spec, std::size_t label, std::size_t index);

/// Writes images/<label>/<index>.png and manifest.csv under `dir`.
SampleManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace pmae
