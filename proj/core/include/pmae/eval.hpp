// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pmae/imaging.hpp"

namespace pmae {

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Rows are true labels, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_labels);
  static ConfusionMatrix from(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                              std::size_t num_labels);

  void add(std::size_t prediction, std::size_t label);
  void merge(const ConfusionMatrix& other);

  std::size_t size() const { return k_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
  double accuracy() const;
  // Per-row percentages; rows without samples are all zero.
  std::vector<double> row_normalized() const;
  // Recall per label; nullopt for labels absent from the evaluation.
  std::vector<std::optional<double>> per_label_accuracy() const;

  std::string to_csv(std::span<const std::string> names) const;
  std::string to_text(std::span<const std::string> names) const;
  RawImage heat_map(std::size_t cell = 16) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::size_t> counts_;
};

struct FoldSummary {
  std::vector<double> values;
  double mean = 0.0;
  // Sample (n-1) standard deviation; undefined below two folds.
  std::optional<double> std;

  // "mm.mm ± s.ss" after multiplying by `scale` (percent by default).
  std::string format(double scale = 100.0) const;
};

FoldSummary aggregate_folds(std::span<const double> per_fold);

struct FoldResult {
  std::size_t fold = 0;
  double subset_fraction = 1.0;
  double accuracy = 0.0;
};

// One CSV row per fold followed by a commented summary block.
std::string format_results(std::span<const FoldResult> results);
void write_results(const std::filesystem::path& path, std::span<const FoldResult> results);

}  // namespace pmae
