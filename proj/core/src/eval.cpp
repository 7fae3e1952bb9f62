// SPDX-License-Identifier: Apache-2.0
#include "pmae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pmae/error.hpp"

namespace pmae {
namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw DataError("accuracy of an empty evaluation");
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: predictions and labels differ in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_labels) : k_(num_labels), counts_(num_labels * num_labels, 0) {
  if (num_labels == 0) throw ConfigError("num_labels", "confusion matrix needs at least one label");
}

ConfusionMatrix ConfusionMatrix::from(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                      std::size_t num_labels) {
  if (predictions.size() != labels.size()) throw ShapeError("confusion matrix: predictions and labels differ in length");
  ConfusionMatrix cm(num_labels);
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(predictions[i], labels[i]);
  return cm;
}

void ConfusionMatrix::add(std::size_t prediction, std::size_t label) {
  if (prediction >= k_ || label >= k_) {
    throw DataError("label index " + std::to_string(std::max(prediction, label)) + " out of range for " +
                    std::to_string(k_) + " labels");
  }
  ++counts_[label * k_ + prediction];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) throw DataError("accuracy of an empty confusion matrix");
  return static_cast<double>(trace()) / static_cast<double>(n);
}

std::vector<double> ConfusionMatrix::row_normalized() const {
  std::vector<double> out(counts_.size(), 0.0);
  for (std::size_t r = 0; r < k_; ++r) {
    std::size_t row = 0;
    for (std::size_t c = 0; c < k_; ++c) row += at(r, c);
    if (row == 0) continue;
    for (std::size_t c = 0; c < k_; ++c) out[r * k_ + c] = 100.0 * static_cast<double>(at(r, c)) / static_cast<double>(row);
  }
  return out;
}

std::vector<std::optional<double>> ConfusionMatrix::per_label_accuracy() const {
  std::vector<std::optional<double>> out(k_);
  for (std::size_t r = 0; r < k_; ++r) {
    std::size_t row = 0;
    for (std::size_t c = 0; c < k_; ++c) row += at(r, c);
    if (row > 0) out[r] = static_cast<double>(at(r, r)) / static_cast<double>(row);
  }
  return out;
}

std::string ConfusionMatrix::to_csv(std::span<const std::string> names) const {
  if (names.size() != k_) throw ShapeError("confusion matrix: wrong number of label names");
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < k_; ++r) {
    out << names[r];
    for (std::size_t c = 0; c < k_; ++c) out << ',' << at(r, c);
    out << '\n';
  }
  return out.str();
}

std::string ConfusionMatrix::to_text(std::span<const std::string> names) const {
  if (names.size() != k_) throw ShapeError("confusion matrix: wrong number of label names");
  std::size_t width = 6;
  for (const auto& n : names) width = std::max(width, n.size());
  const auto pct = row_normalized();
  std::ostringstream out;
  out << std::string(width, ' ');
  for (std::size_t c = 0; c < k_; ++c) out << ' ' << std::string(7 - std::min<std::size_t>(7, std::to_string(c).size()), ' ') << c;
  out << '\n';
  for (std::size_t r = 0; r < k_; ++r) {
    out << names[r] << std::string(width - names[r].size(), ' ');
    for (std::size_t c = 0; c < k_; ++c) {
      const auto cell = fixed(pct[r * k_ + c], 1);
      out << ' ' << std::string(7 - std::min<std::size_t>(7, cell.size()), ' ') << cell;
    }
    out << '\n';
  }
  return out.str();
}

RawImage ConfusionMatrix::heat_map(std::size_t cell) const {
  RawImage img(k_ * cell, k_ * cell, 1);
  const auto pct = row_normalized();
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(2.55 * pct[(y / cell) * k_ + x / cell]));
    }
  }
  return img;
}

std::string FoldSummary::format(double scale) const {
  auto s = fixed(mean * scale, 2) + " ± ";
  return s + (std ? fixed(*std * scale, 2) : std::string("n/a"));
}

FoldSummary aggregate_folds(std::span<const double> per_fold) {
  if (per_fold.empty()) throw DataError("no fold results to aggregate");
  FoldSummary s;
  s.values.assign(per_fold.begin(), per_fold.end());
  const auto n = static_cast<double>(per_fold.size());
  s.mean = std::accumulate(per_fold.begin(), per_fold.end(), 0.0) / n;
  if (per_fold.size() >= 2) {
    double ss = 0.0;
    for (double v : per_fold) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

std::string format_results(std::span<const FoldResult> results) {
  std::ostringstream out;
  out << "fold,subset_fraction,accuracy\n";
  std::vector<double> acc;
  for (const auto& r : results) {
    out << r.fold << ',' << fixed(r.subset_fraction, 2) << ',' << fixed(r.accuracy, 6) << '\n';
    acc.push_back(r.accuracy);
  }
  if (!acc.empty()) {
    const auto summary = aggregate_folds(acc);
    out << "# folds " << acc.size() << '\n';
    out << "# mean " << fixed(summary.mean, 6) << '\n';
    out << "# std " << (summary.std ? fixed(*summary.std, 6) : std::string("undefined")) << '\n';
    out << "# accuracy_percent " << summary.format() << '\n';
  }
  return out.str();
}

void write_results(const std::filesystem::path& path, std::span<const FoldResult> results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << format_results(results);
}

}  // namespace pmae
