// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "pmae/random.hpp"
#include "pmae/tensor.hpp"

namespace pmae {

/// 8-bit image, row-major with interleaved channels (1 = gray, 3 = RGB).
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0);

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  void validate() const;
  bool operator==(const RawImage&) const = default;
};

/// Planar float image ([channel][row][col]), values nominally in [0,1].
struct ImageF {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<float> data;

  ImageF() = default;
  ImageF(std::size_t w, std::size_t h, std::size_t c, float fill = 0.0f);

  float at(std::size_t x, std::size_t y, std::size_t c = 0) const { return data[(c * height + y) * width + x]; }
  float& at(std::size_t x, std::size_t y, std::size_t c = 0) { return data[(c * height + y) * width + x]; }
  bool operator==(const ImageF&) const = default;
};

struct BackgroundModel {
  std::vector<std::uint8_t> mode;
  std::vector<double> noise_std;
};

/// Per-channel mean/std of preprocessed pixels on the [0,1] scale.
struct DatasetStats {
  std::vector<double> mean;
  std::vector<double> std;

  void validate() const;
};

nlohmann::json stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(const nlohmann::json& j);
DatasetStats load_stats(const std::filesystem::path& path);
void save_stats(const std::filesystem::path& path, const DatasetStats& stats);

/// Streaming (double) sums; the result does not depend on image order beyond
/// floating-point associativity.
class StatsAccumulator {
 public:
  void add(const ImageF& img);
  std::size_t count() const { return count_; }
  // Rejects an empty accumulator and a channel whose std falls below 1e-6.
  DatasetStats finish() const;

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::size_t count_ = 0;
};

// PNG (8-bit gray or RGB, alpha dropped) and binary PGM/PPM, by content.
RawImage read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& img);
void write_pnm(const std::filesystem::path& path, const RawImage& img);

BackgroundModel estimate_background(const RawImage& img);
RawImage pad_to_square(const RawImage& img, const BackgroundModel& bg, Rng& rng, bool noise = true);
RawImage crop_raw(const RawImage& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h);

ImageF to_float(const RawImage& img);
RawImage to_u8(const ImageF& img);
ImageF grayscale(const ImageF& img);
// Bicubic (a = -0.5), half-pixel centers, clamped borders and output.
ImageF resize_bicubic(const ImageF& img, std::size_t out_w, std::size_t out_h);
ImageF crop(const ImageF& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h);
ImageF flip_horizontal(const ImageF& img);
ImageF flip_vertical(const ImageF& img);

struct CropBox {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

// Area-scaled, aspect-jittered crop; ten attempts, then a centered fallback.
CropBox sample_crop(std::size_t width, std::size_t height, double scale_min, double scale_max, double ratio_min,
                    double ratio_max, Rng& rng);

struct AugmentParams {
  std::size_t working_size = 36;
  std::size_t out_size = 32;
  double scale_min = 0.4;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;

  void validate() const;
};

// Square padded image -> working-size grayscale float image.
ImageF prepare_image(const RawImage& padded, std::size_t working_size);

// Augment / evaluate an already prepared image. Output: [1 x out x out].
Tensor<float> augment_prepared(const ImageF& prepared, const AugmentParams& params, const DatasetStats& stats, Rng& rng);
Tensor<float> eval_prepared(const ImageF& prepared, std::size_t out_size, const DatasetStats& stats);

Tensor<float> train_augment(const RawImage& img, const AugmentParams& params, const DatasetStats& stats, Rng& rng);
Tensor<float> eval_transform(const RawImage& img, std::size_t working_size, std::size_t out_size, const DatasetStats& stats);

// Inverse of standardization, for reconstruction dumps.
ImageF destandardize(std::span<const float> values, std::size_t size, const DatasetStats& stats);

}  // namespace pmae
