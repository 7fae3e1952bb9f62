// SPDX-License-Identifier: Apache-2.0
#include "pmae/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pmae/error.hpp"

namespace pmae {
namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

Taps make_taps(std::size_t in, std::size_t out) {
  Taps taps;
  taps.index.resize(out);
  taps.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto last = static_cast<std::ptrdiff_t>(in) - 1;
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      auto idx = static_cast<std::ptrdiff_t>(base) + k - 1;
      taps.index[o][k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, last));
      taps.weight[o][k] = cubic_weight(frac - static_cast<double>(k - 1));
    }
  }
  return taps;
}

Tensor<float> standardize(const ImageF& img, const DatasetStats& stats) {
  if (stats.mean.size() != img.channels || stats.std.size() != img.channels) {
    throw ConfigError("stats", "channel count " + std::to_string(stats.mean.size()) + " does not match image channels " +
                                   std::to_string(img.channels));
  }
  std::vector<float> dst(img.data.size());
  const std::size_t plane = img.width * img.height;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const double mu = stats.mean[c];
    const double sd = stats.std[c];
    for (std::size_t i = 0; i < plane; ++i) {
      dst[c * plane + i] = static_cast<float>((static_cast<double>(img.data[c * plane + i]) - mu) / sd);
    }
  }
  return Tensor<float>({img.channels, img.height, img.width}, std::move(dst));
}

}  // namespace

RawImage::RawImage(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill)
    : width(w), height(h), channels(c), pixels(w * h * c, fill) {
  validate();
}

void RawImage::validate() const {
  if (width == 0 || height == 0) throw DataError("image has zero extent");
  if (channels != 1 && channels != 3) throw DataError("image must have 1 or 3 channels, got " + std::to_string(channels));
  if (pixels.size() != width * height * channels) throw DataError("image pixel buffer has wrong size");
}

ImageF::ImageF(std::size_t w, std::size_t h, std::size_t c, float fill)
    : width(w), height(h), channels(c), data(w * h * c, fill) {}

void DatasetStats::validate() const {
  if (mean.empty() || mean.size() != std.size()) throw ConfigError("stats", "mean/std must be nonempty and equal length");
  for (double s : std) {
    if (!(s >= 1e-6)) throw ConfigError("stats", "standard deviation below 1e-6 (constant dataset?)");
  }
}

nlohmann::json stats_to_json(const DatasetStats& stats) { return {{"mean", stats.mean}, {"std", stats.std}}; }

DatasetStats stats_from_json(const nlohmann::json& j) {
  DatasetStats s;
  try {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("stats", e.what());
  }
  s.validate();
  return s;
}

DatasetStats load_stats(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open stats file " + path.string());
  try {
    return stats_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("stats", path.string() + ": " + e.what());
  }
}

void save_stats(const std::filesystem::path& path, const DatasetStats& stats) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << stats_to_json(stats).dump(2) << '\n';
}

void StatsAccumulator::add(const ImageF& img) {
  if (sum_.empty()) {
    sum_.assign(img.channels, 0.0);
    sum_sq_.assign(img.channels, 0.0);
  }
  if (img.channels != sum_.size()) throw DataError("stats: inconsistent channel count");
  const std::size_t plane = img.width * img.height;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = img.data[c * plane + i];
      sum_[c] += v;
      sum_sq_[c] += v * v;
    }
  }
  count_ += plane;
}

DatasetStats StatsAccumulator::finish() const {
  if (count_ == 0) throw ConfigError("manifest", "cannot compute statistics of an empty dataset");
  DatasetStats s;
  const auto n = static_cast<double>(count_);
  for (std::size_t c = 0; c < sum_.size(); ++c) {
    const double mean = sum_[c] / n;
    s.mean.push_back(mean);
    s.std.push_back(std::sqrt(std::max(0.0, sum_sq_[c] / n - mean * mean)));
  }
  s.validate();
  return s;
}

BackgroundModel estimate_background(const RawImage& img) {
  img.validate();
  std::vector<std::pair<std::size_t, std::size_t>> border;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      if (y == 0 || x == 0 || y + 1 == img.height || x + 1 == img.width) border.emplace_back(x, y);
    }
  }
  BackgroundModel bg;
  const std::size_t n = border.size();
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n))));
  for (std::size_t c = 0; c < img.channels; ++c) {
    std::array<std::size_t, 256> hist{};
    for (auto [x, y] : border) ++hist[img.at(x, y, c)];
    const auto mode = static_cast<std::uint8_t>(std::max_element(hist.begin(), hist.end()) - hist.begin());

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto dist = [&](std::size_t i) { return std::abs(int{img.at(border[i].first, border[i].second, c)} - int{mode}); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });

    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += img.at(border[order[i]].first, border[order[i]].second, c);
    const double mean = sum / static_cast<double>(k);
    double var = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double d = img.at(border[order[i]].first, border[order[i]].second, c) - mean;
      var += d * d;
    }
    bg.mode.push_back(mode);
    bg.noise_std.push_back(std::sqrt(var / static_cast<double>(k)));
  }
  return bg;
}

RawImage pad_to_square(const RawImage& img, const BackgroundModel& bg, Rng& rng, bool noise) {
  img.validate();
  if (bg.mode.size() != img.channels || bg.noise_std.size() != img.channels) {
    throw DataError("background model channel count does not match image");
  }
  const std::size_t side = std::max(img.width, img.height);
  if (side == img.width && side == img.height) return img;
  RawImage out(side, side, img.channels);
  const std::size_t x0 = (side - img.width) / 2;
  const std::size_t y0 = (side - img.height) / 2;
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const bool inside = x >= x0 && x < x0 + img.width && y >= y0 && y < y0 + img.height;
      for (std::size_t c = 0; c < img.channels; ++c) {
        if (inside) {
          out.at(x, y, c) = img.at(x - x0, y - y0, c);
        } else if (!noise || bg.noise_std[c] == 0.0) {
          out.at(x, y, c) = bg.mode[c];
        } else {
          const double v = bg.mode[c] + bg.noise_std[c] * standard_normal(rng);
          out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
      }
    }
  }
  return out;
}

RawImage crop_raw(const RawImage& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x + w > img.width || y + h > img.height) {
    throw ConfigError("crop", "rectangle exceeds image " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  RawImage out(w, h, img.channels);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t q = 0; q < w; ++q) {
      for (std::size_t c = 0; c < img.channels; ++c) out.at(q, r, c) = img.at(x + q, y + r, c);
    }
  }
  return out;
}

ImageF to_float(const RawImage& img) {
  img.validate();
  ImageF out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) out.at(x, y, c) = static_cast<float>(img.at(x, y, c)) / 255.0f;
    }
  }
  return out;
}

RawImage to_u8(const ImageF& img) {
  RawImage out(img.width, img.height, img.channels);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(x, y, c)), 0.0, 1.0) * 255.0;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

ImageF grayscale(const ImageF& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw DataError("grayscale expects 1 or 3 channels");
  ImageF out(img.width, img.height, 1);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      out.at(x, y) = static_cast<float>(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2));
    }
  }
  return out;
}

ImageF resize_bicubic(const ImageF& img, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw ConfigError("resize", "target extent must be positive");
  if (out_w == img.width && out_h == img.height) return img;
  const auto tx = make_taps(img.width, out_w);
  const auto ty = make_taps(img.height, out_h);
  ImageF tmp(out_w, img.height, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tx.weight[x][k] * img.at(tx.index[x][k], y, c);
        tmp.at(x, y, c) = static_cast<float>(acc);
      }
    }
  }
  ImageF out(out_w, out_h, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += ty.weight[y][k] * tmp.at(x, ty.index[y][k], c);
        out.at(x, y, c) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
    }
  }
  return out;
}

ImageF crop(const ImageF& img, std::size_t x, std::size_t y, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x + w > img.width || y + h > img.height) throw ConfigError("crop", "rectangle exceeds image");
  ImageF out(w, h, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) out.at(q, r, c) = img.at(x + q, y + r, c);
    }
  }
  return out;
}

ImageF flip_horizontal(const ImageF& img) {
  ImageF out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    }
  }
  return out;
}

ImageF flip_vertical(const ImageF& img) {
  ImageF out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) out.at(x, y, c) = img.at(x, img.height - 1 - y, c);
    }
  }
  return out;
}

CropBox sample_crop(std::size_t width, std::size_t height, double scale_min, double scale_max, double ratio_min,
                    double ratio_max, Rng& rng) {
  const double area = static_cast<double>(width * height);
  const double log_lo = std::log(ratio_min);
  const double log_hi = std::log(ratio_max);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale_min, scale_max);
    const double aspect = std::exp(uniform(rng, log_lo, log_hi));
    const auto w = static_cast<std::size_t>(std::llround(std::sqrt(target * aspect)));
    const auto h = static_cast<std::size_t>(std::llround(std::sqrt(target / aspect)));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      const auto y = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(height - h)));
      const auto x = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(width - w)));
      return {x, y, w, h};
    }
  }
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  std::size_t w = width;
  std::size_t h = height;
  if (in_ratio < ratio_min) {
    h = static_cast<std::size_t>(std::llround(static_cast<double>(w) / ratio_min));
  } else if (in_ratio > ratio_max) {
    w = static_cast<std::size_t>(std::llround(static_cast<double>(h) * ratio_max));
  }
  return {(width - w) / 2, (height - h) / 2, w, h};
}

void AugmentParams::validate() const {
  if (out_size == 0 || working_size < out_size) throw ConfigError("working_size", "must be at least the output size");
  if (!(scale_min > 0.0 && scale_min <= scale_max && scale_max <= 1.0)) {
    throw ConfigError("crop_scale_min", "crop scale range must lie within (0,1]");
  }
  if (!(ratio_min > 0.0 && ratio_min <= ratio_max)) throw ConfigError("crop_ratio", "invalid aspect ratio range");
  if (hflip_prob < 0.0 || hflip_prob > 1.0) throw ConfigError("hflip_prob", "must lie in [0,1]");
  if (vflip_prob < 0.0 || vflip_prob > 1.0) throw ConfigError("vflip_prob", "must lie in [0,1]");
}

ImageF prepare_image(const RawImage& padded, std::size_t working_size) {
  return grayscale(resize_bicubic(to_float(padded), working_size, working_size));
}

Tensor<float> augment_prepared(const ImageF& prepared, const AugmentParams& params, const DatasetStats& stats, Rng& rng) {
  params.validate();
  const auto box = sample_crop(prepared.width, prepared.height, params.scale_min, params.scale_max, params.ratio_min,
                               params.ratio_max, rng);
  auto img = resize_bicubic(crop(prepared, box.x, box.y, box.width, box.height), params.out_size, params.out_size);
  const bool hflip = uniform01(rng) < params.hflip_prob;
  const bool vflip = uniform01(rng) < params.vflip_prob;
  if (hflip) img = flip_horizontal(img);
  if (vflip) img = flip_vertical(img);
  return standardize(img, stats);
}

Tensor<float> eval_prepared(const ImageF& prepared, std::size_t out_size, const DatasetStats& stats) {
  if (out_size == 0 || prepared.width < out_size || prepared.height < out_size) {
    throw ConfigError("image_size", "center crop larger than the working image");
  }
  const std::size_t x = (prepared.width - out_size) / 2;
  const std::size_t y = (prepared.height - out_size) / 2;
  return standardize(crop(prepared, x, y, out_size, out_size), stats);
}

Tensor<float> train_augment(const RawImage& img, const AugmentParams& params, const DatasetStats& stats, Rng& rng) {
  return augment_prepared(prepare_image(img, params.working_size), params, stats, rng);
}

Tensor<float> eval_transform(const RawImage& img, std::size_t working_size, std::size_t out_size,
                             const DatasetStats& stats) {
  return eval_prepared(prepare_image(img, working_size), out_size, stats);
}

ImageF destandardize(std::span<const float> values, std::size_t size, const DatasetStats& stats) {
  const std::size_t channels = stats.mean.size();
  if (values.size() != size * size * channels) throw ShapeError("destandardize: value count does not match image size");
  ImageF out(size, size, channels);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < size * size; ++i) {
      out.data[c * size * size + i] = static_cast<float>(values[c * size * size + i] * stats.std[c] + stats.mean[c]);
    }
  }
  return out;
}

}  // namespace pmae
