// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

#include "pmae/data.hpp"
#include "pmae/error.hpp"
#include "pmae/imaging.hpp"
#include "pmae/random.hpp"

namespace pmae {
namespace {

constexpr std::array<const char*, 3> kFamilies = {"chain", "star", "rod"};
constexpr int kSuper = 4;
constexpr double kEdgeSigma = 1.6;

// Separable Gaussian blur with clamped borders.
std::vector<double> soften(const std::vector<double>& src, std::size_t n, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& w : k) w /= total;
  const auto at = [n](int v) { return static_cast<std::size_t>(std::clamp(v, 0, static_cast<int>(n) - 1)); };
  std::vector<double> tmp(src.size()), out(src.size());
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * src[y * n + at(static_cast<int>(x) + i)];
      tmp[y * n + x] = acc;
    }
  }
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp[at(static_cast<int>(y) + i) * n + x];
      out[y * n + x] = acc;
    }
  }
  return out;
}

struct Organism {
  std::size_t family = 0;
  double length = 0.0;
  // chain: bead aspect; star: spike count; rod: elongation
  double shape = 0.0;
  double aspect = 0.0;
};

// Coverage of a point in organism-local coordinates (0 outside).
double coverage(const Organism& o, double u, double w) {
  const double L = o.length;
  switch (o.family) {
    case 0: {
      constexpr int beads = 3;
      const double spacing = L / beads;
      const double r = 0.5 * spacing;
      for (int i = 0; i < beads; ++i) {
        const double c = (i - (beads - 1) / 2.0) * spacing;
        const double du = (u - c) / r;
        const double dw = w / (r * o.shape);
        if (du * du + dw * dw <= 1.0) return 1.0;
      }
      return 0.0;
    }
    case 1: {
      const double r = std::hypot(u, w);
      if (r <= 0.15 * L) return 1.0;
      const auto spikes = static_cast<int>(o.shape);
      const double reach = 0.5 * L * o.aspect;
      for (int j = 0; j < spikes; ++j) {
        const double a = 2.0 * std::numbers::pi * j / spikes;
        const double along = u * std::cos(a) + w * std::sin(a);
        const double perp = std::abs(-u * std::sin(a) + w * std::cos(a));
        if (along >= 0.0 && along <= reach && perp <= 0.13 * L * (1.0 - 0.7 * along / reach)) return 1.0;
      }
      return 0.0;
    }
    default: {
      const double half_w = L / (2.0 * o.shape);
      const double half_l = 0.5 * L - half_w;
      const double du = std::max(0.0, std::abs(u) - half_l);
      return du * du + w * w <= half_w * half_w ? 1.0 : 0.0;
    }
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_labels < 2) throw ConfigError("synth_labels", "need at least 2 labels");
  if (per_label == 0) throw ConfigError("synth_per_label", "must be positive");
  if (image_size < 8) throw ConfigError("synth_image_size", "must be at least 8");
  if (!(difficulty > 0.0)) throw ConfigError("synth_difficulty", "must be positive");
}

std::string synthetic_label_name(std::size_t label) {
  return std::string(kFamilies[label % kFamilies.size()]) + "_" + std::to_string(label / kFamilies.size());
}

RawImage synthesize_image(const SyntheticSpec& spec, std::size_t label, std::size_t index) {
  spec.validate();
  auto rng = make_rng(spec.seed, stream::kSynth, {label, index});
  const auto size = static_cast<double>(spec.image_size);
  const double variant = static_cast<double>(label / kFamilies.size()) / spec.difficulty;

  Organism o;
  o.family = label % kFamilies.size();
  o.length = 0.6 * size * uniform(rng, 0.8, 1.0);
  switch (o.family) {
    case 0:
      o.shape = 1.0 + 0.6 * variant + uniform(rng, -0.1, 0.1);
      break;
    case 1:
      o.shape = std::round(3.0 + variant);
      o.aspect = uniform(rng, 0.85, 1.0);
      break;
    default:
      o.shape = 2.0 + 1.5 * variant + uniform(rng, -0.3, 0.3);
      break;
  }
  const double cx = 0.5 * size + uniform(rng, -3.0, 3.0);
  const double cy = 0.5 * size + uniform(rng, -3.0, 3.0);
  const double phi = uniform(rng, -0.26, 0.26);
  const double bright = uniform(rng, 160.0, 230.0);
  const double base = uniform(rng, 20.0, 50.0);
  const double grad_dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double grad_amp = uniform(rng, 30.0, 60.0);

  const std::size_t n = spec.image_size;
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  std::vector<double> cov(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = x + (sx + 0.5) / kSuper - cx;
          const double py = y + (sy + 0.5) / kSuper - cy;
          acc += coverage(o, c * px + s * py, -s * px + c * py);
        }
      }
      cov[y * n + x] = acc / (kSuper * kSuper);
    }
  }
  cov = soften(cov, n, kEdgeSigma);

  RawImage img(n, n, 1);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double bg = base + grad_amp * ((x * std::cos(grad_dir) + y * std::sin(grad_dir)) / size - 0.5);
      const double rx = (x + 0.5 - cx) / (0.5 * o.length);
      const double ry = (y + 0.5 - cy) / (0.5 * o.length);
      const double fg = bright * (1.0 - 0.3 * std::min(1.0, rx * rx + ry * ry));
      const double v = bg + (fg - bg) * cov[y * n + x] + 0.5 * standard_normal(rng);
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return img;
}

SampleManifest generate_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::vector<ManifestRecord> records;
  for (std::size_t label = 0; label < spec.num_labels; ++label) {
    const auto name = synthetic_label_name(label);
    for (std::size_t i = 0; i < spec.per_label; ++i) {
      char file[32];
      std::snprintf(file, sizeof(file), "%05zu.png", i);
      const auto rel = std::filesystem::path("images") / name / file;
      write_png(dir / rel, synthesize_image(spec, label, i));
      records.push_back({rel.generic_string(), name, "synthetic", 0});
    }
  }
  auto manifest = make_manifest(std::move(records), dir);
  save_manifest(dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace pmae
