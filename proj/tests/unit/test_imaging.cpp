// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pmae/error.hpp"
#include "pmae/imaging.hpp"

using namespace pmae;
namespace fs = std::filesystem;

namespace {

RawImage random_raw(std::size_t w, std::size_t h, std::size_t c, Rng& rng) {
  RawImage img(w, h, c);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return img;
}

DatasetStats gray_stats(double mean = 0.5, double std = 0.25) { return DatasetStats{{mean}, {std}}; }

}  // namespace

TEST(Background, UniformBorder) {
  RawImage img(9, 7, 1, 200);
  img.at(4, 3) = 17;
  const auto bg = estimate_background(img);
  EXPECT_EQ(bg.mode[0], 200);
  EXPECT_EQ(bg.noise_std[0], 0.0);

  RawImage one(1, 1, 1, 77);
  EXPECT_EQ(estimate_background(one).mode[0], 77);
  EXPECT_EQ(estimate_background(one).noise_std[0], 0.0);
}

TEST(Background, MajorityValueAndNearestFifth) {
  RawImage img(12, 12, 1, 10);
  // 4 of the 44 border pixels are bright.
  img.at(0, 0) = img.at(11, 0) = img.at(0, 11) = img.at(11, 11) = 250;
  const auto bg = estimate_background(img);
  EXPECT_EQ(bg.mode[0], 10);
  EXPECT_EQ(bg.noise_std[0], 0.0);
}

TEST(Background, StdOfNearestBorderValues) {
  // Border of a 6x6 image has 20 pixels; the nearest 4 to the mode are 50,50,51,53.
  RawImage img(6, 6, 1, 50);
  const std::uint8_t ring[20] = {50, 50, 51, 53, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180, 190, 200, 210};
  std::size_t k = 0;
  for (std::size_t x = 0; x < 6; ++x) img.at(x, 0) = ring[k++];
  for (std::size_t y = 1; y < 6; ++y) img.at(5, y) = ring[k++];
  for (std::size_t x = 0; x < 5; ++x) img.at(x, 5) = ring[k++];
  for (std::size_t y = 1; y < 5; ++y) img.at(0, y) = ring[k++];
  ASSERT_EQ(k, 20u);
  const auto bg = estimate_background(img);
  EXPECT_EQ(bg.mode[0], 50);
  const double m = (50 + 50 + 51 + 53) / 4.0;
  const double var = ((50 - m) * (50 - m) * 2 + (51 - m) * (51 - m) + (53 - m) * (53 - m)) / 4.0;
  EXPECT_NEAR(bg.noise_std[0], std::sqrt(var), 1e-12);
}

TEST(Pad, PreservesPixelsAndCentres) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto w = static_cast<std::size_t>(uniform_int(rng, 1, 40));
    const auto h = static_cast<std::size_t>(uniform_int(rng, 1, 40));
    const std::size_t c = t % 3 == 0 ? 3 : 1;
    const auto img = random_raw(w, h, c, rng);
    Rng pad(t);
    const auto out = pad_to_square(img, estimate_background(img), pad);
    const auto side = std::max(w, h);
    ASSERT_EQ(out.width, side);
    ASSERT_EQ(out.height, side);
    ASSERT_EQ(out.channels, c);
    const auto ox = (side - w) / 2, oy = (side - h) / 2;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) ASSERT_EQ(out.at(ox + x, oy + y, ch), img.at(x, y, ch));
      }
    }
  }
}

TEST(Pad, ConstantFillAndSquareInput) {
  RawImage white(100, 50, 1, 255);
  Rng rng(2);
  const auto out = pad_to_square(white, estimate_background(white), rng);
  EXPECT_EQ(out, RawImage(100, 100, 1, 255));
  const auto sq = random_raw(20, 20, 1, rng);
  EXPECT_EQ(pad_to_square(sq, estimate_background(sq), rng), sq);
}

TEST(Pad, NoiseFollowsBackgroundModel) {
  RawImage img(64, 32, 1, 200);
  BackgroundModel bg{{10}, {5.0}};
  Rng rng(3);
  const auto out = pad_to_square(img, bg, rng);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < 64; ++y) {
    if (y >= 16 && y < 48) continue;
    for (std::size_t x = 0; x < 64; ++x) {
      sum += out.at(x, y);
      ++count;
    }
  }
  ASSERT_EQ(count, 2048u);
  EXPECT_NEAR(sum / count, 10.0, 1.0);

  Rng a(4), b(4);
  EXPECT_EQ(pad_to_square(img, bg, a), pad_to_square(img, bg, b));
  Rng c(5);
  const auto flat = pad_to_square(img, bg, c, false);
  EXPECT_EQ(flat.at(0, 0), 10);
  EXPECT_EQ(flat.at(63, 63), 10);
}

TEST(Imaging, GrayscaleWeights) {
  RawImage rgb(1, 1, 3);
  rgb.at(0, 0, 0) = 255;
  rgb.at(0, 0, 1) = 0;
  rgb.at(0, 0, 2) = 51;
  const auto g = grayscale(to_float(rgb));
  ASSERT_EQ(g.channels, 1u);
  EXPECT_NEAR(g.at(0, 0), 0.299 + 0.114 * 0.2, 1e-6);
  const auto gray = to_float(RawImage(3, 2, 1, 9));
  EXPECT_EQ(grayscale(gray), gray);
}

TEST(Imaging, ResizeIdentityAndConstant) {
  Rng rng(6);
  const auto img = to_float(random_raw(13, 9, 1, rng));
  EXPECT_EQ(resize_bicubic(img, 13, 9), img);
  const auto flat = resize_bicubic(to_float(RawImage(10, 10, 1, 100)), 23, 17);
  for (float v : flat.data) EXPECT_NEAR(v, 100.0f / 255.0f, 1e-6);
}

TEST(Imaging, FlipsAreInvolutions) {
  Rng rng(7);
  const auto img = to_float(random_raw(5, 4, 1, rng));
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
  EXPECT_EQ(flip_horizontal(img).at(0, 1), img.at(4, 1));
  EXPECT_EQ(flip_vertical(img).at(2, 0), img.at(2, 3));
}

TEST(Augment, CropStaysInsideImage) {
  Rng rng(8);
  for (int t = 0; t < 2000; ++t) {
    const auto box = sample_crop(36, 36, 0.4, 1.0, 3.0 / 4.0, 4.0 / 3.0, rng);
    ASSERT_GE(box.width, 1u);
    ASSERT_GE(box.height, 1u);
    ASSERT_LE(box.x + box.width, 36u);
    ASSERT_LE(box.y + box.height, 36u);
    const double area = static_cast<double>(box.width * box.height) / (36.0 * 36.0);
    EXPECT_GE(area, 0.4 - 0.06);
  }
}

TEST(Augment, OutputShapeAndDeterminism) {
  Rng rng(9);
  const auto img = random_raw(50, 30, 3, rng);
  Rng pad(1);
  const auto sq = pad_to_square(img, estimate_background(img), pad);
  AugmentParams params;
  Rng a(10), b(10);
  const auto x = train_augment(sq, params, gray_stats(), a);
  const auto y = train_augment(sq, params, gray_stats(), b);
  EXPECT_EQ(x.shape(), (Shape{1, 32, 32}));
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(Augment, DegenerateAugmentationEqualsEvalTransform) {
  Rng rng(11);
  const auto img = random_raw(32, 32, 1, rng);
  AugmentParams params{32, 32, 1.0, 1.0, 3.0 / 4.0, 4.0 / 3.0, 0.0, 0.0};
  Rng a(12);
  const auto train = train_augment(img, params, gray_stats(), a);
  const auto eval = eval_transform(img, 32, 32, gray_stats());
  EXPECT_TRUE(std::equal(train.values().begin(), train.values().end(), eval.values().begin()));
}

TEST(Eval, DeterministicAndStandardized) {
  RawImage img(40, 40, 1, 128);
  const auto stats = gray_stats(128.0 / 255.0, 0.1);
  const auto a = eval_transform(img, 36, 32, stats);
  const auto b = eval_transform(img, 36, 32, stats);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  for (float v : a.values()) EXPECT_NEAR(v, 0.0f, 1e-5);
  EXPECT_THROW(eval_transform(img, 30, 32, stats), ConfigError);
}

TEST(Eval, CenterCropRemovesEqualMargins) {
  ImageF img(36, 36, 1);
  for (std::size_t y = 0; y < 36; ++y) {
    for (std::size_t x = 0; x < 36; ++x) img.at(x, y) = static_cast<float>(y * 36 + x) / 1296.0f;
  }
  const auto out = eval_prepared(img, 32, DatasetStats{{0.0}, {1.0}});
  EXPECT_EQ(out.values()[0], img.at(2, 2));
  EXPECT_EQ(out.values()[32 * 32 - 1], img.at(33, 33));
}

TEST(Stats, MatchTwoPassOracle) {
  Rng rng(13);
  std::vector<ImageF> images;
  StatsAccumulator acc;
  for (int i = 0; i < 20; ++i) {
    images.push_back(prepare_image(random_raw(36, 36, 1, rng), 36));
    acc.add(images.back());
  }
  const auto stats = acc.finish();
  const auto [mean, std] = oracle::two_pass_stats(images);
  EXPECT_NEAR(stats.mean[0], mean, 1e-6);
  EXPECT_NEAR(stats.std[0], std, 1e-6);

  StatsAccumulator reversed;
  for (auto it = images.rbegin(); it != images.rend(); ++it) reversed.add(*it);
  EXPECT_NEAR(reversed.finish().mean[0], stats.mean[0], 1e-12);

  StatsAccumulator single;
  single.add(images[0]);
  const auto one = oracle::two_pass_stats({images[0]});
  EXPECT_NEAR(single.finish().std[0], one.second, 1e-6);
}

TEST(Stats, DegenerateInputsRejected) {
  StatsAccumulator empty;
  EXPECT_THROW(empty.finish(), ConfigError);
  StatsAccumulator flat;
  flat.add(to_float(RawImage(8, 8, 1, 128)));
  EXPECT_THROW(flat.finish(), ConfigError);
}

TEST(Stats, JsonRoundTrip) {
  const DatasetStats s{{0.25}, {0.125}};
  const auto back = stats_from_json(stats_to_json(s));
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.std, s.std);
}

TEST(ImageIo, PngAndPnmRoundTrip) {
  const auto dir = oracle::temp_dir("image_io");
  Rng rng(14);
  for (std::size_t c : {1u, 3u}) {
    const auto img = random_raw(17, 11, c, rng);
    write_png(dir / "a.png", img);
    write_pnm(dir / "a.pnm", img);
    EXPECT_EQ(read_image(dir / "a.png"), img);
    EXPECT_EQ(read_image(dir / "a.pnm"), img);
  }
  {
    std::ofstream junk(dir / "junk.png");
    junk << "not an image";
  }
  EXPECT_THROW(read_image(dir / "junk.png"), IoError);
  EXPECT_THROW(read_image(dir / "missing.png"), IoError);
}
