// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "pmae/error.hpp"
#include "pmae/nn.hpp"

using namespace pmae;

namespace {

Tensor<double> iota_images(std::size_t batch, std::size_t c, std::size_t s) {
  std::vector<double> v(batch * c * s * s);
  std::iota(v.begin(), v.end(), 0.0);
  return Tensor<double>({batch, c, s, s}, std::move(v));
}

}  // namespace

TEST(Patchify, RowMajorPatchOrder) {
  const PatchGrid grid{4, 2, 1};
  auto p = patchify(iota_images(1, 1, 4), grid);
  ASSERT_EQ(p.shape(), (Shape{4, 4}));
  const std::vector<double> expect = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), expect);
}

TEST(Patchify, ChannelsInterleaveInsidePatch) {
  const PatchGrid grid{2, 2, 2};
  auto p = patchify(iota_images(1, 2, 2), grid);
  const std::vector<double> expect = {0, 4, 1, 5, 2, 6, 3, 7};
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), expect);
}

TEST(Patchify, RoundTrip) {
  const PatchGrid grid{32, 8, 3};
  auto img = iota_images(3, 3, 32);
  auto back = unpatchify(patchify(img, grid), grid);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), img.values().begin()));
  EXPECT_THROW(patchify(iota_images(1, 1, 30), grid), ShapeError);
  EXPECT_THROW((PatchGrid{30, 8, 1}.validate()), ConfigError);
}

TEST(Positional, MatchesSinCosOracle) {
  const PatchGrid grid{32, 8, 1};
  const std::size_t dim = 16, q = dim / 4;
  auto t = sincos_positional_table<double>(grid, dim, true);
  ASSERT_EQ(t.shape(), (Shape{17, dim}));
  for (std::size_t j = 0; j < dim; ++j) EXPECT_EQ(t.values()[j], 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double* row = t.values().data() + (1 + r * 4 + c) * dim;
      for (std::size_t i = 0; i < q; ++i) {
        const double w = std::pow(10000.0, -static_cast<double>(i) / q);
        EXPECT_NEAR(row[i], std::sin(c * w), 1e-15);
        EXPECT_NEAR(row[q + i], std::cos(c * w), 1e-15);
        EXPECT_NEAR(row[2 * q + i], std::sin(r * w), 1e-15);
        EXPECT_NEAR(row[3 * q + i], std::cos(r * w), 1e-15);
      }
    }
  }
  EXPECT_THROW(sincos_positional_table<double>(grid, 6), ConfigError);
}

TEST(DropPath, IdentityOutsideTraining) {
  Rng rng(1);
  Tensor<double> x({4, 3}, std::vector<double>(12, 2.0));
  EXPECT_TRUE(drop_path(x, 0.5, false, rng, 2).same_node(x));
  EXPECT_TRUE(drop_path(x, 0.0, true, rng, 2).same_node(x));
  EXPECT_THROW(drop_path(x, 1.5, true, rng, 2), ConfigError);
}

TEST(DropPath, SamplesAreZeroedOrRescaledAsWholes) {
  Rng rng(3);
  const std::size_t batch = 2000;
  Tensor<double> x({batch * 2, 3}, std::vector<double>(batch * 6, 1.0));
  auto y = drop_path(x, 0.25, true, rng, batch);
  std::size_t dropped = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double v = y.values()[b * 6];
    for (std::size_t j = 1; j < 6; ++j) ASSERT_EQ(y.values()[b * 6 + j], v);
    if (v == 0.0) {
      ++dropped;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / batch, 0.25, 0.03);
}

TEST(Encoder, VisibleTokensArePermutationEquivariant) {
  EncoderConfig cfg;
  cfg.grid = {16, 4, 1};
  cfg.depth = 2;
  cfg.block = {16, 2, 2.0, 0.0};
  Rng init(5);
  Encoder<double> enc(cfg, init);
  Rng data(9);
  std::vector<double> px(16 * 16);
  for (auto& v : px) v = standard_normal(data);
  auto patches = Tensor<double>({16, 16}, std::move(px));
  const std::vector<std::vector<std::size_t>> a = {{1, 4, 7, 9, 12}};
  const std::vector<std::vector<std::size_t>> b = {{9, 1, 12, 7, 4}};
  Rng d1(0), d2(0);
  auto ya = enc.forward(patches, a, false, d1);
  auto yb = enc.forward(patches, b, false, d2);
  ASSERT_EQ(ya.shape(), (Shape{6, 16}));
  const std::vector<std::size_t> where = {0, 2, 5, 4, 1, 3};  // row of yb holding row i of ya
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_NEAR(ya.values()[i * 16 + j], yb.values()[where[i] * 16 + j], 1e-12);
    }
  }
}

TEST(Encoder, ParameterGroupsFollowDepth) {
  EncoderConfig cfg;
  cfg.grid = {16, 4, 1};
  cfg.depth = 3;
  cfg.block = {16, 2, 2.0, 0.0};
  Rng init(5);
  Encoder<float> enc(cfg, init);
  ParamList<float> params;
  enc.collect(params, "encoder");
  for (const auto& p : params) {
    if (p.name.starts_with("encoder.patch_embed") || p.name == "encoder.class_token") EXPECT_EQ(p.layer, 0);
    if (p.name.starts_with("encoder.blocks.2.")) EXPECT_EQ(p.layer, 3);
    if (p.name.ends_with(".bias") || p.name.ends_with(".gain")) EXPECT_FALSE(p.decay) << p.name;
  }
}
