// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "pmae/error.hpp"
#include "pmae/mae.hpp"

using namespace pmae;

namespace {

MaeConfig tiny_config() {
  MaeConfig cfg;
  cfg.encoder.grid = {16, 4, 1};
  cfg.encoder.depth = 2;
  cfg.encoder.block = {16, 2, 2.0, 0.0};
  cfg.decoder = {1, 8, 2, 2.0};
  return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = standard_normal(rng);
  return Tensor<double>(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST(Mask, CountsFollowFloor) {
  Rng rng(0);
  auto m = sample_mask(196, 0.75, rng);
  EXPECT_EQ(m.num_masked(), 147u);
  EXPECT_EQ(m.visible.size(), 49u);
  EXPECT_EQ(masked_count(16, 0.75), 12u);
  EXPECT_EQ(masked_count(10, 0.75), 7u);
  EXPECT_TRUE(std::is_sorted(m.masked.begin(), m.masked.end()));
  EXPECT_TRUE(std::is_sorted(m.visible.begin(), m.visible.end()));
  EXPECT_NO_THROW(m.validate());
  EXPECT_TRUE(sample_mask(16, 0.0, rng).masked.empty());
  EXPECT_THROW(sample_mask(16, 1.0, rng), ConfigError);
}

TEST(Mask, SameSeedSameMask) {
  Rng a(42), b(42);
  auto ma = sample_mask(64, 0.75, a);
  auto mb = sample_mask(64, 0.75, b);
  EXPECT_EQ(ma.masked, mb.masked);
}

TEST(Mask, EveryPatchEquallyLikely) {
  Rng rng(11);
  const std::size_t n = 16, draws = 10000;
  std::vector<std::size_t> hits(n, 0);
  for (std::size_t d = 0; d < draws; ++d) {
    for (auto i : sample_mask(n, 0.75, rng).masked) ++hits[i];
  }
  for (auto h : hits) EXPECT_NEAR(static_cast<double>(h) / draws, 0.75, 0.02);
}

TEST(MaskedLoss, PerfectReconstructionIsZero) {
  Rng rng(1);
  auto targets = random_tensor({2 * 16, 16}, rng);
  std::vector<MaskSet> masks = {sample_mask(16, 0.75, rng), sample_mask(16, 0.75, rng)};
  auto norm = patch_target_normalize(targets, 1e-6);
  ReconstructionBatch<double> batch{targets, norm, masks, true, 1e-6};
  EXPECT_EQ(masked_reconstruction_loss(batch).item(), 0.0);
  ReconstructionBatch<double> raw{targets, targets, masks, false, 1e-6};
  EXPECT_EQ(masked_reconstruction_loss(raw).item(), 0.0);
}

TEST(MaskedLoss, ConstantOffsetOfTwoGivesFour) {
  MaskSet m{4, 0.25, {2}, {0, 1, 3}};
  std::vector<MaskSet> masks = {m};
  Rng rng(2);
  auto targets = random_tensor({4, 9}, rng);
  std::vector<double> shifted(targets.values().begin(), targets.values().end());
  for (auto& v : shifted) v += 2.0;
  ReconstructionBatch<double> batch{targets, Tensor<double>({4, 9}, shifted), masks, false, 1e-6};
  EXPECT_NEAR(masked_reconstruction_loss(batch).item(), 4.0, 1e-12);
}

TEST(MaskedLoss, VisiblePredictionsNeverMatter) {
  Rng rng(3);
  auto targets = random_tensor({2 * 16, 16}, rng);
  std::vector<MaskSet> masks = {sample_mask(16, 0.75, rng), sample_mask(16, 0.75, rng)};
  auto pred = random_tensor({2 * 16, 16}, rng, true);
  ReconstructionBatch<double> batch{targets, pred, masks, true, 1e-6};
  auto loss = masked_reconstruction_loss(batch);
  const double base = loss.item();
  backward(loss);

  std::vector<double> perturbed(pred.values().begin(), pred.values().end());
  for (std::size_t b = 0; b < 2; ++b) {
    for (auto i : masks[b].visible) {
      for (std::size_t j = 0; j < 16; ++j) {
        const auto k = (b * 16 + i) * 16 + j;
        EXPECT_EQ(pred.grad()[k], 0.0);
        perturbed[k] += 1e3 * standard_normal(rng);
      }
    }
  }
  ReconstructionBatch<double> other{targets, Tensor<double>({32, 16}, perturbed), masks, true, 1e-6};
  EXPECT_EQ(masked_reconstruction_loss(other).item(), base);
}

TEST(MaskedLoss, NoMaskedPatchesIsRejected) {
  std::vector<MaskSet> masks = {MaskSet{4, 0.0, {}, {0, 1, 2, 3}}};
  Rng rng(4);
  auto t = random_tensor({4, 4}, rng);
  ReconstructionBatch<double> batch{t, t, masks, true, 1e-6};
  EXPECT_THROW(masked_reconstruction_loss(batch), ConfigError);
}

TEST(TargetNormalize, HandExampleAndConstantPatch) {
  Tensor<double> p({2, 4}, {0, 2, 0, 2, 5, 5, 5, 5});
  auto y = patch_target_normalize(p, 1e-12);
  const std::vector<double> expect = {-1, 1, -1, 1};
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(y.values()[j], expect[j], 1e-9);
  for (std::size_t j = 4; j < 8; ++j) EXPECT_EQ(y.values()[j], 0.0);
}

TEST(TargetNormalize, LossInvariantToPatchShiftAndScale) {
  Rng rng(5);
  auto targets = random_tensor({16, 16}, rng);
  auto pred = random_tensor({16, 16}, rng);
  std::vector<MaskSet> masks = {sample_mask(16, 0.75, rng)};
  std::vector<double> moved(targets.values().begin(), targets.values().end());
  for (auto& v : moved) v = 3.5 * v - 7.0;
  ReconstructionBatch<double> a{targets, pred, masks, true, 1e-6};
  ReconstructionBatch<double> b{Tensor<double>({16, 16}, moved), pred, masks, true, 1e-6};
  EXPECT_NEAR(masked_reconstruction_loss(a).item(), masked_reconstruction_loss(b).item(), 1e-4);
}

TEST(MaeModel, EncoderSeesOnlyVisiblePatches) {
  Rng init(6);
  MaeModel<double> model(tiny_config(), init);
  Rng rng(7);
  auto patches = random_tensor({16, 16}, rng);
  std::vector<MaskSet> masks = {sample_mask(16, 0.75, rng)};
  auto latent = encode_visible(model.encoder, patches, masks);
  EXPECT_EQ(latent.shape(), (Shape{5, 16}));

  std::vector<double> changed(patches.values().begin(), patches.values().end());
  for (auto i : masks[0].masked) {
    for (std::size_t j = 0; j < 16; ++j) changed[i * 16 + j] = 100.0;
  }
  auto latent2 = encode_visible(model.encoder, Tensor<double>({16, 16}, changed), masks);
  EXPECT_TRUE(std::equal(latent.values().begin(), latent.values().end(), latent2.values().begin()));

  std::vector<MaskSet> none = {sample_mask(16, 0.0, rng)};
  EXPECT_EQ(encode_visible(model.encoder, patches, none).dim(0), 17u);
  std::vector<MaskSet> wrong = {sample_mask(9, 0.5, rng)};
  EXPECT_THROW(encode_visible(model.encoder, patches, wrong), ShapeError);
}

TEST(MaeModel, ZeroDecoderHeadPredictsZero) {
  Rng init(8);
  MaeModel<double> model(tiny_config(), init);
  for (auto& v : model.decoder.head.weight.mutable_values()) v = 0.0;
  for (auto& v : model.decoder.head.bias.mutable_values()) v = 0.0;
  Rng rng(9);
  auto patches = random_tensor({16, 16}, rng);
  std::vector<MaskSet> masks = {sample_mask(16, 0.75, rng)};
  auto pred = decode_with_mask_tokens(model.decoder, encode_visible(model.encoder, patches, masks), masks);
  EXPECT_EQ(pred.shape(), (Shape{16, 16}));
  for (auto v : pred.values()) EXPECT_EQ(v, 0.0);
}

TEST(MaeModel, PretrainStepIsDeterministic) {
  auto run = [] {
    Rng init(10);
    MaeModel<double> model(tiny_config(), init);
    AdamW<double> opt(model.parameters(), AdamWConfig{});
    Rng rng(11);
    PretrainBatch<double> mb{random_tensor({32, 16}, rng), {sample_mask(16, 0.75, rng), sample_mask(16, 0.75, rng)}};
    std::vector<PretrainBatch<double>> batches = {mb};
    for (int s = 0; s < 2; ++s) pretrain_step<double>(model, opt, batches, 1e-3);
    std::vector<double> flat;
    for (const auto& p : model.parameters()) flat.insert(flat.end(), p.tensor.values().begin(), p.tensor.values().end());
    return flat;
  };
  EXPECT_EQ(run(), run());
}

TEST(MaeModel, ShortTrainingReducesLoss) {
  Rng init(12);
  MaeModel<float> model(tiny_config(), init);
  AdamW<float> opt(model.parameters(), AdamWConfig{});
  Rng rng(13);
  // Smooth images: a per-image linear ramp.
  std::vector<float> px(8 * 256);
  for (std::size_t b = 0; b < 8; ++b) {
    const double gx = standard_normal(rng), gy = standard_normal(rng);
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) px[b * 256 + y * 16 + x] = static_cast<float>(gx * x / 16.0 + gy * y / 16.0);
    }
  }
  auto patches = patchify(Tensor<float>({8, 1, 16, 16}, px), tiny_config().encoder.grid);
  double first = 0.0, last = 0.0;
  for (int s = 0; s < 200; ++s) {
    std::vector<MaskSet> masks;
    for (int b = 0; b < 8; ++b) masks.push_back(sample_mask(16, 0.75, rng));
    std::vector<PretrainBatch<float>> batches = {{patches, masks}};
    const double l = pretrain_step<float>(model, opt, batches, 2e-3);
    if (s < 10) first += l / 10;
    if (s >= 190) last += l / 10;
  }
  EXPECT_LT(last, 0.5 * first);
}
