// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <bit>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pmae/checkpoint.hpp"
#include "pmae/error.hpp"

using namespace pmae;

namespace {

Checkpoint sample() {
  Checkpoint ck;
  ck.meta["kind"] = "mae";
  ck.meta["epoch"] = 3;
  ck.meta["nested"] = {{"a", 1}, {"b", {{"c", "x"}}}};
  ck.tensors.push_back({"w", {2, 3}, {1.5f, -2.0f, 0.0f, 3.25f, -0.0f, 1e-30f}});
  ck.tensors.push_back({"b", {1}, {42.0f}});
  return ck;
}

}  // namespace

TEST(Checkpoint, ByteIdenticalRoundTrip) {
  const auto dir = oracle::temp_dir("checkpoint_rt");
  const auto ck = sample();
  save_checkpoint(dir / "a.bin", ck);
  const auto loaded = load_checkpoint(dir / "a.bin");
  save_checkpoint(dir / "b.bin", loaded);
  EXPECT_EQ(oracle::read_file(dir / "a.bin"), oracle::read_file(dir / "b.bin"));
  EXPECT_EQ(loaded.meta, ck.meta);
  ASSERT_EQ(loaded.tensors.size(), 2u);
  EXPECT_EQ(loaded.tensors[0].shape, (Shape{2, 3}));
  EXPECT_EQ(std::bit_cast<std::uint32_t>(loaded.tensors[0].values[4]), std::bit_cast<std::uint32_t>(-0.0f));
  EXPECT_EQ(loaded.find("b")->values[0], 42.0f);
  EXPECT_EQ(loaded.find("missing"), nullptr);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize_checkpoint(sample());
  EXPECT_EQ(bytes.substr(0, 4), "MAEM");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), Checkpoint::kVersion);
  EXPECT_EQ(bytes[5], 0);
}

TEST(Checkpoint, RejectsCorruptInput) {
  auto bytes = serialize_checkpoint(sample());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse_checkpoint(bad_magic), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 3)), IoError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, 6)), IoError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    parse_checkpoint(bad_version);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "checkpoint_version");
  }
  EXPECT_THROW(load_checkpoint(oracle::temp_dir("checkpoint_missing") / "none.bin"), IoError);
}

TEST(Checkpoint, ParameterExportImport) {
  Rng rng(1);
  Linear<float> a(3, 2, rng), b(3, 2, rng);
  ParamList<float> pa, pb;
  a.collect(pa, "lin", 0);
  b.collect(pb, "lin", 0);
  Checkpoint ck;
  export_parameters(pa, ck, "model.");
  EXPECT_NE(ck.find("model.lin.weight"), nullptr);
  import_parameters(pb, ck, "model.");
  EXPECT_TRUE(std::equal(a.weight.values().begin(), a.weight.values().end(), b.weight.values().begin()));

  Linear<float> wide(4, 2, rng);
  ParamList<float> pw;
  wide.collect(pw, "lin", 0);
  EXPECT_THROW(import_parameters(pw, ck, "model."), ConfigError);
  EXPECT_THROW(import_parameters(pb, ck, "other."), ConfigError);
}

TEST(ConfigDiffs, FlattenedKeys) {
  const nlohmann::json a = {{"depth", 4}, {"grid", {{"patch", 8}, {"size", 32}}}, {"name", "x"}};
  const nlohmann::json b = {{"depth", 6}, {"grid", {{"patch", 8}, {"size", 64}}}, {"extra", true}};
  const auto d = diff_json(a, b);
  std::vector<std::string> keys;
  for (const auto& x : d) keys.push_back(x.key);
  std::sort(keys.begin(), keys.end());
  EXPECT_EQ(keys, (std::vector<std::string>{"depth", "extra", "grid.size", "name"}));
  EXPECT_TRUE(diff_json(a, a).empty());
  const auto text = format_diffs(d);
  EXPECT_TRUE(nlohmann::json::parse(text).is_array());
}
