// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pmae/data.hpp"
#include "pmae/error.hpp"
#include "pmae/imaging.hpp"

using namespace pmae;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

SampleManifest two_label_manifest(std::size_t a, std::size_t b) {
  std::vector<ManifestRecord> recs;
  for (std::size_t i = 0; i < a; ++i) recs.push_back({"a/" + std::to_string(i) + ".png", "alpha", "", 0});
  for (std::size_t i = 0; i < b; ++i) recs.push_back({"b/" + std::to_string(i) + ".png", "beta", "", 0});
  return make_manifest(std::move(recs));
}

std::vector<std::size_t> all_rows(const SampleManifest& m) {
  std::vector<std::size_t> rows(m.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

bool within_one(std::size_t count, double nominal) { return std::abs(static_cast<double>(count) - nominal) <= 1.0 + 1e-9; }

}  // namespace

TEST(Manifest, LoadsAndIndexesLabelsBySortedName) {
  const auto dir = oracle::temp_dir("manifest_load");
  write_text(dir / "m.csv", "path,label,source\nx.png,zeta,lab\ny.png,alpha,\n");
  const auto m = load_manifest(dir / "m.csv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.labels, (std::vector<std::string>{"alpha", "zeta"}));
  EXPECT_EQ(m.records[0].label_index, 1u);
  EXPECT_EQ(m.records[1].label_index, 0u);
  EXPECT_EQ(m.records[0].source, "lab");
  EXPECT_EQ(m.warnings.size(), 2u);
  EXPECT_EQ(m.resolve(0), dir / "x.png");
}

TEST(Manifest, RejectsBadInput) {
  const auto dir = oracle::temp_dir("manifest_bad");
  write_text(dir / "empty.csv", "");
  EXPECT_THROW(load_manifest(dir / "empty.csv"), DataError);
  write_text(dir / "dup.csv", "path,label\nx.png,a\nx.png,b\n");
  try {
    load_manifest(dir / "dup.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("x.png"), std::string::npos);
  }
  write_text(dir / "row.csv", "path,label\nx.png,a\nlonely\n");
  try {
    load_manifest(dir / "row.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  write_text(dir / "head.csv", "file,class\nx.png,a\n");
  EXPECT_THROW(load_manifest(dir / "head.csv"), DataError);
  EXPECT_THROW(load_manifest(dir / "absent.csv"), IoError);
}

TEST(Manifest, SaveLoadRoundTrip) {
  const auto dir = oracle::temp_dir("manifest_save");
  const auto m = oracle::random_manifest(3, 4, 2, 6);
  fs::create_directories(dir / "sub");
  save_manifest(dir / "sub" / "out.csv", m);
  const auto back = load_manifest(dir / "sub" / "out.csv");
  ASSERT_EQ(back.size(), m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(back.records[i].label, m.records[i].label);
    EXPECT_EQ(fs::weakly_canonical(back.resolve(i)), fs::weakly_canonical(fs::absolute(m.resolve(i))));
  }
}

TEST(KFold, HandArithmeticExample) {
  const auto m = two_label_manifest(50, 50);
  const auto folds = stratified_kfold(m, 5, 1);
  ASSERT_EQ(folds.size(), 5u);
  for (const auto& f : folds) {
    const auto test = f.indices(Part::test);
    EXPECT_EQ(test.size(), 20u);
    EXPECT_EQ(m.label_counts(test), (std::vector<std::size_t>{10, 10}));
  }
}

TEST(KFold, TooFewSamplesNamesLabel) {
  const auto m = two_label_manifest(10, 3);
  try {
    stratified_kfold(m, 5, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("beta"), std::string::npos);
  }
}

TEST(KFold, PartitionAndStratificationOnRandomManifests) {
  Rng rng(2024);
  for (int t = 0; t < 200; ++t) {
    const auto k = static_cast<std::size_t>(2 + t % 9);
    const auto labels = static_cast<std::size_t>(uniform_int(rng, 2, 8));
    const auto m = oracle::random_manifest(1000 + t, labels, k, k + 60);
    const auto seed = static_cast<std::uint64_t>(t * 7 + 1);
    const auto folds = stratified_kfold(m, k, seed, 0.15);
    ASSERT_EQ(folds.size(), k);
    const auto totals = m.label_counts(all_rows(m));
    std::vector<std::size_t> test_hits(m.size(), 0);
    for (const auto& f : folds) {
      ASSERT_EQ(f.assignment.size(), m.size());
      const auto tr = f.indices(Part::train), va = f.indices(Part::val), te = f.indices(Part::test);
      ASSERT_EQ(tr.size() + va.size() + te.size(), m.size());
      std::set<std::size_t> all(tr.begin(), tr.end());
      all.insert(va.begin(), va.end());
      all.insert(te.begin(), te.end());
      ASSERT_EQ(all.size(), m.size());
      for (auto i : te) ++test_hits[i];
      const auto ct = m.label_counts(te), cv = m.label_counts(va), cr = m.label_counts(tr);
      for (std::size_t l = 0; l < labels; ++l) {
        const double n = static_cast<double>(totals[l]);
        EXPECT_TRUE(within_one(ct[l], n / k)) << "test label " << l << " fold " << f.fold;
        EXPECT_TRUE(within_one(cv[l], 0.15 * (1.0 - 1.0 / k) * n)) << "val label " << l;
        EXPECT_TRUE(within_one(cr[l], 0.85 * (1.0 - 1.0 / k) * n)) << "train label " << l;
      }
    }
    for (auto h : test_hits) ASSERT_EQ(h, 1u);
    const auto again = stratified_kfold(m, k, seed, 0.15);
    for (std::size_t f = 0; f < k; ++f) ASSERT_EQ(again[f].assignment, folds[f].assignment);
  }
}

TEST(KFold, SplitFilesRoundTrip) {
  const auto dir = oracle::temp_dir("split_files");
  const auto m = oracle::random_manifest(5, 3, 10, 20);
  const auto folds = stratified_kfold(m, 5, 3);
  write_split_files(dir, m, folds[2]);
  for (auto p : {Part::train, Part::val, Part::test}) {
    const auto back = load_manifest(dir / ("fold2_" + std::string(part_name(p)) + ".csv"));
    EXPECT_EQ(back.size(), folds[2].indices(p).size());
  }
}

TEST(Budget, MatchesIntegerOracle) {
  for (std::size_t n = 1; n <= 3000; ++n) {
    for (std::size_t p100 : {1u, 5u, 10u, 100u}) {
      ASSERT_EQ(budget_count(n, p100 / 100.0), oracle::budget_oracle(n, p100)) << n << " " << p100;
    }
  }
  EXPECT_EQ(budget_count(3, 0.01), 1u);
  EXPECT_EQ(budget_count(50, 0.01), 1u);
  EXPECT_EQ(budget_count(150, 0.01), 2u);
  EXPECT_EQ(budget_count(250, 0.01), 3u);
  EXPECT_THROW(budget_count(10, 0.0), ConfigError);
}

TEST(Subset, BudgetsNestingAndFullFraction) {
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    const auto m = oracle::random_manifest(500 + t, 5, 2, 400);
    const auto folds = stratified_kfold(m, 2, 9);
    const auto train = folds[0].indices(Part::train);
    const auto avail = m.label_counts(train);
    const auto seed = static_cast<std::uint64_t>(uniform_int(rng, 0, 1000));
    std::vector<std::size_t> prev;
    for (std::size_t p100 : {1u, 5u, 10u, 100u}) {
      const auto sub = sample_label_subset(m, train, p100 / 100.0, seed);
      ASSERT_TRUE(std::is_sorted(sub.begin(), sub.end()));
      ASSERT_TRUE(std::includes(train.begin(), train.end(), sub.begin(), sub.end()));
      ASSERT_TRUE(std::includes(sub.begin(), sub.end(), prev.begin(), prev.end()));
      const auto counts = m.label_counts(sub);
      for (std::size_t l = 0; l < m.num_labels(); ++l) {
        if (avail[l] == 0) continue;
        ASSERT_EQ(counts[l], oracle::budget_oracle(avail[l], p100));
        ASSERT_GE(counts[l], 1u);
      }
      if (p100 == 100) ASSERT_EQ(sub, train);
      prev = sub;
    }
  }
}

TEST(Subset, LabCountsLandInPublishedRanges) {
  std::vector<ManifestRecord> recs;
  Rng rng(5);
  for (std::size_t l = 0; l < 12; ++l) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 680, 920));
    for (std::size_t i = 0; i < n; ++i) recs.push_back({std::to_string(l) + "/" + std::to_string(i), "c" + std::to_string(l), "", 0});
  }
  const auto m = make_manifest(std::move(recs));
  const auto all = all_rows(m);
  const std::pair<std::size_t, std::size_t> ranges[] = {{6, 9}, {34, 46}, {68, 93}};
  const double fractions[] = {0.01, 0.05, 0.1};
  for (int f = 0; f < 3; ++f) {
    for (auto c : m.label_counts(sample_label_subset(m, all, fractions[f], 1))) {
      EXPECT_GE(c, ranges[f].first);
      EXPECT_LE(c, ranges[f].second);
    }
  }
}

TEST(Synthetic, DeterministicAndLabelled) {
  SyntheticSpec spec{6, 3, 36, 1.0, 11};
  EXPECT_EQ(synthesize_image(spec, 2, 1), synthesize_image(spec, 2, 1));
  EXPECT_NE(synthesize_image(spec, 2, 1), synthesize_image(spec, 2, 2));
  EXPECT_NE(synthesize_image(spec, 2, 1), synthesize_image(spec, 5, 1));
  EXPECT_EQ(synthetic_label_name(0), "chain_0");
  EXPECT_EQ(synthetic_label_name(4), "star_1");

  const auto a = oracle::temp_dir("synth_a"), b = oracle::temp_dir("synth_b");
  const auto ma = generate_synthetic_dataset(spec, a);
  generate_synthetic_dataset(spec, b);
  ASSERT_EQ(ma.size(), 18u);
  EXPECT_EQ(ma.num_labels(), 6u);
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const auto rel = fs::relative(ma.resolve(i), a);
    EXPECT_EQ(oracle::read_file(a / rel), oracle::read_file(b / rel)) << rel;
  }
  EXPECT_THROW((SyntheticSpec{1, 3, 36, 1.0, 0}.validate()), ConfigError);
}
