// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "pmae/error.hpp"
#include "pmae/eval.hpp"
#include "pmae/random.hpp"

using namespace pmae;

TEST(Accuracy, HandExamples) {
  const std::vector<std::size_t> y = {0, 1, 2, 1};
  EXPECT_EQ(accuracy(y, y), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{1, 2, 0, 0}, y), 0.0);
  EXPECT_EQ(accuracy(std::vector<std::size_t>{0, 1, 2, 2}, y), 0.75);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), DataError);
  EXPECT_THROW(accuracy(std::vector<std::size_t>{0}, y), ShapeError);
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  const std::vector<std::size_t> y = {0, 1, 2, 2, 1};
  const auto cm = ConfusionMatrix::from(y, y, 3);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (r != c) EXPECT_EQ(cm.at(r, c), 0u);
    }
  }
  EXPECT_EQ(cm.at(2, 2), 2u);
  EXPECT_EQ(cm.trace(), 5u);
  EXPECT_THROW(ConfusionMatrix::from(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 3), DataError);
}

TEST(Confusion, TraceOverTotalEqualsAccuracy) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const auto k = static_cast<std::size_t>(uniform_int(rng, 2, 15));
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 300));
    std::vector<std::size_t> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(k) - 1));
      p[i] = uniform01(rng) < 0.6 ? y[i] : static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(k) - 1));
    }
    const auto cm = ConfusionMatrix::from(p, y, k);
    ASSERT_EQ(cm.total(), n);
    ASSERT_EQ(static_cast<double>(cm.trace()) / static_cast<double>(cm.total()), accuracy(p, y));
    ASSERT_EQ(cm.accuracy(), accuracy(p, y));
  }
}

TEST(Confusion, RowPercentagesAndRecall) {
  ConfusionMatrix cm(3);
  cm.add(0, 0);
  cm.add(1, 0);
  cm.add(1, 0);
  cm.add(1, 1);
  const auto pct = cm.row_normalized();
  EXPECT_NEAR(pct[0], 100.0 / 3.0, 1e-12);
  EXPECT_NEAR(pct[1], 200.0 / 3.0, 1e-12);
  EXPECT_EQ(pct[4], 100.0);
  EXPECT_EQ(pct[6] + pct[7] + pct[8], 0.0);
  const auto recall = cm.per_label_accuracy();
  EXPECT_NEAR(*recall[0], 1.0 / 3.0, 1e-12);
  EXPECT_EQ(*recall[1], 1.0);
  EXPECT_FALSE(recall[2].has_value());
}

TEST(Confusion, MergeAddsCounts) {
  ConfusionMatrix a(2), b(2);
  a.add(0, 0);
  b.add(1, 0);
  b.add(1, 1);
  a.merge(b);
  EXPECT_EQ(a.total(), 3u);
  EXPECT_EQ(a.at(0, 1), 1u);
  EXPECT_THROW(a.merge(ConfusionMatrix(3)), ShapeError);
}

TEST(Confusion, RenderedForms) {
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(1, 1);
  cm.add(0, 1);
  const std::vector<std::string> names = {"a", "b"};
  EXPECT_EQ(cm.to_csv(names), "true\\predicted,a,b\na,1,0\nb,1,1\n");
  const auto text = cm.to_text(names);
  EXPECT_NE(text.find("100.0"), std::string::npos);
  EXPECT_NE(text.find("50.0"), std::string::npos);
  const auto img = cm.heat_map(16);
  EXPECT_EQ(img.width, 32u);
  EXPECT_EQ(img.at(0, 0), 255);
  EXPECT_EQ(img.at(16, 0), 0);
}

TEST(Folds, TextbookMeanAndStd) {
  const std::vector<double> v = {1, 2, 3};
  const auto s = aggregate_folds(v);
  EXPECT_EQ(s.mean, 2.0);
  ASSERT_TRUE(s.std.has_value());
  EXPECT_EQ(*s.std, 1.0);
  const std::vector<double> same = {0.9, 0.9, 0.9, 0.9};
  EXPECT_NEAR(*aggregate_folds(same).std, 0.0, 1e-15);
  const std::vector<double> one = {0.8};
  EXPECT_FALSE(aggregate_folds(one).std.has_value());
  EXPECT_EQ(aggregate_folds(one).format(), "80.00 ± n/a");
  const std::vector<double> pct = {0.99, 0.97};
  EXPECT_EQ(aggregate_folds(pct).format(), "98.00 ± 1.41");
}

TEST(Folds, ResultsFileLayout) {
  const std::vector<FoldResult> r = {{0, 0.05, 0.5}, {1, 0.05, 1.0}};
  EXPECT_EQ(format_results(r),
            "fold,subset_fraction,accuracy\n0,0.05,0.500000\n1,0.05,1.000000\n"
            "# folds 2\n# mean 0.750000\n# std 0.353553\n# accuracy_percent 75.00 ± 35.36\n");
}
