#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <array>

#include "localgrad/analysis.hpp"
#include "localgrad/data.hpp"
#include "localgrad/error.hpp"
#include "test_util.hpp"

namespace localgrad {
namespace {

namespace fs = std::filesystem;

using test_util::TempDir;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

void expect_split_invariants(const Dataset& d) {
  std::vector<std::size_t> all(d.train);
  all.insert(all.end(), d.test.begin(), d.test.end());
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), d.size());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i) << "split not a partition";
  for (int y : d.labels) {
    EXPECT_GE(y, 0);
    EXPECT_LT(static_cast<std::size_t>(y), d.classes);
  }
}

void expect_standardized(const Dataset& d) {
  const std::size_t f = d.features();
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0;
    for (std::size_t i : d.train) mean += d.inputs[i * f + j];
    mean /= static_cast<double>(d.train.size());
    double var = 0.0;
    for (std::size_t i : d.train) var += (d.inputs[i * f + j] - mean) * (d.inputs[i * f + j] - mean);
    var /= static_cast<double>(d.train.size());
    EXPECT_LE(std::abs(mean), 1e-9) << "feature " << j;
    if (d.stddev[j] != 1.0 || var > 0.0) EXPECT_NEAR(var, 1.0, 1e-9) << "feature " << j;
  }
}

TEST(Spirals, CountsAndEightyTwentySplit) {
  const Dataset d = gen_spirals(100, 2, 0.1, 7);
  EXPECT_EQ(d.size(), 200u);
  EXPECT_EQ(d.train.size(), 160u);
  EXPECT_EQ(d.test.size(), 40u);
  EXPECT_EQ(d.sample_shape, (Shape{2}));
  expect_split_invariants(d);
}

TEST(Spirals, NoiselessSameSeedIsBitwiseIdentical) {
  const Dataset a = gen_spirals(50, 3, 0.0, 11);
  const Dataset b = gen_spirals(50, 3, 0.0, 11);
  EXPECT_EQ(a.raw_inputs, b.raw_inputs);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.train, b.train);
}

TEST(Spirals, SeedChangesSamples) {
  EXPECT_NE(gen_spirals(50, 2, 0.2, 1).raw_inputs, gen_spirals(50, 2, 0.2, 2).raw_inputs);
}

TEST(Spirals, NoiselessPointsLieOnTheirArm) {
  const double turns = 2.0;
  const Dataset d = gen_spirals(40, 2, 0.0, 3, turns);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x = d.raw_inputs[2 * i], y = d.raw_inputs[2 * i + 1];
    const double r = std::hypot(x, y);
    const double s = r / (2.0 * turns);
    const double angle = 2.0 * M_PI * (turns * s + d.labels[i] / 2.0);
    EXPECT_NEAR(x, r * std::cos(angle), 1e-9);
    EXPECT_NEAR(y, r * std::sin(angle), 1e-9);
  }
}

TEST(Spirals, RejectsDegenerateArguments) {
  EXPECT_THROW(gen_spirals(0, 2, 0.1, 0), ConfigError);
  EXPECT_THROW(gen_spirals(10, 1, 0.1, 0), ConfigError);
}

TEST(Split, StratifiedWithinOnePerClass) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const Dataset d = gen_blobs(37, 3, 5.0, seed);
    std::map<int, std::size_t> train_count, total_count;
    for (std::size_t i : d.train) ++train_count[d.labels[i]];
    for (int y : d.labels) ++total_count[y];
    for (auto [c, n] : total_count) {
      const double expected = 0.8 * static_cast<double>(n);
      EXPECT_LE(std::abs(static_cast<double>(train_count[c]) - expected), 1.0) << "class " << c;
    }
  }
}

TEST(Standardize, TrainSplitHasZeroMeanUnitVariance) {
  expect_standardized(gen_spirals(123, 3, 0.3, 5));
  expect_standardized(gen_blobs(60, 4, 6.0, 9, 5));
}

TEST(Standardize, StatisticsIgnoreTestSplit) {
  const Dataset d = gen_blobs(50, 2, 4.0, 1);
  std::vector<double> mean(d.features(), 0.0);
  for (std::size_t i : d.train)
    for (std::size_t j = 0; j < d.features(); ++j) mean[j] += d.raw_inputs[i * d.features() + j];
  for (double& m : mean) m /= static_cast<double>(d.train.size());
  for (std::size_t j = 0; j < d.features(); ++j) EXPECT_NEAR(d.mean[j], mean[j], 1e-12);
}

TEST(Blobs, SameSeedSameCenters) {
  const Dataset a = gen_blobs(20, 3, 8.0, 42);
  const Dataset b = gen_blobs(20, 3, 8.0, 42);
  EXPECT_EQ(a.raw_inputs, b.raw_inputs);
  expect_split_invariants(a);
}

TEST(Blobs, SingleClassRejected) { EXPECT_THROW(gen_blobs(10, 1, 5.0, 0), ConfigError); }

TEST(Blobs, NonPositiveSeparationRejected) { EXPECT_THROW(gen_blobs(10, 2, 0.0, 0), ConfigError); }

TEST(Blobs, EmpiricalCentersRespectSeparation) {
  const std::size_t n = 2000, classes = 4;
  const Dataset d = gen_blobs(n, classes, 10.0, 3);
  std::vector<std::array<double, 2>> centers(classes, {0.0, 0.0});
  for (std::size_t i = 0; i < d.size(); ++i) {
    centers[d.labels[i]][0] += d.raw_inputs[2 * i] / n;
    centers[d.labels[i]][1] += d.raw_inputs[2 * i + 1] / n;
  }
  for (std::size_t a = 0; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b)
      EXPECT_GE(std::hypot(centers[a][0] - centers[b][0], centers[a][1] - centers[b][1]), 10.0 - 0.2);
}

TEST(Blobs, WellSeparatedBlobsAreLinearlySeparable) {
  const Dataset d = gen_blobs(200, 3, 10.0, 4);
  auto take = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> v;
    for (std::size_t i : idx) v.insert(v.end(), d.raw_inputs.begin() + 2 * i, d.raw_inputs.begin() + 2 * i + 2);
    return Tensor({idx.size(), 2}, std::move(v));
  };
  const double acc = linear_probe(take(d.train), d.batch_labels(d.train), take(d.test), d.batch_labels(d.test),
                                  d.classes, ProbeConfig{.epochs = 30});
  EXPECT_GE(acc, 0.99);
}

TEST(Csv, ThreeRowsTwoFeatures) {
  TempDir dir;
  write_file(dir / "d.csv", "0,1.5,2\n1,-3,4e-1\n0,0,0\n");
  const Dataset d = load_csv(dir / "d.csv", 2);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.sample_shape, (Shape{2}));
  EXPECT_EQ(d.raw_inputs, (std::vector<double>{1.5, 2, -3, 0.4, 0, 0}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
}

TEST(Csv, MalformedRowNamesLine) {
  TempDir dir;
  write_file(dir / "d.csv", "0,1,2\n1,abc,2\n");
  try {
    load_csv(dir / "d.csv", 2);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Csv, RaggedRowRejected) {
  TempDir dir;
  write_file(dir / "d.csv", "0,1,2\n1,2\n");
  EXPECT_THROW(load_csv(dir / "d.csv", 2), FormatError);
}

TEST(Csv, LabelOutOfRangeRejected) {
  TempDir dir;
  write_file(dir / "d.csv", "0,1,2\n2,2,3\n");
  EXPECT_THROW(load_csv(dir / "d.csv", 2), FormatError);
}

TEST(Csv, RoundTripIsBitwise) {
  TempDir dir;
  const Dataset original = gen_spirals(30, 3, 0.37, 8);
  save_csv(dir / "s.csv", original);
  const Dataset back = load_csv(dir / "s.csv", 3, 8);
  EXPECT_EQ(back.raw_inputs, original.raw_inputs);
  EXPECT_EQ(back.labels, original.labels);
  EXPECT_EQ(back.inputs, original.inputs);
}

std::vector<std::uint8_t> tiny_pixels() {
  std::vector<std::uint8_t> px(3 * 2 * 2);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>(i * 20);
  return px;
}

TEST(Idx, ParsesImagesAndLabels) {
  TempDir dir;
  const auto px = tiny_pixels();
  const std::vector<std::uint8_t> labels{0, 1, 0};
  write_idx(dir / "img", dir / "lab", 2, 2, px, labels);
  const Dataset d = load_idx(dir / "img", dir / "lab", 2);
  EXPECT_EQ(d.sample_shape, (Shape{1, 2, 2}));
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_DOUBLE_EQ(d.raw_inputs[i], px[i] / 255.0);
}

TEST(Idx, HeaderIsBigEndian) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 2, 2, tiny_pixels(), std::vector<std::uint8_t>{0, 1, 0});
  std::ifstream in(dir / "img", std::ios::binary);
  std::vector<unsigned char> head(16);
  in.read(reinterpret_cast<char*>(head.data()), 16);
  EXPECT_EQ(head, (std::vector<unsigned char>{0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2}));
}

TEST(Idx, WrongMagicRejectedAtOffsetZero) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 2, 2, tiny_pixels(), std::vector<std::uint8_t>{0, 1, 0});
  {
    std::fstream f(dir / "img", std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(3);
    f.put(0x01);
  }
  try {
    load_idx(dir / "img", dir / "lab", 2);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
  }
}

TEST(Idx, CountMismatchRejected) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 2, 2, tiny_pixels(), std::vector<std::uint8_t>{0, 1, 0});
  write_idx(dir / "img2", dir / "lab2", 2, 2, std::vector<std::uint8_t>(8, 0), std::vector<std::uint8_t>{0, 1});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab2", 2), FormatError);
}

TEST(Idx, LabelBeyondClassesRejected) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 2, 2, tiny_pixels(), std::vector<std::uint8_t>{0, 5, 0});
  EXPECT_THROW(load_idx(dir / "img", dir / "lab", 3), FormatError);
}

TEST(Idx, TruncatedBodyRejected) {
  TempDir dir;
  write_idx(dir / "img", dir / "lab", 2, 2, tiny_pixels(), std::vector<std::uint8_t>{0, 1, 0});
  fs::resize_file(dir / "img", 20);
  EXPECT_THROW(load_idx(dir / "img", dir / "lab", 2), FormatError);
}

}  // namespace
}  // namespace localgrad
