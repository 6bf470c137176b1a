#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "qbf/data.hpp"
#include "qbf/error.hpp"

namespace qbf {
namespace {

using Bytes = std::vector<std::uint8_t>;

void put_be32(Bytes& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

// Hand-assembled IDX pair, independent of serialize_idx.
std::pair<Bytes, Bytes> make_idx(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::mt19937_64& rng) {
  Bytes img, lab;
  put_be32(img, 0x00000803);
  put_be32(img, n);
  put_be32(img, rows);
  put_be32(img, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) img.push_back(static_cast<std::uint8_t>(rng()));
  put_be32(lab, 0x00000801);
  put_be32(lab, n);
  for (std::uint32_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(rng() % 10));
  return {img, lab};
}

TEST(Idx, HeaderExampleGivesTwo28x28Images) {
  std::mt19937_64 rng(1);
  auto [img, lab] = make_idx(2, 28, 28, rng);
  EXPECT_EQ((Bytes{img.begin(), img.begin() + 16}),
            (Bytes{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 0x1C, 0, 0, 0, 0x1C}));
  const auto d = parse_idx(img, lab);
  EXPECT_EQ(d.images.shape(), (Shape{2, 1, 28, 28}));
  EXPECT_EQ(d.size(), 2u);
  for (std::size_t i = 0; i < 2 * 28 * 28; ++i) EXPECT_EQ(d.images[i], img[16 + i] / 255.0);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(d.labels[i], lab[8 + i]);
}

TEST(Idx, PixelEndpoints) {
  std::mt19937_64 rng(2);
  auto [img, lab] = make_idx(1, 1, 2, rng);
  img[16] = 255;
  img[17] = 0;
  const auto d = parse_idx(img, lab);
  EXPECT_EQ(d.images[0], 1.0);
  EXPECT_EQ(d.images[1], 0.0);
}

TEST(Idx, CountMismatchIsLengthError) {
  std::mt19937_64 rng(3);
  auto [img, lab] = make_idx(3, 2, 2, rng);
  lab[7] = 2;
  lab.pop_back();
  EXPECT_THROW(parse_idx(img, lab), LengthError);
}

TEST(Idx, BadMagicNamesTheValue) {
  std::mt19937_64 rng(4);
  auto [img, lab] = make_idx(1, 2, 2, rng);
  img[3] = 0x04;
  try {
    parse_idx(img, lab);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("0x00000804"), std::string::npos) << e.what();
  }
}

TEST(Idx, TruncatedPayloadIsLengthError) {
  std::mt19937_64 rng(5);
  auto [img, lab] = make_idx(2, 3, 3, rng);
  img.pop_back();
  EXPECT_THROW(parse_idx(img, lab), LengthError);
}

TEST(Idx, SerializeRoundTripsBytes) {
  std::mt19937_64 rng(6);
  auto [img, lab] = make_idx(5, 4, 3, rng);
  const auto [img2, lab2] = serialize_idx(parse_idx(img, lab));
  EXPECT_EQ(img2, img);
  EXPECT_EQ(lab2, lab);
}

Bytes cifar_record(std::uint8_t label, std::mt19937_64& rng) {
  Bytes r{label};
  for (int i = 0; i < 3072; ++i) r.push_back(static_cast<std::uint8_t>(rng()));
  return r;
}

TEST(Cifar, SingleRecord) {
  std::mt19937_64 rng(7);
  const auto rec = cifar_record(4, rng);
  const auto d = parse_cifar10(rec);
  EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(d.labels, std::vector<int>{4});
  EXPECT_EQ(d.images[0], rec[1] / 255.0);            // R plane, first pixel
  EXPECT_EQ(d.images[1024], rec[1 + 1024] / 255.0);  // G plane, first pixel
}

TEST(Cifar, LabelOutOfRange) {
  std::mt19937_64 rng(8);
  EXPECT_THROW(parse_cifar10(cifar_record(11, rng)), FormatError);
}

TEST(Cifar, IndivisibleLength) {
  std::mt19937_64 rng(9);
  auto rec = cifar_record(1, rng);
  rec.push_back(0);
  EXPECT_THROW(parse_cifar10(rec), FormatError);
  EXPECT_THROW(parse_cifar10(Bytes{}), FormatError);
}

TEST(Cifar, TwoRecordsRoundTrip) {
  std::mt19937_64 rng(10);
  auto bytes = cifar_record(3, rng);
  const auto second = cifar_record(9, rng);
  bytes.insert(bytes.end(), second.begin(), second.end());
  EXPECT_EQ(serialize_cifar10(parse_cifar10(bytes)), bytes);
}

// Random header and payload mutations: every outcome is a clean parse or a
// typed library error.
TEST(Fuzz, ParsersNeverEscapeWithUntypedErrors) {
  std::mt19937_64 rng(11);
  auto [img, lab] = make_idx(3, 4, 4, rng);
  auto cifar = cifar_record(2, rng);
  for (int trial = 0; trial < 2000; ++trial) {
    auto i2 = img, l2 = lab, c2 = cifar;
    for (int k = 0; k < 1 + static_cast<int>(rng() % 3); ++k) {
      i2[rng() % 16] = static_cast<std::uint8_t>(rng());
      l2[rng() % 8] = static_cast<std::uint8_t>(rng());
      c2[rng() % c2.size()] = static_cast<std::uint8_t>(rng());
    }
    if (rng() % 4 == 0) i2.resize(rng() % (i2.size() + 1));
    if (rng() % 4 == 0) c2.resize(rng() % (c2.size() + 1));
    try {
      parse_idx(i2, l2);
    } catch (const Error&) {
    }
    try {
      parse_cifar10(c2);
    } catch (const Error&) {
    }
  }
  SUCCEED();
}

TEST(Loaders, MissingFileIsIoError) {
  EXPECT_THROW(load_idx("/nonexistent/a", "/nonexistent/b"), IoError);
}

TEST(Blobs, ZeroSpreadSamplesSitOnTheirCentre) {
  const auto d = synthetic_blobs(3, 5, 4, 0.0, 42);
  EXPECT_EQ(d.images.shape(), (Shape{12, 1, 5, 1}));
  for (std::size_t i = 3; i < d.size(); ++i) {
    ASSERT_EQ(d.labels[i], d.labels[i - 3]);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(d.images[i * 5 + k], d.images[(i - 3) * 5 + k]);
  }
}

TEST(Blobs, DeterministicBalancedAndInRange) {
  const auto a = synthetic_blobs(4, 6, 25, 0.3, 7);
  const auto b = synthetic_blobs(4, 6, 25, 0.3, 7);
  const auto c = synthetic_blobs(4, 6, 25, 0.3, 8);
  EXPECT_TRUE(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  EXPECT_FALSE(std::equal(a.images.data().begin(), a.images.data().end(), c.images.data().begin()));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 25);
  EXPECT_NO_THROW(a.validate());
}

TEST(Blobs, RejectsSingleClass) { EXPECT_THROW(synthetic_blobs(1, 2, 2, 0.1, 0), ConfigError); }

TEST(Batches, TenByThree) {
  const auto b = batches(10, 3, 1, 0);
  std::vector<std::size_t> sizes;
  for (const auto& x : b) sizes.push_back(x.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 3, 1}));
}

TEST(Batches, SameKeySameOrderNewEpochNewOrder) {
  EXPECT_EQ(batches(50, 7, 3, 2), batches(50, 7, 3, 2));
  EXPECT_NE(batches(50, 7, 3, 2), batches(50, 7, 3, 3));
  EXPECT_NE(batches(50, 7, 3, 2), batches(50, 7, 4, 2));
}

TEST(Batches, EachEpochIsAPermutation) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 200, m = 1 + rng() % 40;
    std::vector<std::size_t> seen;
    for (const auto& b : batches(n, m, rng(), rng() % 5)) seen.insert(seen.end(), b.begin(), b.end());
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    ASSERT_EQ(seen, all);
  }
}

TEST(Batches, ZeroBatchSizeIsConfigError) { EXPECT_THROW(batches(3, 0, 0, 0), ConfigError); }

TEST(Split, TailFractionGoesToValidation) {
  const auto d = synthetic_blobs(2, 3, 10, 0.1, 1);
  const auto s = split_tail(d, 0.1);
  EXPECT_EQ(s.train.size(), 18u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.validation.labels, (std::vector<int>{d.labels[18], d.labels[19]}));
  EXPECT_EQ(s.validation.images[0], d.images[18 * 3]);
}

TEST(Gather, PicksRowsInOrder) {
  const auto d = synthetic_blobs(2, 2, 3, 0.2, 5);
  const std::vector<std::size_t> idx{4, 1};
  const auto b = gather(d, idx);
  EXPECT_EQ(b.labels, (std::vector<int>{d.labels[4], d.labels[1]}));
  EXPECT_EQ(b.inputs[0], d.images[8]);
  EXPECT_EQ(b.inputs[3], d.images[3]);
  const std::vector<std::size_t> bad{6};
  EXPECT_THROW(gather(d, bad), IndexError);
}

}  // namespace
}  // namespace qbf
