#include "multiception/data.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

using namespace multiception;

namespace {

std::vector<unsigned char> record(unsigned char label, unsigned char fill) {
  std::vector<unsigned char> r(cifar10::kRecordSize, fill);
  r[0] = label;
  return r;
}

Dataset tiny_dataset(const std::vector<float> &values, std::size_t c, std::size_t h, std::size_t w) {
  Dataset ds;
  const std::size_t n = values.size() / (c * h * w);
  ds.images = Tensor4<float>(Shape4{n, c, h, w}, values);
  ds.labels.assign(n, 0);
  return ds;
}

} // namespace

TEST(Cifar, SingleRecord) {
  auto bytes = record(7, 0);
  bytes[1] = 255;                  // R(0, 0)
  bytes[1 + 1024 + 33] = 51;       // G(1, 1)
  bytes[cifar10::kRecordSize - 1] = 255; // B(31, 31)
  const auto ds = parse_cifar10(bytes);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.labels[0], 7);
  EXPECT_EQ(ds.images.shape(), (Shape4{1, 3, 32, 32}));
  EXPECT_EQ(ds.images(0, 0, 0, 0), 1.0f);
  EXPECT_FLOAT_EQ(ds.images(0, 1, 1, 1), 0.2f);
  EXPECT_EQ(ds.images(0, 2, 31, 31), 1.0f);
  EXPECT_EQ(ds.images(0, 0, 0, 1), 0.0f);
}

TEST(Cifar, SeveralRecords) {
  auto bytes = record(1, 10);
  const auto second = record(9, 20);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const auto ds = parse_cifar10(bytes);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 9}));
  EXPECT_FLOAT_EQ(ds.images(1, 2, 5, 5), 20.0f / 255.0f);
}

TEST(Cifar, BadLabelIsFormatError) {
  EXPECT_THROW(parse_cifar10(record(255, 0)), FormatError);
  EXPECT_THROW(parse_cifar10(record(10, 0)), FormatError);
}

TEST(Cifar, BadSizeIsFormatError) {
  auto bytes = record(0, 0);
  bytes.pop_back();
  EXPECT_THROW(parse_cifar10(bytes), FormatError);
  EXPECT_THROW(parse_cifar10({}), FormatError);
}

TEST(Cifar, LoadFromFile) {
  const std::string path = ::testing::TempDir() + "cifar_two_records.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (unsigned char label : {3, 4}) {
      const auto r = record(label, 128);
      out.write(reinterpret_cast<const char *>(r.data()), static_cast<std::streamsize>(r.size()));
    }
  }
  const auto ds = load_cifar10(path);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 4}));
  std::remove(path.c_str());
  EXPECT_THROW(load_cifar10(path), FormatError);
}

TEST(DatasetOps, ConcatAndTake) {
  const auto a = parse_cifar10(record(1, 0)), b = parse_cifar10(record(2, 255));
  const auto ab = concat_datasets({a, b});
  EXPECT_EQ(ab.labels, (std::vector<int>{1, 2}));
  EXPECT_EQ(ab.images(1, 0, 3, 3), 1.0f);
  const auto first = take(ab, 1);
  EXPECT_EQ(first.size(), 1u);
  EXPECT_EQ(first.images(0, 0, 3, 3), 0.0f);
  EXPECT_EQ(take(ab, 100).size(), 2u);
  EXPECT_THROW(take(ab, 0), InputError);
  EXPECT_THROW(concat_datasets({}), InputError);
}

TEST(Normalize, ConstantChannelIsInputError) {
  EXPECT_THROW(normalize(tiny_dataset({0.5f, 0.5f, 0.5f, 0.5f}, 1, 2, 2)), InputError);
}

TEST(Normalize, TwoLevelsMapToPlusMinusOne) {
  const auto ds = normalize(tiny_dataset({0, 1, 0, 1}, 1, 2, 2));
  EXPECT_EQ(ds.images.values(), (std::vector<float>{-1, 1, -1, 1}));
  EXPECT_FLOAT_EQ(ds.channel_means[0], 0.5f);
  EXPECT_FLOAT_EQ(ds.channel_stds[0], 0.5f);
}

TEST(Normalize, AlreadyNormalizedIsUnchanged) {
  const auto scaled = normalize(tiny_dataset({-1, 1, 1, -1, 1, -1, -1, 1}, 2, 2, 1));
  EXPECT_EQ(scaled.images.values(), (std::vector<float>{-1, 1, 1, -1, 1, -1, -1, 1}));
  EXPECT_EQ(normalize(scaled).images.values(), scaled.images.values());
}

TEST(Normalize, PerChannelMomentsAfterNormalizing) {
  const auto ds = normalize(make_synthetic(20, 3));
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, ss = 0, m = 0;
    for (std::size_t n = 0; n < ds.images.n(); ++n)
      for (float v : ds.images.plane(n, c)) {
        s += v;
        ss += static_cast<double>(v) * v;
        ++m;
      }
    EXPECT_NEAR(s / m, 0.0, 1e-5);
    EXPECT_NEAR(ss / m, 1.0, 1e-4);
  }
}

TEST(Normalize, DenormalizeInverts) {
  const auto raw = make_synthetic(6, 4);
  const auto back = denormalize(normalize(raw));
  for (std::size_t i = 0; i < raw.images.size(); ++i) ASSERT_NEAR(back.images[i], raw.images[i], 1e-6);
  EXPECT_TRUE(back.channel_means.empty());
}

TEST(Normalize, WrongStatisticCount) {
  auto ds = tiny_dataset({0, 1, 0, 1}, 1, 2, 2);
  EXPECT_THROW(normalize_with(ds, {0.f, 0.f}, {1.f, 1.f}), DimensionError);
}

TEST(Augment, CentreCropWithoutFlipIsIdentity) {
  const auto ds = make_synthetic(2, 5);
  Tensor4<float> out(ds.images.shape());
  for (std::size_t n = 0; n < 2; ++n) crop_flip(ds.images, n, 4, 4, false, out);
  EXPECT_EQ(out, ds.images);
}

TEST(Augment, DoubleFlipIsIdentity) {
  const auto ds = make_synthetic(1, 6);
  Tensor4<float> once(ds.images.shape()), twice(ds.images.shape());
  crop_flip(ds.images, 0, 4, 4, true, once);
  crop_flip(once, 0, 4, 4, true, twice);
  EXPECT_EQ(twice, ds.images);
  EXPECT_NE(once, ds.images);
}

TEST(Augment, ShiftMovesPixelsAndZeroPads) {
  Tensor4<float> x(Shape4{1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i + 1);
  Tensor4<float> out(x.shape());
  crop_flip(x, 0, 5, 4, false, out);
  EXPECT_EQ(out(0, 0, 0, 0), x(0, 0, 1, 0));
  EXPECT_EQ(out(0, 0, 3, 2), 0.0f);
  crop_flip(x, 0, 0, 0, false, out);
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Augment, EveryOffsetIsReached) {
  // an asymmetric two-pixel marker locates the crop offset and the flip of each draw
  Tensor4<float> x(Shape4{1, 1, 32, 32});
  x(0, 0, 16, 16) = 1.0f;
  x(0, 0, 16, 17) = 0.5f;
  Rng rng(7);
  std::set<std::pair<long, long>> offsets;
  std::size_t flips = 0;
  const std::size_t draws = 100000;
  for (std::size_t d = 0; d < draws; ++d) {
    const auto y = augment(x, rng);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c)
        if (y(0, 0, r, c) == 1.0f) {
          const bool flipped = c > 0 && y(0, 0, r, c - 1) == 0.5f;
          const long col = static_cast<long>(c);
          flips += flipped;
          offsets.insert({20 - static_cast<long>(r), flipped ? col - 11 : 20 - col});
        }
  }
  EXPECT_EQ(offsets.size(), 81u);
  for (const auto &[dy, dx] : offsets) {
    EXPECT_GE(dy, 0);
    EXPECT_LE(dy, 8);
    EXPECT_GE(dx, 0);
    EXPECT_LE(dx, 8);
  }
  EXPECT_NEAR(static_cast<double>(flips) / draws, 0.5, 0.01);
}

TEST(Augment, PreservesShapeAndLabels) {
  const auto ds = make_synthetic(5, 8);
  Rng rng(9);
  const auto y = augment(ds.images, rng);
  EXPECT_EQ(y.shape(), ds.images.shape());
  EXPECT_TRUE(y.all_finite());
}

TEST(Synthetic, BalancedAndBounded) {
  const auto ds = make_synthetic(100, 10);
  int ones = 0;
  for (int l : ds.labels) ones += l;
  EXPECT_EQ(ones, 50);
  for (float v : ds.images.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LT(v, 1.0f + 1e-6f);
  }
  EXPECT_EQ(make_synthetic(10, 10).images, make_synthetic(10, 10).images);
  EXPECT_THROW(make_synthetic(0, 1), InputError);
}
