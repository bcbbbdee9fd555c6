// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/errors.hpp"
#include "multiception/random.hpp"
#include "multiception/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace multiception {

namespace cifar10 {
inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPixels = kSide * kSide * kChannels;
inline constexpr std::size_t kRecordSize = 1 + kPixels;
inline constexpr std::size_t kClasses = 10;
} // namespace cifar10

/// Labelled NCHW images plus the per-channel statistics used to normalize them.
struct Dataset {
  Tensor4<float> images;
  std::vector<int> labels;
  std::vector<float> channel_means; // empty until normalized
  std::vector<float> channel_stds;

  std::size_t size() const { return labels.size(); }
};

/**
 * Parses CIFAR-10 binary records: 1 label byte followed by 1024 R, 1024 G
 * and 1024 B bytes, each plane row-major. Pixels are scaled to [0, 1].
 */
inline Dataset parse_cifar10(const std::vector<unsigned char> &bytes, const std::string &origin = "buffer") {
  if (bytes.empty() || bytes.size() % cifar10::kRecordSize != 0) {
    throw FormatError(origin + ": size " + std::to_string(bytes.size()) + " is not a positive multiple of " +
                      std::to_string(cifar10::kRecordSize));
  }
  const std::size_t n = bytes.size() / cifar10::kRecordSize;
  Dataset ds;
  ds.images = Tensor4<float>(Shape4{n, cifar10::kChannels, cifar10::kSide, cifar10::kSide});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char *rec = bytes.data() + i * cifar10::kRecordSize;
    if (rec[0] >= cifar10::kClasses) {
      throw FormatError(origin + ": record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    }
    ds.labels[i] = rec[0];
    float *dst = ds.images.data() + ds.images.index(i, 0, 0, 0);
    for (std::size_t p = 0; p < cifar10::kPixels; ++p) dst[p] = static_cast<float>(rec[1 + p]) / 255.0f;
  }
  return ds;
}

inline Dataset load_cifar10(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_cifar10(bytes, path);
}

/// Concatenates datasets of equal image shape (e.g. data_batch_1..5).
inline Dataset concat_datasets(const std::vector<Dataset> &parts) {
  if (parts.empty()) throw InputError("no datasets to concatenate");
  const Shape4 s = parts.front().images.shape();
  std::size_t n = 0;
  for (const auto &p : parts) {
    const Shape4 ps = p.images.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) throw DimensionError("dataset image shapes differ");
    n += p.size();
  }
  Dataset out;
  out.images = Tensor4<float>(Shape4{n, s.c, s.h, s.w});
  std::size_t off = 0;
  for (const auto &p : parts) {
    std::copy(p.images.values().begin(), p.images.values().end(), out.images.data() + off);
    off += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

/// First `count` examples (or all, if fewer).
inline Dataset take(const Dataset &ds, std::size_t count) {
  count = std::min(count, ds.size());
  if (count == 0) throw InputError("empty subset");
  const Shape4 s = ds.images.shape();
  Dataset out;
  const std::size_t per = s.c * s.h * s.w;
  out.images = Tensor4<float>(Shape4{count, s.c, s.h, s.w},
                              std::vector<float>(ds.images.values().begin(), ds.images.values().begin() + count * per));
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  out.channel_means = ds.channel_means;
  out.channel_stds = ds.channel_stds;
  return out;
}

/// Applies (x - mean) / std per channel with the given statistics.
inline void normalize_with(Dataset &ds, const std::vector<float> &means, const std::vector<float> &stds) {
  const std::size_t C = ds.images.c();
  if (means.size() != C || stds.size() != C) throw DimensionError("normalization statistics need one entry per channel");
  for (std::size_t n = 0; n < ds.images.n(); ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (float &v : ds.images.plane(n, c)) v = (v - means[c]) / stds[c];
    }
  }
  ds.channel_means = means;
  ds.channel_stds = stds;
}

/// Fits per-channel mean and population std on `ds` and normalizes it in place.
inline Dataset normalize(Dataset ds) {
  const std::size_t C = ds.images.c();
  const double m = static_cast<double>(ds.images.n() * ds.images.h() * ds.images.w());
  std::vector<float> means(C), stds(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < ds.images.n(); ++n)
      for (float v : ds.images.plane(n, c)) s += v;
    const double mu = s / m;
    double ss = 0.0;
    for (std::size_t n = 0; n < ds.images.n(); ++n)
      for (float v : ds.images.plane(n, c)) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / m);
    if (!(sd > 1e-12)) throw InputError("channel " + std::to_string(c) + " is constant; cannot normalize");
    means[c] = static_cast<float>(mu);
    stds[c] = static_cast<float>(sd);
  }
  normalize_with(ds, means, stds);
  return ds;
}

/// Inverse of normalize_with using the statistics stored on the dataset.
inline Dataset denormalize(Dataset ds) {
  if (ds.channel_means.empty()) return ds;
  for (std::size_t n = 0; n < ds.images.n(); ++n)
    for (std::size_t c = 0; c < ds.images.c(); ++c)
      for (float &v : ds.images.plane(n, c)) v = v * ds.channel_stds[c] + ds.channel_means[c];
  ds.channel_means.clear();
  ds.channel_stds.clear();
  return ds;
}

inline constexpr std::size_t kAugmentPad = 4;

/// Crop at (dy, dx) from the image zero-padded by 4 on every side, then
/// optionally mirror horizontally. (4, 4) without flip is the identity.
template <typename T>
void crop_flip(const Tensor4<T> &src, std::size_t n, std::size_t dy, std::size_t dx, bool flip, Tensor4<T> &dst) {
  const auto H = static_cast<std::ptrdiff_t>(src.h()), W = static_cast<std::ptrdiff_t>(src.w());
  const auto pad = static_cast<std::ptrdiff_t>(kAugmentPad);
  for (std::size_t c = 0; c < src.c(); ++c) {
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        const std::ptrdiff_t sy = y + static_cast<std::ptrdiff_t>(dy) - pad;
        const std::ptrdiff_t sxc = x + static_cast<std::ptrdiff_t>(dx) - pad;
        const T v = (sy < 0 || sy >= H || sxc < 0 || sxc >= W)
                        ? T(0)
                        : src(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sxc));
        const std::ptrdiff_t ox = flip ? W - 1 - x : x;
        dst(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(ox)) = v;
      }
    }
  }
}

/// Pad-4 random crop plus horizontal flip with probability 1/2, per image.
template <typename T> Tensor4<T> augment(const Tensor4<T> &batch, Rng &rng) {
  Tensor4<T> out(batch.shape());
  for (std::size_t n = 0; n < batch.n(); ++n) {
    const std::size_t dy = rng.below(2 * kAugmentPad + 1);
    const std::size_t dx = rng.below(2 * kAugmentPad + 1);
    crop_flip(batch, n, dy, dx, rng.coin(), out);
  }
  return out;
}

/**
 * Deterministic two-class 32x32 RGB set: class 0 is a bright centred disk,
 * class 1 a bright square in a corner chosen per image, both on a dark
 * background with additive uniform noise in [0, 0.3).
 */
inline Dataset make_synthetic(std::size_t count, std::uint64_t seed) {
  if (count == 0) throw InputError("synthetic dataset needs at least one image");
  constexpr std::size_t S = 32;
  Rng rng(seed);
  Dataset ds;
  ds.images = Tensor4<float>(Shape4{count, 3, S, S});
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.labels[i] = label;
    const std::size_t corner = rng.below(4);
    const double cy = corner / 2 ? S - 6.0 : 5.0;
    const double cx = corner % 2 ? S - 6.0 : 5.0;
    for (std::size_t y = 0; y < S; ++y) {
      for (std::size_t x = 0; x < S; ++x) {
        bool on;
        if (label == 0) {
          const double dy = y - 15.5, dx = x - 15.5;
          on = dy * dy + dx * dx <= 36.0;
        } else {
          on = std::abs(y - cy) <= 4.0 && std::abs(x - cx) <= 4.0;
        }
        for (std::size_t c = 0; c < 3; ++c) {
          ds.images(i, c, y, x) = static_cast<float>((on ? 0.7 : 0.0) + rng.uniform(0.0, 0.3));
        }
      }
    }
  }
  return ds;
}

} // namespace multiception
