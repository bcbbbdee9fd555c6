// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "multiception/conv.hpp"
#include "multiception/random.hpp"
#include "multiception/variants.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace multiception {

struct BenchRow {
  Shape4 shape;
  std::size_t kernel = 3;
  double naive_ms = 0.0; // best of `repeats`
  double fast_ms = 0.0;
  double max_rel_error = 0.0;

  double speedup() const { return fast_ms > 0.0 ? naive_ms / fast_ms : 0.0; }
};

template <typename F> double best_time_ms(F &&f, std::size_t repeats) {
  double best = 1e300;
  for (std::size_t i = 0; i < std::max<std::size_t>(repeats, 1); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

/// Same-padded stride-1 conv with out_channels == in_channels, float, one thread.
inline BenchRow bench_conv(const Shape4 &shape, std::size_t kernel, std::size_t repeats = 3, std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor4<float> x(shape);
  for (auto &v : x.span()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  ConvWeights<float> w(shape.c, shape.c, kernel);
  for (auto &v : w.kernel.span()) v = static_cast<float>(rng.normal() * 0.1);
  const std::size_t pad = padding_for_kernel(kernel);

  BenchRow row{shape, kernel};
  Tensor4<float> yn, yf;
  row.naive_ms = best_time_ms([&] { yn = conv2d_naive(x, w, 1, pad); }, repeats);
  row.fast_ms = best_time_ms([&] { yf = conv2d_fast(x, w, 1, pad); }, repeats);
  row.max_rel_error = max_relative_error(yn, yf);
  return row;
}

inline std::string bench_table(const std::vector<BenchRow> &rows) {
  std::ostringstream os;
  os << "shape\tkernel\tnaive_ms\tfast_ms\tspeedup\tmax_rel_error\n";
  for (const auto &r : rows) {
    os << r.shape.str() << '\t' << r.kernel << '\t' << std::fixed << std::setprecision(3) << r.naive_ms << '\t'
       << r.fast_ms << '\t' << std::setprecision(2) << r.speedup() << '\t' << std::scientific << std::setprecision(2)
       << r.max_rel_error << std::defaultfloat << '\n';
  }
  return os.str();
}

} // namespace multiception
