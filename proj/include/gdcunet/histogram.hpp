// SPDX-License-Identifier: Apache-2.0
// Equal-width value histograms of feature maps.
#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "gdcunet/tensor.hpp"

namespace gdc {

struct Histogram {
  double lo = 0, hi = 0;
  std::vector<std::size_t> counts;

  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / double(counts.size()); }
  double bin_center(std::size_t i) const { return lo + (double(i) + 0.5) * bin_width(); }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }

  /// Two columns: bin centre, count.
  void write_csv(std::ostream& os) const {
    os << "bin_center,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i) os << bin_center(i) << ',' << counts[i] << '\n';
  }
};

/// `bins` equal-width bins spanning [min, max]; the maximum lands in the last
/// bin and a constant input puts all of its mass in bin 0.
template <class T>
Histogram histogram(std::span<const T> values, std::size_t bins) {
  if (bins < 1) throw UsageError("histogram: need at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = double(*mn);
  h.hi = double(*mx);
  const double span = h.hi - h.lo;
  for (T v : values) {
    std::size_t i = 0;
    if (span > 0) {
      const double pos = (double(v) - h.lo) / span * double(bins);
      i = std::min(bins - 1, static_cast<std::size_t>(std::floor(pos)));
    }
    ++h.counts[i];
  }
  return h;
}

/// Histogram of one channel of batch item b.
template <class T>
Histogram channel_histogram(const Tensor<T>& t, std::size_t c, std::size_t bins,
                            std::size_t b = 0) {
  const Shape s = t.shape();
  std::vector<T> vals;
  vals.reserve(s.h * s.w);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) vals.push_back(t(b, y, x, c));
  return histogram<T>(vals, bins);
}

}  // namespace gdc
