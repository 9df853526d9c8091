// SPDX-License-Identifier: Apache-2.0
// Named parameter collections and the seeded initializer.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gdcunet/autodiff.hpp"

namespace gdc {

template <class T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

/// Ordered list; the order is the serialization order.
template <class T>
using ParamList = std::vector<NamedParam<T>>;

using Rng = std::mt19937_64;

/// Uniform in [-a, a] with a = sqrt(1 / fan_in), drawn in double so that the
/// float and double builds of a model share their values up to rounding.
template <class T>
Tensor<T> uniform_init(Shape s, std::size_t fan_in, Rng& rng) {
  const double a = std::sqrt(1.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
std::size_t count_elements(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.shape().numel();
  return n;
}

template <class T>
void append(ParamList<T>& dst, const ParamList<T>& src, const std::string& prefix = {}) {
  for (const auto& p : src) dst.push_back({prefix + p.name, p.var});
}

}  // namespace gdc
