#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "apfl/core/params.hpp"

namespace apfl::testing {

inline Tensor random_tensor(std::mt19937_64& rng, DType dtype, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(dtype, std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.set(i, n(rng));
  return t;
}

inline Shape random_shape(std::mt19937_64& rng, int max_rank = 3, std::uint32_t max_dim = 6) {
  std::uniform_int_distribution<int> rank(0, max_rank);
  std::uniform_int_distribution<std::uint32_t> dim(1, max_dim);
  Shape s(static_cast<std::size_t>(rank(rng)));
  for (auto& d : s) d = dim(rng);
  return s;
}

inline ParameterSet random_params(std::mt19937_64& rng, DType dtype, int entries = 3) {
  ParameterSet p;
  for (int e = 0; e < entries; ++e) p.add("layer." + std::to_string(e), random_tensor(rng, dtype, random_shape(rng)));
  return p;
}

// Same names/shapes as `like`, fresh random values.
inline ParameterSet random_like(std::mt19937_64& rng, const ParameterSet& like, double scale = 1.0) {
  ParameterSet p;
  for (const auto& e : like) p.add(e.name, random_tensor(rng, e.tensor.dtype(), e.tensor.shape(), scale));
  return p;
}

inline double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
  double m = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e)
    for (std::size_t i = 0; i < a[e].tensor.size(); ++i)
      m = std::max(m, std::abs(a[e].tensor.get(i) - b[e].tensor.get(i)));
  return m;
}

inline ParameterSet scalar_set(const std::string& name, std::vector<double> values, DType dtype = DType::f64) {
  ParameterSet p;
  p.add(name, Tensor::from_values(dtype, {static_cast<std::uint32_t>(values.size())}, values));
  return p;
}

}  // namespace apfl::testing
