#pragma once

// Small seeded generators for property tests.

#include <cstdint>
#include <random>
#include <vector>

#include "sta4clc/autodiff.hpp"

namespace gen {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(eng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  std::vector<double> normals(std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(sd);
    return v;
  }

  sta4clc::ad::Array array(sta4clc::ad::Shape shape, double sd = 1.0) {
    sta4clc::ad::Array a(std::move(shape));
    for (auto& x : a.values()) x = normal(sd);
    return a;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace gen
