#pragma once

#include <cstdint>
#include <random>

#include "luna/tensor.hpp"

inline luna::Mat random_mat(luna::Index rows, luna::Index cols, uint64_t seed,
                            double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  luna::Mat m(rows, cols);
  for (luna::Index r = 0; r < rows; ++r)
    for (luna::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

inline luna::Mat row2(double a, double b) {
  luna::Mat m(1, 2);
  m << a, b;
  return m;
}

inline luna::Mat row3(double a, double b, double c) {
  luna::Mat m(1, 3);
  m << a, b, c;
  return m;
}
