#pragma once

// Private helpers for Riesz-type convolutions on a uniform cell grid.

#include <cmath>
#include <cstddef>
#include <vector>

#include "coag/common.hpp"

namespace coag::detail {

// Cell-integrated |x - y|^{-p} on a uniform grid, indexed by integer offset.
struct OffsetKernel {
  int M, dim;
  std::vector<double> table;
  OffsetKernel(int M_, int dim_, double h, double p) : M(M_), dim(dim_) {
    const int span = 2 * M - 1;
    std::size_t size = 1;
    for (int k = 0; k < dim; ++k) size *= span;
    table.resize(size);
    const double self = cube_singular_integral(dim, p) * std::pow(h, dim - p);
    const double cell = std::pow(h, dim);
    std::vector<int> o(dim, -(M - 1));
    for (std::size_t idx = 0; idx < size; ++idx) {
      double r2 = 0.0;
      for (int k = 0; k < dim; ++k) r2 += double(o[k]) * o[k];
      table[idx] = r2 == 0.0 ? self : std::pow(r2 * h * h, -0.5 * p) * cell;
      for (int k = 0; k < dim; ++k) {
        if (++o[k] <= M - 1) break;
        o[k] = -(M - 1);
      }
    }
  }
};

inline std::vector<int> cell_coords(int M, int dim) {
  std::size_t n = 1;
  for (int k = 0; k < dim; ++k) n *= M;
  std::vector<int> c(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = i;
    for (int k = 0; k < dim; ++k) {
      c[i * dim + k] = static_cast<int>(r % M);
      r /= M;
    }
  }
  return c;
}

inline std::vector<double> convolve_offsets(const OffsetKernel& K, const std::vector<int>& coords,
                                     const std::vector<double>& values) {
  const int dim = K.dim, M = K.M, span = 2 * M - 1;
  const std::size_t n = values.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (values[j] == 0.0) continue;
      std::size_t off = 0, stride = 1;
      for (int k = 0; k < dim; ++k) {
        off += static_cast<std::size_t>(coords[i * dim + k] - coords[j * dim + k] + M - 1) * stride;
        stride *= span;
      }
      s += K.table[off] * values[j];
    }
    out[i] = s;
  }
  return out;
}

}  // namespace coag::detail
