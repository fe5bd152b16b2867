#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace coag {

enum class Errc {
  invalid_parameter,
  unsupported_dimension,
  invalid_partition,
  division_by_zero,
  sampling,
  solver_failure,
  extrapolation,
  numerical_fault,
  resolution,
  table_coverage,
  stability,
  domain,
  singular_scaling,
  consistency,
  io,
  config,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

/// Surface area of the unit sphere in R^d.
double unit_sphere_area(int d);

/// Newtonian constant c0(d) = 1/((d-2) * area(S^{d-1})), so that
/// c0 |x|^{2-d} is the fundamental solution of -Laplace in R^d.
double newton_constant(int d);

/// Integral of |y|^{-p} over the unit cube [-1/2,1/2]^d, p < d.
/// Scale a cube of side h by h^{d-p}.
double cube_singular_integral(int d, double p);

/// Gauss-Legendre nodes/weights on [-1,1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

/// Sum in index order; used where bitwise reproducibility matters.
double ordered_sum(std::span<const double> v);

/// Minimum-image component of a periodic displacement.
inline double min_image(double dx, double box) {
  if (dx > 0.5 * box) return dx - box;
  if (dx < -0.5 * box) return dx + box;
  return dx;
}

}  // namespace coag
