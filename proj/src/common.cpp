#include "coag/common.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/legendre.hpp>
#include <cmath>
#include <numbers>

namespace coag {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_parameter: return "invalid-parameter";
    case Errc::unsupported_dimension: return "unsupported-dimension";
    case Errc::invalid_partition: return "invalid-partition";
    case Errc::division_by_zero: return "division-by-zero";
    case Errc::sampling: return "sampling";
    case Errc::solver_failure: return "solver-failure";
    case Errc::extrapolation: return "extrapolation";
    case Errc::numerical_fault: return "numerical-fault";
    case Errc::resolution: return "resolution";
    case Errc::table_coverage: return "table-coverage";
    case Errc::stability: return "stability";
    case Errc::domain: return "domain";
    case Errc::singular_scaling: return "singular-scaling";
    case Errc::consistency: return "consistency";
    case Errc::io: return "io";
    case Errc::config: return "config";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

double unit_sphere_area(int d) {
  require(d >= 1, Errc::invalid_parameter, "dimension must be positive");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / boost::math::tgamma(0.5 * d);
}

double newton_constant(int d) {
  require(d >= 3, Errc::unsupported_dimension, "Newtonian kernel |x|^{2-d} needs d >= 3");
  return 1.0 / ((d - 2) * unit_sphere_area(d));
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  require(n >= 1, Errc::invalid_parameter, "Gauss-Legendre order must be positive");
  auto zeros = boost::math::legendre_p_zeros<double>(n);  // non-negative half
  x.clear();
  w.clear();
  auto weight = [n](double z) {
    double dp = boost::math::legendre_p_prime(n, z);
    return 2.0 / ((1.0 - z * z) * dp * dp);
  };
  for (auto it = zeros.rbegin(); it != zeros.rend(); ++it) {
    if (*it == 0.0) continue;
    x.push_back(-*it);
    w.push_back(weight(*it));
  }
  for (double z : zeros) {
    x.push_back(z);
    w.push_back(weight(z));
  }
}

double cube_singular_integral(int d, double p) {
  require(d >= 1 && p < d, Errc::invalid_parameter, "cube integral of |y|^{-p} needs p < d");
  // By symmetry the cube splits into 2d pyramids over its faces. On the face x_1 = 1/2
  // write y = s (1/2, v/2) with v in [-1,1]^{d-1}; the radial integral is explicit.
  if (d == 1) return 2.0 * std::pow(0.5, 1.0 - p) / (1.0 - p);
  std::vector<double> gx, gw;
  gauss_legendre(48, gx, gw);
  const int m = d - 1;
  const std::size_t q = gx.size();
  std::vector<std::size_t> idx(m, 0);
  double face = 0.0;
  while (true) {
    double r2 = 1.0, wt = 1.0;
    for (int k = 0; k < m; ++k) {
      r2 += gx[idx[k]] * gx[idx[k]];
      wt *= gw[idx[k]];
    }
    face += wt * std::pow(r2, -0.5 * p);
    int k = 0;
    while (k < m && ++idx[k] == q) idx[k++] = 0;
    if (k == m) break;
  }
  // dy = (1/2)^d s^{d-1} ds dv, |y| = s/2 sqrt(1+|v|^2)
  const double radial = std::pow(0.5, d - p) / (d - p);
  return 2.0 * d * radial * face;
}

double ordered_sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace coag
