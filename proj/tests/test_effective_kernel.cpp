#include <algorithm>
#include <cmath>

#include "coag/kernel.hpp"
#include "doctest.h"

using namespace coag;
using namespace coag::kernel;

namespace {

const InteractionProfile& bump() {
  static const InteractionProfile V = InteractionProfile::bump(3, 1.0);
  return V;
}

const SupportGrid& grid24() {
  static const SupportGrid g(bump(), 24);
  return g;
}

double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Dense application of F from individual matrix entries, independent of the FFT path.
std::vector<double> dense_F(const SupportGrid& g, const std::vector<double>& x) {
  std::vector<double> y(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j)
      y[i] += g.entry(i, j) * g.V_values()[j] * x[j] * g.cell_volume();
  return y;
}

}  // namespace

TEST_CASE("solve_w at a = 0 is exactly zero") {
  const auto w = solve_w(0.0, grid24());
  for (double v : w.w) CHECK(v == 0.0);
  CHECK(w.I() == 1.0);
}

TEST_CASE("Gamma is positive and matches the point-mass far field") {
  const auto G = gamma_at_nodes(grid24());
  for (double v : G) CHECK(v > 0.0);
  const double c0 = newton_constant(3);
  for (const auto& dir : {std::vector<double>{10, 0, 0}, std::vector<double>{0, 6, 8},
                          std::vector<double>{5.7735, 5.7735, 5.7735}}) {
    const double r = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    CHECK(gamma_potential(grid24(), dir) == doctest::Approx(c0 / r).epsilon(0.01));
  }
}

TEST_CASE("Gamma is continuous across the support boundary") {
  auto at = [](double r) {
    std::vector<double> x{r, 0.0, 0.0};
    return gamma_potential(grid24(), x);
  };
  const double slope = std::max(std::abs(at(0.9) - at(1.0)), std::abs(at(1.0) - at(1.1))) / 0.1;
  CHECK(std::abs(at(0.999) - at(1.001)) <= 2.0 * 0.002 * slope);
}

TEST_CASE("apply_F agrees with the dense operator") {
  const SupportGrid g(bump(), 8);
  std::vector<double> x(g.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.37 * i) + 0.5;
  std::vector<double> y(g.size());
  g.apply_F(x, y);
  const auto ref = dense_F(g, x);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("small a follows the Neumann series") {
  const SupportGrid g(bump(), 12);
  const double a = 0.1;
  const auto G = gamma_at_nodes(g);
  const auto FG = dense_F(g, G);
  const auto FFG = dense_F(g, FG);
  const auto w = solve_w(a, g);
  std::vector<double> two(G.size()), three(G.size()), first(G.size());
  for (std::size_t i = 0; i < G.size(); ++i) {
    first[i] = w.w[i] + a * G[i];
    two[i] = w.w[i] - (-a * G[i] + a * a * FG[i]);
    three[i] = w.w[i] - (-a * G[i] + a * a * FG[i] - a * a * a * FFG[i]);
  }
  // Each further term shrinks the remainder by about a ||F||.
  const double normF = sup_abs(FG) / sup_abs(G);
  CHECK(sup_abs(two) <= 1e-3);
  CHECK(sup_abs(three) <= 2.0 * a * normF * sup_abs(two));
  CHECK(sup_abs(first) <= 1.01 * a * normF * a * sup_abs(G));
}

TEST_CASE("w bounds, monotonicity in a, derivative bounds") {
  const auto& g = grid24();
  std::vector<double> prev(g.size(), 0.0);
  for (double a : {0.1, 1.0, 10.0, 100.0}) {
    const auto w = solve_w(a, g);
    CHECK(w.residual <= 1e-10);
    const auto v = dw_da(a, g, w);
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(w.w[i] >= -1.0);
      CHECK(w.w[i] <= 0.0);
      CHECK(w.w[i] <= prev[i] + 1e-12);
      CHECK(v[i] <= 1e-12);
      CHECK(v[i] >= w.w[i] / a - 1e-12);
    }
    prev = w.w;
  }
}

TEST_CASE("dw_da agrees with finite differences at first order") {
  const auto& g = grid24();
  const double a = 1.0;
  const auto w = solve_w(a, g);
  const auto v = dw_da(a, g, w);
  std::vector<double> err;
  for (double h : {1e-2, 1e-3}) {
    const auto wh = solve_w(a * (1.0 + h), g);
    double e = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i)
      e = std::max(e, std::abs((wh.w[i] - w.w[i]) / (a * h) - v[i]));
    err.push_back(e);
  }
  CHECK(err[0] <= 1.0 * 1e-2);
  CHECK(err[0] / err[1] >= 5.0);
}

TEST_CASE("dw_da tends to -Gamma as a -> 0") {
  const auto& g = grid24();
  const double a = 1e-6;
  const auto v = dw_da(a, g, solve_w(a, g));
  const auto G = gamma_at_nodes(g);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(v[i] == doctest::Approx(-G[i]).epsilon(1e-4));
}

TEST_CASE("grid refinement keeps I(a) within the declared tolerance") {
  const SupportGrid fine(bump(), 48);
  for (double a : {1.0, 10.0}) {
    const double coarse = solve_w(a, grid24()).I();
    const double ref = solve_w(a, fine).I();
    CHECK(std::abs(coarse - ref) <= 4e-3);
  }
}

TEST_CASE("u_epsilon scaling and far-field decay") {
  const auto& g = grid24();
  const auto w = solve_w(1.0, g);
  std::vector<double> origin{0.0, 0.0, 0.0};
  CHECK(u_epsilon(w, origin, 1.0) == doctest::Approx(w.at(origin)).epsilon(1e-14));

  const double eps = 0.1;
  auto u = [&](double r) {
    std::vector<double> x{r * 0.6, r * 0.8, 0.0};
    return std::abs(u_epsilon(w, x, eps));
  };
  const double slope = std::log(u(10.0) / u(1.0)) / std::log(10.0);
  CHECK(slope == doctest::Approx(-1.0).epsilon(0.05));

  // Decay bound with C3 fitted at a = 0.1 holds for larger a.
  std::vector<std::vector<double>> pts;
  for (double r : {0.0, 0.3, 0.7, 1.0, 1.5, 3.0, 10.0}) pts.push_back({r, 0.0, 0.0});
  auto bound_ratio = [&](const PotentialSolution& s) {
    double c = 0.0;
    for (const auto& x : pts) {
      const double r = x[0];
      c = std::max(c, std::abs(s.at(x)) / (s.a * std::min(r > 0 ? 1.0 / r : 1.0, 1.0)));
    }
    return c;
  };
  const double C3 = bound_ratio(solve_w(0.1, g));
  for (double a : {1.0, 10.0}) CHECK(bound_ratio(solve_w(a, g)) <= 1.05 * C3);
}

TEST_CASE("kernel table properties") {
  const auto& g = grid24();
  const auto one = CoagulationPropensity::constant(1.0);
  const auto d1 = DiffusionCoefficient::constant(1.0);
  const auto table = build_kernel_table(one, d1, g, {1e-2, 1e2, 16});
  const auto& a = table.a_grid();
  const auto& I = table.I_values();
  CHECK(table.I(0.0) == 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(I[i] > 0.0);
    CHECK(I[i] <= 1.0);
    if (i > 0) {
      CHECK(I[i] < I[i - 1]);
      CHECK(a[i] * I[i] >= a[i - 1] * I[i - 1] - 1e-10);
    }
  }
  // Interpolated values keep the monotonicity.
  double prev = 1.0;
  for (int k = 0; k <= 400; ++k) {
    const double x = 1e-2 * std::pow(1e4, k / 400.0);
    const double v = table.I(x);
    CHECK(v <= prev + 1e-14);
    prev = v;
  }
  CHECK_THROWS_AS(table.I(1e3), Error);

  SUBCASE("beta on a mass grid") {
    const auto power = DiffusionCoefficient::power(0.5, 0.05);
    const auto sum = CoagulationPropensity::sum_eta(0.5);
    const auto t2 = build_kernel_table(sum, power, g, {1e-2, 1e2, 16});
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        const double n = 0.05 * std::pow(1.3, i), m = 0.05 * std::pow(1.3, j);
        const double b = t2.beta(n, m);
        CHECK(b == t2.beta(m, n));
        CHECK(b > 0.0);
        CHECK(b <= sum(n, m) * (1.0 + 1e-12));
      }
  }
  SUBCASE("zero propensity gives zero beta") {
    const auto zero = CoagulationPropensity::constant(0.0);
    const auto t0 = build_kernel_table(zero, d1, g, {1e-2, 1e2, 4});
    for (double n : {0.1, 1.0, 10.0}) CHECK(t0.beta(n, 2.0) == 0.0);
  }
}
