#include <cmath>

#include "coag/scaling.hpp"
#include "doctest.h"

using namespace coag;
using namespace coag::scaling;

TEST_CASE("critical exponents: worked examples") {
  auto e = critical_exponents({1.0, 0.0, 3});
  CHECK(e.gamma == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e.alpha == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(std::abs(e.tau) <= 1e-14);
  CHECK(e.critical);

  e = critical_exponents({0.0, 0.0, 3});
  CHECK(e.gamma == doctest::Approx(-0.5).epsilon(1e-14));
  CHECK(e.alpha == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(e.tau == doctest::Approx(0.5).epsilon(1e-14));

  e = critical_exponents({0.3, 0.2, 2});
  CHECK(e.gamma == 0.0);
  CHECK(e.alpha == 1.0);
  CHECK(e.tau == 0.5);
}

TEST_CASE("critical exponents: singular denominator") {
  CHECK_THROWS_AS(critical_exponents({2.0 / 3.0, 0.0, 3}), Error);
  CHECK_THROWS_AS(critical_exponents({0.0, 1.0, 3}), Error);
  CHECK_THROWS_AS(critical_exponents({0.5, 0.0, 4}), Error);
  // 0.2 * 1.5 + 0.7 is not exactly 1 in binary.
  CHECK_THROWS_AS(critical_exponents({0.2, 0.7, 3}), Error);
  CHECK_NOTHROW(critical_exponents({0.0, 1.0, 2}));
}

TEST_CASE("critical exponents satisfy all three conditions on a parameter grid") {
  for (int d : {3, 4, 5})
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) {
        const ScalingInput inp{0.05 + 0.15 * i, 0.1 * j, d};
        if (std::abs(inp.eta + inp.phi * d / 2.0 - 1.0) < 1e-9) continue;
        const auto e = critical_exponents(inp);
        const auto c = check_scaling_conditions(e.alpha, e.gamma, e.tau, inp);
        INFO("phi=" << inp.phi << " eta=" << inp.eta << " d=" << d);
        CHECK(c.all());
        CHECK(std::abs(c.free) <= 1e-12);
        CHECK(std::abs(c.interaction) <= 1e-12);
        CHECK(std::abs(c.energy) <= 1e-12);
        CHECK(std::abs(mass_exponent(e.alpha, e.gamma, e.tau, d)) <= 1e-12);
      }
}

TEST_CASE("scaling conditions: residual arithmetic") {
  const ScalingInput two{1.0, 0.0, 2};
  auto c = check_scaling_conditions(1.0, 0.0, 0.5, two);
  CHECK(c.free == 0.0);
  CHECK(c.interaction == 0.0);
  CHECK(c.energy == 0.0);
  CHECK(c.all());

  const ScalingInput inp{1.0, 0.0, 3};
  const auto e = critical_exponents(inp);
  c = check_scaling_conditions(e.alpha, e.gamma, e.tau + 1e-3, inp);
  CHECK(c.free == doctest::Approx(-2e-3).epsilon(1e-9));
  CHECK_FALSE(c.free_ok);
  CHECK(c.interaction_ok);
  CHECK(c.energy == doctest::Approx(-3e-3).epsilon(1e-9));
  CHECK_FALSE(c.all());
}

TEST_CASE("mass exponent") {
  CHECK(mass_exponent(0.0, 0.0, 0.0, 3) == 0.0);
  const auto b = blowup_exponents(1.0, 1.0);
  CHECK(mass_exponent(b.alpha, b.gamma, b.tau, 3) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(mass_exponent(2.0, 0.5, 0.25, 4) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("blow-up exponents and regimes") {
  auto b = blowup_exponents(1.0, 1.0);
  CHECK(b.gamma == 1.0);
  CHECK(b.alpha == 3.0);
  CHECK(b.tau == 0.0);
  CHECK(b.regime == Regime::scaling_permits_heavy_mass);

  b = blowup_exponents(0.5, 0.0);
  CHECK(b.gamma == 2.0);
  CHECK(b.alpha == 3.0);
  CHECK(b.regime == Regime::mass_conserving);

  b = blowup_exponents(2.0, 0.0);
  CHECK(b.gamma == 0.5);
  CHECK(b.alpha == 1.5);
  CHECK(b.regime == Regime::scaling_permits_heavy_mass);

  CHECK_THROWS_AS(blowup_exponents(0.0, 1.0), Error);
  CHECK(regime_name(Regime::mass_conserving) == "mass-conserving");
  CHECK(regime_name(Regime::scaling_permits_heavy_mass) == "scaling-permits-heavy-mass");

  // Classification agrees with phi + eta >= 1 and with the sign of alpha - 2 gamma.
  for (int i = 1; i <= 20; ++i)
    for (int j = 0; j < 20; ++j) {
      const double phi = 0.1 * i, eta = 0.1 * j;
      if (std::abs(phi + eta - 1.0) < 1e-9) continue;
      b = blowup_exponents(phi, eta);
      const bool heavy = phi + eta >= 1.0;
      CHECK((b.regime == Regime::scaling_permits_heavy_mass) == heavy);
      CHECK((b.alpha - 2.0 * b.gamma >= 0.0) == heavy);
    }
}

TEST_CASE("rescaled coefficients") {
  const ScalingInput inp{1.0, 0.0, 3};
  const auto e = critical_exponents(inp);
  const auto [cd, cb] = rescaled_coefficients(3.0, e, inp);
  CHECK(cd == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cb == doctest::Approx(1.0).epsilon(1e-14));
  const auto [cd2, cb2] = rescaled_coefficients(2.0, Exponents{0.0, 1.0, 0.0}, inp);
  CHECK(cd2 == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(cb2 == doctest::Approx(1.0).epsilon(1e-14));
}

namespace {

std::vector<pde::DensityField> exact_trajectory(const pde::MassGrid& g, double T, int steps) {
  std::vector<pde::DensityField> out;
  const pde::SpatialMesh mesh(3, 1, 1.0);
  for (int s = 0; s <= steps; ++s) {
    pde::DensityField f(g, mesh);
    f.time = T * s / steps;
    for (int j = 0; j < g.size(); ++j) f.at(j, 0) = pde::exact_constant_kernel(g.pivot(j), f.time, 1.0);
    out.push_back(std::move(f));
  }
  return out;
}

pde::WeakTestFunction mass_window() {
  auto zero = [](Point, double, double) { return 0.0; };
  return {[](Point, double n, double) { return n * std::exp(-n); }, zero, zero, 0.0, 100.0};
}

}  // namespace

TEST_CASE("rescale_field on the exact constant-kernel solution") {
  const pde::MassGrid g(1e-3, 100.0, 600);
  pde::CoagulationTable table(g, [](double, double) { return 1.0; });
  const auto d0 = DiffusionCoefficient::constant(0.0);
  const auto traj = exact_trajectory(g, 2.0, 32);
  const auto J = mass_window();
  const double own = std::abs(pde::weak_residual(traj, J, traj.front(), table, d0).residual());

  SUBCASE("lambda = 1 is the identity") {
    const auto r = rescale_field(traj, 1.0, Exponents{1.0, 2.0, 0.0}, J, table, d0);
    REQUIRE(r.trajectory.size() == traj.size());
    for (std::size_t k = 0; k < traj.size(); ++k) {
      CHECK(r.trajectory[k].time == traj[k].time);
      for (std::size_t i = 0; i < traj[k].f.size(); ++i)
        CHECK(r.trajectory[k].f[i] == doctest::Approx(traj[k].f[i]).epsilon(1e-12));
    }
    CHECK(std::abs(r.residual.residual()) == doctest::Approx(own).epsilon(1e-9));
  }

  SUBCASE("matched exponents stay a solution; wrong ones do not") {
    const double lambda = 2.0;
    const auto good = rescale_field(traj, lambda, Exponents{1.0, 2.0, 0.0}, J, table, d0);
    const auto bad = rescale_field(traj, lambda, Exponents{1.2, 2.0, 0.0}, J, table, d0);
    const double rg = std::abs(good.residual.residual());
    const double rb = std::abs(bad.residual.residual());
    CHECK(rg <= 3.0 * own);
    CHECK(rb >= 10.0 * rg);
  }
}

TEST_CASE("rescale_field rejects support escape") {
  const pde::MassGrid g(1e-3, 10.0, 200);
  pde::CoagulationTable table(g, [](double, double) { return 1.0; });
  const pde::SpatialMesh mesh(3, 1, 1.0);
  pde::DensityField f(g, mesh);
  for (int j = 0; j < g.size(); ++j) f.at(j, 0) = 1.0;
  std::vector<pde::DensityField> traj{f};
  CHECK_THROWS_AS(rescale_field(traj, 4.0, Exponents{1.0, 2.0, 0.0}, mass_window(), table,
                                DiffusionCoefficient::constant(0.0)),
                  Error);
}
