#include <algorithm>
#include <cmath>
#include <numbers>

#include "coag/pde.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coag;
using namespace coag::pde;

namespace {

const double kPi = std::numbers::pi;

DensityField homogeneous_exp(const MassGrid& g) {
  InitialDensity h(1.0, SpatialProfile::uniform(3, 1.0), MassProfile::exponential(1.0));
  return project_initial(h, g, SpatialMesh(3, 1, 1.0));
}

double mass_weighted_l1(const DensityField& f, double B) {
  double e = 0.0;
  for (int j = 0; j < f.masses.size(); ++j) {
    const double n = f.masses.pivot(j);
    e += n * std::abs(f.at(j, 0) - exact_constant_kernel(n, f.time, B)) * f.masses.width(j);
  }
  return e;
}

// Uniform-grid Smoluchowski system in the same convention (gain without 1/2, loss with 2),
// trapezoid sums including n = 0, classical RK4.
std::vector<double> reference_ode(int K, double dn, double T, double B, int steps) {
  std::vector<double> f(K + 1);
  for (int k = 0; k <= K; ++k) f[k] = std::exp(-k * dn);
  auto rhs = [&](const std::vector<double>& y) {
    std::vector<double> r(K + 1);
    double total = 0.5 * (y[0] + y[K]);
    for (int k = 1; k < K; ++k) total += y[k];
    total *= dn;
    for (int k = 0; k <= K; ++k) {
      double gain = 0.0;
      if (k > 0) {
        gain = 0.5 * (y[0] * y[k] + y[k] * y[0]);
        for (int j = 1; j < k; ++j) gain += y[j] * y[k - j];
        gain *= dn;
      }
      r[k] = B * gain - 2.0 * B * y[k] * total;
    }
    return r;
  };
  const double dt = T / steps;
  for (int s = 0; s < steps; ++s) {
    auto k1 = rhs(f);
    std::vector<double> y(K + 1);
    for (int k = 0; k <= K; ++k) y[k] = f[k] + 0.5 * dt * k1[k];
    auto k2 = rhs(y);
    for (int k = 0; k <= K; ++k) y[k] = f[k] + 0.5 * dt * k2[k];
    auto k3 = rhs(y);
    for (int k = 0; k <= K; ++k) y[k] = f[k] + dt * k3[k];
    auto k4 = rhs(y);
    for (int k = 0; k <= K; ++k) f[k] += dt / 6.0 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
  }
  return f;
}

}  // namespace

TEST_CASE("exact constant-kernel solution") {
  for (double n : {0.0, 0.5, 3.0}) CHECK(exact_constant_kernel(n, 0.0, 1.0) == std::exp(-n));
  CHECK(exact_constant_kernel(0.0, 1.0, 1.0) == doctest::Approx(0.25).epsilon(1e-15));

  // Mass stays one: integral of n s^-2 exp(-n/s) over n is 1 for every s.
  for (double t : {0.5, 1.0, 4.0}) {
    std::vector<double> x, w;
    gauss_legendre(200, x, w);
    double m = 0.0;
    const double top = 60.0 * (1.0 + t);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double n = 0.5 * top * (x[i] + 1.0);
      m += 0.5 * top * w[i] * n * exact_constant_kernel(n, t, 1.0);
    }
    CHECK(m == doctest::Approx(1.0).epsilon(1e-10));
  }

  // 2000-bin reference integration of the discrete system.
  const int K = 2000;
  const double dn = 0.01;
  const auto ref = reference_ode(K, dn, 1.0, 1.0, 200);
  double err = 0.0, norm = 0.0;
  for (int k = 0; k <= K; ++k) {
    const double n = k * dn;
    err += n * std::abs(ref[k] - exact_constant_kernel(n, 1.0, 1.0)) * dn;
    norm += n * ref[k] * dn;
  }
  CHECK(err / norm <= 1e-3);
}

TEST_CASE("mass grid layout") {
  MassGrid g(1e-2, 50.0, 400);
  CHECK(g.size() == 400);
  CHECK(g.n_min() == 1e-2);
  CHECK(g.n_max() == 50.0);
  CHECK(g.ratio() == doctest::Approx(1.0217).epsilon(1e-4));
  for (int j = 1; j < g.size(); ++j) CHECK(g.pivot(j) > g.pivot(j - 1));
}

TEST_CASE("diffusion step") {
  const MassGrid g(0.1, 10.0, 5);
  const SpatialMesh mesh(3, 16, 1.0);
  const auto d = DiffusionCoefficient::power(1.0, 0.01);
  DensityField f(g, mesh);
  std::vector<double> x(3);
  const int k[3] = {1, 2, 0};
  for (std::size_t c = 0; c < mesh.size(); ++c) {
    mesh.center(c, x.data());
    const double phase = 2.0 * kPi * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]);
    for (int j = 0; j < g.size(); ++j) f.at(j, c) = 1.0 + 0.5 * std::cos(phase);
  }
  const double dt = 1e-3;
  const auto out = diffusion_step(f, dt, d);
  const double k2 = 4.0 * kPi * kPi * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
  for (int j = 0; j < g.size(); ++j) {
    const double decay = std::exp(-d(g.pivot(j)) * k2 * dt);
    double before = 0.0, after = 0.0;
    for (std::size_t c = 0; c < mesh.size(); ++c) {
      CHECK(out.at(j, c) - 1.0 == doctest::Approx((f.at(j, c) - 1.0) * decay).epsilon(1e-12).scale(1.0));
      before += f.at(j, c);
      after += out.at(j, c);
    }
    CHECK(after == doctest::Approx(before).epsilon(1e-14));
  }

  DensityField flat(g, mesh);
  std::fill(flat.f.begin(), flat.f.end(), 2.5);
  const auto same = diffusion_step(flat, 0.1, d);
  for (double v : same.f) CHECK(v == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("coagulation_rhs") {
  const MassGrid g(0.1, 20.0, 60);
  const SpatialMesh mesh(3, 1, 1.0);
  CoagulationTable table(g, [](double, double) { return 1.0; });

  SUBCASE("zero field") {
    DensityField f(g, mesh);
    const auto r = coagulation_rhs(f, table);
    for (double v : r.rate.f) CHECK(v == 0.0);
  }
  SUBCASE("single bin") {
    DensityField f(g, mesh);
    const int j0 = 20;
    f.at(j0, 0) = 3.0;
    const auto r = coagulation_rhs(f, table);
    const double target = 2.0 * g.pivot(j0);
    double mass = 0.0;
    for (int j = 0; j < g.size(); ++j) {
      const double q = r.rate.at(j, 0);
      if (j != j0 && q != 0.0) {
        CHECK(q > 0.0);
        const bool brackets = (j + 1 < g.size() && g.pivot(j) <= target && target <= g.pivot(j + 1)) ||
                              (j > 0 && g.pivot(j - 1) <= target && target <= g.pivot(j));
        CHECK(brackets);
      }
      mass += g.pivot(j) * q * g.width(j);
    }
    CHECK(std::abs(mass + r.mass_flux) <= 1e-14 * g.pivot(j0) * 9.0 * g.width(j0) * g.width(j0));
  }
  SUBCASE("number density obeys M0' = -B M0^2") {
    const double B = 1.7;
    CoagulationTable tb(g, [B](double, double) { return B; });
    DensityField f(g, mesh);
    double M0 = 0.0;
    for (int j = 0; j < g.size(); ++j) {
      if (g.pivot(j) > 5.0) break;
      f.at(j, 0) = std::exp(-g.pivot(j));
      M0 += f.at(j, 0) * g.width(j);
    }
    const auto r = coagulation_rhs(f, tb);
    double dM0 = 0.0;
    for (int j = 0; j < g.size(); ++j) dM0 += r.rate.at(j, 0) * g.width(j);
    CHECK(r.number_flux == 0.0);
    CHECK(dM0 == doctest::Approx(-B * M0 * M0).epsilon(1e-12));
  }
}

TEST_CASE("step without coagulation is pure diffusion") {
  const MassGrid g(0.1, 10.0, 8);
  const SpatialMesh mesh(3, 8, 1.0);
  InitialDensity h(1.0, SpatialProfile::gaussian(3, 1.0, {0.5, 0.5, 0.5}, 0.15), MassProfile::exponential(1.0));
  const auto f = project_initial(h, g, mesh);
  const auto d = DiffusionCoefficient::constant(1.0);
  CoagulationTable zero(g, [](double, double) { return 0.0; });
  const auto s = step(f, 1e-3, zero, d);
  const auto ref = diffusion_step(diffusion_step(f, 5e-4, d), 5e-4, d);
  // Equal up to FFT and width round-off, measured against the field maximum.
  const double top = *std::max_element(ref.f.begin(), ref.f.end());
  double diff = 0.0;
  for (std::size_t i = 0; i < s.f.size(); ++i) diff = std::max(diff, std::abs(s.f[i] - ref.f[i]));
  CHECK(diff <= 1e-13 * top);
}

TEST_CASE("homogeneous constant kernel against the exact solution") {
  const MassGrid g(1e-2, 50.0, 400);
  CoagulationTable table(g, [](double, double) { return 1.0; });
  Integrator integ(table, DiffusionCoefficient::constant(0.0));
  const auto f0 = homogeneous_exp(g);
  std::vector<double> keep;
  for (int k = 0; k <= 10; ++k) keep.push_back(0.5 * k);
  const auto traj = integrate(f0, 5.0, 1e-3, integ, keep);
  const double mass0 = f0.total_mass();
  for (const auto& f : traj) {
    INFO("t = " << f.time);
    CHECK(mass_weighted_l1(f, 1.0) <= 2e-2);
    CHECK(std::abs(f.total_number() - 1.0 / (1.0 + f.time)) <= 1e-3);
    CHECK(std::abs(f.total_mass() + f.flux_mass - mass0) <= 1e-8 * mass0 * std::max(f.time, 1e-300));
    for (double v : f.f) CHECK(v >= 0.0);
  }
  CHECK(traj[2].time == doctest::Approx(1.0));
  CHECK(mass_weighted_l1(traj[2], 1.0) <= 2e-2);

  SUBCASE("weak residual with J = n reduces to the mass drift") {
    WeakTestFunction J{[](Point, double n, double) { return n; }, [](Point, double, double) { return 0.0; },
                       [](Point, double, double) { return 0.0; }, 0.0, g.n_max()};
    const auto wr = weak_residual(traj, J, traj.front(), table, DiffusionCoefficient::constant(0.0));
    CHECK(std::abs(wr.coagulation) <= 1e-15);
    const double drift = traj.back().total_mass() - traj.front().total_mass();
    CHECK(std::abs(wr.residual() - drift) <= 1e-10);

    WeakTestFunction zero{[](Point, double, double) { return 0.0; }, [](Point, double, double) { return 0.0; },
                          [](Point, double, double) { return 0.0; }, 0.0, g.n_max()};
    CHECK(weak_residual(traj, zero, traj.front(), table, DiffusionCoefficient::constant(0.0)).residual() == 0.0);
  }

  SUBCASE("entropy stays finite and grows at most linearly") {
    auto tau = [](double n) { return 1.0 / ((n + 1.0) * (n + 1.0)); };
    std::vector<double> e;
    for (const auto& f : traj) {
      e.push_back(entropy(f, tau));
      CHECK(std::isfinite(e.back()));
      CHECK(e.back() >= 0.0);
    }
    const std::size_t mid = e.size() / 2;
    CHECK(e.back() - e[mid] <= e[mid] - e.front());
  }
}

TEST_CASE("entropy vanishes at the reference density") {
  const MassGrid g(0.05, 20.0, 40);
  const SpatialMesh mesh(3, 8, 1.0);
  auto tau = [](double n) { return 1.0 / ((n + 1.0) * (n + 1.0)); };
  // Reference r = gaussian (unit variance, box-centred, renormalized over the box) times tau.
  const double norm = std::pow(std::erf(0.5 / std::sqrt(2.0)), 3);
  DensityField f(g, mesh);
  std::vector<double> x(3);
  for (std::size_t c = 0; c < mesh.size(); ++c) {
    mesh.center(c, x.data());
    double r2 = 0.0;
    for (double v : x) r2 += (v - 0.5) * (v - 0.5);
    const double gx = std::exp(-0.5 * r2) / (std::pow(2.0 * kPi, 1.5) * norm);
    for (int j = 0; j < g.size(); ++j) f.at(j, c) = gx * tau(g.pivot(j));
  }
  CHECK(std::abs(entropy(f, tau)) <= 1e-12);
  for (double& v : f.f) v *= 1.3;
  CHECK(entropy(f, tau) > 0.0);
}

TEST_CASE("splitting converges at second order in time") {
  const MassGrid g(0.2, 20.0, 30);
  const SpatialMesh mesh(3, 8, 1.0);
  InitialDensity h(2.0, SpatialProfile::gaussian(3, 1.0, {0.5, 0.5, 0.5}, 0.15), MassProfile::exponential(1.0));
  const auto f0 = project_initial(h, g, mesh);
  const auto d = DiffusionCoefficient::power(0.5, 0.2);
  CoagulationTable table(g, [](double n, double m) { return 0.5 * (n + m) / (1.0 + n + m); });
  Integrator integ(table, d);
  const double T = 0.2;
  auto run = [&](double dt) { return integrate(f0, T, dt, integ, {T}).back(); };
  const auto ref = run(T / 1280);
  auto err = [&](const DensityField& f) {
    double e = 0.0;
    for (std::size_t i = 0; i < f.f.size(); ++i) e = std::max(e, std::abs(f.f[i] - ref.f[i]));
    return e;
  };
  const double e1 = err(run(T / 40)), e2 = err(run(T / 80));
  CHECK(e1 / e2 >= 3.5);
}

TEST_CASE("oversized steps are rejected") {
  const MassGrid g(1e-2, 50.0, 100);
  CoagulationTable table(g, [](double, double) { return 1.0; });
  Integrator integ(table, DiffusionCoefficient::constant(0.0));
  auto f = homogeneous_exp(g);
  CHECK_THROWS_AS(integ.step(f, 1.0), Error);
}

TEST_CASE("weak residual converges for the exact field") {
  const MassGrid g(1e-3, 100.0, 600);
  const SpatialMesh mesh(3, 1, 1.0);
  CoagulationTable table(g, [](double, double) { return 1.0; });
  const auto d0 = DiffusionCoefficient::constant(0.0);
  WeakTestFunction J{[](Point, double n, double) { return n * std::exp(-n); },
                     [](Point, double, double) { return 0.0; }, [](Point, double, double) { return 0.0; },
                     0.0, g.n_max()};
  auto exact_traj = [&](int steps) {
    std::vector<DensityField> out;
    for (int s = 0; s <= steps; ++s) {
      DensityField f(g, mesh);
      f.time = 2.0 * s / steps;
      for (int j = 0; j < g.size(); ++j) f.at(j, 0) = exact_constant_kernel(g.pivot(j), f.time, 1.0);
      out.push_back(std::move(f));
    }
    return out;
  };
  std::vector<double> r;
  for (int steps : {8, 16, 32}) {
    const auto traj = exact_traj(steps);
    r.push_back(std::abs(weak_residual(traj, J, traj.front(), table, d0).residual()));
  }
  CHECK(r[0] / r[1] >= 3.0);
  CHECK(r[1] / r[2] >= 3.0);
}
