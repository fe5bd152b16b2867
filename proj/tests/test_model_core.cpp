#include <algorithm>
#include <cmath>

#include "coag/model.hpp"
#include "coag/random.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace coag;
using coag::testing::make_model;

TEST_CASE("k_epsilon scale factors") {
  CHECK(k_epsilon(0.1, 3) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(k_epsilon(0.1, 2) == doctest::Approx(2.302585092994046).epsilon(1e-14));
  CHECK(k_epsilon(0.1, 4) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK_THROWS_AS(k_epsilon(0.1, 1), Error);
  CHECK_THROWS_AS(k_epsilon(0.0, 3), Error);
}

TEST_CASE("epsilon_for_count inverts k_epsilon") {
  CHECK(epsilon_for_count(1000, 1.0, 3) == doctest::Approx(1e-3).epsilon(1e-14));
  CHECK(epsilon_for_count(100, 1.0, 4) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK_THROWS_AS(epsilon_for_count(100, 1.0, 2), Error);
  for (int d = 3; d <= 6; ++d)
    for (double N : {10.0, 137.0, 1e3, 12345.0, 1e6})
      for (double Z : {0.5, 1.0, 2.4}) {
        const double eps = epsilon_for_count(N, Z, d);
        CHECK(std::abs(k_epsilon(eps, d) * Z - N) <= 1e-12 * N);
      }
}

TEST_CASE("construct_phi: monotone d") {
  const std::vector<double> part{0.5, 4.0};
  SUBCASE("non-increasing d gives phi = 1") {
    auto d = DiffusionCoefficient::power(1.0, 0.1);
    auto phi = construct_phi(d, part, 1.0);
    for (double m = 0.5; m <= 4.0; m += 0.25) CHECK(phi(m) == 1.0);
  }
  SUBCASE("non-decreasing d gives phi = A/d") {
    DiffusionCoefficient d{[](double m) { return m; }, 4.0, false};
    auto phi = construct_phi(d, part, 2.0);
    for (double m = 0.5; m <= 4.0; m += 0.25) CHECK(phi(m) == doctest::Approx(2.0 / m).epsilon(1e-14));
  }
}

TEST_CASE("construct_phi: one hump") {
  DiffusionCoefficient d{[](double m) { return m <= 2.0 ? m : 4.0 / m; }, 2.0, false};
  const std::vector<double> part{1.0, 2.0, 4.0};
  auto phi = construct_phi(d, part, 1.0);
  for (double m : {1.0, 1.3, 1.7, 2.0}) CHECK(phi(m) == doctest::Approx(1.0 / m).epsilon(1e-14));
  for (double m : {2.0, 2.5, 3.3, 4.0}) CHECK(phi(m) == doctest::Approx(0.5).epsilon(1e-14));
  double prev_phi = INFINITY, prev_pd = INFINITY;
  for (int i = 0; i < 100; ++i) {
    const double m = 1.0 + 3.0 * i / 99.0;
    const double p = phi(m), pd = p * d(m);
    CHECK(p <= prev_phi * (1.0 + 1e-14));
    CHECK(pd <= prev_pd * (1.0 + 1e-14));
    prev_phi = p;
    prev_pd = pd;
  }
}

TEST_CASE("construct_phi rejects bad partitions") {
  DiffusionCoefficient hump{[](double m) { return m <= 2.0 ? m : 4.0 / m; }, 2.0, false};
  const std::vector<double> coarse{1.0, 4.0};
  CHECK_THROWS_AS(construct_phi(hump, coarse, 1.0), Error);
  const std::vector<double> unsorted{2.0, 1.0};
  CHECK_THROWS_AS(construct_phi(hump, unsorted, 1.0), Error);
}

TEST_CASE("check_hypotheses") {
  auto model = make_model(0.1);
  SUBCASE("benign model passes") {
    auto h = coag::testing::gaussian_exp(1.0);
    auto rep = check_hypotheses(model, h, 50.0);
    for (const auto& it : rep.items) {
      INFO(it.name << " = " << it.estimate);
      CHECK(it.pass);
    }
  }
  SUBCASE("constant alpha with mass near zero fails the ratio bound") {
    InitialDensity h(1.0, SpatialProfile::uniform(3, 1.0), MassProfile::exponential(1e-4));
    auto rep = check_hypotheses(model, h, 50.0);
    CHECK_FALSE(rep.item("alpha_ratio_sup").pass);
    CHECK_FALSE(rep.all_pass());
  }
  SUBCASE("zero mass density is flagged") {
    InitialDensity h(0.0, SpatialProfile::uniform(3, 1.0), MassProfile::exponential(1.0));
    auto rep = check_hypotheses(model, h, 50.0);
    CHECK_FALSE(rep.item("Z_positive").pass);
  }
}

TEST_CASE("rho_of_n") {
  auto tau = [](double n) { return 1.0 / ((n + 1.0) * (n + 1.0)); };
  auto one = CoagulationPropensity::constant(1.0);
  CHECK(rho_of_n(one, tau, 0.0) == 0.0);
  // Linear vanishing at zero: rho(n)/n -> alpha tau(0)^2 / tau(0) = 1.
  CHECK(rho_of_n(one, tau, 1e-4) / 1e-4 == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(rho_of_n(one, tau, 1e-6) / 1e-6 == doctest::Approx(1.0).epsilon(1e-5));

  // Independent trapezoid with 10^6 panels.
  const int P = 1000000;
  double s = 0.0;
  for (int i = 0; i <= P; ++i) {
    const double m = static_cast<double>(i) / P;
    const double w = (i == 0 || i == P) ? 0.5 : 1.0;
    s += w * tau(m) * tau(1.0 - m);
  }
  const double oracle = s / P / tau(1.0);
  CHECK(std::abs(rho_of_n(one, tau, 1.0) - oracle) <= 1e-5);

  auto sum = CoagulationPropensity::sum_eta(1.0);
  double C = 0.0;
  for (int i = 1; i <= 200; ++i) {
    const double n = 10.0 * i / 200.0;
    const double r = rho_of_n(sum, tau, n);
    CHECK(r >= 0.0);
    C = std::max(C, r / n);
  }
  CHECK(C < 10.0);
}

TEST_CASE("sample_initial") {
  auto model = make_model(0.1);
  auto h = coag::testing::band_uniform(1.0);
  auto st = sample_initial(h, model, SamplingMode::deterministic, 7);
  REQUIRE(st.size() == 10);
  for (double m : st.mass) {
    CHECK(m >= 0.99);
    CHECK(m <= 1.01);
  }
  auto again = sample_initial(h, model, SamplingMode::deterministic, 7);
  CHECK(again.x == st.x);
  CHECK(again.mass == st.mass);
  CHECK(again.id == st.id);

  InitialDensity empty(0.0, SpatialProfile::uniform(3, 1.0), MassProfile::exponential(1.0));
  CHECK_THROWS_AS(sample_initial(empty, model, SamplingMode::deterministic, 1), Error);
}

TEST_CASE("poisson sampling mean") {
  auto model = make_model(1e-3);
  auto h = coag::testing::band_uniform(1.0);
  double total = 0.0;
  const int seeds = 200;
  for (int s = 1; s <= seeds; ++s)
    total += static_cast<double>(sample_initial(h, model, SamplingMode::poisson, s).size());
  CHECK(std::abs(total / seeds - 1000.0) <= 3.0 * std::sqrt(1000.0 / seeds));
}

TEST_CASE("mass marginal passes Kolmogorov-Smirnov at level 0.01") {
  auto model = make_model(1e-4);
  auto h = coag::testing::gaussian_exp(1.0);
  auto st = sample_initial(h, model, SamplingMode::deterministic, 20240601);
  REQUIRE(st.size() == 10000);
  std::vector<double> m = st.mass;
  std::sort(m.begin(), m.end());
  const double N = static_cast<double>(m.size());
  double D = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double F = 1.0 - std::exp(-m[i]);  // exponential(1) oracle
    D = std::max({D, std::abs((i + 1) / N - F), std::abs(i / N - F)});
  }
  CHECK(D < 1.63 / std::sqrt(N));
}

TEST_CASE("interaction profile") {
  auto V = InteractionProfile::bump(3, 1.0);
  CHECK(V.normalization_error() < 1e-6);
  CHECK(V.even());
  std::vector<double> x{0.3, -0.2, 0.1}, y{-0.3, 0.2, -0.1}, far{0.8, 0.7, 0.0};
  CHECK(V(x) == V(y));
  CHECK(V(far) == 0.0);
}

TEST_CASE("keyed streams are addressable and reproducible") {
  KeyedStream a(5, StreamTag::test, 1, 2, 3), b(5, StreamTag::test, 1, 2, 3), c(5, StreamTag::test, 1, 2, 4);
  for (int i = 0; i < 10; ++i) CHECK(a() == b());
  CHECK(a() != c());
  KeyedStream u(11, StreamTag::test, 0);
  double s = 0.0, s2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = u.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("philox4x64-10 known answer") {
  const auto r = philox4x64({0, 0, 0, 0}, {0, 0});
  CHECK(r[0] == 0x16554d9eca36314cULL);
  CHECK(r[1] == 0xdb20fe9d672d0fdcULL);
  CHECK(r[2] == 0xd7e772cee186176bULL);
  CHECK(r[3] == 0x7e68b68aec7ba23bULL);
}
