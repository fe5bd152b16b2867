#pragma once

#include <string>
#include <vector>

#include "coag/pde.hpp"

namespace coag::scaling {

/// d(n) = n^-phi, beta(n, m) = n^eta + m^eta in dimension dim.
struct ScalingInput {
  double phi = 0.0;
  double eta = 0.0;
  int dim = 3;
};

/// g_n(x, t) = lambda^alpha f_{n lambda^gamma}(lambda^tau x, lambda t).
struct Exponents {
  double gamma = 0.0;
  double alpha = 0.0;
  double tau = 0.0;
};

struct CriticalExponents : Exponents {
  bool critical = false;
};

CriticalExponents critical_exponents(const ScalingInput& inp);

struct ConditionCheck {
  double free = 0.0;         // 1 - gamma phi - 2 tau
  double interaction = 0.0;  // -alpha + gamma (1 + eta) + 1
  double energy = 0.0;       // alpha - tau d - 2 gamma
  bool free_ok = false, interaction_ok = false, energy_ok = false;
  bool all() const { return free_ok && interaction_ok && energy_ok; }
};

ConditionCheck check_scaling_conditions(double alpha, double gamma, double tau,
                                        const ScalingInput& inp, double tol = 1e-12);

double mass_exponent(double alpha, double gamma, double tau, int dim);

enum class Regime { scaling_permits_heavy_mass, mass_conserving };
std::string regime_name(Regime r);

struct BlowupExponents : Exponents {
  Regime regime = Regime::mass_conserving;
};

/// tau = 0, gamma = 1/phi, alpha = 1 + (1 + eta)/phi.
BlowupExponents blowup_exponents(double phi, double eta);

struct RescaleResult {
  std::vector<pde::DensityField> trajectory;
  pde::WeakResidual residual;
};

/// Rescales every field of `trajectory` (times become t / lambda) by log-linear interpolation
/// in mass and multilinear periodic interpolation in space about the box centre, then
/// evaluates the weak residual of the result against the PDE given by `table` and `d`.
/// Rescaled masses or positions outside the grids raise a domain error unless the field is
/// negligible there.
RescaleResult rescale_field(const std::vector<pde::DensityField>& trajectory, double lambda,
                            const Exponents& exps, const pde::WeakTestFunction& J,
                            const pde::CoagulationTable& table, const DiffusionCoefficient& d);

/// Multipliers of the diffusion and coagulation terms in the PDE satisfied by the rescaled
/// field: lambda^(1 - gamma phi - 2 tau) and lambda^(1 - alpha + gamma (1 + eta)).
std::pair<double, double> rescaled_coefficients(double lambda, const Exponents& exps,
                                                const ScalingInput& inp);

}  // namespace coag::scaling
