#include "coag/scaling.hpp"

#include <algorithm>
#include <cmath>

namespace coag::scaling {

CriticalExponents critical_exponents(const ScalingInput& inp) {
  require(std::isfinite(inp.phi) && std::isfinite(inp.eta) && inp.phi >= 0.0 && inp.eta >= 0.0,
          Errc::invalid_parameter, "phi and eta must be finite and nonnegative");
  require(inp.dim >= 2, Errc::unsupported_dimension, "scaling needs d >= 2");
  CriticalExponents out;
  if (inp.dim == 2) {
    out.gamma = 0.0;
    out.alpha = 1.0;
    out.tau = 0.5;
  } else {
    const double d = inp.dim;
    const double den = inp.eta + inp.phi * d / 2.0 - 1.0;
    // Decimal inputs on the singular line rarely cancel exactly; a tiny denominator only
    // produces meaningless exponents of order 1e16.
    const double scale = inp.eta + inp.phi * d / 2.0 + 1.0;
    require(std::abs(den) > 1e-12 * scale, Errc::singular_scaling,
            "eta + phi d / 2 = 1: no critical scaling");
    out.gamma = (d / 2.0 - 1.0) / den;
    out.alpha = (d / 2.0 * (inp.phi + inp.eta + 1.0) - 2.0) / den;
    out.tau = (inp.eta + inp.phi - 1.0) / (2.0 * den);
  }
  out.critical = check_scaling_conditions(out.alpha, out.gamma, out.tau, inp).all();
  return out;
}

ConditionCheck check_scaling_conditions(double alpha, double gamma, double tau,
                                        const ScalingInput& inp, double tol) {
  ConditionCheck c;
  c.free = 1.0 - gamma * inp.phi - 2.0 * tau;
  c.interaction = -alpha + gamma * (1.0 + inp.eta) + 1.0;
  c.energy = mass_exponent(alpha, gamma, tau, inp.dim);
  c.free_ok = std::abs(c.free) <= tol;
  c.interaction_ok = std::abs(c.interaction) <= tol;
  c.energy_ok = std::abs(c.energy) <= tol;
  return c;
}

double mass_exponent(double alpha, double gamma, double tau, int dim) {
  return alpha - tau * dim - 2.0 * gamma;
}

std::string regime_name(Regime r) {
  return r == Regime::scaling_permits_heavy_mass ? "scaling-permits-heavy-mass"
                                                 : "mass-conserving";
}

BlowupExponents blowup_exponents(double phi, double eta) {
  require(phi != 0.0, Errc::invalid_parameter, "blow-up exponents need phi != 0");
  require(phi > 0.0 && eta >= 0.0 && std::isfinite(phi) && std::isfinite(eta),
          Errc::invalid_parameter, "blow-up exponents need phi > 0 and eta >= 0");
  BlowupExponents out;
  out.tau = 0.0;
  out.gamma = 1.0 / phi;
  out.alpha = 1.0 + (1.0 + eta) / phi;
  // alpha - 2 gamma = (phi + eta - 1) / phi; the sign test on the numerator avoids rounding
  // at the boundary.
  out.regime = phi + eta >= 1.0 ? Regime::scaling_permits_heavy_mass : Regime::mass_conserving;
  return out;
}

std::pair<double, double> rescaled_coefficients(double lambda, const Exponents& e,
                                                const ScalingInput& inp) {
  return {std::pow(lambda, 1.0 - e.gamma * inp.phi - 2.0 * e.tau),
          std::pow(lambda, 1.0 - e.alpha + e.gamma * (1.0 + inp.eta))};
}

namespace {

bool spatially_constant(const pde::DensityField& f) {
  const std::size_t C = f.mesh.size();
  for (int j = 0; j < f.masses.size(); ++j) {
    const double ref = f.at(j, 0);
    for (std::size_t c = 1; c < C; ++c)
      if (std::abs(f.at(j, c) - ref) > 1e-14 * std::max(1.0, std::abs(ref))) return false;
  }
  return true;
}

// Multilinear periodic interpolation of bin j at x; values live at cell centres.
double interp_space(const pde::DensityField& f, int j, const double* x) {
  const auto& mesh = f.mesh;
  const int dim = mesh.dim(), M = mesh.cells_per_axis();
  if (M == 1) return f.at(j, 0);
  std::vector<int> lo(dim);
  std::vector<double> fr(dim);
  for (int k = 0; k < dim; ++k) {
    double u = x[k] / mesh.spacing() - 0.5;
    double fl = std::floor(u);
    fr[k] = u - fl;
    lo[k] = static_cast<int>(((static_cast<long>(fl) % M) + M) % M);
  }
  double total = 0.0;
  for (int corner = 0; corner < (1 << dim); ++corner) {
    double w = 1.0;
    std::size_t c = 0;
    for (int k = 0; k < dim; ++k) {
      const int bit = (corner >> k) & 1;
      w *= bit ? fr[k] : 1.0 - fr[k];
      c = c * M + static_cast<std::size_t>((lo[k] + bit) % M);
    }
    if (w != 0.0) total += w * f.at(j, c);
  }
  return total;
}

}  // namespace

RescaleResult rescale_field(const std::vector<pde::DensityField>& trajectory, double lambda,
                            const Exponents& e, const pde::WeakTestFunction& J,
                            const pde::CoagulationTable& table, const DiffusionCoefficient& d) {
  require(!trajectory.empty(), Errc::invalid_parameter, "empty trajectory");
  require(lambda > 0.0 && std::isfinite(lambda), Errc::invalid_parameter, "lambda must be positive");
  const pde::MassGrid& g = trajectory.front().masses;
  const pde::SpatialMesh& mesh = trajectory.front().mesh;
  const int nb = g.size();
  const double mass_factor = std::pow(lambda, e.gamma);
  const double space_factor = std::pow(lambda, e.tau);
  const double amp = std::pow(lambda, e.alpha);
  const double L = mesh.box();
  const int dim = mesh.dim();

  // Source bin and log-weight for each target pivot; -1 marks a query off the grid.
  std::vector<int> src(nb);
  std::vector<double> wt(nb);
  const double logr = std::log(g.ratio());
  for (int j = 0; j < nb; ++j) {
    const double q = g.pivot(j) * mass_factor;
    if (q < g.n_min() * (1.0 - 1e-12) || q > g.n_max() * (1.0 + 1e-12)) {
      src[j] = -1;
      continue;
    }
    double u = std::clamp(std::log(q / g.n_min()) / logr, 0.0, double(nb - 1));
    int i = std::min(static_cast<int>(u), nb - 2);
    src[j] = i;
    wt[j] = u - i;
  }
  const bool escapes_low = std::any_of(src.begin(), src.end(), [&](int s) { return s < 0; }) &&
                           mass_factor < 1.0;
  const bool escapes_high = std::any_of(src.begin(), src.end(), [&](int s) { return s < 0; }) &&
                            mass_factor > 1.0;

  RescaleResult out;
  std::vector<double> x(dim), y(dim);
  for (const auto& f : trajectory) {
    require(f.masses == g && f.mesh == mesh, Errc::invalid_parameter, "grid mismatch in trajectory");
    const double fmax = *std::max_element(f.f.begin(), f.f.end());
    auto edge_negligible = [&](int bin) {
      for (std::size_t c = 0; c < mesh.size(); ++c)
        if (f.at(bin, c) > 1e-10 * fmax) return false;
      return true;
    };
    require(!escapes_low || edge_negligible(0), Errc::domain,
            "rescaled masses fall below the grid where the field is not negligible");
    require(!escapes_high || edge_negligible(nb - 1), Errc::domain,
            "rescaled masses exceed the grid where the field is not negligible");
    const bool flat = spatially_constant(f);
    require(flat || space_factor <= 1.0 + 1e-14, Errc::domain,
            "spatial rescaling pushes the support out of the box");

    pde::DensityField r(g, mesh);
    r.time = f.time / lambda;
    for (std::size_t c = 0; c < mesh.size(); ++c) {
      mesh.center(c, x.data());
      for (int k = 0; k < dim; ++k) y[k] = 0.5 * L + space_factor * (x[k] - 0.5 * L);
      for (int j = 0; j < nb; ++j) {
        if (src[j] < 0) continue;
        double lo, hi;
        if (flat) {
          lo = f.at(src[j], 0);
          hi = f.at(src[j] + 1, 0);
        } else {
          lo = interp_space(f, src[j], y.data());
          hi = interp_space(f, src[j] + 1, y.data());
        }
        r.at(j, c) = amp * ((1.0 - wt[j]) * lo + wt[j] * hi);
      }
    }
    out.trajectory.push_back(std::move(r));
  }
  out.residual = pde::weak_residual(out.trajectory, J, out.trajectory.front(), table, d);
  return out;
}

}  // namespace coag::scaling
