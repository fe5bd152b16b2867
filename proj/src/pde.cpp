#include "coag/pde.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

namespace coag::pde {

// ---------------------------------------------------------------- grids

MassGrid::MassGrid(double n_min, double n_max, int bins) {
  require(n_min > 0.0 && n_max > n_min && bins >= 2, Errc::invalid_parameter,
          "mass grid needs 0 < n_min < n_max and at least 2 bins");
  ratio_ = std::pow(n_max / n_min, 1.0 / (bins - 1));
  pivots_.resize(bins);
  widths_.resize(bins);
  for (int j = 0; j < bins; ++j) pivots_[j] = n_min * std::pow(ratio_, j);
  pivots_.back() = n_max;
  const double s = std::sqrt(ratio_);
  for (int j = 0; j < bins; ++j) widths_[j] = pivots_[j] * (s - 1.0 / s);
}

SpatialMesh::SpatialMesh(int dim, int cells, double box) : dim_(dim), M_(cells), box_(box) {
  require(dim >= 1 && box > 0.0, Errc::invalid_parameter, "bad spatial mesh");
  require(cells >= 1 && (cells & (cells - 1)) == 0, Errc::invalid_parameter,
          "cells per axis must be a power of two");
  size_ = 1;
  for (int k = 0; k < dim; ++k) size_ *= static_cast<std::size_t>(cells);
}

double SpatialMesh::cell_volume() const { return std::pow(spacing(), dim_); }

void SpatialMesh::center(std::size_t c, double* x) const {
  for (int k = dim_ - 1; k >= 0; --k) {
    x[k] = (static_cast<double>(c % M_) + 0.5) * spacing();
    c /= M_;
  }
}

DensityField::DensityField(MassGrid m, SpatialMesh s)
    : masses(std::move(m)), mesh(std::move(s)),
      f(static_cast<std::size_t>(masses.size()) * mesh.size(), 0.0) {}

double DensityField::moment(double r) const {
  double total = 0.0;
  for (int j = 0; j < masses.size(); ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < mesh.size(); ++c) s += at(j, c);
    total += std::pow(masses.pivot(j), r) * masses.width(j) * s;
  }
  return total * mesh.cell_volume();
}

std::vector<double> DensityField::mass_marginal() const {
  std::vector<double> out(masses.size());
  for (int j = 0; j < masses.size(); ++j) {
    double s = 0.0;
    for (std::size_t c = 0; c < mesh.size(); ++c) s += at(j, c);
    out[j] = s * mesh.cell_volume();
  }
  return out;
}

DensityField project_initial(const InitialDensity& h, const MassGrid& masses,
                             const SpatialMesh& mesh) {
  require(h.space().dim() == mesh.dim(), Errc::invalid_parameter, "dimension mismatch");
  require(std::abs(h.space().box() - mesh.box()) <= 1e-12 * mesh.box(), Errc::invalid_parameter,
          "initial density and mesh use different boxes");
  DensityField out(masses, mesh);
  const int J = masses.size();
  const auto& p = h.mass();
  std::vector<double> number(J, 0.0);
  number[0] = p.cdf(masses.pivot(0));
  for (int j = 0; j + 1 < J; ++j) {
    const double a = masses.pivot(j), b = masses.pivot(j + 1);
    const double nu = p.cdf(b) - p.cdf(a);
    const double mu = p.partial_mean(b) - p.partial_mean(a);
    if (nu <= 0.0) continue;
    double lower = std::clamp((b * nu - mu) / (b - a), 0.0, nu);
    number[j] += lower;
    number[j + 1] += nu - lower;
  }

  const double h_cell = mesh.spacing();
  const double vol = mesh.cell_volume();
  std::vector<double> x(mesh.dim());
  for (std::size_t c = 0; c < mesh.size(); ++c) {
    mesh.center(c, x.data());
    double frac = 1.0;
    for (int k = 0; k < mesh.dim(); ++k)
      frac *= h.space().factor_integral(k, x[k] - 0.5 * h_cell, x[k] + 0.5 * h_cell);
    const double density = h.Z() * frac / vol;
    for (int j = 0; j < J; ++j) out.at(j, c) = density * number[j] / masses.width(j);
  }
  return out;
}

// ---------------------------------------------------------------- diffusion

namespace {

void spectral_heat(DensityField& f, double dt, const DiffusionCoefficient& d) {
  const SpatialMesh& mesh = f.mesh;
  if (mesh.size() == 1 || dt == 0.0) return;
  const int dim = mesh.dim(), M = mesh.cells_per_axis();
  std::vector<int> dims(dim, M);
  const std::size_t nreal = mesh.size();
  const std::size_t ncomplex = nreal / M * (M / 2 + 1);

  // Squared wave numbers in r2c layout.
  std::vector<double> k2(ncomplex);
  const double base = 2.0 * std::numbers::pi / mesh.box();
  for (std::size_t q = 0; q < ncomplex; ++q) {
    std::size_t r = q;
    double s = 0.0;
    for (int k = dim - 1; k >= 0; --k) {
      const int len = (k == dim - 1) ? M / 2 + 1 : M;
      int qk = static_cast<int>(r % len);
      r /= len;
      int wave = (k == dim - 1) ? qk : (qk <= M / 2 ? qk : qk - M);
      s += base * base * double(wave) * wave;
    }
    k2[q] = s;
  }

  double* in = fftw_alloc_real(nreal);
  fftw_complex* out = fftw_alloc_complex(ncomplex);
  fftw_plan fwd = fftw_plan_dft_r2c(dim, dims.data(), in, out, FFTW_ESTIMATE);
  fftw_plan bwd = fftw_plan_dft_c2r(dim, dims.data(), out, in, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);

  const int J = f.masses.size();
#pragma omp parallel
  {
    double* buf = fftw_alloc_real(nreal);
    fftw_complex* spec = fftw_alloc_complex(ncomplex);
#pragma omp for schedule(static)
    for (int j = 0; j < J; ++j) {
      const double rate = d(f.masses.pivot(j)) * dt;
      double* row = f.f.data() + static_cast<std::size_t>(j) * nreal;
      std::copy(row, row + nreal, buf);
      fftw_execute_dft_r2c(fwd, buf, spec);
      for (std::size_t q = 0; q < ncomplex; ++q) {
        const double g = std::exp(-rate * k2[q]) / static_cast<double>(nreal);
        spec[q][0] *= g;
        spec[q][1] *= g;
      }
      fftw_execute_dft_c2r(bwd, spec, buf);
      std::copy(buf, buf + nreal, row);
    }
    fftw_free(buf);
    fftw_free(spec);
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(bwd);
}

}  // namespace

DensityField diffusion_step(const DensityField& f, double dt, const DiffusionCoefficient& d) {
  DensityField out = f;
  spectral_heat(out, dt, d);
  out.time = f.time + dt;
  return out;
}

// ---------------------------------------------------------------- coagulation

CoagulationTable::CoagulationTable(const MassGrid& masses,
                                   const std::function<double(double, double)>& beta)
    : masses_(masses) {
  const int J = masses.size();
  const auto& n = masses.pivots();
  beta_full_.assign(static_cast<std::size_t>(J) * J, 0.0);
  for (int i = 0; i < J; ++i) {
    for (int k = i; k < J; ++k) {
      double b;
      try {
        b = beta(n[i], n[k]);
      } catch (const Error& e) {
        fail(Errc::table_coverage, "no beta for pivots (" + std::to_string(n[i]) + ", " +
                                       std::to_string(n[k]) + "): " + e.what());
      }
      require(std::isfinite(b) && b >= 0.0, Errc::table_coverage, "beta entry not finite");
      beta_full_[static_cast<std::size_t>(i) * J + k] = b;
      beta_full_[static_cast<std::size_t>(k) * J + i] = b;
      beta_max_ = std::max(beta_max_, b);
      if (b == 0.0) continue;
      const double v = n[i] + n[k];
      Pair p{i, k, -1, (i == k ? 1.0 : 2.0) * b, 1.0, v};
      if (v <= n.back() * (1.0 + 1e-14)) {
        auto it = std::upper_bound(n.begin(), n.end(), v);
        int l = static_cast<int>(it - n.begin()) - 1;
        if (l >= J - 1) {
          p.l = J - 1;
          p.frac = 1.0;
        } else {
          p.l = l;
          p.frac = (n[l + 1] - v) / (n[l + 1] - n[l]);
        }
      }
      pairs_.push_back(p);
    }
  }
}

void CoagulationTable::rhs(const double* N, double* dN, double& mass_flux,
                           double& number_flux) const {
  const int J = masses_.size();
  std::fill(dN, dN + J, 0.0);
  mass_flux = 0.0;
  number_flux = 0.0;
  for (const Pair& p : pairs_) {
    const double u = p.coef * N[p.i] * N[p.k];
    if (u == 0.0) continue;
    dN[p.i] -= u;
    dN[p.k] -= u;
    if (p.l >= 0) {
      dN[p.l] += p.frac * u;
      if (p.frac < 1.0) dN[p.l + 1] += (1.0 - p.frac) * u;
    } else {
      mass_flux += u * p.product;
      number_flux += u;
    }
  }
}

CoagulationRate coagulation_rhs(const DensityField& f, const CoagulationTable& table) {
  require(f.masses == table.masses(), Errc::table_coverage, "table built for another mass grid");
  CoagulationRate out{DensityField(f.masses, f.mesh), 0.0, 0.0};
  out.rate.time = f.time;
  const int J = f.masses.size();
  std::vector<double> N(J), dN(J);
  for (std::size_t c = 0; c < f.mesh.size(); ++c) {
    for (int j = 0; j < J; ++j) N[j] = f.at(j, c) * f.masses.width(j);
    double mf, nf;
    table.rhs(N.data(), dN.data(), mf, nf);
    for (int j = 0; j < J; ++j) out.rate.at(j, c) = dN[j] / f.masses.width(j);
    out.mass_flux += mf * f.mesh.cell_volume();
    out.number_flux += nf * f.mesh.cell_volume();
  }
  return out;
}

Integrator::Integrator(const CoagulationTable& table, DiffusionCoefficient d)
    : table_(table), d_(std::move(d)) {}

void Integrator::diffuse(DensityField& f, double dt) const { spectral_heat(f, dt, d_); }

void Integrator::coagulate(DensityField& f, double dt) const {
  const int J = f.masses.size();
  const std::size_t C = f.mesh.size();
  const double fmax = *std::max_element(f.f.begin(), f.f.end());
  const double tol = 1e-14 * fmax;

  double m0max = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (int j = 0; j < J; ++j) s += f.at(j, c) * f.masses.width(j);
    m0max = std::max(m0max, s);
  }
  require(table_.beta_max() * m0max * dt <= 0.25, Errc::stability,
          "dt exceeds 0.25 / (beta_max M0)");

  std::vector<double> mflux(C, 0.0), nflux(C, 0.0);
  bool negative = false;
#pragma omp parallel
  {
    std::vector<double> N(J), N1(J), k0(J), k1(J);
#pragma omp for schedule(static)
    for (std::size_t c = 0; c < C; ++c) {
      for (int j = 0; j < J; ++j) N[j] = f.at(j, c) * f.masses.width(j);
      double mf0, nf0, mf1, nf1;
      table_.rhs(N.data(), k0.data(), mf0, nf0);
      for (int j = 0; j < J; ++j) N1[j] = N[j] + dt * k0[j];
      table_.rhs(N1.data(), k1.data(), mf1, nf1);
      for (int j = 0; j < J; ++j) {
        double v = 0.5 * N[j] + 0.5 * (N1[j] + dt * k1[j]);
        double fv = v / f.masses.width(j);
        if (fv < 0.0) {
          if (fv < -tol) negative = true;
          fv = 0.0;
        }
        f.at(j, c) = fv;
      }
      mflux[c] = 0.5 * dt * (mf0 + mf1);
      nflux[c] = 0.5 * dt * (nf0 + nf1);
    }
  }
  require(!negative, Errc::stability, "negative density beyond 1e-14 max f; dt too large");
  const double vol = f.mesh.cell_volume();
  f.flux_mass += ordered_sum(mflux) * vol;
  f.flux_number += ordered_sum(nflux) * vol;
}

DensityField Integrator::step(const DensityField& f, double dt) const {
  require(dt > 0.0, Errc::invalid_parameter, "dt must be positive");
  DensityField out = f;
  diffuse(out, 0.5 * dt);
  coagulate(out, dt);
  diffuse(out, 0.5 * dt);
  out.time = f.time + dt;
  return out;
}

DensityField step(const DensityField& f, double dt, const CoagulationTable& table,
                  const DiffusionCoefficient& d) {
  return Integrator(table, d).step(f, dt);
}

std::vector<DensityField> integrate(const DensityField& f0, double T, double dt,
                                    const Integrator& integ, const std::vector<double>& keep) {
  require(dt > 0.0 && T >= 0.0, Errc::invalid_parameter, "need dt > 0 and T >= 0");
  const auto steps = static_cast<long>(std::llround(T / dt));
  require(std::abs(steps * dt - T) <= 1e-9 * std::max(1.0, T), Errc::invalid_parameter,
          "T must be a multiple of dt");
  std::vector<long> marks;
  for (double t : keep) {
    long s = std::lround(t / dt);
    require(s >= 0 && s <= steps, Errc::invalid_parameter, "snapshot time outside [0, T]");
    marks.push_back(s);
  }
  std::vector<DensityField> out(keep.size());
  DensityField cur = f0;
  const double t0 = f0.time;
  for (long s = 0;; ++s) {
    for (std::size_t i = 0; i < marks.size(); ++i)
      if (marks[i] == s) out[i] = cur;
    if (s == steps) break;
    cur = integ.step(cur, dt);
    cur.time = t0 + static_cast<double>(s + 1) * dt;
  }
  return out;
}

double exact_constant_kernel(double n, double t, double B) {
  const double s = 1.0 + B * t;
  return std::exp(-n / s) / (s * s);
}

// ---------------------------------------------------------------- weak form

WeakResidual weak_residual(const std::vector<DensityField>& trajectory, const WeakTestFunction& J,
                           const DensityField& h, const CoagulationTable& table,
                           const DiffusionCoefficient& d) {
  require(!trajectory.empty(), Errc::invalid_parameter, "empty trajectory");
  const MassGrid& g = h.masses;
  const SpatialMesh& mesh = h.mesh;
  require(J.n_lo >= 0.0 && J.n_hi <= g.n_max() * (1.0 + 1e-12), Errc::domain,
          "test function mass support exceeds the mass cap");
  for (const auto& f : trajectory)
    require(f.masses == g && f.mesh == mesh, Errc::invalid_parameter, "grid mismatch in trajectory");
  require(table.masses() == g, Errc::table_coverage, "table built for another mass grid");

  const int nb = g.size();
  const int dim = mesh.dim();
  const double vol = mesh.cell_volume();
  const double hx = 1e-3 * mesh.box();
  std::vector<double> x(dim), y(dim);

  auto pair_integral = [&](const DensityField& f, auto&& weight) {
    double total = 0.0;
    for (std::size_t c = 0; c < mesh.size(); ++c) {
      mesh.center(c, x.data());
      double s = 0.0;
      for (int j = 0; j < nb; ++j) {
        double v = f.at(j, c);
        if (v != 0.0) s += weight(x, j) * v * g.width(j);
      }
      total += s;
    }
    return total * vol;
  };

  WeakResidual out;
  const DensityField& last = trajectory.back();
  out.lhs = pair_integral(last, [&](Point p, int j) { return J.J(p, g.pivot(j), last.time); });
  out.initial = pair_integral(h, [&](Point p, int j) { return J.J(p, g.pivot(j), h.time); });

  auto transport = [&](const DensityField& f) {
    const double t = f.time;
    const double ht = 1e-5 * std::max(1.0, std::abs(t));
    return pair_integral(f, [&](Point p, int j) {
      const double n = g.pivot(j);
      double dt = J.dJdt ? J.dJdt(p, n, t) : (J.J(p, n, t + ht) - J.J(p, n, t - ht)) / (2.0 * ht);
      double lap;
      if (J.laplacian) {
        lap = J.laplacian(p, n, t);
      } else {
        lap = 0.0;
        const double centre = J.J(p, n, t);
        std::copy(p.begin(), p.end(), y.begin());
        for (int k = 0; k < dim; ++k) {
          y[k] = p[k] + hx;
          double up = J.J(y, n, t);
          y[k] = p[k] - hx;
          double dn = J.J(y, n, t);
          y[k] = p[k];
          lap += (up - 2.0 * centre + dn) / (hx * hx);
        }
      }
      return dt + d(n) * lap;
    });
  };

  auto coag = [&](const DensityField& f) {
    const double t = f.time;
    std::vector<double> Jn(nb), N(nb);
    double total = 0.0;
    for (std::size_t c = 0; c < mesh.size(); ++c) {
      mesh.center(c, x.data());
      for (int j = 0; j < nb; ++j) {
        Jn[j] = J.J(x, g.pivot(j), t);
        N[j] = f.at(j, c) * g.width(j);
      }
      double s = 0.0;
      for (int i = 0; i < nb; ++i) {
        if (N[i] == 0.0) continue;
        for (int k = 0; k < nb; ++k) {
          if (N[k] == 0.0) continue;
          const double b = table.beta(i, k);
          if (b == 0.0) continue;
          // J is evaluated at m + n even past the cap; a J supported below the cap vanishes there.
          const double Jsum = J.J(x, g.pivot(i) + g.pivot(k), t);
          s += b * (Jsum - Jn[i] - Jn[k]) * N[i] * N[k];
        }
      }
      total += s;
    }
    return total * vol;
  };

  for (std::size_t s = 0; s + 1 < trajectory.size(); ++s) {
    const auto& a = trajectory[s];
    const auto& b = trajectory[s + 1];
    const double w = 0.5 * (b.time - a.time);
    out.transport += w * (transport(a) + transport(b));
    out.coagulation += w * (coag(a) + coag(b));
  }
  return out;
}

double entropy(const DensityField& f, const std::function<double(double)>& tau) {
  const SpatialMesh& mesh = f.mesh;
  const int dim = mesh.dim();
  const double L = mesh.box();
  // Box mass of the unit Gaussian centred at L/2.
  double norm = 1.0;
  for (int k = 0; k < dim; ++k) norm *= std::erf(0.25 * L * std::sqrt(2.0));
  std::vector<double> x(dim);
  double total = 0.0;
  for (std::size_t c = 0; c < mesh.size(); ++c) {
    mesh.center(c, x.data());
    double r2 = 0.0;
    for (int k = 0; k < dim; ++k) r2 += (x[k] - 0.5 * L) * (x[k] - 0.5 * L);
    const double gx = std::pow(2.0 * std::numbers::pi, -0.5 * dim) * std::exp(-0.5 * r2) / norm;
    double s = 0.0;
    for (int j = 0; j < f.masses.size(); ++j) {
      const double r = gx * tau(f.masses.pivot(j));
      const double v = f.at(j, c);
      const double term = v > 0.0 ? v * std::log(v / r) - v + r : r;
      s += term * f.masses.width(j);
    }
    total += s;
  }
  return total * mesh.cell_volume();
}

}  // namespace coag::pde
