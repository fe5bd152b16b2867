#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "coag/model.hpp"

namespace coag::pde {

/// Geometric pivots n_j = n_min r^j, j = 0..J-1, with n_{J-1} = n_max.
/// Bin j spans [n_j r^{-1/2}, n_j r^{1/2}).
class MassGrid {
 public:
  MassGrid() = default;
  MassGrid(double n_min, double n_max, int bins);

  int size() const { return static_cast<int>(pivots_.size()); }
  double pivot(int j) const { return pivots_[j]; }
  double width(int j) const { return widths_[j]; }
  double ratio() const { return ratio_; }
  double n_min() const { return pivots_.front(); }
  double n_max() const { return pivots_.back(); }
  const std::vector<double>& pivots() const { return pivots_; }
  bool operator==(const MassGrid& o) const { return pivots_ == o.pivots_; }

 private:
  std::vector<double> pivots_, widths_;
  double ratio_ = 1.0;
};

/// Uniform periodic mesh with M^d cells of side L/M; M a power of two.
class SpatialMesh {
 public:
  SpatialMesh() = default;
  SpatialMesh(int dim, int cells, double box);

  int dim() const { return dim_; }
  int cells_per_axis() const { return M_; }
  std::size_t size() const { return size_; }
  double spacing() const { return box_ / M_; }
  double box() const { return box_; }
  double cell_volume() const;
  /// Centre of cell c (row-major, last axis fastest).
  void center(std::size_t c, double* x) const;
  bool operator==(const SpatialMesh& o) const {
    return dim_ == o.dim_ && M_ == o.M_ && box_ == o.box_;
  }

 private:
  int dim_ = 3;
  int M_ = 1;
  double box_ = 1.0;
  std::size_t size_ = 1;
};

/// f[j][cell]: number density per unit mass per unit volume.
struct DensityField {
  MassGrid masses;
  SpatialMesh mesh;
  std::vector<double> f;
  double time = 0.0;
  double flux_mass = 0.0;    // mass carried past n_max so far (box-integrated)
  double flux_number = 0.0;  // particles lost past n_max so far (box-integrated)

  DensityField() = default;
  DensityField(MassGrid m, SpatialMesh s);

  double& at(int j, std::size_t c) { return f[static_cast<std::size_t>(j) * mesh.size() + c]; }
  double at(int j, std::size_t c) const { return f[static_cast<std::size_t>(j) * mesh.size() + c]; }

  /// Box integral of sum_j n_j^r f_j w_j.
  double moment(double r) const;
  double total_number() const { return moment(0.0); }
  double total_mass() const { return moment(1.0); }
  /// Box integral of f_j, per bin.
  std::vector<double> mass_marginal() const;
};

/// Projects h onto the grids: exact cell averages in space, and in mass a split of the
/// number and mass between bracketing pivots that conserves both; (0, n_min) goes to the
/// first pivot conserving number.
DensityField project_initial(const InitialDensity& h, const MassGrid& masses,
                             const SpatialMesh& mesh);

DensityField diffusion_step(const DensityField& f, double dt, const DiffusionCoefficient& d);

/// beta(n_i, n_k) on every pivot pair with the fixed-pivot split of each product.
class CoagulationTable {
 public:
  CoagulationTable(const MassGrid& masses, const std::function<double(double, double)>& beta);

  const MassGrid& masses() const { return masses_; }
  double beta_max() const { return beta_max_; }
  double beta(int i, int k) const { return beta_full_[static_cast<std::size_t>(i) * masses_.size() + k]; }

  /// dN/dt for pivot numbers N (per unit volume) in one cell; returns truncation rates.
  void rhs(const double* N, double* dN, double& mass_flux, double& number_flux) const;

 private:
  MassGrid masses_;
  struct Pair {
    int i, k, l;
    double coef;  // beta, doubled for i != k
    double frac;  // share of the product sent to pivot l
    double product;
  };
  std::vector<Pair> pairs_;
  std::vector<double> beta_full_;
  double beta_max_ = 0.0;
};

struct CoagulationRate {
  DensityField rate;  // Q+ - Q- in f units
  double mass_flux = 0.0;
  double number_flux = 0.0;
};

CoagulationRate coagulation_rhs(const DensityField& f, const CoagulationTable& table);

/// Strang splitting: half diffusion, SSP-RK2 coagulation, half diffusion.
class Integrator {
 public:
  Integrator(const CoagulationTable& table, DiffusionCoefficient d);
  DensityField step(const DensityField& f, double dt) const;
  void diffuse(DensityField& f, double dt) const;
  void coagulate(DensityField& f, double dt) const;

 private:
  const CoagulationTable& table_;
  DiffusionCoefficient d_;
};

DensityField step(const DensityField& f, double dt, const CoagulationTable& table,
                  const DiffusionCoefficient& d);

/// Runs from f to time T with step dt, keeping the fields at the requested times.
std::vector<DensityField> integrate(const DensityField& f0, double T, double dt,
                                    const Integrator& integ, const std::vector<double>& keep);

double exact_constant_kernel(double n, double t, double B);

struct WeakTestFunction {
  std::function<double(Point, double, double)> J;  // J(x, n, t)
  std::function<double(Point, double, double)> dJdt;       // optional
  std::function<double(Point, double, double)> laplacian;  // optional
  double n_lo = 0.0, n_hi = 0.0;  // mass support
};

struct WeakResidual {
  double lhs = 0.0;
  double initial = 0.0;
  double transport = 0.0;  // time integral of (dJ/dt + d Laplace J) f
  double coagulation = 0.0;
  double residual() const { return lhs - (initial + transport + coagulation); }
};

/// Terms of the weak formulation along a trajectory, trapezoid rule in time.
WeakResidual weak_residual(const std::vector<DensityField>& trajectory, const WeakTestFunction& J,
                           const DensityField& h, const CoagulationTable& table,
                           const DiffusionCoefficient& d);

/// Integral of psi(f/r) r with psi(s) = s log s - s + 1 and r = g(x) tau(n), g the unit
/// Gaussian at the box centre renormalized over the box.
double entropy(const DensityField& f, const std::function<double(double)>& tau);

}  // namespace coag::pde
