#pragma once

#include <memory>
#include <span>
#include <vector>

#include "coag/model.hpp"

namespace coag::kernel {

/// Cartesian cells of side h covering the ball |x| < C0; one node per cell whose centre
/// carries V > 0. Off-diagonal kernel c0 |x_i - x_j|^{2-d}; the diagonal is the cell average.
class SupportGrid {
 public:
  explicit SupportGrid(const InteractionProfile& V, int cells_across = 24);
  ~SupportGrid();
  SupportGrid(const SupportGrid&) = delete;
  SupportGrid& operator=(const SupportGrid&) = delete;

  int dim() const { return dim_; }
  int cells_across() const { return n_; }
  double spacing() const { return h_; }
  std::size_t size() const { return V_.size(); }
  Point node(std::size_t i) const { return {nodes_.data() + i * dim_, static_cast<std::size_t>(dim_)}; }
  const std::vector<double>& V_values() const { return V_; }
  double cell_volume() const { return cell_; }
  double covered_volume() const { return cell_ * static_cast<double>(size()); }
  const InteractionProfile& V() const { return profile_; }

  /// Kernel matrix entry G_ij (no V, no cell weight).
  double entry(std::size_t i, std::size_t j) const;

  /// y_i = sum_j G_ij z_j, by zero-padded FFT convolution.
  void apply_G(std::span<const double> z, std::span<double> y) const;
  /// y = F x with (F x)_i = sum_j G_ij V_j x_j h^d.
  void apply_F(std::span<const double> x, std::span<double> y) const;

  /// c0 * integral of |x-y|^{2-d} V(y) rho(y) dy for rho given at nodes. Cells near x
  /// are subdivided so the singularity is integrated cell-wise.
  double potential(Point x, std::span<const double> rho) const;

  /// Index of the node at x, or -1.
  long node_at(Point x) const;

 private:
  struct Fft;
  InteractionProfile profile_;
  int dim_;
  int n_;
  double h_, cell_, c0_, self_;
  std::vector<double> nodes_;
  std::vector<double> V_;
  std::vector<std::size_t> lattice_;  // padded-lattice offset of each node
  std::vector<long> cell_to_node_;    // n^d lattice -> node or -1
  std::unique_ptr<Fft> fft_;
};

/// Gamma at every node.
std::vector<double> gamma_at_nodes(const SupportGrid& grid);
/// Gamma(x) = c0 * integral of |x-y|^{2-d} V(y) dy.
double gamma_potential(const SupportGrid& grid, Point x);

enum class Solver { automatic, dense, cg };

struct SolveOptions {
  Solver solver = Solver::automatic;
  double tolerance = 1e-13;
  std::size_t dense_limit = 3000;
  const std::vector<double>* guess = nullptr;
};

struct PotentialSolution {
  double a = 0.0;
  std::vector<double> w;
  double residual = 0.0;  // relative 2-norm residual of the linear solve
  const SupportGrid* grid = nullptr;

  /// w at x: node value on nodes, integral representation elsewhere.
  double at(Point x) const;
  /// -a c0 * integral of |x-y|^{2-d} V (1 + w).
  double far_field(Point x) const;
  /// I(a) = integral of V (1 + w); the V part is taken as exactly 1.
  double I() const;
};

/// Solves (id + a F) x = rhs on the grid nodes.
std::vector<double> solve_system(double a, const SupportGrid& grid, std::span<const double> rhs,
                                 const SolveOptions& opt, double* residual);

PotentialSolution solve_w(double a, const SupportGrid& grid, const SolveOptions& opt = {});

/// v = dw/da from (id + a F) v = w / a.
std::vector<double> dw_da(double a, const SupportGrid& grid, const PotentialSolution& w,
                          const SolveOptions& opt = {});

/// u^eps(x) = eps^{2-d} w(x / eps).
double u_epsilon(const PotentialSolution& w, Point x, double eps);

struct AGridSpec {
  double a_min = 1e-2;
  double a_max = 1e2;
  int per_decade = 64;
};

std::vector<double> make_a_grid(const AGridSpec& spec);

class EffectiveKernelTable {
 public:
  EffectiveKernelTable(CoagulationPropensity alpha, DiffusionCoefficient d, std::vector<double> a,
                       std::vector<double> I);

  /// Monotone cubic in log a; I(0) = 1; outside [a_min, a_max] is an extrapolation error.
  double I(double a) const;
  double induced_a(double n, double m) const;
  double beta(double n, double m) const;

  const std::vector<double>& a_grid() const { return a_; }
  const std::vector<double>& I_values() const { return I_; }
  double a_min() const { return a_.front(); }
  double a_max() const { return a_.back(); }
  const CoagulationPropensity& alpha() const { return alpha_; }
  const DiffusionCoefficient& diffusion() const { return d_; }

 private:
  struct Interp;
  CoagulationPropensity alpha_;
  DiffusionCoefficient d_;
  std::vector<double> a_, I_;
  std::shared_ptr<const Interp> interp_;
};

EffectiveKernelTable build_kernel_table(const CoagulationPropensity& alpha,
                                        const DiffusionCoefficient& d, const SupportGrid& grid,
                                        const AGridSpec& spec, const SolveOptions& opt = {});

}  // namespace coag::kernel
