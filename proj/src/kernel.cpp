#include "coag/kernel.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <complex>

// Boost 1.74's pchip calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>

namespace coag::kernel {
namespace {

// Symmetrized operator y -> y + a D^{1/2} G D^{1/2} y, D = diag(V_j h^d), applied matrix-free.
class SymOp;

}  // namespace
}  // namespace coag::kernel

namespace Eigen::internal {
template <>
struct traits<coag::kernel::SymOp> : public traits<Eigen::SparseMatrix<double>> {};
}  // namespace Eigen::internal

namespace coag::kernel {
namespace {

class SymOp : public Eigen::EigenBase<SymOp> {
 public:
  using Scalar = double;
  using RealScalar = double;
  using StorageIndex = int;
  enum {
    ColsAtCompileTime = Eigen::Dynamic,
    MaxColsAtCompileTime = Eigen::Dynamic,
    IsRowMajor = false
  };

  SymOp(const SupportGrid& g, double a, const std::vector<double>& sd) : grid(g), a(a), sd(sd) {}

  Eigen::Index rows() const { return static_cast<Eigen::Index>(grid.size()); }
  Eigen::Index cols() const { return rows(); }

  template <typename Rhs>
  Eigen::Product<SymOp, Rhs, Eigen::AliasFreeProduct> operator*(
      const Eigen::MatrixBase<Rhs>& x) const {
    return Eigen::Product<SymOp, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
  }

  void apply(const double* x, double* y) const {
    const std::size_t n = grid.size();
    std::vector<double> z(n), gz(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = sd[i] * x[i];
    grid.apply_G(z, gz);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + a * sd[i] * gz[i];
  }

  const SupportGrid& grid;
  double a;
  const std::vector<double>& sd;
};

}  // namespace
}  // namespace coag::kernel

namespace Eigen::internal {
template <typename Rhs>
struct generic_product_impl<coag::kernel::SymOp, Rhs, SparseShape, DenseShape, GemvProduct>
    : generic_product_impl_base<coag::kernel::SymOp, Rhs,
                                generic_product_impl<coag::kernel::SymOp, Rhs>> {
  using Scalar = typename Product<coag::kernel::SymOp, Rhs>::Scalar;
  template <typename Dest>
  static void scaleAndAddTo(Dest& dst, const coag::kernel::SymOp& lhs, const Rhs& rhs,
                            const Scalar& alpha) {
    Eigen::VectorXd in = rhs;
    Eigen::VectorXd out(in.size());
    lhs.apply(in.data(), out.data());
    dst.noalias() += alpha * out;
  }
};
}  // namespace Eigen::internal

namespace coag::kernel {

// ---------------------------------------------------------------- FFT machinery

struct SupportGrid::Fft {
  int rank = 0;
  std::vector<int> dims;
  std::size_t real_size = 1, complex_size = 1;
  fftw_plan forward = nullptr, backward = nullptr;
  std::vector<std::complex<double>> kernel_hat;

  ~Fft() {
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

SupportGrid::~SupportGrid() = default;

SupportGrid::SupportGrid(const InteractionProfile& V, int cells_across)
    : profile_(V), dim_(V.dim()), n_(cells_across) {
  require(dim_ >= 3, Errc::unsupported_dimension, "support grid needs d >= 3");
  require(n_ >= 2, Errc::invalid_parameter, "support grid needs at least 2 cells across");
  const double R = V.radius();
  h_ = 2.0 * R / n_;
  cell_ = std::pow(h_, dim_);
  c0_ = newton_constant(dim_);
  self_ = c0_ * cube_singular_integral(dim_, dim_ - 2.0) * std::pow(h_, 2 - dim_);

  const int P = 2 * n_;
  std::size_t lattice_cells = 1;
  for (int k = 0; k < dim_; ++k) lattice_cells *= n_;
  cell_to_node_.assign(lattice_cells, -1);
  std::vector<int> idx(dim_, 0);
  std::vector<double> p(dim_);
  for (std::size_t c = 0; c < lattice_cells; ++c) {
    std::size_t r = c;
    for (int k = dim_ - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(r % n_);
      r /= n_;
    }
    for (int k = 0; k < dim_; ++k) p[k] = -R + (idx[k] + 0.5) * h_;
    const double v = V(p);
    if (v <= 0.0) continue;
    cell_to_node_[c] = static_cast<long>(V_.size());
    V_.push_back(v);
    nodes_.insert(nodes_.end(), p.begin(), p.end());
    std::size_t off = 0;
    for (int k = 0; k < dim_; ++k) off = off * P + idx[k];
    lattice_.push_back(off);
  }
  require(!V_.empty(), Errc::invalid_parameter, "support grid has no nodes");

  fft_ = std::make_unique<Fft>();
  Fft& f = *fft_;
  f.rank = dim_;
  f.dims.assign(dim_, P);
  for (int k = 0; k < dim_; ++k) f.real_size *= P;
  f.complex_size = f.real_size / P * (P / 2 + 1);
  double* in = fftw_alloc_real(f.real_size);
  fftw_complex* out = fftw_alloc_complex(f.complex_size);
  // FFTW_ESTIMATE keeps the algorithm choice, and therefore rounding, reproducible.
  f.forward = fftw_plan_dft_r2c(dim_, f.dims.data(), in, out, FFTW_ESTIMATE);
  f.backward = fftw_plan_dft_c2r(dim_, f.dims.data(), out, in, FFTW_ESTIMATE);
  for (std::size_t q = 0; q < f.real_size; ++q) {
    std::size_t r = q;
    double r2 = 0.0;
    bool unused = false;
    for (int k = dim_ - 1; k >= 0; --k) {
      int qk = static_cast<int>(r % P);
      r /= P;
      int o = qk < n_ ? qk : qk - P;
      if (qk == n_) unused = true;
      r2 += double(o) * o;
    }
    in[q] = unused ? 0.0 : (r2 == 0.0 ? self_ : c0_ * std::pow(r2 * h_ * h_, 1.0 - 0.5 * dim_));
  }
  fftw_execute_dft_r2c(f.forward, in, out);
  f.kernel_hat.resize(f.complex_size);
  for (std::size_t q = 0; q < f.complex_size; ++q) f.kernel_hat[q] = {out[q][0], out[q][1]};
  fftw_free(in);
  fftw_free(out);
}

double SupportGrid::entry(std::size_t i, std::size_t j) const {
  if (i == j) return self_;
  double r2 = 0.0;
  for (int k = 0; k < dim_; ++k) {
    double dz = nodes_[i * dim_ + k] - nodes_[j * dim_ + k];
    r2 += dz * dz;
  }
  return c0_ * std::pow(r2, 1.0 - 0.5 * dim_);
}

void SupportGrid::apply_G(std::span<const double> z, std::span<double> y) const {
  const Fft& f = *fft_;
  double* in = fftw_alloc_real(f.real_size);
  fftw_complex* out = fftw_alloc_complex(f.complex_size);
  std::fill(in, in + f.real_size, 0.0);
  for (std::size_t j = 0; j < size(); ++j) in[lattice_[j]] = z[j];
  fftw_execute_dft_r2c(f.forward, in, out);
  for (std::size_t q = 0; q < f.complex_size; ++q) {
    std::complex<double> v(out[q][0], out[q][1]);
    v *= f.kernel_hat[q];
    out[q][0] = v.real();
    out[q][1] = v.imag();
  }
  fftw_execute_dft_c2r(f.backward, out, in);
  const double scale = 1.0 / static_cast<double>(f.real_size);
  for (std::size_t i = 0; i < size(); ++i) y[i] = in[lattice_[i]] * scale;
  fftw_free(in);
  fftw_free(out);
}

void SupportGrid::apply_F(std::span<const double> x, std::span<double> y) const {
  std::vector<double> z(size());
  for (std::size_t j = 0; j < size(); ++j) z[j] = V_[j] * x[j] * cell_;
  apply_G(z, y);
}

double SupportGrid::potential(Point x, std::span<const double> rho) const {
  constexpr int kSub = 6;
  const double near = 2.5 * h_;
  const double hs = h_ / kSub;
  const double sub_self = c0_ * cube_singular_integral(dim_, dim_ - 2.0) * hs * hs;
  const double sub_cell = std::pow(hs, dim_);
  double total = 0.0;
  std::vector<int> idx(dim_);
  std::vector<double> z(dim_);
  for (std::size_t j = 0; j < size(); ++j) {
    const double* y = nodes_.data() + j * dim_;
    double r2 = 0.0;
    for (int k = 0; k < dim_; ++k) r2 += (x[k] - y[k]) * (x[k] - y[k]);
    const double weight = V_[j] * rho[j];
    if (weight == 0.0) continue;
    if (r2 > near * near) {
      total += weight * c0_ * std::pow(r2, 1.0 - 0.5 * dim_) * cell_;
      continue;
    }
    double acc = 0.0;
    std::fill(idx.begin(), idx.end(), 0);
    while (true) {
      bool inside = true;
      double s2 = 0.0;
      for (int k = 0; k < dim_; ++k) {
        z[k] = y[k] - 0.5 * h_ + (idx[k] + 0.5) * hs;
        double dz = x[k] - z[k];
        if (std::abs(dz) > 0.5 * hs) inside = false;
        s2 += dz * dz;
      }
      acc += inside ? sub_self : c0_ * std::pow(s2, 1.0 - 0.5 * dim_) * sub_cell;
      int k = 0;
      while (k < dim_ && ++idx[k] == kSub) idx[k++] = 0;
      if (k == dim_) break;
    }
    total += weight * acc;
  }
  return total;
}

long SupportGrid::node_at(Point x) const {
  const double R = profile_.radius();
  std::size_t c = 0;
  for (int k = 0; k < dim_; ++k) {
    double s = (x[k] + R) / h_ - 0.5;
    long i = std::lround(s);
    if (i < 0 || i >= n_ || std::abs(s - static_cast<double>(i)) > 1e-9) return -1;
    c = c * n_ + static_cast<std::size_t>(i);
  }
  return cell_to_node_[c];
}

// ---------------------------------------------------------------- Gamma and solves

std::vector<double> gamma_at_nodes(const SupportGrid& grid) {
  std::vector<double> ones(grid.size(), 1.0), g(grid.size());
  grid.apply_F(ones, g);
  return g;
}

double gamma_potential(const SupportGrid& grid, Point x) {
  std::vector<double> ones(grid.size(), 1.0);
  return grid.potential(x, ones);
}

std::vector<double> solve_system(double a, const SupportGrid& grid, std::span<const double> rhs,
                                 const SolveOptions& opt, double* residual) {
  require(a >= 0.0 && std::isfinite(a), Errc::invalid_parameter, "coupling a must be >= 0");
  const std::size_t n = grid.size();
  std::vector<double> x(rhs.begin(), rhs.end());
  if (residual) *residual = 0.0;
  if (a == 0.0) return x;

  Solver kind = opt.solver;
  if (kind == Solver::automatic) kind = n <= opt.dense_limit ? Solver::dense : Solver::cg;
  const auto& V = grid.V_values();
  const double cell = grid.cell_volume();

  if (kind == Solver::dense) {
    Eigen::MatrixXd A(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        A(i, j) = (i == j ? 1.0 : 0.0) + a * grid.entry(i, j) * V[j] * cell;
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), n);
    Eigen::VectorXd sol = A.partialPivLu().solve(b);
    for (std::size_t i = 0; i < n; ++i) x[i] = sol[i];
  } else {
    std::vector<double> sd(n);
    for (std::size_t i = 0; i < n; ++i) sd[i] = std::sqrt(V[i] * cell);
    SymOp op(grid, a, sd);
    Eigen::ConjugateGradient<SymOp, Eigen::Lower | Eigen::Upper, Eigen::IdentityPreconditioner> cg;
    cg.setTolerance(opt.tolerance);
    cg.setMaxIterations(5000);
    cg.compute(op);
    Eigen::VectorXd b(n), y;
    for (std::size_t i = 0; i < n; ++i) b[i] = sd[i] * rhs[i];
    if (opt.guess && opt.guess->size() == n) {
      Eigen::VectorXd y0(n);
      for (std::size_t i = 0; i < n; ++i) y0[i] = sd[i] * (*opt.guess)[i];
      y = cg.solveWithGuess(b, y0);
    } else {
      y = cg.solve(b);
    }
    require(cg.info() == Eigen::Success, Errc::solver_failure,
            "conjugate gradients did not converge");
    // Recover x on every node from x = rhs - a G D^{1/2} y; dividing by sd would amplify
    // noise where V is tiny.
    std::vector<double> z(n), gz(n);
    for (std::size_t i = 0; i < n; ++i) z[i] = sd[i] * y[i];
    grid.apply_G(z, gz);
    for (std::size_t i = 0; i < n; ++i) x[i] = rhs[i] - a * gz[i];
  }

  std::vector<double> fx(n);
  grid.apply_F(x, fx);
  double rn = 0.0, bn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = rhs[i] - (x[i] + a * fx[i]);
    rn += r * r;
    bn += rhs[i] * rhs[i];
  }
  const double rel = bn > 0.0 ? std::sqrt(rn / bn) : std::sqrt(rn);
  require(std::isfinite(rel) && rel <= 1e-10, Errc::solver_failure,
          "linear solve residual " + std::to_string(rel) + " above 1e-10");
  if (residual) *residual = rel;
  return x;
}

PotentialSolution solve_w(double a, const SupportGrid& grid, const SolveOptions& opt) {
  require(a >= 0.0, Errc::invalid_parameter, "coupling a must be >= 0");
  PotentialSolution sol;
  sol.a = a;
  sol.grid = &grid;
  if (a == 0.0) {
    sol.w.assign(grid.size(), 0.0);
    return sol;
  }
  auto g = gamma_at_nodes(grid);
  for (double& v : g) v *= -a;
  sol.w = solve_system(a, grid, g, opt, &sol.residual);
  for (double v : sol.w) {
    require(v >= -1.0 - 1e-8 && v <= 1e-8, Errc::solver_failure,
            "w outside [-1, 0] (" + std::to_string(v) + "); grid too coarse");
  }
  return sol;
}

std::vector<double> dw_da(double a, const SupportGrid& grid, const PotentialSolution& w,
                          const SolveOptions& opt) {
  require(a > 0.0, Errc::invalid_parameter, "dw/da needs a > 0");
  std::vector<double> rhs(w.w);
  for (double& v : rhs) v /= a;
  return solve_system(a, grid, rhs, opt, nullptr);
}

double PotentialSolution::at(Point x) const {
  long i = grid->node_at(x);
  if (i >= 0) return w[static_cast<std::size_t>(i)];
  return far_field(x);
}

double PotentialSolution::far_field(Point x) const {
  if (a == 0.0) return 0.0;
  std::vector<double> rho(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) rho[j] = 1.0 + w[j];
  return -a * grid->potential(x, rho);
}

double PotentialSolution::I() const {
  const auto& V = grid->V_values();
  double s = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) s += V[j] * w[j];
  return 1.0 + s * grid->cell_volume();
}

double u_epsilon(const PotentialSolution& w, Point x, double eps) {
  require(eps > 0.0, Errc::invalid_parameter, "epsilon must be positive");
  std::vector<double> y(x.begin(), x.end());
  for (double& c : y) c /= eps;
  return std::pow(eps, 2 - w.grid->dim()) * w.at(y);
}

// ---------------------------------------------------------------- table

std::vector<double> make_a_grid(const AGridSpec& spec) {
  require(spec.a_min > 0.0 && spec.a_max > spec.a_min && spec.per_decade > 0,
          Errc::invalid_parameter, "a-grid needs 0 < a_min < a_max and points per decade > 0");
  const double decades = std::log10(spec.a_max / spec.a_min);
  int count = static_cast<int>(std::ceil(decades * spec.per_decade - 1e-9)) + 1;
  count = std::max(count, 4);
  std::vector<double> a(count);
  for (int i = 0; i < count; ++i) a[i] = spec.a_min * std::pow(spec.a_max / spec.a_min, double(i) / (count - 1));
  a.front() = spec.a_min;
  a.back() = spec.a_max;
  return a;
}

struct EffectiveKernelTable::Interp {
  boost::math::interpolators::pchip<std::vector<double>> f;
};

EffectiveKernelTable::EffectiveKernelTable(CoagulationPropensity alpha, DiffusionCoefficient d,
                                           std::vector<double> a, std::vector<double> I)
    : alpha_(std::move(alpha)), d_(std::move(d)), a_(std::move(a)), I_(std::move(I)) {
  require(a_.size() == I_.size() && a_.size() >= 4, Errc::invalid_parameter,
          "kernel table needs at least 4 points");
  std::vector<double> x(a_.size()), y(I_);
  for (std::size_t i = 0; i < a_.size(); ++i) x[i] = std::log(a_[i]);
  interp_ = std::make_shared<Interp>(Interp{{std::move(x), std::move(y)}});
}

double EffectiveKernelTable::I(double a) const {
  require(a >= 0.0, Errc::invalid_parameter, "a must be >= 0");
  if (a == 0.0) return 1.0;
  const double slack = 1e-12;
  if (a < a_.front() * (1.0 - slack) || a > a_.back() * (1.0 + slack))
    fail(Errc::extrapolation, "a = " + std::to_string(a) + " outside tabulated [" +
                                  std::to_string(a_.front()) + ", " + std::to_string(a_.back()) + "]");
  const double la = std::clamp(std::log(a), std::log(a_.front()), std::log(a_.back()));
  return interp_->f(la);
}

double EffectiveKernelTable::induced_a(double n, double m) const {
  return alpha_(n, m) / (d_(n) + d_(m));
}

double EffectiveKernelTable::beta(double n, double m) const {
  const double al = alpha_(n, m);
  if (al == 0.0) return 0.0;
  return al * I(al / (d_(n) + d_(m)));
}

EffectiveKernelTable build_kernel_table(const CoagulationPropensity& alpha,
                                        const DiffusionCoefficient& d, const SupportGrid& grid,
                                        const AGridSpec& spec, const SolveOptions& opt) {
  auto a = make_a_grid(spec);
  std::vector<double> I(a.size());
  std::vector<double> prev;
  for (std::size_t i = 0; i < a.size(); ++i) {
    SolveOptions o = opt;
    if (!prev.empty()) o.guess = &prev;
    auto sol = solve_w(a[i], grid, o);
    I[i] = sol.I();
    prev = std::move(sol.w);
  }
  return EffectiveKernelTable(alpha, d, std::move(a), std::move(I));
}

}  // namespace coag::kernel
