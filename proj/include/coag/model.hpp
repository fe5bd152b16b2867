#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "coag/common.hpp"

namespace coag {

using Point = std::span<const double>;

struct DiffusionCoefficient {
  std::function<double(double)> eval;
  double upper_bound = 0.0;  // D = sup d
  bool is_constant = false;

  double operator()(double m) const { return eval(m); }

  /// Zero is allowed (pure coagulation); ModelParams::validate still needs D > 0.
  static DiffusionCoefficient constant(double value);
  /// d(m) = max(m, floor)^(-phi); the floor keeps D finite.
  static DiffusionCoefficient power(double phi, double mass_floor);
};

struct PhiFunction {
  std::function<double(double)> eval;
  double operator()(double m) const { return eval(m); }
  static PhiFunction constant(double value);
};

struct CoagulationPropensity {
  std::function<double(double, double)> eval;
  bool symmetric = true;
  bool identically_zero = false;

  double operator()(double n, double m) const { return eval(n, m); }

  static CoagulationPropensity constant(double value);
  static CoagulationPropensity sum_eta(double eta, double scale = 1.0);  // scale (n^eta + m^eta)
  static CoagulationPropensity min_mass(double scale = 1.0);             // scale min(n, m)
};

/// Nonnegative V with compact support in the ball of radius C0 and unit integral.
class InteractionProfile {
 public:
  InteractionProfile() = default;
  /// Normalizes `raw` numerically on its support.
  InteractionProfile(int dim, double radius, std::function<double(Point)> raw, bool even);

  /// C-infinity bump exp(-1/(1-|x/C0|^2)), normalized by radial quadrature.
  static InteractionProfile bump(int dim, double radius);

  double operator()(Point x) const;
  int dim() const { return dim_; }
  double radius() const { return radius_; }
  bool even() const { return even_; }
  /// |quadrature of V - 1| after normalization, by an independent Cartesian rule.
  double normalization_error() const { return norm_error_; }

 private:
  int dim_ = 0;
  double radius_ = 0.0;
  double scale_ = 1.0;
  bool even_ = true;
  double norm_error_ = 0.0;
  std::function<double(Point)> raw_;
};

/// Normalized spatial density on the periodic box [0, L)^d, product form across axes.
class SpatialProfile {
 public:
  enum class Kind { uniform, gaussian };

  static SpatialProfile uniform(int dim, double box);
  static SpatialProfile gaussian(int dim, double box, std::vector<double> center, double sigma);

  double density(Point x) const;
  /// Normalized one-dimensional factor along `axis`.
  double factor(int axis, double x) const;
  /// Integral of factor(axis, .) over [a, b].
  double factor_integral(int axis, double a, double b) const;
  double max_density() const { return max_density_; }
  int dim() const { return dim_; }
  double box() const { return box_; }
  Kind kind() const { return kind_; }
  const std::vector<double>& center() const { return center_; }
  double sigma() const { return sigma_; }

 private:
  Kind kind_ = Kind::uniform;
  int dim_ = 3;
  double box_ = 1.0;
  std::vector<double> center_;
  double sigma_ = 0.0;
  std::vector<double> axis_norm_;
  double max_density_ = 1.0;
};

/// Normalized mass density p(n) with analytic CDF and partial first moment.
class MassProfile {
 public:
  enum class Kind { exponential, band };

  static MassProfile exponential(double scale);
  /// Uniform on [center - half_width, center + half_width].
  static MassProfile band(double center, double half_width);

  double density(double n) const;
  double cdf(double n) const;
  /// Integral of m p(m) over (0, n].
  double partial_mean(double n) const;
  double mean() const;
  /// Mass below which a fraction q of the distribution lies.
  double quantile(double q) const;
  /// Inverse CDF from a table of 4096 log-spaced knots.
  double sample(double u) const;
  /// Expectation of g under p by composite Gauss-Legendre on the support.
  double expect(const std::function<double(double)>& g) const;
  /// Quadrature nodes/weights used by expect(); weights include p.
  void quadrature(std::vector<double>& nodes, std::vector<double>& weights) const;

  Kind kind() const { return kind_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }
  double param1() const { return p1_; }
  double param2() const { return p2_; }

 private:
  void build_table();

  Kind kind_ = Kind::exponential;
  double p1_ = 1.0, p2_ = 0.0;
  double lo_ = 0.0, hi_ = 0.0;  // numerical support
  std::vector<double> knot_n_, knot_cdf_;
};

/// h_n(x) = Z s(x) p(n).
class InitialDensity {
 public:
  InitialDensity(double Z, SpatialProfile space, MassProfile mass);

  double operator()(Point x, double n) const { return Z_ * space_.density(x) * mass_.density(n); }
  double Z() const { return Z_; }
  const SpatialProfile& space() const { return space_; }
  const MassProfile& mass() const { return mass_; }
  /// h-hat(x) = integral of (n+1) h_n(x) dn.
  double hat(Point x) const;

 private:
  double Z_;
  SpatialProfile space_;
  MassProfile mass_;
};

struct ModelParams {
  int dim = 3;
  DiffusionCoefficient diffusion;
  PhiFunction phi;
  CoagulationPropensity alpha;
  InteractionProfile V;
  double epsilon = 0.1;
  double Z = 1.0;
  double box = 1.0;
  std::function<double(double)> tau;  // entropy reference mass weight

  void validate() const;
};

/// h-bar_k(x) = integral of n d^{d/2-1/k} phi^{dk/2-1} h_n(x) dn.
double bar_h(const InitialDensity& h, const ModelParams& model, int k, Point x);

/// gamma_k(m) = m d(m)^{d/2} phi(m)^{kd/2-1}.
double gamma_k(const ModelParams& model, int k, double m);

struct ParticleSystem {
  int dim = 3;
  double box = 1.0;
  double epsilon = 0.1;
  double time = 0.0;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t next_id = 0;

  std::vector<std::uint64_t> id;
  std::vector<double> x;            // dim per particle, in [0, box)
  std::vector<std::int64_t> image;  // periodic wrap counters for unwrapped tracking
  std::vector<double> mass;
  std::vector<std::uint8_t> alive;

  std::size_t size() const { return id.size(); }
  std::size_t alive_count() const;
  double total_mass() const;
  const double* pos(std::size_t i) const { return x.data() + i * dim; }
  double* pos(std::size_t i) { return x.data() + i * dim; }
  std::size_t add(std::uint64_t pid, const double* p, const std::int64_t* img, double m);
  /// Removes dead records, keeping the order of the living.
  void compact();
};

double k_epsilon(double eps, int d);
double epsilon_for_count(double N, double Z, int d);

/// Piecewise phi on [a, b] from a partition whose sub-intervals are monotone stretches of d.
/// Increasing stretch: phi = C/d with C chosen for continuity; decreasing stretch: phi constant.
/// The first stretch is anchored by A (phi = A/d, or phi = A if it decreases).
PhiFunction construct_phi(const DiffusionCoefficient& d, std::span<const double> partition,
                          double A);

struct CheckGrid {
  int mass_points = 160;
  int spatial_cells = 16;
  /// Lowest mass considered: this quantile of the initial mass marginal.
  double mass_quantile = 1e-6;
  /// Masses are scanned up to this factor times max(L, top of initial support).
  double mass_top_factor = 1e3;
  double threshold = 1e8;
};

struct HypothesisItem {
  std::string name;
  double estimate = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct HypothesisReport {
  std::vector<HypothesisItem> items;
  bool all_pass() const;
  const HypothesisItem& item(const std::string& name) const;
};

HypothesisReport check_hypotheses(const ModelParams& model, const InitialDensity& h,
                                  double mass_cap, const CheckGrid& grid = {});

double rho_of_n(const CoagulationPropensity& alpha, const std::function<double(double)>& tau,
                double n);

enum class SamplingMode { deterministic, poisson };

ParticleSystem sample_initial(const InitialDensity& h, const ModelParams& model, SamplingMode mode,
                              std::uint64_t seed);

}  // namespace coag
