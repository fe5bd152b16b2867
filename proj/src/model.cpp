#include "coag/model.hpp"

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <cmath>
#include <limits>
#include <numbers>

#include "coag/random.hpp"
#include "riesz_grid.hpp"

namespace coag {

namespace {

using boost::math::quadrature::gauss_kronrod;

// Midpoint rule over the cube [-R, R]^d with n cells per side; spectrally accurate for
// smooth compactly supported integrands.
double cartesian_integral(int dim, double R, int n, const std::function<double(Point)>& f) {
  const double h = 2.0 * R / n;
  std::vector<int> idx(dim, 0);
  std::vector<double> p(dim);
  double sum = 0.0;
  while (true) {
    for (int k = 0; k < dim; ++k) p[k] = -R + (idx[k] + 0.5) * h;
    sum += f(p);
    int k = 0;
    while (k < dim && ++idx[k] == n) idx[k++] = 0;
    if (k == dim) break;
  }
  return sum * std::pow(h, dim);
}

int cartesian_resolution(int dim) { return dim <= 3 ? 96 : (dim == 4 ? 40 : 16); }

double bump_raw(double r2) { return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0; }

}  // namespace

// ---------------------------------------------------------------- coefficients

DiffusionCoefficient DiffusionCoefficient::constant(double value) {
  require(value >= 0.0 && std::isfinite(value), Errc::invalid_parameter,
          "diffusion constant must be nonnegative");
  return {[value](double) { return value; }, value, true};
}

DiffusionCoefficient DiffusionCoefficient::power(double phi, double mass_floor) {
  require(phi >= 0.0 && mass_floor > 0.0, Errc::invalid_parameter,
          "power diffusion needs phi >= 0 and a positive mass floor");
  return {[phi, mass_floor](double m) { return std::pow(std::max(m, mass_floor), -phi); },
          std::pow(mass_floor, -phi), phi == 0.0};
}

PhiFunction PhiFunction::constant(double value) {
  require(value > 0.0, Errc::invalid_parameter, "phi must be positive");
  return {[value](double) { return value; }};
}

CoagulationPropensity CoagulationPropensity::constant(double value) {
  require(value >= 0.0, Errc::invalid_parameter, "alpha must be nonnegative");
  return {[value](double, double) { return value; }, true, value == 0.0};
}

CoagulationPropensity CoagulationPropensity::sum_eta(double eta, double scale) {
  require(eta >= 0.0 && scale >= 0.0, Errc::invalid_parameter, "sum_eta needs eta, scale >= 0");
  return {[eta, scale](double n, double m) { return scale * (std::pow(n, eta) + std::pow(m, eta)); },
          true, scale == 0.0};
}

CoagulationPropensity CoagulationPropensity::min_mass(double scale) {
  require(scale >= 0.0, Errc::invalid_parameter, "min needs scale >= 0");
  return {[scale](double n, double m) { return scale * std::min(n, m); }, true, scale == 0.0};
}

// ---------------------------------------------------------------- V

InteractionProfile::InteractionProfile(int dim, double radius, std::function<double(Point)> raw,
                                       bool even)
    : dim_(dim), radius_(radius), even_(even), raw_(std::move(raw)) {
  require(dim >= 1 && radius > 0.0, Errc::invalid_parameter, "bad interaction profile");
  double mass = cartesian_integral(dim, radius, cartesian_resolution(dim) + 32, raw_);
  require(mass > 0.0 && std::isfinite(mass), Errc::invalid_parameter,
          "interaction profile has no mass");
  scale_ = 1.0 / mass;
  norm_error_ = std::abs(
      cartesian_integral(dim, radius, cartesian_resolution(dim), [this](Point x) { return (*this)(x); }) -
      1.0);
}

InteractionProfile InteractionProfile::bump(int dim, double radius) {
  require(dim >= 1 && radius > 0.0, Errc::invalid_parameter, "bad bump parameters");
  InteractionProfile v;
  v.dim_ = dim;
  v.radius_ = radius;
  v.even_ = true;
  const double inv_r2 = 1.0 / (radius * radius);
  v.raw_ = [inv_r2](Point x) {
    double r2 = 0.0;
    for (double c : x) r2 += c * c;
    return bump_raw(r2 * inv_r2);
  };
  auto radial = [dim](double s) { return std::pow(s, dim - 1) * bump_raw(s * s); };
  double err = 0.0;
  double unit = gauss_kronrod<double, 61>::integrate(radial, 0.0, 1.0, 15, 1e-15, &err);
  v.scale_ = 1.0 / (unit_sphere_area(dim) * unit * std::pow(radius, dim));
  v.norm_error_ = std::abs(
      cartesian_integral(dim, radius, cartesian_resolution(dim), [&v](Point x) { return v(x); }) -
      1.0);
  return v;
}

double InteractionProfile::operator()(Point x) const {
  double r2 = 0.0;
  for (double c : x) r2 += c * c;
  if (r2 >= radius_ * radius_) return 0.0;
  return scale_ * raw_(x);
}

// ---------------------------------------------------------------- spatial profile

SpatialProfile SpatialProfile::uniform(int dim, double box) {
  require(dim >= 1 && box > 0.0, Errc::invalid_parameter, "bad uniform profile");
  SpatialProfile s;
  s.kind_ = Kind::uniform;
  s.dim_ = dim;
  s.box_ = box;
  s.center_.assign(dim, 0.5 * box);
  s.axis_norm_.assign(dim, box);
  s.max_density_ = std::pow(box, -dim);
  return s;
}

SpatialProfile SpatialProfile::gaussian(int dim, double box, std::vector<double> center,
                                        double sigma) {
  require(dim >= 1 && box > 0.0 && sigma > 0.0, Errc::invalid_parameter, "bad gaussian profile");
  require(static_cast<int>(center.size()) == dim, Errc::invalid_parameter,
          "gaussian center has wrong dimension");
  SpatialProfile s;
  s.kind_ = Kind::gaussian;
  s.dim_ = dim;
  s.box_ = box;
  s.center_ = std::move(center);
  s.sigma_ = sigma;
  s.max_density_ = 1.0;
  const double k = sigma * std::sqrt(2.0);
  for (int a = 0; a < dim; ++a) {
    double c = s.center_[a];
    require(c >= 0.0 && c <= box, Errc::invalid_parameter, "gaussian center outside the box");
    double norm = sigma * std::sqrt(std::numbers::pi / 2.0) * (std::erf((box - c) / k) + std::erf(c / k));
    s.axis_norm_.push_back(norm);
    s.max_density_ /= norm;
  }
  return s;
}

double SpatialProfile::factor(int axis, double x) const {
  if (x < 0.0 || x > box_) return 0.0;
  if (kind_ == Kind::uniform) return 1.0 / box_;
  double z = (x - center_[axis]) / sigma_;
  return std::exp(-0.5 * z * z) / axis_norm_[axis];
}

double SpatialProfile::factor_integral(int axis, double a, double b) const {
  a = std::clamp(a, 0.0, box_);
  b = std::clamp(b, 0.0, box_);
  if (b <= a) return 0.0;
  if (kind_ == Kind::uniform) return (b - a) / box_;
  const double k = sigma_ * std::sqrt(2.0);
  const double c = center_[axis];
  return sigma_ * std::sqrt(std::numbers::pi / 2.0) * (std::erf((b - c) / k) - std::erf((a - c) / k)) /
         axis_norm_[axis];
}

double SpatialProfile::density(Point x) const {
  double v = 1.0;
  for (int a = 0; a < dim_; ++a) v *= factor(a, x[a]);
  return v;
}

// ---------------------------------------------------------------- mass profile

MassProfile MassProfile::exponential(double scale) {
  require(scale > 0.0, Errc::invalid_parameter, "exponential scale must be positive");
  MassProfile p;
  p.kind_ = Kind::exponential;
  p.p1_ = scale;
  p.lo_ = p.quantile(1e-12);
  p.hi_ = p.quantile(1.0 - 1e-15);
  p.build_table();
  return p;
}

MassProfile MassProfile::band(double center, double half_width) {
  require(half_width > 0.0 && center - half_width > 0.0, Errc::invalid_parameter,
          "mass band must lie in (0, inf) with positive width");
  MassProfile p;
  p.kind_ = Kind::band;
  p.p1_ = center;
  p.p2_ = half_width;
  p.lo_ = center - half_width;
  p.hi_ = center + half_width;
  p.build_table();
  return p;
}

double MassProfile::density(double n) const {
  if (kind_ == Kind::exponential) return n < 0.0 ? 0.0 : std::exp(-n / p1_) / p1_;
  return (n >= lo_ && n <= hi_) ? 0.5 / p2_ : 0.0;
}

double MassProfile::cdf(double n) const {
  if (kind_ == Kind::exponential) return n <= 0.0 ? 0.0 : -std::expm1(-n / p1_);
  if (n <= lo_) return 0.0;
  if (n >= hi_) return 1.0;
  return (n - lo_) / (2.0 * p2_);
}

double MassProfile::partial_mean(double n) const {
  if (kind_ == Kind::exponential) {
    if (n <= 0.0) return 0.0;
    return p1_ - (p1_ + n) * std::exp(-n / p1_);
  }
  double b = std::clamp(n, lo_, hi_);
  return (b * b - lo_ * lo_) / (4.0 * p2_);
}

double MassProfile::mean() const { return p1_; }

double MassProfile::quantile(double q) const {
  require(q >= 0.0 && q <= 1.0, Errc::invalid_parameter, "quantile level outside [0,1]");
  if (kind_ == Kind::exponential) return -p1_ * std::log1p(-q);
  return lo_ + 2.0 * p2_ * q;
}

void MassProfile::build_table() {
  constexpr int kKnots = 4096;
  knot_n_.resize(kKnots);
  knot_cdf_.resize(kKnots);
  const double ratio = std::log(hi_ / lo_);
  for (int i = 0; i < kKnots; ++i) {
    knot_n_[i] = lo_ * std::exp(ratio * i / (kKnots - 1));
    knot_cdf_[i] = cdf(knot_n_[i]);
  }
  knot_n_.back() = hi_;
}

double MassProfile::sample(double u) const {
  if (u <= knot_cdf_.front()) {
    return knot_cdf_.front() > 0.0 ? knot_n_.front() * u / knot_cdf_.front() : knot_n_.front();
  }
  if (u >= knot_cdf_.back()) return knot_n_.back();
  auto it = std::upper_bound(knot_cdf_.begin(), knot_cdf_.end(), u);
  std::size_t j = static_cast<std::size_t>(it - knot_cdf_.begin());
  double c0 = knot_cdf_[j - 1], c1 = knot_cdf_[j];
  double t = c1 > c0 ? (u - c0) / (c1 - c0) : 0.0;
  return knot_n_[j - 1] + t * (knot_n_[j] - knot_n_[j - 1]);
}

void MassProfile::quadrature(std::vector<double>& nodes, std::vector<double>& weights) const {
  std::vector<double> gx, gw;
  gauss_legendre(16, gx, gw);
  nodes.clear();
  weights.clear();
  auto panel = [&](double a, double b) {
    double c = 0.5 * (a + b), r = 0.5 * (b - a);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      double n = c + r * gx[i];
      nodes.push_back(n);
      weights.push_back(r * gw[i] * density(n));
    }
  };
  if (kind_ == Kind::exponential) {
    panel(0.0, lo_);
    const int panels = 64;
    for (int i = 0; i < panels; ++i) {
      double a = lo_ * std::pow(hi_ / lo_, static_cast<double>(i) / panels);
      double b = lo_ * std::pow(hi_ / lo_, static_cast<double>(i + 1) / panels);
      panel(a, b);
    }
  } else {
    const int panels = 8;
    for (int i = 0; i < panels; ++i) {
      panel(lo_ + (hi_ - lo_) * i / panels, lo_ + (hi_ - lo_) * (i + 1) / panels);
    }
  }
}

double MassProfile::expect(const std::function<double(double)>& g) const {
  std::vector<double> n, w;
  quadrature(n, w);
  double s = 0.0;
  for (std::size_t i = 0; i < n.size(); ++i) s += w[i] * g(n[i]);
  return s;
}

// ---------------------------------------------------------------- initial density

InitialDensity::InitialDensity(double Z, SpatialProfile space, MassProfile mass)
    : Z_(Z), space_(std::move(space)), mass_(std::move(mass)) {
  require(Z >= 0.0 && std::isfinite(Z), Errc::invalid_parameter, "Z must be finite and >= 0");
}

double InitialDensity::hat(Point x) const { return Z_ * space_.density(x) * (mass_.mean() + 1.0); }

double gamma_k(const ModelParams& model, int k, double m) {
  const int d = model.dim;
  return m * std::pow(model.diffusion(m), 0.5 * d) * std::pow(model.phi(m), 0.5 * k * d - 1.0);
}

double bar_h(const InitialDensity& h, const ModelParams& model, int k, Point x) {
  const int d = model.dim;
  double weight = h.mass().expect([&](double n) {
    return n * std::pow(model.diffusion(n), 0.5 * d - 1.0 / k) *
           std::pow(model.phi(n), 0.5 * d * k - 1.0);
  });
  return h.Z() * h.space().density(x) * weight;
}

void ModelParams::validate() const {
  require(dim >= 3, Errc::unsupported_dimension, "model dimension must be >= 3");
  require(V.dim() == dim, Errc::invalid_parameter, "interaction profile dimension mismatch");
  require(epsilon > 0.0 && epsilon < 1.0, Errc::invalid_parameter, "epsilon must lie in (0,1)");
  require(box > 0.0, Errc::invalid_parameter, "box side must be positive");
  require(epsilon < box / (4.0 * V.radius()), Errc::invalid_parameter,
          "epsilon must be below box/(4 C0)");
  require(Z > 0.0 && std::isfinite(Z), Errc::invalid_parameter, "Z must be positive");
  require(static_cast<bool>(diffusion.eval) && static_cast<bool>(phi.eval) &&
              static_cast<bool>(alpha.eval),
          Errc::invalid_parameter, "model coefficients missing");
  require(diffusion.upper_bound > 0.0, Errc::invalid_parameter, "diffusion bound must be positive");
}

// ---------------------------------------------------------------- particle system

std::size_t ParticleSystem::alive_count() const {
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
}

double ParticleSystem::total_mass() const {
  double s = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    if (alive[i]) s += mass[i];
  return s;
}

std::size_t ParticleSystem::add(std::uint64_t pid, const double* p, const std::int64_t* img,
                                double m) {
  id.push_back(pid);
  x.insert(x.end(), p, p + dim);
  if (img) {
    image.insert(image.end(), img, img + dim);
  } else {
    image.insert(image.end(), dim, 0);
  }
  mass.push_back(m);
  alive.push_back(1);
  return id.size() - 1;
}

void ParticleSystem::compact() {
  std::size_t out = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!alive[i]) continue;
    if (out != i) {
      id[out] = id[i];
      std::copy_n(x.begin() + i * dim, dim, x.begin() + out * dim);
      std::copy_n(image.begin() + i * dim, dim, image.begin() + out * dim);
      mass[out] = mass[i];
      alive[out] = 1;
    }
    ++out;
  }
  id.resize(out);
  x.resize(out * dim);
  image.resize(out * dim);
  mass.resize(out);
  alive.resize(out);
}

// ---------------------------------------------------------------- scales

double k_epsilon(double eps, int d) {
  require(eps > 0.0 && eps < 1.0, Errc::invalid_parameter, "epsilon must lie in (0,1)");
  require(d >= 2, Errc::unsupported_dimension, "k_epsilon needs d >= 2");
  if (d == 2) return std::abs(std::log(eps));
  return std::pow(eps, 2 - d);
}

double epsilon_for_count(double N, double Z, int d) {
  require(d >= 3, Errc::unsupported_dimension, "inverting |log eps| (d = 2) is not supported");
  require(Z > 0.0 && N > Z, Errc::invalid_parameter, "need N > Z > 0");
  return std::pow(Z / N, 1.0 / (d - 2));
}

// ---------------------------------------------------------------- phi construction

PhiFunction construct_phi(const DiffusionCoefficient& d, std::span<const double> partition,
                          double A) {
  require(A > 0.0, Errc::invalid_parameter, "phi anchor A must be positive");
  require(partition.size() >= 2, Errc::invalid_partition, "partition needs two points");
  for (std::size_t i = 1; i < partition.size(); ++i)
    require(partition[i] > partition[i - 1] && partition[0] > 0.0, Errc::invalid_partition,
            "partition must be positive and strictly increasing");

  struct Piece {
    double lo, hi;
    bool increasing;
    double level;  // phi*d on increasing pieces, phi on decreasing ones
  };
  std::vector<Piece> pieces;
  constexpr int kProbe = 64;
  double phi_left = 0.0;
  for (std::size_t i = 0; i + 1 < partition.size(); ++i) {
    const double lo = partition[i], hi = partition[i + 1];
    bool up = true, down = true;
    double prev = d(lo);
    for (int s = 1; s <= kProbe; ++s) {
      double cur = d(lo + (hi - lo) * s / kProbe);
      double tol = 1e-12 * std::max(std::abs(cur), std::abs(prev));
      if (cur < prev - tol) up = false;
      if (cur > prev + tol) down = false;
      prev = cur;
    }
    require(up || down, Errc::invalid_partition,
            "d is not monotone on [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    const bool increasing = up && !down;  // flat pieces count as decreasing
    Piece p{lo, hi, increasing, 0.0};
    if (i == 0) {
      p.level = A;
    } else {
      p.level = increasing ? phi_left * d(lo) : phi_left;
    }
    phi_left = increasing ? p.level / d(hi) : p.level;
    pieces.push_back(p);
  }
  auto eval = [pieces, d](double m) {
    const Piece* p = &pieces.front();
    if (m >= pieces.back().hi) {
      p = &pieces.back();
      m = p->hi;
    } else if (m <= p->lo) {
      m = p->lo;
    } else {
      for (const auto& q : pieces)
        if (m <= q.hi) {
          p = &q;
          break;
        }
    }
    return p->increasing ? p->level / d(m) : p->level;
  };
  return {eval};
}

// ---------------------------------------------------------------- hypothesis checks

bool HypothesisReport::all_pass() const {
  return std::all_of(items.begin(), items.end(), [](const auto& it) { return it.pass; });
}

const HypothesisItem& HypothesisReport::item(const std::string& name) const {
  for (const auto& it : items)
    if (it.name == name) return it;
  fail(Errc::invalid_parameter, "no hypothesis item named " + name);
}

using detail::OffsetKernel;
using detail::cell_coords;
using detail::convolve_offsets;

HypothesisReport check_hypotheses(const ModelParams& model, const InitialDensity& h,
                                  double mass_cap, const CheckGrid& grid) {
  HypothesisReport rep;
  const int d = model.dim;
  const double T = grid.threshold;
  auto add = [&](std::string name, double est, double thr, bool pass) {
    rep.items.push_back({std::move(name), est, thr, pass && std::isfinite(est)});
  };

  add("Z_positive", h.Z(), 0.0, h.Z() > 0.0);
  add("V_normalization", model.V.normalization_error(), 1e-6,
      model.V.normalization_error() <= 1e-6);

  // Mass grid: coagulation never produces masses below the smallest initial one.
  const double m_lo = std::max(h.mass().quantile(grid.mass_quantile), 1e-300);
  const double m_hi = grid.mass_top_factor * std::max(mass_cap, h.mass().upper());
  std::vector<double> masses(grid.mass_points);
  for (int i = 0; i < grid.mass_points; ++i)
    masses[i] = m_lo * std::pow(m_hi / m_lo, static_cast<double>(i) / (grid.mass_points - 1));

  double d_min = std::numeric_limits<double>::infinity(), d_max = 0.0;
  double phi_rise = 0.0, phid_rise = 0.0, asym = 0.0;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    double dm = model.diffusion(masses[i]);
    d_min = std::min(d_min, dm);
    d_max = std::max(d_max, dm);
    if (i > 0) {
      double p0 = model.phi(masses[i - 1]), p1 = model.phi(masses[i]);
      double q0 = p0 * model.diffusion(masses[i - 1]), q1 = p1 * dm;
      phi_rise = std::max(phi_rise, (p1 - p0) / p0);
      phid_rise = std::max(phid_rise, (q1 - q0) / q0);
    }
    for (std::size_t j = 0; j < masses.size(); j += 7) {
      double a = model.alpha(masses[i], masses[j]), b = model.alpha(masses[j], masses[i]);
      asym = std::max(asym, std::abs(a - b));
    }
  }
  add("d_positive_bounded", d_max, model.diffusion.upper_bound,
      d_min > 0.0 && d_max <= model.diffusion.upper_bound * (1.0 + 1e-12));
  add("phi_nonincreasing", phi_rise, 1e-12, phi_rise <= 1e-12);
  add("phi_d_nonincreasing", phid_rise, 1e-12, phid_rise <= 1e-12);
  add("alpha_symmetric", asym, 1e-12, asym <= 1e-12);

  double ratio = 0.0;
  for (double n : masses) {
    if (n > mass_cap) break;
    for (double m : masses) {
      double den = m * std::pow(model.diffusion(m), 0.5 * d) * std::pow(model.phi(m), d - 1.0);
      ratio = std::max(ratio, model.alpha(n, m) / den);
    }
  }
  if (m_lo > mass_cap) ratio = 0.0;
  add("alpha_ratio_sup", ratio, T, ratio <= T);

  // Spatial conditions on a uniform grid of the box; h vanishes outside the box.
  const int M = grid.spatial_cells;
  const double dx = model.box / M;
  const auto coords = cell_coords(M, d);
  const std::size_t ncell = coords.size() / d;
  std::vector<double> s(ncell);
  std::vector<double> p(d);
  for (std::size_t c = 0; c < ncell; ++c) {
    for (int k = 0; k < d; ++k) p[k] = (coords[c * d + k] + 0.5) * dx;
    s[c] = h.space().density(p);
  }
  for (int k = 2; k <= 4; ++k) {
    const double weight = h.Z() * h.mass().expect([&](double n) {
      return n * std::pow(model.diffusion(n), 0.5 * d - 1.0 / k) *
             std::pow(model.phi(n), 0.5 * d * k - 1.0);
    });
    std::vector<double> bar(ncell);
    for (std::size_t c = 0; c < ncell; ++c) bar[c] = weight * s[c];
    OffsetKernel K(M, d, dx, d - 2.0 / k);
    auto conv = convolve_offsets(K, coords, bar);
    double sup = *std::max_element(conv.begin(), conv.end());
    add("hbar_conv_k" + std::to_string(k), sup, T, sup <= T);
  }
  {
    std::vector<double> hat(ncell);
    const double w = h.Z() * (h.mass().mean() + 1.0);
    for (std::size_t c = 0; c < ncell; ++c) hat[c] = w * s[c];
    OffsetKernel K(M, d, dx, d - 2.0);
    auto conv = convolve_offsets(K, coords, hat);
    double energy = 0.0;
    for (std::size_t c = 0; c < ncell; ++c) energy += hat[c] * conv[c];
    energy *= std::pow(dx, d);
    add("riesz_energy", energy, T, energy <= T);
  }

  // Entropy-side moments.
  std::vector<double> mn, mw;
  h.mass().quadrature(mn, mw);
  double moment = 0.0, rho_int = 0.0;
  if (h.Z() > 0.0) {
    const double cell = std::pow(dx, d);
    const auto& ctr = h.space().center();
    double x2 = 0.0;
    for (std::size_t c = 0; c < ncell; ++c) {
      if (s[c] <= 0.0) continue;
      double r2 = 0.0;
      for (int k = 0; k < d; ++k) {
        double z = (coords[c * d + k] + 0.5) * dx - ctr[k];
        r2 += z * z;
      }
      x2 += r2 * s[c] * cell;
    }
    double tau_log = 0.0, logh = 0.0;
    for (std::size_t i = 0; i < mn.size(); ++i) {
      if (mw[i] <= 0.0) continue;
      tau_log += mw[i] * std::abs(std::log(model.tau(mn[i])));
      rho_int += mw[i] * rho_of_n(model.alpha, model.tau, mn[i]);
    }
    for (std::size_t c = 0; c < ncell; ++c) {
      if (s[c] <= 0.0) continue;
      double acc = 0.0;
      for (std::size_t i = 0; i < mn.size(); ++i) {
        double pn = h.mass().density(mn[i]);
        if (pn <= 0.0) continue;
        acc += mw[i] * std::abs(std::log(h.Z() * s[c] * pn));
      }
      logh += acc * s[c] * cell;
    }
    moment = h.Z() * (x2 + tau_log + logh);
    rho_int *= h.Z();
  }
  add("entropy_moment", moment, T, moment <= T);
  add("rho_moment", rho_int, T, rho_int <= T);
  return rep;
}

double rho_of_n(const CoagulationPropensity& alpha, const std::function<double(double)>& tau,
                double n) {
  require(n >= 0.0, Errc::invalid_parameter, "rho needs n >= 0");
  const double tn = tau(n);
  require(tn != 0.0, Errc::division_by_zero, "tau(n) = 0");
  if (n == 0.0) return 0.0;
  // Substituting m = n s keeps the integrand O(1) as n -> 0.
  auto f = [&](double s) { return alpha(n * s, n * (1.0 - s)) * tau(n * s) * tau(n * (1.0 - s)); };
  double err = 0.0;
  double v = gauss_kronrod<double, 31>::integrate(f, 0.0, 1.0, 20, 1e-10, &err);
  return n * v / tn;
}

// ---------------------------------------------------------------- sampling

ParticleSystem sample_initial(const InitialDensity& h, const ModelParams& model, SamplingMode mode,
                              std::uint64_t seed) {
  require(h.Z() > 0.0 && std::isfinite(h.Z()), Errc::sampling,
          "initial density is not normalizable (Z = 0)");
  require(h.space().dim() == model.dim, Errc::sampling, "initial density dimension mismatch");
  const double mean = k_epsilon(model.epsilon, model.dim) * h.Z();
  const auto N0 = static_cast<std::uint64_t>(std::llround(mean));
  require(N0 >= 1, Errc::sampling, "k_eps Z rounds to zero particles");

  std::uint64_t count = N0;
  if (mode == SamplingMode::poisson) {
    KeyedStream rng(seed, StreamTag::init_count, 0);
    boost::random::poisson_distribution<std::uint64_t, double> pois(static_cast<double>(N0));
    count = pois(rng);
  }

  ParticleSystem st;
  st.dim = model.dim;
  st.box = model.box;
  st.epsilon = model.epsilon;
  st.seed = seed;
  st.id.reserve(count);
  st.x.reserve(count * st.dim);
  const double smax = h.space().max_density();
  std::vector<double> p(st.dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    KeyedStream rng(seed, StreamTag::init_particle, i);
    const double m = h.mass().sample(rng.uniform());
    bool placed = false;
    for (int attempt = 0; attempt < 1000000 && !placed; ++attempt) {
      for (int k = 0; k < st.dim; ++k) p[k] = model.box * rng.uniform();
      placed = rng.uniform() * smax <= h.space().density(p);
    }
    require(placed, Errc::sampling, "rejection sampling in space did not terminate");
    st.add(i, p.data(), nullptr, m);
  }
  st.next_id = count;
  return st;
}

}  // namespace coag
