#include "coag/particles.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "coag/random.hpp"
#include "riesz_grid.hpp"

namespace coag::sim {

// ---------------------------------------------------------------- config

void SimConfig::validate(const ModelParams& model) const {
  require(c_dt > 0.0 && c_dt <= 0.5, Errc::invalid_parameter, "c_dt must lie in (0, 0.5]");
  require(T >= 0.0 && std::isfinite(T), Errc::invalid_parameter, "horizon must be finite");
  require(cell_side == 0.0 || cell_side >= model.V.radius() * model.epsilon, Errc::invalid_parameter,
          "cell side below the interaction radius");
  for (double t : snapshots)
    require(t >= 0.0 && t <= T * (1.0 + 1e-12), Errc::invalid_parameter,
            "snapshot time outside [0, T]");
}

double SimConfig::dt(const ModelParams& model) const {
  return c_dt * model.epsilon * model.epsilon / (2.0 * model.diffusion.upper_bound);
}

std::uint64_t SimConfig::steps(const ModelParams& model) const {
  return static_cast<std::uint64_t>(std::llround(T / dt(model)));
}

// ---------------------------------------------------------------- cell list

CellGrid::CellGrid(const ParticleSystem& st, double radius, double min_side)
    : radius_(radius), box_(st.box), dim_(st.dim) {
  require(radius > 0.0, Errc::invalid_parameter, "search radius must be positive");
  const double want = std::max(radius, min_side);
  n_ = std::max(1, static_cast<int>(std::floor(box_ / want)));
  side_ = box_ / n_;
  brute_ = n_ < 3;
  cell_.assign(st.size(), 0);
  if (brute_) return;
  sorted_.reserve(st.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    std::size_t key = 0;
    for (int k = 0; k < dim_; ++k) {
      int c = std::min(n_ - 1, static_cast<int>(st.pos(i)[k] / side_));
      key = key * n_ + static_cast<std::size_t>(c);
    }
    cell_[i] = key;
    sorted_.emplace_back(key, i);
  }
  std::sort(sorted_.begin(), sorted_.end());
  for (std::size_t p = 0; p < sorted_.size(); ++p) {
    if (p == 0 || sorted_[p].first != sorted_[p - 1].first) {
      keys_.push_back(sorted_[p].first);
      starts_.push_back(p);
    }
  }
  starts_.push_back(sorted_.size());
}

void CellGrid::for_each_pair(
    const ParticleSystem& st,
    const std::function<void(std::size_t, std::size_t, const double*)>& fn) const {
  std::vector<double> dx(dim_);
  const double r2max = radius_ * radius_;
  auto test = [&](std::size_t a, std::size_t b) {
    std::size_t i = std::min(a, b), j = std::max(a, b);
    double r2 = 0.0;
    for (int k = 0; k < dim_; ++k) {
      dx[k] = min_image(st.pos(j)[k] - st.pos(i)[k], box_);
      r2 += dx[k] * dx[k];
    }
    if (r2 <= r2max) fn(i, j, dx.data());
  };

  if (brute_) {
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (!st.alive[i]) continue;
      for (std::size_t j = i + 1; j < st.size(); ++j)
        if (st.alive[j]) test(i, j);
    }
    return;
  }

  int noff = 1;
  for (int k = 0; k < dim_; ++k) noff *= 3;
  std::vector<int> coord(dim_);
  for (std::size_t u = 0; u < keys_.size(); ++u) {
    const std::size_t key = keys_[u];
    std::size_t r = key;
    for (int k = dim_ - 1; k >= 0; --k) {
      coord[k] = static_cast<int>(r % n_);
      r /= n_;
    }
    for (int o = 0; o < noff; ++o) {
      std::size_t nk = 0;
      int code = o;
      for (int k = 0; k < dim_; ++k) {
        const int shift = code % 3 - 1;
        code /= 3;
        nk = nk * n_ + static_cast<std::size_t>((coord[k] + shift + n_) % n_);
      }
      if (nk < key) continue;
      if (nk == key) {
        for (std::size_t p = starts_[u]; p < starts_[u + 1]; ++p)
          for (std::size_t q = p + 1; q < starts_[u + 1]; ++q)
            test(sorted_[p].second, sorted_[q].second);
        continue;
      }
      auto it = std::lower_bound(keys_.begin(), keys_.end(), nk);
      if (it == keys_.end() || *it != nk) continue;
      const std::size_t v = static_cast<std::size_t>(it - keys_.begin());
      for (std::size_t p = starts_[u]; p < starts_[u + 1]; ++p)
        for (std::size_t q = starts_[v]; q < starts_[v + 1]; ++q)
          test(sorted_[p].second, sorted_[q].second);
    }
  }
}

std::vector<std::pair<std::size_t, std::size_t>> brute_force_pairs(const ParticleSystem& st,
                                                                   double radius) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const double r2max = radius * radius;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    for (std::size_t j = i + 1; j < st.size(); ++j) {
      if (!st.alive[j]) continue;
      double r2 = 0.0;
      for (int k = 0; k < st.dim; ++k) {
        double d = min_image(st.pos(j)[k] - st.pos(i)[k], st.box);
        r2 += d * d;
      }
      if (r2 <= r2max) out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> cell_list_pairs(const ParticleSystem& st,
                                                                 double radius) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  CellGrid grid(st, radius);
  grid.for_each_pair(st, [&](std::size_t i, std::size_t j, const double*) { out.emplace_back(i, j); });
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- dynamics

namespace {

struct Fired {
  double priority;
  std::uint64_t lo, hi;
  std::size_t i, j;  // i carries the lower id
  double side_draw;
};

}  // namespace

void step(ParticleSystem& st, const SimConfig& cfg, const ModelParams& model,
          const StepHooks& hooks) {
  const double dt = cfg.dt(model);
  const int dim = st.dim;
  const double L = st.box;

  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    KeyedStream rng(st.seed, StreamTag::diffusion, st.id[i], st.step);
    const double s = std::sqrt(2.0 * model.diffusion(st.mass[i]) * dt);
    double* p = st.pos(i);
    for (int k = 0; k < dim; ++k) {
      double v = p[k] + s * rng.normal();
      require(std::isfinite(v), Errc::numerical_fault, "non-finite particle position");
      const double wraps = std::floor(v / L);
      v -= wraps * L;
      if (v >= L) v -= L;  // rounding at the upper edge
      p[k] = v;
      st.image[i * dim + k] += static_cast<std::int64_t>(wraps);
    }
  }

  std::vector<PairRate> pairs;
  if (!model.alpha.identically_zero) {
    const double eps = model.epsilon;
    const double radius = model.V.radius() * eps;
    CellGrid grid(st, radius, cfg.cell_side);
    std::vector<double> y(dim), ny(dim);
    grid.for_each_pair(st, [&](std::size_t i, std::size_t j, const double* dx) {
      for (int k = 0; k < dim; ++k) {
        y[k] = dx[k] / eps;
        ny[k] = -y[k];
      }
      const double v = model.V(y) + model.V(ny);
      if (v <= 0.0) return;
      const double rate = v * model.alpha(st.mass[i], st.mass[j]) / (eps * eps);
      if (rate > 0.0) pairs.push_back({i, j, rate});
    });
  }
  if (hooks.pairs) hooks.pairs(st, pairs, dt);

  std::vector<Fired> fired;
  for (const PairRate& pr : pairs) {
    std::size_t i = pr.i, j = pr.j;
    if (st.id[i] > st.id[j]) std::swap(i, j);
    KeyedStream rng(st.seed, StreamTag::pair, st.id[i], st.id[j], st.step);
    const double u = rng.uniform();
    const double prio = rng.uniform();
    const double side = rng.uniform();
    if (u < -std::expm1(-pr.rate * dt)) fired.push_back({prio, st.id[i], st.id[j], i, j, side});
  }
  std::sort(fired.begin(), fired.end(), [](const Fired& a, const Fired& b) {
    if (a.priority != b.priority) return a.priority < b.priority;
    if (a.lo != b.lo) return a.lo < b.lo;
    return a.hi < b.hi;
  });

  if (!fired.empty()) {
    std::vector<std::uint8_t> used(st.size(), 0);
    for (const Fired& f : fired) {
      if (used[f.i] || used[f.j]) continue;
      used[f.i] = used[f.j] = 1;
      const double mi = st.mass[f.i], mj = st.mass[f.j];
      const int side = f.side_draw < mi / (mi + mj) ? 0 : 1;
      const std::size_t at = side == 0 ? f.i : f.j;
      std::vector<double> p(st.pos(at), st.pos(at) + dim);
      std::vector<std::int64_t> img(st.image.begin() + at * dim, st.image.begin() + (at + 1) * dim);
      st.alive[f.i] = st.alive[f.j] = 0;
      const std::uint64_t sid = st.next_id++;
      st.add(sid, p.data(), img.data(), mi + mj);
      used.push_back(1);
      if (hooks.events) hooks.events->push_back({st.time + dt, f.lo, f.hi, mi, mj, side, sid});
    }
    st.compact();
  }
  st.time += dt;
  st.step += 1;
}

RunResult run(ParticleSystem init, const SimConfig& cfg, const ModelParams& model,
              RunHooks hooks) {
  cfg.validate(model);
  const double dt = cfg.dt(model);
  const std::uint64_t steps = cfg.steps(model);
  std::vector<std::uint64_t> marks;
  for (double t : cfg.snapshots) marks.push_back(static_cast<std::uint64_t>(std::llround(t / dt)));

  RunResult out;
  out.snapshots.resize(cfg.snapshots.size());
  StepHooks sh = hooks.step;
  if (!sh.events) sh.events = &out.events;
  ParticleSystem st = std::move(init);
  for (std::uint64_t s = 0;; ++s) {
    if (hooks.state) hooks.state(st);
    for (std::size_t k = 0; k < marks.size(); ++k)
      if (marks[k] == s) out.snapshots[k] = st;
    if (s == steps) break;
    step(st, cfg, model, sh);
  }
  out.final = std::move(st);
  return out;
}

std::vector<double> unwrapped(const ParticleSystem& st, std::size_t i) {
  std::vector<double> out(st.dim);
  for (int k = 0; k < st.dim; ++k)
    out[k] = st.pos(i)[k] + static_cast<double>(st.image[i * st.dim + k]) * st.box;
  return out;
}

// ---------------------------------------------------------------- empirical functionals

namespace {

double particle_weight(const ParticleSystem& st) { return std::pow(st.epsilon, st.dim - 2); }

}  // namespace

EmpiricalSnapshot empirical_measure(const ParticleSystem& st) {
  EmpiricalSnapshot snap;
  snap.time = st.time;
  snap.weight = particle_weight(st);
  std::vector<double> masses;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    snap.x.insert(snap.x.end(), st.pos(i), st.pos(i) + st.dim);
    snap.mass.push_back(st.mass[i]);
  }
  snap.total_number = snap.weight * static_cast<double>(snap.mass.size());
  snap.total_mass = snap.weight * ordered_sum(snap.mass);
  return snap;
}

InteractionProfile default_mollifier(int dim) { return InteractionProfile::bump(dim, 1.0); }

std::vector<double> mollified_density(const ParticleSystem& st, double delta,
                                      const InteractionProfile& xi, std::span<const double> query,
                                      std::span<const double> mass_edges) {
  require(delta > 0.0, Errc::invalid_parameter, "delta must be positive");
  require(mass_edges.size() >= 2, Errc::invalid_parameter, "need at least one mass bin");
  require(xi.dim() == st.dim, Errc::invalid_parameter, "mollifier dimension mismatch");
  if (delta < 5.0 * st.epsilon)
    std::clog << "warning: mollification scale " << delta << " is below 5 eps\n";
  const int dim = st.dim;
  const std::size_t nq = query.size() / dim;
  const std::size_t nb = mass_edges.size() - 1;
  const double scale = particle_weight(st) * std::pow(delta, -dim);
  const double reach = xi.radius() * delta;
  std::vector<double> out(nq * nb, 0.0);
  std::vector<double> y(dim);
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    auto it = std::upper_bound(mass_edges.begin(), mass_edges.end(), st.mass[i]);
    if (it == mass_edges.begin() || it == mass_edges.end()) continue;
    const std::size_t b = static_cast<std::size_t>(it - mass_edges.begin()) - 1;
    for (std::size_t q = 0; q < nq; ++q) {
      double r2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        y[k] = min_image(st.pos(i)[k] - query[q * dim + k], st.box);
        r2 += y[k] * y[k];
      }
      if (r2 >= reach * reach) continue;
      for (int k = 0; k < dim; ++k) y[k] /= delta;
      out[q * nb + b] += scale * xi(y);
    }
  }
  return out;
}

MassMoments mass_moments(const ParticleSystem& st, double r, double m0) {
  std::vector<double> m, mr, heavy;
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    m.push_back(st.mass[i]);
    mr.push_back(std::pow(st.mass[i], r));
    heavy.push_back(st.mass[i] > m0 ? st.mass[i] : 0.0);
  }
  const double w = particle_weight(st);
  MassMoments out;
  out.count = w * static_cast<double>(m.size());
  const double total = ordered_sum(m);
  out.mass = w * total;
  out.moment = w * ordered_sum(mr);
  out.heavy_fraction = total > 0.0 ? ordered_sum(heavy) / total : 0.0;
  return out;
}

Estimate summarize(std::vector<double> samples) {
  Estimate e;
  e.samples = std::move(samples);
  const std::size_t n = e.samples.size();
  if (n == 0) return e;
  e.mean = ordered_sum(e.samples) / static_cast<double>(n);
  if (n > 1) {
    std::vector<double> sq(n);
    for (std::size_t i = 0; i < n; ++i) sq[i] = (e.samples[i] - e.mean) * (e.samples[i] - e.mean);
    e.se = std::sqrt(ordered_sum(sq) / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return e;
}

CollisionResult collision_functional(const InitialDensity& h, const ModelParams& model,
                                     const SimConfig& cfg, std::span<const std::uint64_t> seeds,
                                     SamplingMode mode) {
  require(!seeds.empty(), Errc::invalid_parameter, "no seeds");
  SimConfig c = cfg;
  if (c.snapshots.empty() || std::abs(c.snapshots.back() - c.T) > 1e-12 * std::max(1.0, c.T))
    c.snapshots.push_back(c.T);
  c.validate(model);
  const double dt = c.dt(model);
  std::vector<std::uint64_t> marks;
  for (double t : c.snapshots) marks.push_back(static_cast<std::uint64_t>(std::llround(t / dt)));

  std::vector<std::vector<double>> per_time(c.snapshots.size());
  for (std::uint64_t seed : seeds) {
    double acc = 0.0;
    std::uint64_t s = 0;
    RunHooks hooks;
    const double w = std::pow(model.epsilon, model.dim - 2);
    hooks.step.pairs = [&](const ParticleSystem&, std::span<const PairRate> pairs, double h_dt) {
      std::vector<double> r(pairs.size());
      for (std::size_t p = 0; p < pairs.size(); ++p) r[p] = pairs[p].rate;
      acc += h_dt * w * ordered_sum(r);
    };
    hooks.state = [&](const ParticleSystem&) {
      for (std::size_t k = 0; k < marks.size(); ++k)
        if (marks[k] == s) per_time[k].push_back(acc);
      ++s;
    };
    std::vector<EventRecord> sink;
    hooks.step.events = &sink;
    SimConfig rc = c;
    rc.snapshots.clear();
    run(sample_initial(h, model, mode, seed), rc, model, hooks);
  }
  CollisionResult out;
  out.times = c.snapshots;
  for (auto& v : per_time) out.values.push_back(summarize(std::move(v)));
  return out;
}

// ---------------------------------------------------------------- correlation bound

double distinct_product_sum(const std::vector<std::vector<double>>& a) {
  const std::size_t k = a.size();
  require(k >= 1 && k <= 3, Errc::unsupported_dimension, "distinct sums implemented for k <= 3");
  const std::size_t n = a[0].size();
  auto sum_of = [&](auto&& term) {
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = term(i);
    return ordered_sum(t);
  };
  if (k == 1) return sum_of([&](std::size_t i) { return a[0][i]; });
  const double s0 = sum_of([&](std::size_t i) { return a[0][i]; });
  const double s1 = sum_of([&](std::size_t i) { return a[1][i]; });
  const double s01 = sum_of([&](std::size_t i) { return a[0][i] * a[1][i]; });
  if (k == 2) return s0 * s1 - s01;
  const double s2 = sum_of([&](std::size_t i) { return a[2][i]; });
  const double s02 = sum_of([&](std::size_t i) { return a[0][i] * a[2][i]; });
  const double s12 = sum_of([&](std::size_t i) { return a[1][i] * a[2][i]; });
  const double s012 = sum_of([&](std::size_t i) { return a[0][i] * a[1][i] * a[2][i]; });
  return s0 * s1 * s2 - s01 * s2 - s02 * s1 - s12 * s0 + 2.0 * s012;
}

CorrelationResult correlation_check(const ModelParams& model, const InitialDensity& h,
                                    const ProductKernel& K, int k,
                                    std::span<const std::uint64_t> seeds,
                                    const CorrelationOptions& opt) {
  require(k == 2 || k == 3, Errc::unsupported_dimension, "correlation check supports k = 2, 3");
  require(model.dim >= 3, Errc::unsupported_dimension, "correlation check needs d >= 3");
  require(static_cast<int>(K.factors.size()) == k, Errc::invalid_parameter,
          "kernel needs one factor per slot");
  require(!seeds.empty(), Errc::invalid_parameter, "no seeds");
  const int d = model.dim;
  CorrelationResult out;

  SimConfig cfg;
  cfg.c_dt = opt.c_dt;
  cfg.T = opt.T;
  const double dt = cfg.dt(model);
  const double weight = std::pow(model.epsilon, k * (d - 2));

  std::vector<double> lhs, gamma_sums;
  double d_min = model.diffusion.upper_bound;
  for (std::uint64_t seed : seeds) {
    std::vector<double> values;
    RunHooks hooks;
    hooks.state = [&](const ParticleSystem& st) {
      std::vector<std::vector<double>> a(k);
      for (std::size_t i = 0; i < st.size(); ++i) {
        if (!st.alive[i]) continue;
        const Point x{st.pos(i), static_cast<std::size_t>(d)};
        const double g = gamma_k(model, k, st.mass[i]);
        for (int r = 0; r < k; ++r) a[r].push_back(K.factors[r](x) * g);
      }
      values.push_back(weight * (a[0].empty() ? 0.0 : distinct_product_sum(a)));
    };
    std::vector<EventRecord> sink;
    hooks.step.events = &sink;
    ParticleSystem init = sample_initial(h, model, opt.mode, seed);
    std::vector<double> g0;
    for (std::size_t i = 0; i < init.size(); ++i) {
      g0.push_back(gamma_k(model, k, init.mass[i]));
      d_min = std::min(d_min, model.diffusion(init.mass[i]));
    }
    gamma_sums.push_back(std::pow(model.epsilon, d - 2) * ordered_sum(g0));
    run(std::move(init), cfg, model, hooks);
    // Trapezoid over the step grid.
    if (!values.empty()) {
      values.front() *= 0.5;
      values.back() *= 0.5;
    }
    lhs.push_back(dt * ordered_sum(values));
  }
  out.lhs = summarize(std::move(lhs));

  // Right side on a cell grid over the box, bar h extended by zero outside it.
  const int M = opt.rhs_cells;
  const double dx = model.box / M;
  const auto coords = detail::cell_coords(M, d);
  const std::size_t ncell = coords.size() / d;
  std::vector<double> bar(ncell), x(d);
  std::vector<std::vector<double>> kv(k, std::vector<double>(ncell));
  for (std::size_t c = 0; c < ncell; ++c) {
    for (int a = 0; a < d; ++a) x[a] = (coords[c * d + a] + 0.5) * dx;
    bar[c] = bar_h(h, model, k, x);
    for (int r = 0; r < k; ++r) kv[r][c] = K.factors[r](x);
  }
  detail::OffsetKernel lam(M, d, dx, d - 2.0 / k);
  const auto conv = detail::convolve_offsets(lam, coords, bar);
  const double cell = std::pow(dx, d);
  double rhs = newton_constant(k * d), knorm = 1.0;
  for (int r = 0; r < k; ++r) {
    std::vector<double> t(ncell), u(ncell);
    for (std::size_t c = 0; c < ncell; ++c) {
      t[c] = kv[r][c] * conv[c] * cell;
      u[c] = kv[r][c] * cell;
    }
    rhs *= ordered_sum(t);
    knorm *= ordered_sum(u);
  }
  out.rhs = rhs;
  out.k_norm_l1 = knorm;

  // Beyond T each particle density is at most (4 pi d_min t)^{-d/2}.
  const double S = summarize(gamma_sums).mean;
  const double e = 0.5 * k * d;
  out.tail_bound = std::pow(S, k) * knorm * std::pow(4.0 * std::numbers::pi * d_min, -e) *
                   std::pow(opt.T, 1.0 - e) / (e - 1.0);
  return out;
}

// ---------------------------------------------------------------- hat-form gap

std::pair<double, double> ProductTestFunction::hat_coefficients(double m, double n) const {
  const double M = m + n;
  if (M < 1.0 / L || std::max(m, n) > L) return {0.0, 0.0};
  const double cM = mass(M);
  return {m / M * cM - mass(m), n / M * cM - mass(n)};
}

Theorem21Accumulator::Theorem21Accumulator(const ModelParams& model,
                                           const kernel::EffectiveKernelTable& table,
                                           const kernel::SupportGrid& grid, ProductTestFunction J,
                                           double delta, int hat_stride)
    : model_(model), table_(table), grid_(grid), J_(std::move(J)), delta_(delta),
      stride_(std::max(1, hat_stride)), xi_(default_mollifier(model.dim)) {
  require(delta > 2.0 * model.epsilon, Errc::resolution, "delta must exceed 2 eps");
  require(grid.dim() == model.dim, Errc::invalid_parameter, "support grid dimension mismatch");
  G_ = std::max(4, static_cast<int>(std::llround(4.0 * model.box / delta)));
  hq_ = model.box / G_;
  require(2 * (static_cast<int>(std::ceil(delta / hq_)) + 1) <= G_, Errc::resolution,
          "mollifier support wraps the periodic box");
  std::size_t n = 1;
  for (int k = 0; k < model.dim; ++k) n *= static_cast<std::size_t>(G_);
  b_.resize(n);
  std::vector<double> x(model.dim);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t r = c;
    for (int k = model.dim - 1; k >= 0; --k) {
      x[k] = (static_cast<double>(r % G_) + 0.5) * hq_;
      r /= G_;
    }
    b_[c] = J_.space(x);
  }
}

const Theorem21Accumulator::Stencil& Theorem21Accumulator::stencil(double a) const {
  auto it = stencils_.find(a);
  if (it != stencils_.end()) return it->second;
  const auto sol = kernel::solve_w(a, grid_);
  const int d = model_.dim;
  std::map<std::vector<int>, double> bins;
  std::vector<int> off(d);
  double total = 0.0;
  for (std::size_t q = 0; q < grid_.size(); ++q) {
    const Point y = grid_.node(q);
    for (int k = 0; k < d; ++k)
      off[k] = static_cast<int>(std::llround(model_.epsilon * y[k] / hq_));
    const double u = grid_.V_values()[q] * (1.0 + sol.w[q]);
    bins[off] += u;
    total += u;
  }
  Stencil s;
  const double scale = table_.I(a) / total;
  for (const auto& [o, v] : bins) {
    s.offsets.push_back(o);
    s.weights.push_back(v * scale);
  }
  return stencils_.emplace(a, std::move(s)).first->second;
}

void Theorem21Accumulator::on_pairs(const ParticleSystem& st, std::span<const PairRate> pairs,
                                    double dt) {
  dt_ = dt;
  const int d = st.dim;
  const double chi = J_.chi(st.time);
  std::vector<double> terms;
  terms.reserve(pairs.size());
  for (const PairRate& p : pairs) {
    auto [A, B] = J_.hat_coefficients(st.mass[p.i], st.mass[p.j]);
    if (A == 0.0 && B == 0.0) continue;
    const Point xi{st.pos(p.i), static_cast<std::size_t>(d)};
    const Point xj{st.pos(p.j), static_cast<std::size_t>(d)};
    terms.push_back(p.rate * chi * (A * J_.space(xi) + B * J_.space(xj)));
  }
  gamma_ += dt * std::pow(st.epsilon, d - 2) * ordered_sum(terms);
}

void Theorem21Accumulator::on_state(const ParticleSystem& st) {
  if (state_count_++ % static_cast<std::uint64_t>(stride_) != 0) return;
  hat_times_.push_back(st.time);
  hat_values_.push_back(hat_gamma(st));
}

double Theorem21Accumulator::hat_integral() const {
  std::vector<double> t;
  for (std::size_t s = 0; s + 1 < hat_times_.size(); ++s)
    t.push_back(0.5 * (hat_times_[s + 1] - hat_times_[s]) * (hat_values_[s] + hat_values_[s + 1]));
  return ordered_sum(t);
}

double Theorem21Accumulator::hat_gamma(const ParticleSystem& st) const {
  const int d = st.dim;
  const int G = G_;
  const double chi = J_.chi(st.time);
  if (chi == 0.0) return 0.0;

  // Sparse per-particle xi^delta on a local box, discretely normalized.
  struct Local {
    std::vector<int> origin;                 // unwrapped grid coordinate of the box corner
    std::vector<std::vector<int>> cells;     // unwrapped coordinates
    std::vector<double> values;
    std::size_t index;                       // particle
  };
  const double reach = xi_.radius() * delta_;
  const int span = static_cast<int>(std::ceil(reach / hq_)) + 1;
  const int width = 2 * span;
  std::vector<Local> parts;
  std::vector<int> idx(d), g(d);
  std::vector<double> y(d);
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    Local L;
    L.index = i;
    L.origin.resize(d);
    for (int k = 0; k < d; ++k)
      L.origin[k] = static_cast<int>(std::floor(st.pos(i)[k] / hq_ - 0.5)) - span + 1;
    double norm = 0.0;
    std::fill(idx.begin(), idx.end(), 0);
    while (true) {
      double r2 = 0.0;
      for (int k = 0; k < d; ++k) {
        g[k] = L.origin[k] + idx[k];
        y[k] = min_image(st.pos(i)[k] - (g[k] + 0.5) * hq_, st.box) / delta_;
        r2 += y[k] * y[k];
      }
      if (r2 < 1.0) {
        const double v = xi_(y);
        L.cells.push_back(g);
        L.values.push_back(v);
        norm += v;
      }
      int k = 0;
      while (k < d && ++idx[k] == width) idx[k++] = 0;
      if (k == d) break;
    }
    require(norm > 0.0, Errc::resolution, "mollifier not resolved by the quadrature grid");
    const double scale = 1.0 / (norm * std::pow(hq_, d));
    for (double& v : L.values) v *= scale;
    parts.push_back(std::move(L));
  }

  auto wrap = [G](int v) { return static_cast<std::size_t>(((v % G) + G) % G); };
  auto b_at = [&](const std::vector<int>& c) {
    std::size_t f = 0;
    for (int k = 0; k < d; ++k) f = f * G + wrap(c[k]);
    return b_[f];
  };

  // S * phi_j and S * (b phi_j) on the box of j grown by the stencil reach. A box as wide as
  // the grid collapses to the whole periodic grid.
  struct Conv {
    std::vector<int> origin, extent;
    std::vector<double> plain, weighted;
  };
  auto local_index = [&](const Conv& c, const std::vector<int>& cell, std::size_t& out) {
    out = 0;
    for (int k = 0; k < d; ++k) {
      const int u = static_cast<int>(wrap(cell[k] - c.origin[k]));
      if (u >= c.extent[k]) return false;
      out = out * static_cast<std::size_t>(c.extent[k]) + static_cast<std::size_t>(u);
    }
    return true;
  };
  auto convolve = [&](const Local& L, const Stencil& s) {
    int R = 0;
    for (const auto& o : s.offsets)
      for (int v : o) R = std::max(R, std::abs(v));
    Conv c;
    c.origin.resize(d);
    c.extent.resize(d);
    std::size_t size = 1;
    for (int k = 0; k < d; ++k) {
      if (width + 2 * R >= G) {
        c.origin[k] = 0;
        c.extent[k] = G;
      } else {
        c.origin[k] = L.origin[k] - R;
        c.extent[k] = width + 2 * R;
      }
      size *= static_cast<std::size_t>(c.extent[k]);
    }
    c.plain.assign(size, 0.0);
    c.weighted.assign(size, 0.0);
    std::vector<int> tgt(d);
    for (std::size_t p = 0; p < L.cells.size(); ++p) {
      const double v = L.values[p], bv = v * b_at(L.cells[p]);
      for (std::size_t t = 0; t < s.weights.size(); ++t) {
        for (int k = 0; k < d; ++k) tgt[k] = L.cells[p][k] + s.offsets[t][k];
        std::size_t li;
        if (!local_index(c, tgt, li)) continue;
        c.plain[li] += s.weights[t] * v;
        c.weighted[li] += s.weights[t] * bv;
      }
    }
    return c;
  };

  // Cache per (particle, a); the stencil only depends on a.
  std::vector<std::map<double, Conv>> cache(parts.size());
  std::vector<double> terms, dot_a, dot_b;
  for (const Local& Li : parts) {
    const double m = st.mass[Li.index];
    for (std::size_t jj = 0; jj < parts.size(); ++jj) {
      const Local& Lj = parts[jj];
      const double nn = st.mass[Lj.index];
      auto [A, B] = J_.hat_coefficients(m, nn);
      if (A == 0.0 && B == 0.0) continue;
      const double alpha = model_.alpha(m, nn);
      if (alpha == 0.0) continue;
      const double a = alpha / (model_.diffusion(m) + model_.diffusion(nn));
      auto it = cache[jj].find(a);
      if (it == cache[jj].end()) it = cache[jj].emplace(a, convolve(Lj, stencil(a))).first;
      const Conv& c = it->second;
      dot_a.clear();
      dot_b.clear();
      for (std::size_t p = 0; p < Li.cells.size(); ++p) {
        std::size_t li;
        if (!local_index(c, Li.cells[p], li)) continue;
        dot_a.push_back(Li.values[p] * b_at(Li.cells[p]) * c.plain[li]);
        dot_b.push_back(Li.values[p] * c.weighted[li]);
      }
      if (dot_a.empty()) continue;
      terms.push_back(alpha * (A * ordered_sum(dot_a) + B * ordered_sum(dot_b)) * std::pow(hq_, d));
    }
  }
  const double w = std::pow(st.epsilon, d - 2);
  return chi * w * w * ordered_sum(terms);
}

double theorem21_gap(const InitialDensity& h, const ModelParams& model,
                     const kernel::EffectiveKernelTable& table, const kernel::SupportGrid& grid,
                     const ProductTestFunction& J, double delta, const SimConfig& cfg,
                     std::uint64_t seed, SamplingMode mode, int hat_stride) {
  const double dt = cfg.dt(model);
  const std::uint64_t steps = cfg.steps(model);
  if (hat_stride <= 0) {
    // Largest divisor of the step count not above a 0.01 time spacing.
    const auto target = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(0.01 / dt));
    std::uint64_t best = 1;
    for (std::uint64_t s = 1; s <= target; ++s)
      if (steps % s == 0) best = s;
    hat_stride = static_cast<int>(best);
  }
  require(steps % static_cast<std::uint64_t>(hat_stride) == 0, Errc::invalid_parameter,
          "hat stride must divide the step count");
  Theorem21Accumulator acc(model, table, grid, J, delta, hat_stride);
  RunHooks hooks;
  hooks.step.pairs = [&](const ParticleSystem& st, std::span<const PairRate> p, double h_dt) {
    acc.on_pairs(st, p, h_dt);
  };
  hooks.state = [&](const ParticleSystem& st) { acc.on_state(st); };
  std::vector<EventRecord> sink;
  hooks.step.events = &sink;
  SimConfig rc = cfg;
  rc.snapshots.clear();
  run(sample_initial(h, model, mode, seed), rc, model, hooks);
  return acc.gap();
}

}  // namespace coag::sim
