#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "coag/kernel.hpp"
#include "coag/model.hpp"

namespace coag::sim {

struct SimConfig {
  double c_dt = 0.1;  // dt = c_dt eps^2 / (2 D)
  double T = 1.0;
  std::vector<double> snapshots;
  double cell_side = 0.0;  // 0 selects C0 eps

  void validate(const ModelParams& model) const;
  double dt(const ModelParams& model) const;
  std::uint64_t steps(const ModelParams& model) const;
};

/// Sorted (cell, particle) index over the periodic box. Cells have side >= max(radius,
/// min_side), so every pair within the radius sits in the same or an adjacent cell.
class CellGrid {
 public:
  CellGrid(const ParticleSystem& st, double radius, double min_side = 0.0);

  int cells_per_axis() const { return n_; }
  double side() const { return side_; }
  std::size_t cell_of(std::size_t i) const { return cell_[i]; }

  /// Visits every unordered pair of alive particles with |dx| <= radius, dx = x_j - x_i under
  /// the minimum image, in a fixed order.
  void for_each_pair(const ParticleSystem& st,
                     const std::function<void(std::size_t, std::size_t, const double*)>& fn) const;

 private:
  double radius_, side_, box_;
  int n_, dim_;
  bool brute_;  // fewer than three cells per axis
  std::vector<std::size_t> cell_;
  std::vector<std::pair<std::size_t, std::size_t>> sorted_;  // (cell key, particle)
  std::vector<std::size_t> keys_, starts_;                    // occupied cells
};

/// Reference O(N^2) enumeration; pairs as (i, j) with i < j.
std::vector<std::pair<std::size_t, std::size_t>> brute_force_pairs(const ParticleSystem& st,
                                                                   double radius);
std::vector<std::pair<std::size_t, std::size_t>> cell_list_pairs(const ParticleSystem& st,
                                                                 double radius);

struct EventRecord {
  double time = 0.0;
  std::uint64_t id_i = 0, id_j = 0;  // id_i < id_j
  double m_i = 0.0, m_j = 0.0;
  int side = 0;  // 0: survivor placed at x_i, 1: at x_j
  std::uint64_t survivor = 0;
};

/// Candidate pair of the current step: indices into the post-diffusion state and the
/// unordered rate eps^-2 [V(dx/eps) + V(-dx/eps)] alpha.
struct PairRate {
  std::size_t i, j;
  double rate;
};

struct StepHooks {
  /// Called once per step after the move and before any coagulation.
  std::function<void(const ParticleSystem&, std::span<const PairRate>, double dt)> pairs;
  std::vector<EventRecord>* events = nullptr;
};

/// One step: Gaussian moves, pair search, thinned coagulations in random priority order.
void step(ParticleSystem& st, const SimConfig& cfg, const ModelParams& model,
          const StepHooks& hooks = {});

struct RunHooks {
  StepHooks step;
  /// Called on the state at every grid time s dt, s = 0..steps.
  std::function<void(const ParticleSystem&)> state;
};

struct RunResult {
  std::vector<ParticleSystem> snapshots;  // at cfg.snapshots (rounded to the step grid)
  std::vector<EventRecord> events;
  ParticleSystem final;
};

RunResult run(ParticleSystem init, const SimConfig& cfg, const ModelParams& model,
              RunHooks hooks = {});

/// Position including the periodic wrap count.
std::vector<double> unwrapped(const ParticleSystem& st, std::size_t i);

struct EmpiricalSnapshot {
  double time = 0.0;
  double weight = 0.0;  // eps^{d-2} per particle
  std::vector<double> x;
  std::vector<double> mass;
  double total_number = 0.0;
  double total_mass = 0.0;
};

EmpiricalSnapshot empirical_measure(const ParticleSystem& st);

/// Normalized C-infinity bump of radius 1.
InteractionProfile default_mollifier(int dim);

/// f^delta at query points (dim coordinates each) for mass bins [edges_b, edges_{b+1}).
/// Result is row-major [query][bin].
std::vector<double> mollified_density(const ParticleSystem& st, double delta,
                                      const InteractionProfile& xi, std::span<const double> query,
                                      std::span<const double> mass_edges);

struct MassMoments {
  double count = 0.0;
  double mass = 0.0;
  double moment = 0.0;
  double heavy_fraction = 0.0;
};

MassMoments mass_moments(const ParticleSystem& st, double r, double m0);

struct Estimate {
  double mean = 0.0;
  double se = 0.0;
  std::vector<double> samples;
};

Estimate summarize(std::vector<double> samples);

/// eps^{d-2} sum over steps of dt times the sum of pair rates, per seed; values at the
/// snapshot times of cfg (with T appended if absent).
struct CollisionResult {
  std::vector<double> times;
  std::vector<Estimate> values;
};

CollisionResult collision_functional(const InitialDensity& h, const ModelParams& model,
                                     const SimConfig& cfg, std::span<const std::uint64_t> seeds,
                                     SamplingMode mode = SamplingMode::deterministic);

/// K(y_1, ..., y_k) = prod_r K_r(y_r).
struct ProductKernel {
  std::vector<std::function<double(Point)>> factors;
};

struct CorrelationOptions {
  double T = 0.05;      // time horizon of the left side
  int rhs_cells = 24;   // cells per axis for the right-side quadrature
  SamplingMode mode = SamplingMode::deterministic;
  double c_dt = 0.1;
};

struct CorrelationResult {
  Estimate lhs;
  double rhs = 0.0;
  double tail_bound = 0.0;  // whole-space bound on the left side beyond T
  double k_norm_l1 = 0.0;
};

/// Left side eps^{k(d-2)} int_0^T sum over distinct indices of K prod gamma_k (trapezoid
/// in time, per seed), right side c0(kd) int K prod (bar h_k * |w|^{2/k-d}).
CorrelationResult correlation_check(const ModelParams& model, const InitialDensity& h,
                                    const ProductKernel& K, int k,
                                    std::span<const std::uint64_t> seeds,
                                    const CorrelationOptions& opt = {});

/// Sum over distinct index tuples of prod_r a_r[i_r], k in {2, 3}, by inclusion-exclusion.
double distinct_product_sum(const std::vector<std::vector<double>>& a);

/// J(x, n, t) = chi(t) b(x) c(n); the hat form vanishes when m + n < 1/L or max(m, n) > L.
struct ProductTestFunction {
  std::function<double(Point)> space;
  std::function<double(double)> mass;
  std::function<double(double)> time;  // optional, 1 if empty
  double L = 8.0;

  double chi(double t) const { return time ? time(t) : 1.0; }
  double operator()(Point x, double n, double t) const { return chi(t) * space(x) * mass(n); }
  /// Coefficients (A, B) with J-hat(x, m, y, n) = chi (A b(x) + B b(y)); zero when truncated.
  std::pair<double, double> hat_coefficients(double m, double n) const;
};

/// Accumulates both time integrals of the gap for one simulation.
class Theorem21Accumulator {
 public:
  Theorem21Accumulator(const ModelParams& model, const kernel::EffectiveKernelTable& table,
                       const kernel::SupportGrid& grid, ProductTestFunction J, double delta,
                       int hat_stride);

  void on_pairs(const ParticleSystem& st, std::span<const PairRate> pairs, double dt);
  void on_state(const ParticleSystem& st);

  double gamma_integral() const { return gamma_; }
  double hat_integral() const;
  double gap() const { return std::abs(gamma_integral() - hat_integral()); }

  /// Gamma-hat^delta at one state.
  double hat_gamma(const ParticleSystem& st) const;

 private:
  struct Stencil {
    std::vector<std::vector<int>> offsets;
    std::vector<double> weights;
  };
  const Stencil& stencil(double a) const;

  const ModelParams& model_;
  const kernel::EffectiveKernelTable& table_;
  const kernel::SupportGrid& grid_;
  ProductTestFunction J_;
  double delta_;
  int stride_;
  int G_;  // quadrature points per axis
  double hq_;
  InteractionProfile xi_;
  std::vector<double> b_;  // b at quadrature points
  mutable std::map<double, Stencil> stencils_;

  double gamma_ = 0.0;
  std::vector<double> hat_times_, hat_values_;
  std::uint64_t state_count_ = 0;
  double dt_ = 0.0;
};

/// Runs one seed and returns |int Gamma dt - int Gamma-hat dt| over [0, cfg.T].
double theorem21_gap(const InitialDensity& h, const ModelParams& model,
                     const kernel::EffectiveKernelTable& table, const kernel::SupportGrid& grid,
                     const ProductTestFunction& J, double delta, const SimConfig& cfg,
                     std::uint64_t seed, SamplingMode mode = SamplingMode::deterministic,
                     int hat_stride = 0);

}  // namespace coag::sim
