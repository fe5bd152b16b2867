#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coag/kernel.hpp"
#include "coag/model.hpp"
#include "coag/particles.hpp"
#include "coag/pde.hpp"

#include "json.hpp"

namespace coag::harness {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

struct InitialConfig {
  std::string preset = "gaussian_exp";  // or "monodisperse_band"
  std::string space = "gaussian";       // "gaussian" or "uniform"
  std::vector<double> center;           // empty: box centre
  double sigma = 0.2;
  double mass_scale = 1.0;  // gaussian_exp
  double mass = 1.0;        // monodisperse_band
  double half_width = 0.01;
};

struct ModelConfig {
  int dim = 3;
  double box = 1.0;
  double epsilon = 0.1;
  double Z = 1.0;
  std::string diffusion = "constant:1";  // "constant:v" or "power:phi"
  std::optional<double> mass_floor;      // power law floor; default lower end of the mass support
  std::string phi = "constant:1";
  std::string alpha = "constant:1";      // "constant:v", "sum_eta:eta[:scale]", "min[:scale]"
  std::string V = "bump";
  double V_radius = 1.0;
  std::string tau = "inverse_square";    // (n+1)^-2
  InitialConfig h;
};

struct KernelConfig {
  int cells_across = 24;
  double a_min = 1e-2;
  double a_max = 1e2;
  int per_decade = 64;
  /// Shrink [a_min, a_max] to the values induced on the PDE mass grid.
  bool auto_range = true;
};

struct SimConfigSection {
  double c_dt = 0.1;
  double T = 1.0;
  std::vector<double> snapshots;
  std::string sampling = "deterministic";
  double moment_r = 2.0;
  double heavy_m0 = 8.0;
};

struct PdeConfigSection {
  double n_min = 1e-2;
  double n_max = 50.0;
  int bins = 400;
  int cells = 32;
  double dt = 1e-3;
  double T = 1.0;
  std::vector<double> snapshots;
};

struct TestFunctionConfig {
  std::string id;
  std::string kind = "mass_band";  // "mass_band" or "spatial_bump"
  double lo = 0.5, hi = 1.5;        // mass window edges
  double width = 0.1;               // tanh smoothing of the edges
  std::vector<double> center;       // spatial_bump; empty: box centre
  double radius = 0.3;
  double L = 8.0;                   // mass truncation of the hat form
};

struct CompareConfigSection {
  std::vector<double> epsilons;
  double delta = 0.25;
  std::vector<TestFunctionConfig> tests;
  bool theorem21 = true;
  std::string theorem21_test;  // id; empty: first test
  int hat_stride = 0;
};

struct ScalingConfigSection {
  double phi = 1.0;
  double eta = 0.0;
  int dim = 3;
  bool blowup = false;
};

struct ExperimentConfig {
  int schema = kSchemaVersion;
  std::string kind = "check";
  ModelConfig model;
  KernelConfig kernel;
  SimConfigSection sim;
  PdeConfigSection pde;
  CompareConfigSection compare;
  ScalingConfigSection scaling;
  std::vector<std::uint64_t> seeds;
  std::string output = "out";
};

ExperimentConfig parse_config(const Json& j);
Json to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Named starting points for the CLI.
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

ModelParams build_model(const ModelConfig& m);
InitialDensity build_initial(const ModelConfig& m);
/// FNV-1a 64 of the canonical model JSON without epsilon (shared by every rung of a ladder).
std::uint64_t model_hash(const ModelConfig& m);
sim::ProductTestFunction build_test_function(const TestFunctionConfig& t, const ModelConfig& m);

/// Kernel table covering the a values induced on `masses` (or the configured range).
struct KernelBundle {
  std::unique_ptr<kernel::SupportGrid> grid;
  std::unique_ptr<kernel::EffectiveKernelTable> table;
  std::uint64_t model_hash = 0;
};
KernelBundle build_kernel(const ModelConfig& m, const KernelConfig& k,
                          const std::vector<double>& masses);

struct GapRow {
  double epsilon = 0.0;
  std::size_t seed_count = 0;
  std::string J_id;
  double t = 0.0;
  double gap = 0.0;
  double se = 0.0;
};

struct Theorem21Row {
  double epsilon = 0.0;
  std::size_t seed_count = 0;
  double gap = 0.0;
  double se = 0.0;
};

struct ComparisonReport {
  std::vector<GapRow> rows;
  std::vector<Theorem21Row> theorem21;
  std::map<std::string, bool> monotone;  // per test function id
  bool theorem21_monotone = true;
  bool all_monotone() const;
  std::uint64_t model_hash = 0;
};

/// Throws a consistency error unless all hashes agree.
void verify_consistency(const std::vector<std::uint64_t>& hashes);

ComparisonReport run_compare(const ExperimentConfig& config);

// Output plumbing.
std::string format_double(double v);
/// Writes via a temporary file in the same directory and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

void emit_compare(const ComparisonReport& r, const std::filesystem::path& dir);

/// Other run kinds write their artifacts into `dir` and return a short summary.
Json run_check(const ExperimentConfig& c, const std::filesystem::path& dir);
Json run_kernel(const ExperimentConfig& c, const std::filesystem::path& dir);
Json run_sim(const ExperimentConfig& c, const std::filesystem::path& dir);
Json run_pde(const ExperimentConfig& c, const std::filesystem::path& dir);
Json run_scaling(const ExperimentConfig& c, const std::filesystem::path& dir);

}  // namespace coag::harness
