// coagsim: command-line front end for the coagulation toolkit.

#include <cstdio>
#include <map>
#include <sstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coag/harness.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using namespace coag;
using namespace coag::harness;

// "3", "1,2,5" or "1:64" (inclusive).
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, colon));
        const auto hi = std::stoull(item.substr(colon + 1));
        require(lo <= hi, Errc::config, "seed range must be increasing: " + item);
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      fail(Errc::config, "bad seed list '" + s + "'");
    }
  }
  return out;
}

void parse_a_grid(const std::string& s, KernelConfig& k) {
  double lo = 0, hi = 0;
  int ppd = 0;
  require(std::sscanf(s.c_str(), "%lf:%lf:%d", &lo, &hi, &ppd) == 3, Errc::config,
          "--a-grid expects min:max:per_decade");
  k.a_min = lo;
  k.a_max = hi;
  k.per_decade = ppd;
  k.auto_range = false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coagulation-diffusion toolkit: kernel tables, particle runs, PDE runs, scaling"};
  app.require_subcommand(1);

  std::string config_path, preset_name, out_dir, seed_list;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--preset", preset_name, "Named built-in config (ignored with --config)");
  app.add_option("--out", out_dir, "Output directory (default: config 'output')");
  auto* seed_opt = app.add_option("--seed", seed, "Single seed");
  auto* seeds_opt = app.add_option("--seeds", seed_list, "Seed list: 1,2,5 or 1:64")->excludes(seed_opt);
  app.add_option("--threads", threads, "Worker threads (0: runtime default)");
  bool list_presets = false;
  app.add_flag("--list-presets", list_presets, "Print preset names and exit");
  app.allow_extras(false);
  app.fallthrough();  // global flags may follow the subcommand

  auto* check = app.add_subcommand("check", "Estimate model hypotheses for a config");
  auto* kernel = app.add_subcommand("kernel", "Tabulate I(a) and beta on a mass grid");
  std::string a_grid;
  kernel->add_option("--a-grid", a_grid, "min:max:per_decade");
  auto* sim = app.add_subcommand("sim", "Run the particle system");
  std::vector<double> snapshots;
  auto* o_snap = sim->add_option("--snapshots", snapshots, "Snapshot times t0,t1,...")->delimiter(',');
  auto* pde = app.add_subcommand("pde", "Integrate the coagulation-diffusion system");
  auto* scaling = app.add_subcommand("scaling", "Scaling exponents");
  double phi = 1.0, eta = 0.0;
  int dim = 3;
  bool blowup = false;
  auto* o_phi = scaling->add_option("--phi", phi, "Diffusion exponent");
  auto* o_eta = scaling->add_option("--eta", eta, "Propensity exponent");
  auto* o_dim = scaling->add_option("--dim", dim, "Dimension");
  scaling->add_flag("--blowup", blowup, "Blow-up exponents instead of critical ones");
  auto* compare = app.add_subcommand("compare", "Particle-vs-PDE comparison along an epsilon ladder");
  (void)check;
  (void)pde;
  (void)compare;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (list_presets) {
    for (const auto& n : preset_names()) std::cout << n << "\n";
    return 0;
  }

  try {
    const std::string kind = app.get_subcommands().front()->get_name();
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
    } else if (!preset_name.empty()) {
      cfg = preset(preset_name);
    } else {
      const std::map<std::string, std::string> defaults{
          {"check", "check"}, {"kernel", "kernel"}, {"sim", "sim-msd"},
          {"pde", "pde-homogeneous"}, {"scaling", "scaling"}, {"compare", "compare-ladder"}};
      cfg = preset(defaults.at(kind));
    }
    cfg.kind = kind;
    if (*seeds_opt) cfg.seeds = parse_seeds(seed_list);
    if (*seed_opt) cfg.seeds = {seed};
    if (!a_grid.empty()) parse_a_grid(a_grid, cfg.kernel);
    if (*o_snap) cfg.sim.snapshots = snapshots;
    if (*o_phi) cfg.scaling.phi = phi;
    if (*o_eta) cfg.scaling.eta = eta;
    if (*o_dim) cfg.scaling.dim = dim;
    if (blowup) cfg.scaling.blowup = true;
    // Re-validate the merged config through the parser.
    cfg = parse_config(to_json(cfg));
    const std::filesystem::path dir = out_dir.empty() ? cfg.output : out_dir;

#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif

    Json summary;
    if (kind == "check") {
      summary = run_check(cfg, dir);
    } else if (kind == "kernel") {
      summary = run_kernel(cfg, dir);
    } else if (kind == "sim") {
      summary = run_sim(cfg, dir);
    } else if (kind == "pde") {
      summary = run_pde(cfg, dir);
    } else if (kind == "scaling") {
      summary = run_scaling(cfg, dir);
    } else {
      const auto report = run_compare(cfg);
      emit_compare(report, dir);
      summary = {{"all_monotone", report.all_monotone()}, {"rows", report.rows.size()}};
    }
    write_atomic(dir / "config.json", to_json(cfg).dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "coagsim: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "coagsim: " << e.what() << "\n";
    return 1;
  }
}
