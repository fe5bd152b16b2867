#include "coag/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>

#include "coag/scaling.hpp"

namespace coag::harness {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config parsing

namespace {

// Reads keys from one JSON object and rejects whatever is left over.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    require(j.is_object(), Errc::config, where_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::config, where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(seen_.count(it.key()) > 0, Errc::config,
              where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

InitialConfig parse_initial(const Json& j) {
  InitialConfig h;
  Reader r(j, "model.h");
  r.get("preset", h.preset);
  r.get("space", h.space);
  r.get("center", h.center);
  r.get("sigma", h.sigma);
  r.get("mass_scale", h.mass_scale);
  r.get("mass", h.mass);
  r.get("half_width", h.half_width);
  r.finish();
  require(h.preset == "gaussian_exp" || h.preset == "monodisperse_band", Errc::config,
          "model.h.preset must be gaussian_exp or monodisperse_band");
  require(h.space == "gaussian" || h.space == "uniform", Errc::config,
          "model.h.space must be gaussian or uniform");
  return h;
}

ModelConfig parse_model(const Json& j) {
  ModelConfig m;
  Reader r(j, "model");
  r.get("dim", m.dim);
  r.get("box", m.box);
  r.get("epsilon", m.epsilon);
  r.get("Z", m.Z);
  r.get("diffusion", m.diffusion);
  if (const Json* f = r.child("mass_floor"); f && !f->is_null()) m.mass_floor = f->get<double>();
  r.get("phi", m.phi);
  r.get("alpha", m.alpha);
  r.get("V", m.V);
  r.get("V_radius", m.V_radius);
  r.get("tau", m.tau);
  if (const Json* h = r.child("h")) m.h = parse_initial(*h);
  r.finish();
  return m;
}

KernelConfig parse_kernel(const Json& j) {
  KernelConfig k;
  Reader r(j, "kernel");
  r.get("cells_across", k.cells_across);
  r.get("a_min", k.a_min);
  r.get("a_max", k.a_max);
  r.get("per_decade", k.per_decade);
  r.get("auto_range", k.auto_range);
  r.finish();
  return k;
}

SimConfigSection parse_sim(const Json& j) {
  SimConfigSection s;
  Reader r(j, "sim");
  r.get("c_dt", s.c_dt);
  r.get("T", s.T);
  r.get("snapshots", s.snapshots);
  r.get("sampling", s.sampling);
  r.get("moment_r", s.moment_r);
  r.get("heavy_m0", s.heavy_m0);
  r.finish();
  require(s.sampling == "deterministic" || s.sampling == "poisson", Errc::config,
          "sim.sampling must be deterministic or poisson");
  return s;
}

PdeConfigSection parse_pde(const Json& j) {
  PdeConfigSection p;
  Reader r(j, "pde");
  r.get("n_min", p.n_min);
  r.get("n_max", p.n_max);
  r.get("bins", p.bins);
  r.get("cells", p.cells);
  r.get("dt", p.dt);
  r.get("T", p.T);
  r.get("snapshots", p.snapshots);
  r.finish();
  return p;
}

TestFunctionConfig parse_test(const Json& j) {
  TestFunctionConfig t;
  Reader r(j, "compare.tests[]");
  r.get("id", t.id);
  r.get("kind", t.kind);
  r.get("lo", t.lo);
  r.get("hi", t.hi);
  r.get("width", t.width);
  r.get("center", t.center);
  r.get("radius", t.radius);
  r.get("L", t.L);
  r.finish();
  require(!t.id.empty(), Errc::config, "test function needs an id");
  require(t.kind == "mass_band" || t.kind == "spatial_bump", Errc::config,
          "test function kind must be mass_band or spatial_bump");
  return t;
}

CompareConfigSection parse_compare(const Json& j) {
  CompareConfigSection c;
  Reader r(j, "compare");
  r.get("epsilons", c.epsilons);
  r.get("delta", c.delta);
  if (const Json* t = r.child("tests")) {
    require(t->is_array(), Errc::config, "compare.tests must be an array");
    for (const auto& e : *t) c.tests.push_back(parse_test(e));
  }
  r.get("theorem21", c.theorem21);
  r.get("theorem21_test", c.theorem21_test);
  r.get("hat_stride", c.hat_stride);
  r.finish();
  return c;
}

ScalingConfigSection parse_scaling(const Json& j) {
  ScalingConfigSection s;
  Reader r(j, "scaling");
  r.get("phi", s.phi);
  r.get("eta", s.eta);
  r.get("dim", s.dim);
  r.get("blowup", s.blowup);
  r.finish();
  return s;
}

const std::set<std::string> kKinds{"kernel", "sim", "pde", "compare", "scaling", "check"};

}  // namespace

ExperimentConfig parse_config(const Json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  r.get("schema", c.schema);
  require(j.contains("schema"), Errc::config, "missing schema field");
  require(c.schema == kSchemaVersion, Errc::config,
          "unsupported schema " + std::to_string(c.schema));
  r.get("kind", c.kind);
  require(kKinds.count(c.kind) > 0, Errc::config, "unknown kind '" + c.kind + "'");
  if (const Json* m = r.child("model")) c.model = parse_model(*m);
  if (const Json* k = r.child("kernel")) c.kernel = parse_kernel(*k);
  if (const Json* s = r.child("sim")) c.sim = parse_sim(*s);
  if (const Json* p = r.child("pde")) c.pde = parse_pde(*p);
  if (const Json* q = r.child("compare")) c.compare = parse_compare(*q);
  if (const Json* s = r.child("scaling")) c.scaling = parse_scaling(*s);
  r.get("seeds", c.seeds);
  r.get("output", c.output);
  r.finish();
  if (c.kind == "sim" || c.kind == "compare")
    require(!c.seeds.empty(), Errc::config, "stochastic runs need a non-empty seed list");
  return c;
}

Json to_json(const ExperimentConfig& c) {
  const auto& m = c.model;
  Json h = {{"preset", m.h.preset},         {"space", m.h.space}, {"center", m.h.center},
            {"sigma", m.h.sigma},           {"mass_scale", m.h.mass_scale},
            {"mass", m.h.mass},             {"half_width", m.h.half_width}};
  Json model = {{"dim", m.dim},         {"box", m.box},     {"epsilon", m.epsilon},
                {"Z", m.Z},             {"diffusion", m.diffusion},
                {"phi", m.phi},         {"alpha", m.alpha}, {"V", m.V},
                {"V_radius", m.V_radius}, {"tau", m.tau},   {"h", h}};
  model["mass_floor"] = m.mass_floor ? Json(*m.mass_floor) : Json(nullptr);
  Json tests = Json::array();
  for (const auto& t : c.compare.tests)
    tests.push_back({{"id", t.id},         {"kind", t.kind},     {"lo", t.lo},
                     {"hi", t.hi},         {"width", t.width},   {"center", t.center},
                     {"radius", t.radius}, {"L", t.L}});
  return {
      {"schema", c.schema},
      {"kind", c.kind},
      {"model", model},
      {"kernel",
       {{"cells_across", c.kernel.cells_across},
        {"a_min", c.kernel.a_min},
        {"a_max", c.kernel.a_max},
        {"per_decade", c.kernel.per_decade},
        {"auto_range", c.kernel.auto_range}}},
      {"sim",
       {{"c_dt", c.sim.c_dt},
        {"T", c.sim.T},
        {"snapshots", c.sim.snapshots},
        {"sampling", c.sim.sampling},
        {"moment_r", c.sim.moment_r},
        {"heavy_m0", c.sim.heavy_m0}}},
      {"pde",
       {{"n_min", c.pde.n_min},
        {"n_max", c.pde.n_max},
        {"bins", c.pde.bins},
        {"cells", c.pde.cells},
        {"dt", c.pde.dt},
        {"T", c.pde.T},
        {"snapshots", c.pde.snapshots}}},
      {"compare",
       {{"epsilons", c.compare.epsilons},
        {"delta", c.compare.delta},
        {"tests", tests},
        {"theorem21", c.compare.theorem21},
        {"theorem21_test", c.compare.theorem21_test},
        {"hat_stride", c.compare.hat_stride}}},
      {"scaling",
       {{"phi", c.scaling.phi},
        {"eta", c.scaling.eta},
        {"dim", c.scaling.dim},
        {"blowup", c.scaling.blowup}}},
      {"seeds", c.seeds},
      {"output", c.output},
  };
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io, "cannot open config " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::config, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------- presets

std::vector<std::string> preset_names() {
  return {"check", "kernel", "sim-msd", "pde-homogeneous", "compare-ladder", "scaling"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "check") {
    c.kind = "check";
  } else if (name == "kernel") {
    c.kind = "kernel";
    c.kernel.auto_range = false;
  } else if (name == "sim-msd") {
    c.kind = "sim";
    c.model.alpha = "constant:0";
    c.model.Z = 1000.0;
    c.model.h = {"monodisperse_band", "uniform", {}, 0.2, 1.0, 1.0, 0.01};
    c.sim.T = 1.0;
    c.sim.snapshots = {0.0, 1.0};
    c.seeds = {1};
  } else if (name == "pde-homogeneous") {
    c.kind = "pde";
    c.model.h = {"gaussian_exp", "uniform", {}, 0.2, 1.0, 1.0, 0.01};
    c.model.alpha = "constant:1";
    c.pde = {1e-2, 50.0, 400, 1, 1e-3, 5.0, {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}};
  } else if (name == "compare-ladder") {
    c.kind = "compare";
    c.model.Z = 2.4;
    c.model.h = {"monodisperse_band", "gaussian", {}, 0.2, 1.0, 1.0, 1e-3};
    c.sim.T = 0.5;
    c.sim.snapshots = {0.1, 0.25, 0.5};
    c.pde = {0.5, 64.0, 57, 16, 2.5e-3, 0.5, {}};
    c.compare.epsilons = {0.12, 0.08, 0.05};
    c.compare.delta = 0.25;
    TestFunctionConfig band;
    band.id = "mass_band";
    band.kind = "mass_band";
    band.lo = 0.5;
    band.hi = 1.5;
    band.width = 0.1;
    TestFunctionConfig bump;
    bump.id = "spatial_bump";
    bump.kind = "spatial_bump";
    bump.lo = 0.5;
    bump.hi = 8.5;
    bump.width = 0.25;
    bump.radius = 0.3;
    c.compare.tests = {band, bump};
    c.compare.theorem21_test = "mass_band";
    for (std::uint64_t s = 1; s <= 64; ++s) c.seeds.push_back(s);
  } else if (name == "scaling") {
    c.kind = "scaling";
  } else {
    fail(Errc::config, "unknown preset '" + name + "'");
  }
  c.output = "out/" + name;
  return c;
}

// ---------------------------------------------------------------- model construction

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

double number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    require(used == s.size(), Errc::config, "");
    return v;
  } catch (...) {
    fail(Errc::config, "bad number '" + s + "' in " + what);
  }
}

std::vector<double> center_or_mid(const std::vector<double>& c, int dim, double box) {
  if (c.empty()) return std::vector<double>(dim, 0.5 * box);
  require(static_cast<int>(c.size()) == dim, Errc::config, "centre has the wrong dimension");
  return c;
}

}  // namespace

InitialDensity build_initial(const ModelConfig& m) {
  const auto& h = m.h;
  SpatialProfile space = h.space == "uniform"
                             ? SpatialProfile::uniform(m.dim, m.box)
                             : SpatialProfile::gaussian(m.dim, m.box,
                                                        center_or_mid(h.center, m.dim, m.box), h.sigma);
  MassProfile mass = h.preset == "gaussian_exp" ? MassProfile::exponential(h.mass_scale)
                                                : MassProfile::band(h.mass, h.half_width);
  return InitialDensity(m.Z, std::move(space), std::move(mass));
}

ModelParams build_model(const ModelConfig& m) {
  ModelParams p;
  p.dim = m.dim;
  p.box = m.box;
  p.epsilon = m.epsilon;
  p.Z = m.Z;

  auto d = split(m.diffusion, ':');
  if (d.size() == 2 && d[0] == "constant") {
    p.diffusion = DiffusionCoefficient::constant(number(d[1], "diffusion"));
  } else if (d.size() == 2 && d[0] == "power") {
    const double floor = m.mass_floor ? *m.mass_floor : build_initial(m).mass().lower();
    p.diffusion = DiffusionCoefficient::power(number(d[1], "diffusion"), floor);
  } else {
    fail(Errc::config, "diffusion preset must be constant:v or power:phi");
  }

  auto f = split(m.phi, ':');
  require(f.size() == 2 && f[0] == "constant", Errc::config, "phi preset must be constant:v");
  p.phi = PhiFunction::constant(number(f[1], "phi"));

  auto a = split(m.alpha, ':');
  if (a.size() == 2 && a[0] == "constant") {
    p.alpha = CoagulationPropensity::constant(number(a[1], "alpha"));
  } else if ((a.size() == 2 || a.size() == 3) && a[0] == "sum_eta") {
    p.alpha = CoagulationPropensity::sum_eta(number(a[1], "alpha"),
                                             a.size() == 3 ? number(a[2], "alpha") : 1.0);
  } else if ((a.size() == 1 || a.size() == 2) && a[0] == "min") {
    p.alpha = CoagulationPropensity::min_mass(a.size() == 2 ? number(a[1], "alpha") : 1.0);
  } else {
    fail(Errc::config, "alpha preset must be constant:v, sum_eta:eta[:scale] or min[:scale]");
  }

  require(m.V == "bump", Errc::config, "V preset must be bump");
  p.V = InteractionProfile::bump(m.dim, m.V_radius);
  require(m.tau == "inverse_square", Errc::config, "tau preset must be inverse_square");
  p.tau = [](double n) { return 1.0 / ((n + 1.0) * (n + 1.0)); };
  p.validate();
  return p;
}

std::uint64_t model_hash(const ModelConfig& m) {
  ExperimentConfig c;
  c.model = m;
  Json j = to_json(c).at("model");
  j.erase("epsilon");
  const std::string s = j.dump();
  std::uint64_t hsh = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    hsh ^= ch;
    hsh *= 0x100000001b3ULL;
  }
  return hsh;
}

sim::ProductTestFunction build_test_function(const TestFunctionConfig& t, const ModelConfig& m) {
  sim::ProductTestFunction J;
  const double lo = t.lo, hi = t.hi, w = t.width;
  require(w > 0.0 && hi > lo, Errc::config, "test function window needs hi > lo and width > 0");
  J.mass = [lo, hi, w](double n) { return 0.5 * (std::tanh((n - lo) / w) - std::tanh((n - hi) / w)); };
  J.L = t.L;
  if (t.kind == "mass_band") {
    J.space = [](Point) { return 1.0; };
  } else {
    require(t.kind == "spatial_bump", Errc::config, "unknown test function kind '" + t.kind + "'");
    const auto c = center_or_mid(t.center, m.dim, m.box);
    const double R = t.radius, box = m.box;
    J.space = [c, R, box](Point x) {
      double r2 = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        const double d = min_image(x[k] - c[k], box) / R;
        r2 += d * d;
      }
      return r2 < 1.0 ? std::exp(1.0 - 1.0 / (1.0 - r2)) : 0.0;
    };
  }
  return J;
}

KernelBundle build_kernel(const ModelConfig& m, const KernelConfig& k,
                          const std::vector<double>& masses) {
  const ModelParams p = build_model(m);
  KernelBundle b;
  b.model_hash = model_hash(m);
  b.grid = std::make_unique<kernel::SupportGrid>(p.V, k.cells_across);
  kernel::AGridSpec spec{k.a_min, k.a_max, k.per_decade};
  if (k.auto_range && !masses.empty()) {
    double lo = INFINITY, hi = 0.0;
    for (double n : masses)
      for (double q : masses) {
        const double a = p.alpha(n, q) / (p.diffusion(n) + p.diffusion(q));
        if (a > 0.0) {
          lo = std::min(lo, a);
          hi = std::max(hi, a);
        }
      }
    if (hi > 0.0) {
      spec.a_min = lo / 1.05;
      spec.a_max = hi * 1.05;
    }
  }
  b.table = std::make_unique<kernel::EffectiveKernelTable>(
      kernel::build_kernel_table(p.alpha, p.diffusion, *b.grid, spec));
  return b;
}

// ---------------------------------------------------------------- output plumbing

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, Errc::io, "cannot create directory " + dir.string() + ": " + ec.message());
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::io, "cannot write " + path.string() + " (temporary " + tmp.string() + ")");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) {
      fs::remove(tmp, ec);
      fail(Errc::io, "write failed for " + path.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignore;
    fs::remove(tmp, ignore);
    fail(Errc::io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

namespace {

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string s;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) s += ',';
    s += c;
    first = false;
  }
  return s + '\n';
}

std::string f17(double v) { return format_double(v); }

SamplingMode sampling_mode(const std::string& s) {
  return s == "poisson" ? SamplingMode::poisson : SamplingMode::deterministic;
}

// Mollifier stencil on a periodic mesh: offsets within delta, weights summing to one.
struct MeshMollifier {
  std::vector<std::vector<int>> offsets;
  std::vector<double> weights;
};

MeshMollifier mesh_mollifier(const pde::SpatialMesh& mesh, double delta,
                             const InteractionProfile& xi) {
  MeshMollifier out;
  const int d = mesh.dim();
  const double h = mesh.spacing();
  const int span = static_cast<int>(std::ceil(delta / h));
  require(2 * span + 1 <= mesh.cells_per_axis(), Errc::resolution,
          "mollifier support wraps the periodic mesh");
  std::vector<int> o(d, -span);
  std::vector<double> y(d);
  double total = 0.0;
  while (true) {
    for (int k = 0; k < d; ++k) y[k] = o[k] * h / delta;
    const double v = xi(y);
    if (v > 0.0) {
      out.offsets.push_back(o);
      out.weights.push_back(v);
      total += v;
    }
    int k = 0;
    while (k < d && ++o[k] > span) o[k++] = -span;
    if (k == d) break;
  }
  for (double& w : out.weights) w /= total;
  return out;
}

// Integral of J against the mollified PDE field.
double pde_functional(const pde::DensityField& f, const MeshMollifier& mol,
                      const sim::ProductTestFunction& J, const std::vector<double>& b_mesh) {
  const auto& mesh = f.mesh;
  const int d = mesh.dim(), M = mesh.cells_per_axis();
  const double vol = mesh.cell_volume();
  std::vector<double> per_bin(f.masses.size());
  std::vector<int> c(d);
  for (int j = 0; j < f.masses.size(); ++j) {
    const double cn = J.mass(f.masses.pivot(j));
    if (cn == 0.0) continue;
    double s = 0.0;
    for (std::size_t cell = 0; cell < mesh.size(); ++cell) {
      if (b_mesh[cell] == 0.0) continue;
      std::size_t r = cell;
      for (int k = d - 1; k >= 0; --k) {
        c[k] = static_cast<int>(r % M);
        r /= M;
      }
      double acc = 0.0;
      for (std::size_t t = 0; t < mol.weights.size(); ++t) {
        std::size_t src = 0;
        for (int k = 0; k < d; ++k)
          src = src * M + static_cast<std::size_t>(((c[k] - mol.offsets[t][k]) % M + M) % M);
        acc += mol.weights[t] * f.at(j, src);
      }
      s += b_mesh[cell] * acc * vol;
    }
    per_bin[j] = cn * s * f.masses.width(j);
  }
  return J.chi(f.time) * ordered_sum(per_bin);
}

// Integral of J against the mollified empirical measure, on the same mesh.
double particle_functional(const ParticleSystem& st, const pde::SpatialMesh& mesh, double delta,
                           const InteractionProfile& xi, const sim::ProductTestFunction& J,
                           const std::vector<double>& b_mesh) {
  const int d = st.dim, M = mesh.cells_per_axis();
  const double h = mesh.spacing();
  const int span = static_cast<int>(std::ceil(delta / h)) + 1;
  std::vector<double> terms;
  std::vector<int> base(d), o(d);
  std::vector<double> y(d);
  for (std::size_t i = 0; i < st.size(); ++i) {
    if (!st.alive[i]) continue;
    const double cm = J.mass(st.mass[i]);
    if (cm == 0.0) continue;
    for (int k = 0; k < d; ++k) base[k] = static_cast<int>(std::floor(st.pos(i)[k] / h));
    std::fill(o.begin(), o.end(), -span);
    double norm = 0.0, acc = 0.0;
    while (true) {
      std::size_t cell = 0;
      for (int k = 0; k < d; ++k) {
        const int g = base[k] + o[k];
        y[k] = min_image(st.pos(i)[k] - (g + 0.5) * h, st.box) / delta;
        cell = cell * M + static_cast<std::size_t>((g % M + M) % M);
      }
      const double v = xi(y);
      norm += v;
      acc += v * b_mesh[cell];
      int k = 0;
      while (k < d && ++o[k] > span) o[k++] = -span;
      if (k == d) break;
    }
    terms.push_back(cm * acc / norm);
  }
  return J.chi(st.time) * std::pow(st.epsilon, d - 2) * ordered_sum(terms);
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

}  // namespace

bool ComparisonReport::all_monotone() const {
  for (const auto& [id, ok] : monotone)
    if (!ok) return false;
  return theorem21_monotone;
}

void verify_consistency(const std::vector<std::uint64_t>& hashes) {
  for (std::uint64_t h : hashes)
    require(h == hashes.front(), Errc::consistency, "sub-runs were built from different models");
}

// ---------------------------------------------------------------- compare

ComparisonReport run_compare(const ExperimentConfig& config) {
  const auto& cc = config.compare;
  require(!config.seeds.empty(), Errc::config, "compare needs a non-empty seed list");
  require(!cc.epsilons.empty(), Errc::config, "compare needs an epsilon ladder");
  for (std::size_t i = 1; i < cc.epsilons.size(); ++i)
    require(cc.epsilons[i] < cc.epsilons[i - 1], Errc::config,
            "epsilon ladder must be strictly decreasing");
  require(!cc.tests.empty(), Errc::config, "compare needs at least one test function");
  require(!config.sim.snapshots.empty(), Errc::config, "compare needs snapshot times");

  ComparisonReport rep;
  std::vector<std::uint64_t> hashes;

  // Macroscopic side.
  const ModelConfig& mc = config.model;
  const ModelParams base = build_model(mc);
  const InitialDensity h = build_initial(mc);
  hashes.push_back(model_hash(mc));
  const pde::MassGrid masses(config.pde.n_min, config.pde.n_max, config.pde.bins);
  const pde::SpatialMesh mesh(mc.dim, config.pde.cells, mc.box);
  KernelBundle kb = build_kernel(mc, config.kernel, masses.pivots());
  hashes.push_back(kb.model_hash);
  const auto& table = *kb.table;
  pde::CoagulationTable ctab(masses, [&](double n, double m) { return table.beta(n, m); });
  pde::Integrator integ(ctab, base.diffusion);
  const pde::DensityField f0 = pde::project_initial(h, masses, mesh);
  const double T = *std::max_element(config.sim.snapshots.begin(), config.sim.snapshots.end());
  const double pdt = config.pde.dt;
  const double Tp = std::ceil(T / pdt - 1e-9) * pdt;
  std::vector<double> keep;
  for (double t : config.sim.snapshots) {
    require(std::abs(std::round(t / pdt) * pdt - t) <= 1e-9, Errc::config,
            "snapshot times must be multiples of pde.dt");
    keep.push_back(t);
  }
  const auto pde_snaps = pde::integrate(f0, Tp, pdt, integ, keep);

  const InteractionProfile xi = sim::default_mollifier(mc.dim);
  const MeshMollifier mol = mesh_mollifier(mesh, cc.delta, xi);
  std::vector<sim::ProductTestFunction> tests;
  std::vector<std::vector<double>> b_mesh;
  std::vector<double> x(mc.dim);
  for (const auto& t : cc.tests) {
    tests.push_back(build_test_function(t, mc));
    std::vector<double> b(mesh.size());
    for (std::size_t c = 0; c < mesh.size(); ++c) {
      mesh.center(c, x.data());
      b[c] = tests.back().space(x);
    }
    b_mesh.push_back(std::move(b));
  }
  const std::size_t nt = tests.size(), ns = keep.size();
  std::vector<double> macro(nt * ns);
  for (std::size_t q = 0; q < nt; ++q)
    for (std::size_t s = 0; s < ns; ++s)
      macro[q * ns + s] = pde_functional(pde_snaps[s], mol, tests[q], b_mesh[q]);

  std::size_t t21 = 0;
  if (!cc.theorem21_test.empty()) {
    auto it = std::find_if(cc.tests.begin(), cc.tests.end(),
                           [&](const auto& t) { return t.id == cc.theorem21_test; });
    require(it != cc.tests.end(), Errc::config, "theorem21_test names no test function");
    t21 = static_cast<std::size_t>(it - cc.tests.begin());
  }

  // Microscopic side, one job per (epsilon, seed).
  const std::size_t nseed = config.seeds.size();
  std::vector<std::vector<double>> time_avg(nt);
  std::vector<double> t21_means;
  for (double eps : cc.epsilons) {
    ModelConfig me = mc;
    me.epsilon = eps;
    const ModelParams model = build_model(me);
    hashes.push_back(model_hash(me));
    verify_consistency(hashes);

    sim::SimConfig scfg;
    scfg.c_dt = config.sim.c_dt;
    scfg.T = T;
    scfg.snapshots = keep;
    const std::uint64_t steps = scfg.steps(model);
    int stride = cc.hat_stride;
    if (cc.theorem21 && stride <= 0) {
      const auto target =
          std::max<std::uint64_t>(1, static_cast<std::uint64_t>(0.01 / scfg.dt(model)));
      stride = 1;
      for (std::uint64_t s = 1; s <= target; ++s)
        if (steps % s == 0) stride = static_cast<int>(s);
    }

    std::vector<double> gaps(nseed * nt * ns), t21_gaps(nseed);
    const auto mode = sampling_mode(config.sim.sampling);
    // Exceptions may not cross the parallel region; keep the one from the lowest seed index.
    std::vector<std::exception_ptr> errors(nseed);
#pragma omp parallel for schedule(dynamic)
    for (long si = 0; si < static_cast<long>(nseed); ++si) try {
      std::optional<sim::Theorem21Accumulator> acc;
      sim::RunHooks hooks;
      if (cc.theorem21) {
        acc.emplace(model, table, *kb.grid, tests[t21], cc.delta, stride);
        hooks.step.pairs = [&](const ParticleSystem& st, std::span<const sim::PairRate> p,
                               double dt) { acc->on_pairs(st, p, dt); };
        hooks.state = [&](const ParticleSystem& st) { acc->on_state(st); };
      }
      std::vector<sim::EventRecord> sink;
      hooks.step.events = &sink;
      auto res = sim::run(sample_initial(h, model, mode, config.seeds[si]), scfg, model, hooks);
      for (std::size_t q = 0; q < nt; ++q)
        for (std::size_t s = 0; s < ns; ++s) {
          const double micro =
              particle_functional(res.snapshots[s], mesh, cc.delta, xi, tests[q], b_mesh[q]);
          gaps[(static_cast<std::size_t>(si) * nt + q) * ns + s] = std::abs(micro - macro[q * ns + s]);
        }
      if (acc) t21_gaps[si] = acc->gap();
    } catch (...) {
      errors[static_cast<std::size_t>(si)] = std::current_exception();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    for (std::size_t q = 0; q < nt; ++q) {
      std::vector<double> avg;
      for (std::size_t s = 0; s < ns; ++s) {
        std::vector<double> v(nseed);
        for (std::size_t si = 0; si < nseed; ++si) v[si] = gaps[(si * nt + q) * ns + s];
        const auto e = sim::summarize(std::move(v));
        rep.rows.push_back({eps, nseed, cc.tests[q].id, keep[s], e.mean, e.se});
        avg.push_back(e.mean);
      }
      time_avg[q].push_back(ordered_sum(avg) / static_cast<double>(ns));
    }
    if (cc.theorem21) {
      const auto e = sim::summarize(t21_gaps);
      rep.theorem21.push_back({eps, nseed, e.mean, e.se});
      t21_means.push_back(e.mean);
    }
  }
  for (std::size_t q = 0; q < nt; ++q) rep.monotone[cc.tests[q].id] = strictly_decreasing(time_avg[q]);
  rep.theorem21_monotone = !cc.theorem21 || strictly_decreasing(t21_means);
  rep.model_hash = hashes.front();
  return rep;
}

void emit_compare(const ComparisonReport& r, const fs::path& dir) {
  std::string csv = csv_row({"epsilon", "seed_count", "J_id", "t", "gap", "se"});
  for (const auto& row : r.rows)
    csv += csv_row({f17(row.epsilon), std::to_string(row.seed_count), row.J_id, f17(row.t),
                    f17(row.gap), f17(row.se)});
  std::string t21 = csv_row({"epsilon", "seed_count", "gap", "se"});
  for (const auto& row : r.theorem21)
    t21 += csv_row({f17(row.epsilon), std::to_string(row.seed_count), f17(row.gap), f17(row.se)});
  Json verdict = {{"monotone", r.monotone},
                  {"theorem21_monotone", r.theorem21_monotone},
                  {"all_monotone", r.all_monotone()},
                  {"model_hash", r.model_hash}};
  write_atomic(dir / "compare.csv", csv);
  write_atomic(dir / "theorem21.csv", t21);
  write_atomic(dir / "compare.json", verdict.dump(2) + "\n");
}

// ---------------------------------------------------------------- other run kinds

Json run_check(const ExperimentConfig& c, const fs::path& dir) {
  const ModelParams p = build_model(c.model);
  const InitialDensity h = build_initial(c.model);
  const auto rep = check_hypotheses(p, h, c.pde.n_max);
  Json items = Json::array();
  for (const auto& it : rep.items)
    items.push_back({{"name", it.name}, {"estimate", it.estimate}, {"threshold", it.threshold},
                     {"pass", it.pass}});
  Json out = {{"all_pass", rep.all_pass()}, {"items", items}, {"model_hash", model_hash(c.model)}};
  write_atomic(dir / "check.json", out.dump(2) + "\n");
  return out;
}

Json run_kernel(const ExperimentConfig& c, const fs::path& dir) {
  const ModelParams p = build_model(c.model);
  std::vector<double> masses;
  const int n = 20;
  for (int i = 0; i < n; ++i)
    masses.push_back(c.pde.n_min * std::pow(c.pde.n_max / c.pde.n_min, double(i) / (n - 1)));
  KernelBundle kb = build_kernel(c.model, c.kernel, masses);
  std::string a_csv = csv_row({"a", "I"});
  for (std::size_t i = 0; i < kb.table->a_grid().size(); ++i)
    a_csv += csv_row({f17(kb.table->a_grid()[i]), f17(kb.table->I_values()[i])});
  std::string pair_csv = csv_row({"n", "m", "alpha", "beta"});
  for (double a : masses)
    for (double b : masses)
      pair_csv += csv_row({f17(a), f17(b), f17(p.alpha(a, b)), f17(kb.table->beta(a, b))});
  write_atomic(dir / "kernel.csv", a_csv);
  write_atomic(dir / "kernel_pairs.csv", pair_csv);
  return {{"a_points", kb.table->a_grid().size()}, {"model_hash", kb.model_hash}};
}

Json run_sim(const ExperimentConfig& c, const fs::path& dir) {
  require(!c.seeds.empty(), Errc::config, "sim needs a non-empty seed list");
  const ModelParams p = build_model(c.model);
  const InitialDensity h = build_initial(c.model);
  sim::SimConfig cfg;
  cfg.c_dt = c.sim.c_dt;
  cfg.T = c.sim.T;
  cfg.snapshots = c.sim.snapshots;
  Json summary = Json::array();
  for (std::uint64_t seed : c.seeds) {
    std::string moments = csv_row({"t", "count", "mass", "moment", "heavy_fraction"});
    const std::size_t stride = std::max<std::uint64_t>(1, cfg.steps(p) / 1000);
    std::size_t s = 0;
    sim::RunHooks hooks;
    hooks.state = [&](const ParticleSystem& st) {
      if (s++ % stride != 0) return;
      const auto mm = sim::mass_moments(st, c.sim.moment_r, c.sim.heavy_m0);
      moments += csv_row({f17(st.time), f17(mm.count), f17(mm.mass), f17(mm.moment),
                          f17(mm.heavy_fraction)});
    };
    auto res = sim::run(sample_initial(h, p, sampling_mode(c.sim.sampling), seed), cfg, p, hooks);
    std::string events = csv_row({"t", "i", "j", "m_i", "m_j", "side"});
    for (const auto& e : res.events)
      events += csv_row({f17(e.time), std::to_string(e.id_i), std::to_string(e.id_j), f17(e.m_i),
                         f17(e.m_j), e.side == 0 ? "i" : "j"});
    std::string header = "t,id";
    for (int k = 0; k < p.dim; ++k) header += ",x" + std::to_string(k);
    std::string snaps = header + ",m\n";
    for (const auto& st : res.snapshots)
      for (std::size_t i = 0; i < st.size(); ++i) {
        if (!st.alive[i]) continue;
        snaps += f17(st.time) + "," + std::to_string(st.id[i]);
        for (int k = 0; k < p.dim; ++k) snaps += "," + f17(st.pos(i)[k]);
        snaps += "," + f17(st.mass[i]) + "\n";
      }
    const std::string tag = "seed" + std::to_string(seed);
    write_atomic(dir / ("events_" + tag + ".csv"), events);
    write_atomic(dir / ("snapshots_" + tag + ".csv"), snaps);
    write_atomic(dir / ("moments_" + tag + ".csv"), moments);
    summary.push_back({{"seed", seed},
                       {"events", res.events.size()},
                       {"final_count", res.final.alive_count()}});
  }
  return {{"runs", summary}, {"model_hash", model_hash(c.model)}};
}

Json run_pde(const ExperimentConfig& c, const fs::path& dir) {
  const ModelParams p = build_model(c.model);
  const InitialDensity h = build_initial(c.model);
  const pde::MassGrid masses(c.pde.n_min, c.pde.n_max, c.pde.bins);
  const pde::SpatialMesh mesh(c.model.dim, c.pde.cells, c.model.box);
  KernelBundle kb = build_kernel(c.model, c.kernel, masses.pivots());
  pde::CoagulationTable table(masses, [&](double n, double m) { return kb.table->beta(n, m); });
  pde::Integrator integ(table, p.diffusion);
  const auto f0 = pde::project_initial(h, masses, mesh);
  std::vector<double> keep = c.pde.snapshots;
  if (keep.empty()) keep = {0.0, c.pde.T};
  const auto snaps = pde::integrate(f0, c.pde.T, c.pde.dt, integ, keep);

  std::string moments = csv_row({"t", "M0", "mass", "moment2", "flux_mass", "entropy"});
  std::string marg = csv_row({"t", "n", "integral_f_dx"});
  for (std::size_t k = 0; k < snaps.size(); ++k) {
    const auto& f = snaps[k];
    moments += csv_row({f17(f.time), f17(f.total_number()), f17(f.total_mass()), f17(f.moment(2.0)),
                        f17(f.flux_mass), f17(pde::entropy(f, p.tau))});
    const auto m = f.mass_marginal();
    for (int j = 0; j < masses.size(); ++j)
      marg += csv_row({f17(f.time), f17(masses.pivot(j)), f17(m[j])});

    std::string bin = "COAGPDE1";
    auto put = [&](const void* ptr, std::size_t n) {
      bin.append(static_cast<const char*>(ptr), n);
    };
    const std::int32_t hdr[3] = {mesh.dim(), mesh.cells_per_axis(), masses.size()};
    put(hdr, sizeof hdr);
    const double meta[2] = {mesh.box(), f.time};
    put(meta, sizeof meta);
    put(masses.pivots().data(), sizeof(double) * masses.pivots().size());
    for (int j = 0; j < masses.size(); ++j) {
      const double w = masses.width(j);
      put(&w, sizeof w);
    }
    put(f.f.data(), sizeof(double) * f.f.size());
    write_atomic(dir / ("pde_snapshot_" + std::to_string(k) + ".bin"), bin);
  }
  write_atomic(dir / "pde_moments.csv", moments);
  write_atomic(dir / "pde_marginals.csv", marg);

  pde::WeakTestFunction J{[](Point, double n, double) { return n; },
                          [](Point, double, double) { return 0.0; },
                          [](Point, double, double) { return 0.0; }, 0.0, masses.n_max()};
  const auto wr = pde::weak_residual(snaps, J, snaps.front(), table, p.diffusion);
  Json report = {{"test_function", "J(x,n,t) = n"},
                 {"lhs", wr.lhs},
                 {"initial", wr.initial},
                 {"transport", wr.transport},
                 {"coagulation", wr.coagulation},
                 {"residual", wr.residual()},
                 {"mass_drift", snaps.back().total_mass() - snaps.front().total_mass()},
                 {"flux_mass", snaps.back().flux_mass}};
  write_atomic(dir / "weak_residual.json", report.dump(2) + "\n");
  return {{"snapshots", snaps.size()}, {"residual", wr.residual()}, {"model_hash", kb.model_hash}};
}

Json run_scaling(const ExperimentConfig& c, const fs::path& dir) {
  const scaling::ScalingInput in{c.scaling.phi, c.scaling.eta, c.scaling.dim};
  Json out;
  if (c.scaling.blowup) {
    const auto b = scaling::blowup_exponents(in.phi, in.eta);
    const auto chk = scaling::check_scaling_conditions(b.alpha, b.gamma, b.tau, in);
    out = {{"gamma", b.gamma},
           {"alpha", b.alpha},
           {"tau", b.tau},
           {"mass_exponent", scaling::mass_exponent(b.alpha, b.gamma, b.tau, in.dim)},
           {"conditions",
            {{"free", chk.free}, {"interaction", chk.interaction}, {"energy", chk.energy}}},
           {"regime", scaling::regime_name(b.regime)}};
  } else {
    const auto e = scaling::critical_exponents(in);
    const auto chk = scaling::check_scaling_conditions(e.alpha, e.gamma, e.tau, in);
    const bool heavy = in.phi + in.eta >= 1.0;
    out = {{"gamma", e.gamma},
           {"alpha", e.alpha},
           {"tau", e.tau},
           {"critical", e.critical},
           {"conditions",
            {{"free", chk.free},
             {"interaction", chk.interaction},
             {"energy", chk.energy},
             {"free_ok", chk.free_ok},
             {"interaction_ok", chk.interaction_ok},
             {"energy_ok", chk.energy_ok}}},
           {"regime", scaling::regime_name(heavy ? scaling::Regime::scaling_permits_heavy_mass
                                                 : scaling::Regime::mass_conserving)}};
  }
  write_atomic(dir / "scaling.json", out.dump(2) + "\n");
  return out;
}

}  // namespace coag::harness
