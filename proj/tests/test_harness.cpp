#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "coag/harness.hpp"
#include "doctest.h"

using namespace coag;
using namespace coag::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("coag_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scaled-down ladder that runs in a few seconds.
ExperimentConfig small_compare() {
  ExperimentConfig c = preset("compare-ladder");
  c.compare.epsilons = {0.15, 0.12, 0.1};
  c.compare.delta = 0.35;
  c.sim.T = 0.05;
  c.sim.snapshots = {0.025, 0.05};
  c.pde.cells = 8;
  c.pde.bins = 20;
  c.pde.n_max = 16.0;
  c.pde.dt = 2.5e-3;
  c.pde.T = 0.05;
  c.kernel.cells_across = 8;
  c.seeds = {1, 2};
  return c;
}

}  // namespace

TEST_CASE("config round trip") {
  for (const auto& name : preset_names()) {
    INFO(name);
    const auto c = preset(name);
    const Json j = to_json(c);
    const auto back = parse_config(j);
    CHECK(to_json(back) == j);
  }
  const fs::path dir = scratch("roundtrip");
  const auto c = small_compare();
  write_atomic(dir / "c.json", to_json(c).dump(2));
  CHECK(to_json(load_config(dir / "c.json")) == to_json(c));
}

TEST_CASE("config validation") {
  Json j = to_json(preset("compare-ladder"));

  SUBCASE("unknown keys are rejected") {
    j["model"]["epsilonn"] = 0.1;
    CHECK_THROWS_AS(parse_config(j), Error);
  }
  SUBCASE("schema version") {
    j["schema"] = 2;
    CHECK_THROWS_AS(parse_config(j), Error);
    j.erase("schema");
    CHECK_THROWS_AS(parse_config(j), Error);
  }
  SUBCASE("unknown kind") {
    j["kind"] = "simulate";
    CHECK_THROWS_AS(parse_config(j), Error);
  }
  SUBCASE("empty seed list") {
    j["seeds"] = Json::array();
    CHECK_THROWS_AS(parse_config(j), Error);
  }
  SUBCASE("bad sampling mode") {
    j["sim"]["sampling"] = "stratified";
    CHECK_THROWS_AS(parse_config(j), Error);
  }
  SUBCASE("unknown preset") { CHECK_THROWS_AS(preset("nope"), Error); }
}

TEST_CASE("run_compare preconditions") {
  auto c = small_compare();
  SUBCASE("empty seeds") {
    c.seeds.clear();
    CHECK_THROWS_AS(run_compare(c), Error);
  }
  SUBCASE("ladder must decrease") {
    c.compare.epsilons = {0.2, 0.25};
    CHECK_THROWS_AS(run_compare(c), Error);
  }
  SUBCASE("errors raised inside the seed loop propagate") {
    c.compare.delta = 0.2;
    CHECK_THROWS_AS(run_compare(c), Error);
  }
  SUBCASE("snapshots on the PDE step grid") {
    c.sim.snapshots = {0.026};
    CHECK_THROWS_AS(run_compare(c), Error);
  }
}

TEST_CASE("consistency of model hashes") {
  CHECK_NOTHROW(verify_consistency({7, 7, 7}));
  try {
    verify_consistency({7, 8});
    FAIL("expected a consistency error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::consistency);
  }
  auto m = preset("compare-ladder").model;
  const auto h = model_hash(m);
  m.epsilon = 0.01;
  CHECK(model_hash(m) == h);
  m.Z = 2.5;
  CHECK(model_hash(m) != h);
}

TEST_CASE("model construction from strings") {
  ModelConfig m;
  m.diffusion = "power:0.5";
  m.alpha = "sum_eta:0.5:2";
  const auto p = build_model(m);
  CHECK(p.alpha(1.0, 4.0) == doctest::Approx(2.0 * (1.0 + 2.0)).epsilon(1e-14));
  CHECK(p.diffusion(4.0) == doctest::Approx(0.5).epsilon(1e-14));
  m.alpha = "exp:1";
  CHECK_THROWS_AS(build_model(m), Error);
  m.alpha = "constant:abc";
  CHECK_THROWS_AS(build_model(m), Error);
}

TEST_CASE("test functions") {
  const auto m = preset("compare-ladder").model;
  TestFunctionConfig t;
  t.kind = "mass_band";
  t.lo = 0.5;
  t.hi = 1.5;
  t.width = 0.1;
  const auto J = build_test_function(t, m);
  const std::vector<double> x{0.1, 0.2, 0.3};
  CHECK(J(x, 1.0, 0.0) == doctest::Approx(std::tanh(5.0)).epsilon(1e-14));
  CHECK(J(x, 3.0, 0.0) < 1e-6);
  t.kind = "spatial_bump";
  const auto B = build_test_function(t, m);
  const std::vector<double> c{0.5, 0.5, 0.5}, far{0.9, 0.5, 0.5};
  CHECK(B(c, 1.0, 0.0) == doctest::Approx(std::tanh(5.0)).epsilon(1e-14));
  CHECK(B(far, 1.0, 0.0) == 0.0);
  t.kind = "ring";
  CHECK_THROWS_AS(build_test_function(t, m), Error);
}

TEST_CASE("atomic writes") {
  const fs::path dir = scratch("atomic");
  write_atomic(dir / "a.txt", "hello\n");
  CHECK(slurp(dir / "a.txt") == "hello\n");
  write_atomic(dir / "a.txt", "again\n");
  CHECK(slurp(dir / "a.txt") == "again\n");

  // Target path occupied by a directory: the rename fails and nothing is left behind.
  fs::create_directories(dir / "busy" / "inner");
  CHECK_THROWS_AS(write_atomic(dir / "busy", "x"), Error);
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  CHECK(names == std::set<std::string>{"a.txt", "busy"});

  // Parent is a regular file.
  try {
    write_atomic(dir / "a.txt" / "b.csv", "x");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::io);
    CHECK(std::string(e.what()).find("a.txt") != std::string::npos);
  }
  CHECK(slurp(dir / "a.txt") == "again\n");
}

TEST_CASE("number formatting round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("compare report layout and byte-identical reruns") {
  const auto c = small_compare();
  const auto rep = run_compare(c);
  for (const auto& t : c.compare.tests)
    for (double time : c.sim.snapshots) {
      int n = 0;
      for (const auto& r : rep.rows)
        if (r.J_id == t.id && r.t == time) ++n;
      CHECK(n == 3);
    }
  CHECK(rep.theorem21.size() == 3);
  for (const auto& r : rep.rows) {
    CHECK(r.seed_count == 2);
    CHECK(r.gap >= 0.0);
  }
  CHECK(rep.monotone.size() == c.compare.tests.size());

  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  emit_compare(rep, a);
  emit_compare(run_compare(c), b);
  for (const char* f : {"compare.csv", "theorem21.csv", "compare.json"}) {
    INFO(f);
    REQUIRE(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const std::string csv = slurp(a / "compare.csv");
  CHECK(csv.rfind("epsilon,seed_count,J_id,t,gap,se\n", 0) == 0);
}

TEST_CASE("other run kinds write their artifacts") {
  const fs::path dir = scratch("kinds");
  auto s = preset("scaling");
  const auto js = run_scaling(s, dir / "scaling");
  CHECK(js["critical"] == true);
  CHECK(fs::exists(dir / "scaling" / "scaling.json"));

  auto k = preset("kernel");
  k.kernel.cells_across = 8;
  k.kernel.per_decade = 4;
  run_kernel(k, dir / "kernel");
  CHECK(fs::exists(dir / "kernel" / "kernel.csv"));
  CHECK(fs::exists(dir / "kernel" / "kernel_pairs.csv"));

  auto p = preset("pde-homogeneous");
  p.pde.bins = 60;
  p.pde.T = 0.5;
  p.pde.snapshots = {0.0, 0.5};
  p.kernel.cells_across = 8;
  run_pde(p, dir / "pde");
  for (const char* f : {"pde_snapshot_0.bin", "pde_snapshot_1.bin", "pde_moments.csv", "pde_marginals.csv",
                        "weak_residual.json"})
    CHECK(fs::exists(dir / "pde" / f));
  const std::string bin = slurp(dir / "pde" / "pde_snapshot_0.bin");
  CHECK(bin.substr(0, 8) == "COAGPDE1");
}
