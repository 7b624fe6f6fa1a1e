#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "jumppath/jumppath.hpp"
#include "model_fixtures.hpp"

using namespace jumppath;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

fs::path make_temp_dir(const std::string& tag) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("jumppath_" + tag + "_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(JUMPPATH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("model round-trip is bit-exact") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> unif(1e-7, 1e3);
  for (int trial = 0; trial < 10; ++trial) {
    RateKernel k = fixtures::random_strongly_connected(rng, 5);
    // perturb to full-precision doubles
    std::vector<RateEntry> entries;
    for (const RateEntry& e : k.triplets()) {
      entries.push_back({e.from, e.to, e.rate * unif(rng)});
    }
    RateKernel original(5, entries);
    fs::path dir = make_temp_dir("roundtrip");
    const std::string path = (dir / "m.json").string();
    io::emit_model(path, original, StateSet{0}, StateSet{4});
    io::ModelFile loaded = io::load_model(path);

    auto a = original.triplets();
    auto b = loaded.kernel.triplets();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].from == b[i].from);
      CHECK(a[i].to == b[i].to);
      CHECK(a[i].rate == b[i].rate);  // bit-exact
    }
    CHECK(loaded.A.members() == std::vector<int>{0});
    CHECK(loaded.B.members() == std::vector<int>{4});
    fs::remove_all(dir);
  }
}

TEST_CASE("model parsing errors carry context") {
  CHECK_THROWS_AS(io::model_from_json(io::json::parse(R"({"rates": []})")), ParseError);
  CHECK_THROWS_AS(
      io::model_from_json(io::json::parse(R"({"n_states": 2, "rates": [[0, 0, 1.0]]})")),
      DiagonalEntryError);
  CHECK_THROWS_AS(io::model_from_json(io::json::parse(
                      R"({"n_states": 2, "rates": [[0, 1, 1.0], [0, 1, 2.0]]})")),
                  DuplicateRateEntryError);
  CHECK_THROWS_AS(io::model_from_json(io::json::parse(
                      R"({"n_states": 2, "rates": [[0, 1, -1.0]]})")),
                  NegativeRateError);
  CHECK_THROWS_AS(io::load_model("/nonexistent/m.json"), ParseError);
}

TEST_CASE("extended fields serialize +inf as a string") {
  ScalarField f{1.5, kInf, 0.0};
  io::json j = io::field_to_json(f);
  CHECK(j[1] == "inf");
  ScalarField back = io::field_from_json(j, "test");
  CHECK(back[0] == 1.5);
  CHECK(back[1] == kInf);
  CHECK_THROWS_AS(io::field_from_json(io::json::parse(R"(["nope"])"), "test"), ParseError);
}

TEST_CASE("distribution parsing enforces the simplex invariant") {
  CHECK_THROWS_AS(io::distribution_from_json(io::json::parse(R"({"weights": [0.5, 0.6]})"),
                                             "test"),
                  ParseError);
  Distribution d =
      io::distribution_from_json(io::json::parse(R"({"weights": [0.25, 0.75]})"), "test");
  CHECK(d[1] == 0.75);
}

TEST_CASE("controlled model round-trip rebuilds the spec") {
  RateKernel k = fixtures::m3();
  CommittorSolution sol = solve_committor(k, StateSet{0}, StateSet{2});
  auto [spec, controlled] = doob_transform(k, sol.h, StateSet{0, 2});
  io::json j = io::controlled_to_json(k, spec, controlled);
  auto [spec2, controlled2] = io::controlled_from_json(k, j, "test");
  for (int x = 0; x < 3; ++x) {
    REQUIRE(spec.velocity.row(x).size() == spec2.velocity.row(x).size());
    for (std::size_t s = 0; s < spec.velocity.row(x).size(); ++s) {
      CHECK(spec.velocity.row(x)[s] == spec2.velocity.row(x)[s]);
    }
    for (const auto& e : controlled.out(x)) {
      CHECK(controlled2.rate(x, e.state) == e.rate);
    }
  }
}

TEST_CASE("pipeline: m3 end to end with all identity checks") {
  fs::path dir = make_temp_dir("pipeline");
  const std::string model_path = (dir / "m3.json").string();
  io::emit_model(model_path, fixtures::m3(), StateSet{0}, StateSet{2});

  PipelineConfig cfg;
  cfg.model_path = model_path;
  cfg.start = 1;
  cfg.n_reference = 20000;
  cfg.n_controlled = 4000;
  cfg.seed = 42;
  cfg.out_dir = (dir / "out").string();
  cfg.horizon = HorizonParams{1.0, 200};

  RunReport rep = run_pipeline(cfg);
  CHECK(rep.all_passed());
  CHECK_THAT(rep.h[1], WithinAbs(2.0 / 3.0, 1e-12));
  CHECK(rep.controlled_stats.n_hit_a == 0);
  CHECK(rep.controlled_stats.n_hit_b == rep.controlled_stats.n_paths);
  CHECK(std::abs(rep.reference_stats.hit_b_fraction.mean - 2.0 / 3.0) <=
        3.0 * rep.reference_stats.hit_b_fraction.std_error);
  // gamma^n sequence is recorded and non-decreasing
  REQUIRE(rep.regularized_values.size() == 3);
  CHECK(rep.regularized_values[0].second <= rep.regularized_values[1].second + 1e-12);
  CHECK(rep.regularized_values[1].second <= rep.regularized_values[2].second + 1e-12);
  REQUIRE(rep.finite_horizon.has_value());
  CHECK(std::abs(rep.finite_horizon->evolved_cost - rep.finite_horizon->value) <= 5e-4);
  // artifacts
  for (const char* name : {"report.json", "stats_reference.json", "stats_controlled.json",
                           "committor.json", "controlled_model.json"}) {
    CHECK(fs::exists(dir / "out" / name));
  }

  SECTION("same seed reproduces byte-identical statistics") {
    PipelineConfig cfg2 = cfg;
    cfg2.out_dir = (dir / "out2").string();
    run_pipeline(cfg2);
    CHECK(slurp(dir / "out" / "stats_reference.json") ==
          slurp(dir / "out2" / "stats_reference.json"));
    CHECK(slurp(dir / "out" / "stats_controlled.json") ==
          slurp(dir / "out2" / "stats_controlled.json"));
  }

  SECTION("overlapping sets are rejected before any compute") {
    PipelineConfig bad = cfg;
    bad.A_override = StateSet{0, 2};
    bad.B_override = StateSet{2};
    CHECK_THROWS_AS(run_pipeline(bad), SetsOverlapError);
  }
  fs::remove_all(dir);
}

TEST_CASE("command line interface end to end") {
  fs::path dir = make_temp_dir("cli");
  const std::string model = (dir / "m3.json").string();
  io::emit_model(model, fixtures::m3(), StateSet{0}, StateSet{2});

  SECTION("validate") {
    CHECK(run_cli("validate --model " + model) == 0);
    CHECK(run_cli("validate --model /nonexistent.json") == 1);
  }

  SECTION("committor then control then simulate") {
    const std::string h_path = (dir / "h.json").string();
    CHECK(run_cli("committor --model " + model + " --out " + h_path) == 0);
    io::json jh = io::read_json(h_path);
    ScalarField h = io::field_from_json(jh["h"], "h");
    CHECK_THAT(h[1], WithinAbs(2.0 / 3.0, 1e-10));
    CHECK(jh["residual"].get<double>() <= 1e-10);

    const std::string ctl_path = (dir / "controlled.json").string();
    CHECK(run_cli("control --model " + model + " --h " + h_path + " --absorbing A,B --out " +
                  ctl_path) == 0);
    io::json jc = io::read_json(ctl_path);
    CHECK(jc.contains("velocity"));

    const std::string stats_path = (dir / "stats.json").string();
    const std::string paths_path = (dir / "paths.csv").string();
    CHECK(run_cli("simulate --model " + model + " --control " + ctl_path +
                  " --start 1 --stop-sets A,B --n 2000 --seed 42 --out " + stats_path +
                  " --paths " + paths_path) == 0);
    io::json js = io::read_json(stats_path);
    CHECK(js["n_hit_b"].get<std::size_t>() == 2000);
    CHECK(js["n_hit_a"].get<std::size_t>() == 0);
    const std::string csv = slurp(paths_path);
    CHECK(csv.rfind("path_id,jump_index,time,state", 0) == 0);
  }

  SECTION("regularized committor") {
    const std::string h_path = (dir / "h2.json").string();
    CHECK(run_cli("committor --model " + model + " --regularize 2 --out " + h_path) == 0);
    io::json jh = io::read_json(h_path);
    CHECK(jh["n"].get<int>() == 2);
    ScalarField h = io::field_from_json(jh["h"], "h");
    CHECK_THAT(h[1], WithinAbs((2.0 + std::exp(-2.0)) / 3.0, 1e-10));
  }

  SECTION("finite-horizon subcommand") {
    const std::string m2 = (dir / "m2.json").string();
    io::emit_model(m2, fixtures::m2(), StateSet{0}, StateSet{1});
    const std::string f_path = (dir / "f.json").string();
    io::write_json(f_path, io::json{{"values", io::json::array({"inf", 0.0})}});
    const std::string mu_path = (dir / "mu.json").string();
    io::write_json(mu_path, io::json{{"weights", io::json::array({1.0, 0.0})}});
    const std::string out = (dir / "run.json").string();
    CHECK(run_cli("finite-horizon --model " + m2 + " --terminal " + f_path +
                  " --T 1.0 --steps 400 --cutoff-list 5,10,20 --mu " + mu_path + " --out " +
                  out) == 0);
    io::json jr = io::read_json(out);
    const double oracle = -std::log(0.5 * (1.0 - std::exp(-2.0)));
    CHECK_THAT(jr["value"].get<double>(), WithinAbs(oracle, 1e-6));
    CHECK(jr["cutoff"].size() == 3);
  }

  SECTION("pipeline subcommand exit codes and reproducibility") {
    io::json cfg{{"model", model},
                 {"start", 1},
                 {"n_reference", 20000},
                 {"n_controlled", 4000},
                 {"seed", 7},
                 {"out_dir", (dir / "p1").string()}};
    const std::string cfg_path = (dir / "cfg.json").string();
    io::write_json(cfg_path, cfg);
    CHECK(run_cli("pipeline --config " + cfg_path) == 0);

    cfg["out_dir"] = (dir / "p2").string();
    io::write_json(cfg_path, cfg);
    CHECK(run_cli("pipeline --config " + cfg_path) == 0);
    CHECK(slurp(dir / "p1" / "stats_reference.json") ==
          slurp(dir / "p2" / "stats_reference.json"));

    // the report differs only in its timestamp line
    std::string r1 = slurp(dir / "p1" / "report.json");
    std::string r2 = slurp(dir / "p2" / "report.json");
    auto strip_timestamp = [](std::string s) {
      const auto pos = s.find("\"generated_at\"");
      if (pos != std::string::npos) {
        const auto end = s.find('\n', pos);
        s.erase(pos, end - pos);
      }
      return s;
    };
    CHECK(strip_timestamp(r1) == strip_timestamp(r2));
  }
  fs::remove_all(dir);
}
