// Command-line front end: validate, committor, control, finite-horizon,
// simulate, and pipeline subcommands over the JSON model format.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jumppath/jumppath.hpp"

namespace {

using namespace jumppath;

int env_threads_override(int cli_threads) {
  if (const char* env = std::getenv("JUMPPATH_THREADS")) {
    try {
      return std::stoi(env);
    } catch (...) {
      throw ParseError("JUMPPATH_THREADS is not an integer");
    }
  }
  return cli_threads;
}

/// Parses a comma list whose entries are 'A', 'B', or explicit state indices.
StateSet parse_set_spec(const io::ModelFile& model, const std::string& spec_str) {
  std::vector<int> states;
  std::stringstream ss(spec_str);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "A" || tok == "a") {
      for (int x : model.A.members()) states.push_back(x);
    } else if (tok == "B" || tok == "b") {
      for (int x : model.B.members()) states.push_back(x);
    } else {
      try {
        states.push_back(std::stoi(tok));
      } catch (...) {
        throw ParseError("unrecognized set token \"" + tok + "\" (expected A, B, or an index)");
      }
    }
  }
  return StateSet(std::move(states));
}

int run_validate(const std::string& model_path) {
  io::ModelFile model = io::load_model(model_path);
  ValidationReport report = validate_kernel(model.kernel);
  std::cout << "model: " << model_path << "\n"
            << "n_states: " << model.kernel.n_states() << "\n"
            << "c_L: " << report.total_intensity << "\n";
  std::cout << "exit_rates:";
  for (double l : report.exit_rates) std::cout << ' ' << l;
  std::cout << "\nabsorbing_states:";
  for (int x : report.absorbing_states) std::cout << ' ' << x;
  std::cout << "\n";
  if (report.zero_intensity_flag) {
    std::cout << "warning: c_L = 0 (no jumps anywhere)\n";
  }
  if (!model.A.empty() || !model.B.empty()) {
    check_ab_pair(model.A, model.B, model.kernel.n_states());
    std::cout << "A/B sets: ok\n";
  }
  return 0;
}

int run_committor(const std::string& model_path, int regularize, const std::string& out) {
  io::ModelFile model = io::load_model(model_path);
  CommittorSolution sol = (regularize >= 0)
                              ? solve_committor_regularized(model.kernel, model.A, model.B,
                                                            regularize)
                              : solve_committor(model.kernel, model.A, model.B);
  io::json j = io::committor_to_json(sol);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out, j);
    std::cout << "committor written to " << out << " (residual " << sol.residual << ")\n";
  }
  return 0;
}

int run_control(const std::string& model_path, const std::string& h_path,
                const std::string& absorbing_spec, const std::string& out) {
  io::ModelFile model = io::load_model(model_path);
  ScalarField h = io::committor_field_from_json(io::read_json(h_path), h_path);
  StateSet absorbing = parse_set_spec(model, absorbing_spec);
  auto [spec, controlled] = doob_transform(model.kernel, h, absorbing);
  io::json j = io::controlled_to_json(model.kernel, spec, controlled);
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out, j);
    std::cout << "controlled kernel written to " << out << " (c_L "
              << controlled.total_intensity() << ")\n";
  }
  return 0;
}

int run_finite_horizon(const std::string& model_path, const std::string& terminal_path,
                       double T, int steps, const std::vector<int>& cutoff_list,
                       const std::string& mu_path, const std::string& out) {
  io::ModelFile model = io::load_model(model_path);
  const RateKernel& k = model.kernel;
  io::json jf = io::read_json(terminal_path);
  ScalarField f = io::field_from_json(jf.is_object() ? jf.at("values") : jf, terminal_path);
  check_field_size(k, f, "terminal cost");

  Distribution mu = mu_path.empty()
                        ? Distribution::uniform(k.n_states())
                        : io::distribution_from_json(io::read_json(mu_path), mu_path);

  const TimeGrid grid = TimeGrid::uniform(T, steps);
  BackwardSolution sol = solve_bke(k, f, grid);
  DensityFluxTrajectory traj = evolve_controlled_density(k, sol, mu);

  io::json j;
  j["T"] = T;
  j["n_steps"] = steps;
  j["value"] = deterministic_value(sol, mu);
  j["action"] = traj.action;
  j["evolved_cost"] = io::detail::finite_or_null(control_cost(traj, f));
  j["hje_residual"] = hje_residual(k, sol);
  j["max_mass_error"] = traj.max_mass_error;
  j["psi0"] = io::field_to_json(sol.psi.front());
  io::json hgrid = io::json::array();
  for (const ScalarField& hi : sol.h) hgrid.push_back(io::field_to_json(hi));
  j["h"] = std::move(hgrid);

  if (!cutoff_list.empty()) {
    CutoffReport cut = cutoff_convergence_study(k, f, grid, cutoff_list, mu);
    io::json arr = io::json::array();
    for (const CutoffEntry& e : cut.entries) {
      arr.push_back({{"n", e.n},
                     {"max_gap_t0", e.max_gap_t0},
                     {"max_gap_any_node", e.max_gap_any_node},
                     {"bound_t0", e.bound_t0},
                     {"value", e.value}});
    }
    j["cutoff"] = std::move(arr);
    j["cutoff_value_limit"] = cut.value_limit;
  }

  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out, j);
    std::cout << "finite-horizon run written to " << out << "\n";
  }
  return 0;
}

int run_simulate(const std::string& model_path, const std::string& control_path, int start,
                 const std::string& stop_sets, double horizon, std::size_t n_paths,
                 std::uint64_t seed, int threads, const std::string& out,
                 const std::string& paths_csv) {
  io::ModelFile model = io::load_model(model_path);
  const RateKernel& base = model.kernel;

  std::optional<ControlSpec> spec;
  std::optional<RateKernel> controlled;
  if (!control_path.empty()) {
    auto [s, ck] = io::controlled_from_json(base, io::read_json(control_path), control_path);
    spec = std::move(s);
    controlled = std::move(ck);
  }

  StopCondition stop;
  if (!stop_sets.empty()) {
    // the comma list names which model sets stop the path, normally "A,B"
    StateSet requested = parse_set_spec(model, stop_sets);
    StateSet a_part, b_part;
    std::vector<int> a_states, b_states;
    for (int x : requested.members()) {
      if (model.B.contains(x)) {
        b_states.push_back(x);
      } else {
        a_states.push_back(x);
      }
    }
    if (b_states.empty()) throw ParseError("--stop-sets must include B states");
    if (a_states.empty()) throw ParseError("--stop-sets must include A states");
    stop = StopCondition::sets(StateSet(std::move(a_states)), StateSet(std::move(b_states)));
  } else if (horizon > 0.0) {
    stop = StopCondition::time_horizon(horizon);
  } else {
    throw ParseError("simulate needs --stop-sets or --horizon");
  }

  const RateKernel& sim_kernel = controlled.has_value() ? *controlled : base;
  std::vector<PathSummary> summaries =
      run_paths(sim_kernel, base, spec.has_value() ? &*spec : nullptr, start, stop, n_paths,
                seed, threads);
  EnsembleStats stats = summarize_paths(summaries, spec.has_value(), seed);

  io::json j = io::stats_to_json(stats);
  j["start"] = start;
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    io::write_json(out, j);
    std::cout << "stats written to " << out << "\n";
  }

  if (!paths_csv.empty()) {
    std::ofstream csv(paths_csv);
    if (!csv) throw ParseError("cannot write " + paths_csv);
    csv << "path_id,jump_index,time,state\n";
    for (std::size_t i = 0; i < n_paths; ++i) {
      PathRecord rec = sample_path(sim_kernel, start, stop, path_seed(seed, i));
      io::append_path_csv(csv, i, rec);
    }
    std::cout << "paths written to " << paths_csv << "\n";
  }
  return 0;
}

int run_pipeline_cmd(const std::string& config_path, const std::string& out_override,
                     std::optional<std::uint64_t> seed_override, int threads) {
  PipelineConfig cfg = pipeline_config_from_json(io::read_json(config_path), config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (seed_override.has_value()) cfg.seed = *seed_override;
  if (threads > 0) cfg.threads = threads;
  cfg.threads = env_threads_override(cfg.threads);

  RunReport rep = run_pipeline(cfg);
  for (const IdentityCheck& c : rep.checks) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " (observed " << c.observed
              << ", target " << c.target << ", tolerance " << c.tolerance << ")\n";
  }
  std::cout << (rep.all_passed() ? "pipeline: all identity checks passed\n"
                                 : "pipeline: some identity checks FAILED\n");
  if (!cfg.out_dir.empty()) std::cout << "artifacts in " << cfg.out_dir << "\n";
  return rep.all_passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"transition-path tools for finite-state Markov jump processes"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 42;
  bool seed_given = false;
  int threads = 0;
  std::string out;
  app.add_option("--seed", seed, "master RNG seed")
      ->each([&](const std::string&) { seed_given = true; });
  app.add_option("--threads", threads, "worker threads (0 = hardware; JUMPPATH_THREADS overrides)");
  app.add_option("--out", out, "output path");

  auto* validate = app.add_subcommand("validate", "check a model file, report kernel diagnostics");
  std::string v_model;
  validate->add_option("--model", v_model, "model JSON")->required();

  auto* committor = app.add_subcommand("committor", "solve the committor boundary value problem");
  std::string c_model;
  int c_reg = -1;
  committor->add_option("--model", c_model, "model JSON")->required();
  committor->add_option("--regularize", c_reg, "boundary value e^{-N} on A instead of 0");

  auto* control = app.add_subcommand("control", "build the Doob-transformed controlled kernel");
  control->set_help_flag("--help", "print help");  // frees -h for the field option
  std::string k_model, k_h, k_absorbing = "A,B";
  control->add_option("--model", k_model, "model JSON")->required();
  control->add_option("--h", k_h, "committor JSON ({\"h\": [...]})")->required();
  control->add_option("--absorbing", k_absorbing, "comma list of A, B, or state indices");

  auto* fh = app.add_subcommand("finite-horizon", "backward solve, controlled evolution, value");
  std::string f_model, f_terminal, f_mu;
  double f_T = 1.0;
  int f_steps = 400;
  std::vector<int> f_cutoffs;
  fh->add_option("--model", f_model, "model JSON")->required();
  fh->add_option("--terminal", f_terminal, "terminal cost JSON ({\"values\": [...]}, \"inf\" allowed)")
      ->required();
  fh->add_option("--T", f_T, "horizon")->required();
  fh->add_option("--steps", f_steps, "number of grid steps")->required();
  fh->add_option("--cutoff-list", f_cutoffs, "cut-off levels n for f ^ n")->delimiter(',');
  fh->add_option("--mu", f_mu, "initial distribution JSON (default uniform)");

  auto* sim = app.add_subcommand("simulate", "sample jump paths, aggregate ensemble statistics");
  std::string s_model, s_control, s_stop_sets, s_paths;
  int s_start = 0;
  double s_horizon = 0.0;
  std::size_t s_n = 10000;
  sim->add_option("--model", s_model, "model JSON")->required();
  sim->add_option("--control", s_control, "controlled-kernel JSON from `control`");
  sim->add_option("--start", s_start, "start state")->required();
  sim->add_option("--stop-sets", s_stop_sets, "stop on first entry (e.g. A,B)");
  sim->add_option("--horizon", s_horizon, "stop at fixed time T");
  sim->add_option("--n", s_n, "number of paths");
  sim->add_option("--paths", s_paths, "also dump paths as CSV");

  auto* pipe = app.add_subcommand("pipeline", "end-to-end transition-path run with identity checks");
  std::string p_config;
  pipe->add_option("--config", p_config, "pipeline config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    threads = env_threads_override(threads);
    if (validate->parsed()) return run_validate(v_model);
    if (committor->parsed()) return run_committor(c_model, c_reg, out);
    if (control->parsed()) return run_control(k_model, k_h, k_absorbing, out);
    if (fh->parsed()) {
      return run_finite_horizon(f_model, f_terminal, f_T, f_steps, f_cutoffs, f_mu, out);
    }
    if (sim->parsed()) {
      return run_simulate(s_model, s_control, s_start, s_stop_sets, s_horizon, s_n, seed,
                          threads, out, s_paths);
    }
    if (pipe->parsed()) {
      return run_pipeline_cmd(p_config, out,
                              seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt,
                              threads);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
