#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jumppath/committor.hpp"
#include "jumppath/doob.hpp"
#include "jumppath/errors.hpp"
#include "jumppath/finite_horizon.hpp"
#include "jumppath/model_io.hpp"
#include "jumppath/path_sim.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/version.hpp"

namespace jumppath {

struct PipelineTolerances {
  double mc_sigmas = 3.0;      // Monte-Carlo checks judged at this many se
  double identity_abs = 1e-12; // absolute tolerance for per-path identities
};

struct HorizonParams {
  double T = 1.0;
  int n_steps = 400;
};

struct PipelineConfig {
  std::string model_path;
  std::optional<StateSet> A_override;
  std::optional<StateSet> B_override;
  int start = -1;  // -1: first interior state with h > 0
  std::vector<int> regularization = {2, 5, 10};
  std::size_t n_reference = 100000;
  std::size_t n_controlled = 10000;
  std::uint64_t seed = 42;
  int threads = 1;
  PipelineTolerances tolerances;
  std::string out_dir;  // empty: keep everything in memory
  std::optional<HorizonParams> horizon;
};

/// One identity check with the tolerance it was judged against.
struct IdentityCheck {
  std::string name;
  bool pass = false;
  double observed = 0.0;
  double target = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct FiniteHorizonLeg {
  double T = 0.0;
  int n_steps = 0;
  double value = 0.0;          // -int psi_0 d mu
  double evolved_cost = 0.0;   // int f dp_T + action of the optimal pair
  double hje_residual = 0.0;
  double max_mass_error = 0.0;
};

struct RunReport {
  std::string model_path;
  StateSet A;
  StateSet B;
  int start = 0;
  ScalarField h;
  double committor_residual = 0.0;
  double harmonicity = 0.0;
  double reference_c = 0.0;
  double controlled_c = 0.0;
  EnsembleStats reference_stats;
  EnsembleStats controlled_stats;
  std::vector<std::pair<int, double>> regularized_values;  // (n, gamma_n at start)
  std::vector<IdentityCheck> checks;
  std::optional<FiniteHorizonLeg> finite_horizon;
  std::uint64_t seed = 0;
  std::string version;

  bool all_passed() const {
    for (const IdentityCheck& c : checks) {
      if (!c.pass) return false;
    }
    return true;
  }
};

namespace detail {

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%FT%TZ", &tm);
  return buf;
}

}  // namespace detail

inline io::json report_to_json(const RunReport& rep, bool include_timestamp) {
  io::json j;
  j["version"] = rep.version;
  j["model"] = rep.model_path;
  j["A"] = rep.A.members();
  j["B"] = rep.B.members();
  j["start"] = rep.start;
  j["seed"] = rep.seed;
  j["committor"] = {{"h", io::field_to_json(rep.h)},
                    {"residual", rep.committor_residual},
                    {"harmonicity", rep.harmonicity}};
  j["kernel"] = {{"c_L", rep.reference_c}, {"controlled_c_L", rep.controlled_c}};
  j["reference_stats"] = io::stats_to_json(rep.reference_stats);
  j["controlled_stats"] = io::stats_to_json(rep.controlled_stats);
  io::json regs = io::json::array();
  for (const auto& [n, gamma] : rep.regularized_values) {
    regs.push_back({{"n", n}, {"gamma", gamma}});
  }
  j["regularized"] = std::move(regs);
  io::json checks = io::json::array();
  for (const IdentityCheck& c : rep.checks) {
    checks.push_back({{"name", c.name},
                      {"pass", c.pass},
                      {"observed", io::detail::finite_or_null(c.observed)},
                      {"target", io::detail::finite_or_null(c.target)},
                      {"tolerance", c.tolerance},
                      {"detail", c.detail}});
  }
  j["identity_checks"] = std::move(checks);
  if (rep.finite_horizon.has_value()) {
    const FiniteHorizonLeg& fh = *rep.finite_horizon;
    j["finite_horizon"] = {{"T", fh.T},
                           {"n_steps", fh.n_steps},
                           {"value", fh.value},
                           {"evolved_cost", fh.evolved_cost},
                           {"hje_residual", fh.hje_residual},
                           {"max_mass_error", fh.max_mass_error}};
  }
  j["all_passed"] = rep.all_passed();
  if (include_timestamp) j["generated_at"] = detail::utc_timestamp();
  return j;
}

/// Committor solve -> Doob control -> reference and controlled ensembles ->
/// identity checks. Structural failures throw; statistical failures are
/// recorded as failed checks.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  if (!(cfg.tolerances.mc_sigmas > 0.0) || !(cfg.tolerances.identity_abs > 0.0)) {
    throw DimensionMismatchError("pipeline tolerances must be positive");
  }
  io::ModelFile model = io::load_model(cfg.model_path);
  const RateKernel& k = model.kernel;
  const StateSet A = cfg.A_override.value_or(model.A);
  const StateSet B = cfg.B_override.value_or(model.B);
  check_ab_pair(A, B, k.n_states());
  const StateSet boundary = StateSet::unite(A, B);
  const double sigmas = cfg.tolerances.mc_sigmas;

  RunReport rep;
  rep.model_path = cfg.model_path;
  rep.A = A;
  rep.B = B;
  rep.seed = cfg.seed;
  rep.version = version_string;
  rep.reference_c = k.total_intensity();

  CommittorSolution committor = solve_committor(k, A, B);
  rep.h = committor.h;
  rep.committor_residual = committor.residual;

  std::vector<int> interior_list;
  for (int x = 0; x < k.n_states(); ++x) {
    if (!boundary.contains(x)) interior_list.push_back(x);
  }
  const StateSet interior(interior_list);
  rep.harmonicity = harmonicity_certificate(k, committor.h, interior);

  int start = cfg.start;
  if (start < 0) {
    for (int x : interior_list) {
      if (committor.h[static_cast<std::size_t>(x)] > 0.0) { start = x; break; }
    }
    if (start < 0) throw ZeroDivisorError("no interior state with positive committor");
  } else {
    if (start >= k.n_states() || boundary.contains(start)) {
      throw DimensionMismatchError("start state must be an interior state");
    }
    if (!(committor.h[static_cast<std::size_t>(start)] > 0.0)) {
      throw ZeroDivisorError("start state cannot reach B; control undefined there");
    }
  }
  rep.start = start;
  const double gamma_limit = -std::log(committor.h[static_cast<std::size_t>(start)]);

  // regularized value sequence gamma^n = -log h^n(start), non-decreasing to gamma
  std::vector<int> regs = cfg.regularization;
  std::sort(regs.begin(), regs.end());
  regs.erase(std::unique(regs.begin(), regs.end()), regs.end());
  {
    bool monotone = true;
    double prev = -kInf;
    double worst = 0.0;
    for (int n : regs) {
      CommittorSolution hn = solve_committor_regularized(k, A, B, n);
      const double gamma_n = -std::log(hn.h[static_cast<std::size_t>(start)]);
      rep.regularized_values.emplace_back(n, gamma_n);
      if (gamma_n < prev - 1e-12 || gamma_n > gamma_limit + 1e-9) {
        monotone = false;
        worst = std::max({worst, prev - gamma_n, gamma_n - gamma_limit});
      }
      prev = gamma_n;
    }
    rep.checks.push_back({"regularized_monotonicity", monotone, worst, 0.0, 1e-12,
                          "gamma_n non-decreasing in n and bounded by gamma"});
  }

  auto [spec, controlled] = doob_transform(k, committor.h, boundary);
  rep.controlled_c = controlled.total_intensity();

  const StopCondition stop = StopCondition::sets(A, B);

  // reference ensemble and the Dynkin / hitting-probability check
  std::vector<PathSummary> ref_paths = run_paths(
      k, k, nullptr, start, stop, cfg.n_reference, mix64(cfg.seed ^ 0x7265ULL), cfg.threads);
  rep.reference_stats = summarize_paths(ref_paths, false, cfg.seed);
  {
    const MeanWithError& hb = rep.reference_stats.hit_b_fraction;
    const double target = committor.h[static_cast<std::size_t>(start)];
    const double gap = std::abs(hb.mean - target);
    const double tol = sigmas * std::max(hb.std_error, 1e-300);
    rep.checks.push_back({"dynkin", gap <= tol, hb.mean, target, tol,
                          "reference hit-B fraction vs committor value"});
  }

  {
    // reduced problem over terminal laws: the tilt nu = h * R_tau / <h, R_tau>
    // of the empirical hitting law realizes E_nu[f + log(dnu/dR_tau)] = gamma
    std::vector<double> hit_mass(static_cast<std::size_t>(k.n_states()), 0.0);
    for (const PathSummary& s : ref_paths) {
      hit_mass[static_cast<std::size_t>(s.final_state)] += 1.0;
    }
    for (double& m : hit_mass) m /= static_cast<double>(ref_paths.size());
    double h_hat = 0.0;
    for (int x = 0; x < k.n_states(); ++x) {
      h_hat += committor.h[static_cast<std::size_t>(x)] * hit_mass[static_cast<std::size_t>(x)];
    }
    double value_hat = 0.0;
    for (int x = 0; x < k.n_states(); ++x) {
      const double r = hit_mass[static_cast<std::size_t>(x)];
      if (r == 0.0) continue;
      const double nu = committor.h[static_cast<std::size_t>(x)] * r / h_hat;
      if (nu == 0.0) continue;  // infinite terminal cost carries no tilted mass
      const double f_term = A.contains(x) ? kInf : 0.0;
      value_hat += nu * (f_term + std::log(nu / r));
    }
    const MeanWithError& hb = rep.reference_stats.hit_b_fraction;
    const double tol = sigmas * hb.std_error / std::max(h_hat, 1e-300);
    const double gap = std::abs(value_hat - gamma_limit);
    rep.checks.push_back({"reduced_problem", gap <= tol, value_hat, gamma_limit, tol,
                          "terminal-law tilt of the empirical hitting law attains gamma"});
  }

  // controlled ensemble: A-avoidance and the per-path value identity
  std::vector<PathSummary> ctl_paths =
      run_paths(controlled, k, &spec, start, stop, cfg.n_controlled,
                mix64(cfg.seed ^ 0x6374ULL), cfg.threads);
  rep.controlled_stats = summarize_paths(ctl_paths, true, cfg.seed);
  {
    const bool pass = rep.controlled_stats.n_hit_a == 0 &&
                      rep.controlled_stats.n_hit_b == rep.controlled_stats.n_paths;
    rep.checks.push_back({"a_avoidance", pass,
                          static_cast<double>(rep.controlled_stats.n_hit_a), 0.0, 0.0,
                          "controlled paths never enter A"});
  }
  {
    double worst = 0.0;
    for (const PathSummary& s : ctl_paths) {
      // f_AB(X_tau) = 0 on B, so log Z must equal gamma = -log h(start)
      worst = std::max(worst, std::abs(s.log_weight - gamma_limit));
    }
    rep.checks.push_back({"path_value_identity", worst <= cfg.tolerances.identity_abs, worst,
                          0.0, cfg.tolerances.identity_abs,
                          "per-path log Z + log h(start) = 0"});
  }
  {
    // entropy cost of the change of measure: running cost minus log Z has
    // zero mean under the controlled law
    std::vector<double> diffs(ctl_paths.size());
    for (std::size_t i = 0; i < ctl_paths.size(); ++i) {
      diffs[i] = ctl_paths[i].running_cost - ctl_paths[i].log_weight;
    }
    MeanWithError d = detail::mean_with_error(diffs);
    const bool pass = std::abs(d.mean) <= sigmas * d.std_error ||
                      (d.mean == 0.0 && d.std_error == 0.0);
    rep.checks.push_back({"entropy_cost", pass, d.mean, 0.0, sigmas * d.std_error,
                          "mean running cost equals mean log Z"});
  }

  // bounded regularized control: Z-normalization and cross-ensemble reweighting
  {
    const int zn = regs.empty() ? 2 : regs.front();
    CommittorSolution hn = solve_committor_regularized(k, A, B, zn);
    auto [spec_n, controlled_n] = doob_transform(k, hn.h, boundary);
    (void)controlled_n;
    std::vector<PathSummary> zref =
        run_paths(k, k, &spec_n, start, stop, cfg.n_reference,
                  mix64(cfg.seed ^ 0x7265ULL), cfg.threads);
    std::vector<double> z(zref.size());
    for (std::size_t i = 0; i < zref.size(); ++i) z[i] = std::exp(zref[i].log_weight);
    MeanWithError zm = detail::mean_with_error(z);
    const double tol = sigmas * zm.std_error;
    rep.checks.push_back({"z_normalization", std::abs(zm.mean - 1.0) <= tol, zm.mean, 1.0,
                          tol, "E_ref[Z_tau] = 1 for the n=" + std::to_string(zn) +
                               " regularized control"});

    ScalarField g(static_cast<std::size_t>(k.n_states()), 0.0);
    for (int x : B.members()) g[static_cast<std::size_t>(x)] = 1.0;
    ReweightReport rw = reweighting_check(k, spec_n, g, start, stop, cfg.n_reference,
                                          mix64(cfg.seed ^ 0x7277ULL), cfg.threads, sigmas);
    rep.checks.push_back({"reweighting", rw.pass, rw.difference, 0.0,
                          sigmas * rw.combined_se,
                          "E_ref[Z g(X_tau)] vs E_ctrl[g(X_tau)], g = 1_B"});
  }

  // martingale-problem checks for the reference and controlled kernels
  {
    auto summarize = [](const MartingaleReport& m, double& worst, double& tol) {
      for (const auto& c : m.checkpoints) {
        worst = std::max(worst, std::abs(c.value.mean));
        tol = std::max(tol, m.sigmas * c.value.std_error);
      }
    };
    PairField one_ref(k, 1.0);
    MartingaleReport mref = martingale_test(k, one_ref, start, {0.5, 1.0, 2.0},
                                            cfg.n_controlled, mix64(cfg.seed ^ 0x6d31ULL),
                                            cfg.threads, sigmas);
    double worst = 0.0, tol = 0.0;
    summarize(mref, worst, tol);
    rep.checks.push_back({"martingale_reference", mref.all_pass, worst, 0.0, tol,
                          "compensated jump sums have zero mean (phi = 1)"});

    PairField one_ctl(controlled, 1.0);
    MartingaleReport mctl = martingale_test(controlled, one_ctl, start, {0.5, 1.0, 2.0},
                                            cfg.n_controlled, mix64(cfg.seed ^ 0x6d32ULL),
                                            cfg.threads, sigmas);
    worst = 0.0;
    tol = 0.0;
    summarize(mctl, worst, tol);
    rep.checks.push_back({"martingale_controlled", mctl.all_pass, worst, 0.0, tol,
                          "controlled kernel solves its martingale problem (phi = 1)"});
  }

  // optional finite-horizon leg with the transition-path terminal cost
  if (cfg.horizon.has_value()) {
    const HorizonParams& hp = *cfg.horizon;
    ScalarField f(static_cast<std::size_t>(k.n_states()), 0.0);
    for (int x : A.members()) f[static_cast<std::size_t>(x)] = kInf;
    const TimeGrid grid = TimeGrid::uniform(hp.T, hp.n_steps);
    BackwardSolution sol = solve_bke(k, f, grid);
    const Distribution mu = Distribution::delta(k.n_states(), start);
    DensityFluxTrajectory traj = evolve_controlled_density(k, sol, mu);
    FiniteHorizonLeg leg;
    leg.T = hp.T;
    leg.n_steps = hp.n_steps;
    leg.value = deterministic_value(sol, mu);
    leg.evolved_cost = control_cost(traj, f);
    leg.hje_residual = hje_residual(k, sol);
    leg.max_mass_error = traj.max_mass_error;
    rep.finite_horizon = leg;
    const double gap = std::abs(leg.evolved_cost - leg.value);
    rep.checks.push_back({"finite_horizon_duality", gap <= 5e-4, gap, 0.0, 5e-4,
                          "evolved terminal + action vs -int psi_0 d mu"});
  }

  if (!cfg.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    io::write_json((dir / "report.json").string(), report_to_json(rep, true));
    io::write_json((dir / "stats_reference.json").string(),
                   io::stats_to_json(rep.reference_stats));
    io::write_json((dir / "stats_controlled.json").string(),
                   io::stats_to_json(rep.controlled_stats));
    io::write_json((dir / "committor.json").string(), io::committor_to_json(committor));
    io::write_json((dir / "controlled_model.json").string(),
                   io::controlled_to_json(k, spec, controlled));
  }
  return rep;
}

inline PipelineConfig pipeline_config_from_json(const io::json& j, const std::string& ctx) {
  PipelineConfig cfg;
  cfg.model_path = io::detail::require(j, "model", ctx).get<std::string>();
  if (!std::filesystem::exists(cfg.model_path)) {
    throw ParseError(ctx + ": model file " + cfg.model_path + " does not exist");
  }
  if (j.contains("A")) cfg.A_override = StateSet(io::detail::int_list(j["A"], "A", ctx));
  if (j.contains("B")) cfg.B_override = StateSet(io::detail::int_list(j["B"], "B", ctx));
  if (cfg.A_override && cfg.B_override && cfg.A_override->intersects(*cfg.B_override)) {
    throw SetsOverlapError(ctx + ": sets A and B overlap");
  }
  if (j.contains("start")) cfg.start = j["start"].get<int>();
  if (j.contains("regularization")) {
    cfg.regularization = io::detail::int_list(j["regularization"], "regularization", ctx);
  }
  if (j.contains("n_reference")) cfg.n_reference = j["n_reference"].get<std::size_t>();
  if (j.contains("n_controlled")) cfg.n_controlled = j["n_controlled"].get<std::size_t>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("tolerances")) {
    const auto& t = j["tolerances"];
    if (t.contains("mc_sigmas")) cfg.tolerances.mc_sigmas = t["mc_sigmas"].get<double>();
    if (t.contains("identity_abs")) {
      cfg.tolerances.identity_abs = t["identity_abs"].get<double>();
    }
    if (!(cfg.tolerances.mc_sigmas > 0.0) || !(cfg.tolerances.identity_abs > 0.0)) {
      throw ParseError(ctx + ": tolerance fields must be positive");
    }
  }
  if (j.contains("horizon")) {
    HorizonParams hp;
    hp.T = io::detail::require(j["horizon"], "T", ctx).get<double>();
    hp.n_steps = io::detail::require(j["horizon"], "steps", ctx).get<int>();
    cfg.horizon = hp;
  }
  return cfg;
}

}  // namespace jumppath
