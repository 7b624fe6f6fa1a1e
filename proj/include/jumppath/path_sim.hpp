#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "jumppath/committor.hpp"
#include "jumppath/doob.hpp"
#include "jumppath/errors.hpp"
#include "jumppath/path_record.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/rng.hpp"

namespace jumppath {

namespace detail {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over a contiguous partition of [0, n). Results must be
/// written to per-index slots so the aggregation stays order-deterministic.
template <typename Fn>
inline void parallel_chunks(std::size_t n, int n_threads, Fn&& fn) {
  const int threads = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(n_threads)),
                                            std::max<std::size_t>(n, 1));
  if (threads <= 1 || n == 0) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) / static_cast<std::size_t>(threads);
  for (int t = 0; t < threads; ++t) {
    const std::size_t begin = static_cast<std::size_t>(t) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, t, begin, end]() {
      try {
        if (begin < end) fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

/// Exact stochastic simulation of the jump process: exponential holding time
/// with rate lambda(x), next state proportional to L(x, .). Deterministic
/// given the seed.
inline PathRecord sample_path(const RateKernel& k, int x0, const StopCondition& stop,
                              std::uint64_t seed) {
  if (x0 < 0 || x0 >= k.n_states()) {
    throw DimensionMismatchError("start state " + std::to_string(x0) + " out of range");
  }
  PathRecord rec;
  rec.start = x0;
  rec.seed = seed;

  auto classify = [&](int x) -> std::optional<StopReason> {
    if (!stop.stops_on_sets()) return std::nullopt;
    if (stop.A->contains(x)) return StopReason::HitA;
    if (stop.B->contains(x)) return StopReason::HitB;
    return std::nullopt;
  };

  if (auto hit = classify(x0)) {
    rec.stop_reason = *hit;
    rec.tau = 0.0;
    return rec;
  }

  std::mt19937_64 eng(seed);
  int x = x0;
  double t = 0.0;
  for (;;) {
    const double lam = k.exit_rate(x);
    if (lam == 0.0) {
      if (stop.horizon.has_value()) {
        rec.stop_reason = StopReason::HorizonT;
        rec.tau = *stop.horizon;
        return rec;
      }
      throw StuckAbsorbingError("path stuck at absorbing state " + std::to_string(x) +
                                " before any stop condition");
    }
    const double dt = unit_exponential(eng) / lam;
    if (stop.horizon.has_value() && t + dt > *stop.horizon) {
      rec.stop_reason = StopReason::HorizonT;
      rec.tau = *stop.horizon;
      return rec;
    }
    t += dt;
    const double r = uniform_half_open(eng) * lam;
    auto row = k.out(x);
    double cum = 0.0;
    int next = row.back().state;
    for (const RateEdge& e : row) {
      cum += e.rate;
      if (r < cum) {
        next = e.state;
        break;
      }
    }
    x = next;
    rec.jump_times.push_back(t);
    rec.states.push_back(x);
    if (auto hit = classify(x)) {
      rec.stop_reason = *hit;
      rec.tau = t;
      return rec;
    }
    if (rec.states.size() >= stop.max_jumps) {
      rec.stop_reason = StopReason::MaxJumps;
      rec.tau = t;
      return rec;
    }
  }
}

/// log Z along a path for the velocity field v against the base kernel:
///   sum_jumps log v(x-, x)  -  sum_segments dt * sum_y (v(x,y) - 1) L(x,y).
/// A jump across a pair with v = 0 makes the weight vanish: returns -inf.
inline double girsanov_log_weight(const PathRecord& path, const ControlSpec& spec,
                                  const RateKernel& base, const ScalarField& comp_rates) {
  if (spec.time_dependent()) {
    throw DimensionMismatchError("girsanov_log_weight expects a time-homogeneous control");
  }
  double log_z = 0.0;
  int x = path.start;
  double t_prev = 0.0;
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    const double tj = path.jump_times[i];
    const int y = path.states[i];
    log_z -= (tj - t_prev) * comp_rates[static_cast<std::size_t>(x)];
    const double v = spec.velocity.at(base, x, y);
    if (v <= 0.0) return -kInf;  // ZeroVelocityJump
    log_z += std::log(v);
    x = y;
    t_prev = tj;
  }
  log_z -= (path.tau - t_prev) * comp_rates[static_cast<std::size_t>(x)];
  return log_z;
}

inline double girsanov_log_weight(const PathRecord& path, const ControlSpec& spec,
                                  const RateKernel& base) {
  return girsanov_log_weight(path, spec, base, compensator_rates(base, spec));
}

/// Exact time integral of the entropy rate along a path: the integrand is
/// constant on each holding interval.
inline double running_cost_along_path(const PathRecord& path,
                                      const ScalarField& entropy_rates) {
  double cost = 0.0;
  int x = path.start;
  double t_prev = 0.0;
  for (std::size_t i = 0; i < path.states.size(); ++i) {
    cost += (path.jump_times[i] - t_prev) * entropy_rates[static_cast<std::size_t>(x)];
    t_prev = path.jump_times[i];
    x = path.states[i];
  }
  cost += (path.tau - t_prev) * entropy_rates[static_cast<std::size_t>(x)];
  return cost;
}

/// Per-state entropy rates sum_y ent(v(x,y)) L(x,y) for every state,
/// including dead rows (where suppressing all jumps costs lambda(x)).
inline ScalarField entropy_rates_all_states(const RateKernel& base, const ControlSpec& spec) {
  spec.velocity.check_shape(base, "velocity");
  ScalarField out(static_cast<std::size_t>(base.n_states()), 0.0);
  for (int x = 0; x < base.n_states(); ++x) {
    auto row = base.out(x);
    const auto& vr = spec.velocity.row(x);
    double acc = 0.0;
    for (std::size_t s = 0; s < row.size(); ++s) acc += ent(vr[s]) * row[s].rate;
    out[static_cast<std::size_t>(x)] = acc;
  }
  return out;
}

struct PathSummary {
  StopReason reason = StopReason::HorizonT;
  double tau = 0.0;
  int final_state = 0;
  std::uint64_t n_jumps = 0;
  double log_weight = 0.0;
  double running_cost = 0.0;
};

/// Simulates n_paths independent paths under sim_kernel and returns their
/// summaries in path order. When `spec` is given the summaries also carry the
/// Girsanov weight and running cost of each path against (spec, base); the
/// weight is the same functional of the path whether it was sampled under the
/// reference or the controlled kernel.
inline std::vector<PathSummary> run_paths(const RateKernel& sim_kernel, const RateKernel& base,
                                          const ControlSpec* spec, int x0,
                                          const StopCondition& stop, std::size_t n_paths,
                                          std::uint64_t master_seed, int n_threads) {
  ScalarField comp, erates;
  if (spec != nullptr) {
    comp = compensator_rates(base, *spec);
    erates = entropy_rates_all_states(base, *spec);
  }
  std::vector<PathSummary> out(n_paths);
  detail::parallel_chunks(n_paths, n_threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      PathRecord rec = sample_path(sim_kernel, x0, stop, path_seed(master_seed, i));
      PathSummary& s = out[i];
      s.reason = rec.stop_reason;
      s.tau = rec.tau;
      s.final_state = rec.final_state();
      s.n_jumps = rec.n_jumps();
      if (spec != nullptr) {
        s.log_weight = girsanov_log_weight(rec, *spec, base, comp);
        s.running_cost = running_cost_along_path(rec, erates);
      }
    }
  });
  return out;
}

namespace detail {

inline MeanWithError mean_with_error(std::span<const double> xs) {
  MeanWithError m;
  m.n = xs.size();
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double v : xs) sum += v;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double v : xs) ss += (v - m.mean) * (v - m.mean);
    m.std_error = std::sqrt(ss / (static_cast<double>(xs.size()) - 1.0) /
                            static_cast<double>(xs.size()));
  }
  return m;
}

}  // namespace detail

/// Aggregates path summaries; tau-dependent statistics skip capped paths.
inline EnsembleStats summarize_paths(std::span<const PathSummary> paths, bool weighted,
                                     std::uint64_t seed) {
  if (paths.size() < 2) throw NoPathsError("ensemble needs n_paths >= 2");
  EnsembleStats st;
  st.n_paths = paths.size();
  st.seed = seed;
  std::vector<double> taus, exps, logzs, costs;
  taus.reserve(paths.size());
  for (const PathSummary& p : paths) {
    switch (p.reason) {
      case StopReason::HitA: ++st.n_hit_a; break;
      case StopReason::HitB: ++st.n_hit_b; break;
      case StopReason::HorizonT: ++st.n_horizon; break;
      case StopReason::MaxJumps: ++st.n_max_jumps; break;
    }
    if (p.reason == StopReason::MaxJumps) continue;
    taus.push_back(p.tau);
    exps.push_back(std::exp(p.tau));
    if (weighted) {
      logzs.push_back(p.log_weight);
      costs.push_back(p.running_cost);
    }
  }
  const double n = static_cast<double>(st.n_paths);
  const double phat = static_cast<double>(st.n_hit_b) / n;
  st.hit_b_fraction = {phat, std::sqrt(phat * (1.0 - phat) / n), st.n_paths};
  st.mean_tau = detail::mean_with_error(taus);
  st.mean_exp_tau = detail::mean_with_error(exps);
  if (weighted) {
    st.mean_log_weight = detail::mean_with_error(logzs);
    st.mean_running_cost = detail::mean_with_error(costs);
  }
  // heavy-tail warning on E[e^tau]: top 1% of samples carrying > 50% of the
  // mean signals the integrability hypothesis may fail
  if (!exps.empty()) {
    std::vector<double> sorted = exps;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t top = std::max<std::size_t>(1, sorted.size() / 100);
    double top_sum = 0.0, total = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      total += sorted[i];
      if (i < top) top_sum += sorted[i];
    }
    st.heavy_tail_warning = (top_sum > 0.5 * total);
  }
  return st;
}

/// Simulates n_paths paths (under the controlled kernel when spec is given,
/// else the reference) and aggregates hit fractions, stopping-time
/// statistics, Girsanov weights, and running costs.
inline EnsembleStats estimate_ensemble(const RateKernel& k, const ControlSpec* spec, int x0,
                                       const StopCondition& stop, std::size_t n_paths,
                                       std::uint64_t seed, int n_threads = 1) {
  std::vector<PathSummary> paths;
  if (spec != nullptr) {
    RateKernel controlled = controlled_kernel(k, *spec);
    paths = run_paths(controlled, k, spec, x0, stop, n_paths, seed, n_threads);
  } else {
    paths = run_paths(k, k, nullptr, x0, stop, n_paths, seed, n_threads);
  }
  return summarize_paths(paths, spec != nullptr, seed);
}

struct ReweightReport {
  MeanWithError reference_side;   // E_ref[Z_tau g(X_tau)]
  MeanWithError controlled_side;  // E_ctrl[g(X_tau)]
  double difference = 0.0;
  double combined_se = 0.0;
  double sigmas = 3.0;
  bool pass = false;
};

/// Two-ensemble check of the change-of-measure identity
/// E_ref[Z_tau g(X_tau)] = E_ctrl[g(X_tau)] for a bounded positive velocity.
inline ReweightReport reweighting_check(const RateKernel& k, const ControlSpec& spec,
                                        const ScalarField& g, int x0, const StopCondition& stop,
                                        std::size_t n_paths, std::uint64_t seed,
                                        int n_threads = 1, double sigmas = 3.0) {
  check_field_size(k, g, "g");
  for (int x = 0; x < k.n_states(); ++x) {
    if (spec.absorbing.contains(x)) continue;
    for (double v : spec.velocity.row(x)) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw NegativeFieldError("reweighting_check requires 0 < v < inf on live pairs");
      }
    }
  }

  // reference side: weighted by Z
  std::vector<PathSummary> ref =
      run_paths(k, k, &spec, x0, stop, n_paths, mix64(seed ^ 0x7265666dULL), n_threads);
  std::vector<double> wref(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    wref[i] = std::exp(ref[i].log_weight) * g[static_cast<std::size_t>(ref[i].final_state)];
  }

  // controlled side: plain average
  RateKernel controlled = controlled_kernel(k, spec);
  std::vector<PathSummary> ctl = run_paths(controlled, k, &spec, x0, stop, n_paths,
                                           mix64(seed ^ 0x6374726cULL), n_threads);
  std::vector<double> wctl(ctl.size());
  for (std::size_t i = 0; i < ctl.size(); ++i) {
    wctl[i] = g[static_cast<std::size_t>(ctl[i].final_state)];
  }

  ReweightReport report;
  report.reference_side = detail::mean_with_error(wref);
  report.controlled_side = detail::mean_with_error(wctl);
  report.difference = report.reference_side.mean - report.controlled_side.mean;
  report.combined_se = std::hypot(report.reference_side.std_error,
                                  report.controlled_side.std_error);
  report.sigmas = sigmas;
  report.pass = std::abs(report.difference) <= sigmas * report.combined_se;
  return report;
}

struct MartingaleCheckpoint {
  double time = 0.0;
  MeanWithError value;  // mean of N_t over paths
  bool pass = false;
};

struct MartingaleReport {
  std::vector<MartingaleCheckpoint> checkpoints;
  double sigmas = 3.0;
  bool all_pass = true;
};

/// Zero-mean test of the compensated jump sum
///   N_t = sum_{jumps <= t} phi(X_-, X)  -  int_0^t sum_y phi(X_s, y) L(X_s, y) ds
/// under the kernel being simulated; a direct empirical reading of the
/// martingale problem.
inline MartingaleReport martingale_test(const RateKernel& sim_kernel, const PairField& phi,
                                        int x0, std::vector<double> checkpoints,
                                        std::size_t n_paths, std::uint64_t seed,
                                        int n_threads = 1, double sigmas = 3.0) {
  phi.check_shape(sim_kernel, "phi");
  if (checkpoints.empty()) throw DimensionMismatchError("need at least one checkpoint");
  std::sort(checkpoints.begin(), checkpoints.end());
  if (checkpoints.front() < 0.0) throw DimensionMismatchError("checkpoints must be >= 0");
  const double horizon = checkpoints.back();

  // phi-compensator rate per state under the simulated kernel
  ScalarField phi_rate(static_cast<std::size_t>(sim_kernel.n_states()), 0.0);
  for (int x = 0; x < sim_kernel.n_states(); ++x) {
    auto row = sim_kernel.out(x);
    const auto& pr = phi.row(x);
    double acc = 0.0;
    for (std::size_t s = 0; s < row.size(); ++s) acc += pr[s] * row[s].rate;
    phi_rate[static_cast<std::size_t>(x)] = acc;
  }

  const std::size_t n_check = checkpoints.size();
  std::vector<double> values(n_paths * n_check, 0.0);
  detail::parallel_chunks(n_paths, n_threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      PathRecord rec = sample_path(sim_kernel, x0, StopCondition::time_horizon(horizon),
                                   path_seed(seed, i));
      for (std::size_t c = 0; c < n_check; ++c) {
        const double tc = checkpoints[c];
        double acc = 0.0;
        int x = rec.start;
        double t_prev = 0.0;
        for (std::size_t j = 0; j < rec.states.size() && rec.jump_times[j] <= tc; ++j) {
          acc -= (rec.jump_times[j] - t_prev) * phi_rate[static_cast<std::size_t>(x)];
          acc += phi.at(sim_kernel, x, rec.states[j]);
          t_prev = rec.jump_times[j];
          x = rec.states[j];
        }
        acc -= (tc - t_prev) * phi_rate[static_cast<std::size_t>(x)];
        values[i * n_check + c] = acc;
      }
    }
  });

  MartingaleReport report;
  report.sigmas = sigmas;
  for (std::size_t c = 0; c < n_check; ++c) {
    std::vector<double> column(n_paths);
    for (std::size_t i = 0; i < n_paths; ++i) column[i] = values[i * n_check + c];
    MartingaleCheckpoint chk;
    chk.time = checkpoints[c];
    chk.value = detail::mean_with_error(column);
    chk.pass = std::abs(chk.value.mean) <= sigmas * chk.value.std_error ||
               (chk.value.mean == 0.0 && chk.value.std_error == 0.0);
    report.all_pass = report.all_pass && chk.pass;
    report.checkpoints.push_back(chk);
  }
  return report;
}

/// Monte-Carlo Dynkin check: the sampled mean of h(X_tau) against h(x0).
inline DynkinReport dynkin_mc(const RateKernel& k, const ScalarField& h, int x0,
                              const StateSet& A, const StateSet& B, std::size_t n_paths,
                              std::uint64_t seed, int n_threads = 1) {
  check_field_size(k, h, "h");
  check_ab_pair(A, B, k.n_states());
  std::vector<PathSummary> paths =
      run_paths(k, k, nullptr, x0, StopCondition::sets(A, B), n_paths, seed, n_threads);
  std::vector<double> vals(paths.size());
  for (std::size_t i = 0; i < paths.size(); ++i) {
    vals[i] = h[static_cast<std::size_t>(paths[i].final_state)];
  }
  MeanWithError m = detail::mean_with_error(vals);
  DynkinReport report;
  report.n_paths = paths.size();
  report.empirical_mean = m.mean;
  report.std_error = m.std_error;
  report.reference = h[static_cast<std::size_t>(x0)];
  report.gap = std::abs(m.mean - report.reference);
  return report;
}

}  // namespace jumppath
