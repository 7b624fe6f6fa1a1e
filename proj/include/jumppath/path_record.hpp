#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "jumppath/state_set.hpp"

namespace jumppath {

enum class StopReason { HitA, HitB, HorizonT, MaxJumps };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::HitA: return "HitA";
    case StopReason::HitB: return "HitB";
    case StopReason::HorizonT: return "HorizonT";
    case StopReason::MaxJumps: return "MaxJumps";
  }
  return "?";
}

/// One sampled cadlag trajectory. jump_times is strictly increasing and
/// states[i] is the state entered at jump_times[i]; the path sits in `start`
/// on [0, jump_times[0]).
struct PathRecord {
  int start = 0;
  std::vector<double> jump_times;
  std::vector<int> states;
  StopReason stop_reason = StopReason::HorizonT;
  double tau = 0.0;
  double log_weight = 0.0;  // accumulated log Girsanov weight; 0 when not tracked
  std::uint64_t seed = 0;

  int final_state() const { return states.empty() ? start : states.back(); }
  std::size_t n_jumps() const { return states.size(); }
};

/// Stopping rule for path sampling: first entry into A or B, a fixed time
/// horizon, or a jump-count cap (always active as a guard).
struct StopCondition {
  std::optional<StateSet> A;
  std::optional<StateSet> B;
  std::optional<double> horizon;
  std::uint64_t max_jumps = 1'000'000;

  static StopCondition sets(StateSet a, StateSet b, std::uint64_t cap = 1'000'000) {
    if (a.empty() || b.empty()) throw EmptySetError("stop sets must be nonempty");
    if (a.intersects(b)) throw SetsOverlapError("stop sets must be disjoint");
    StopCondition s;
    s.A = std::move(a);
    s.B = std::move(b);
    s.max_jumps = cap;
    return s;
  }
  static StopCondition time_horizon(double T, std::uint64_t cap = 1'000'000) {
    StopCondition s;
    s.horizon = T;
    s.max_jumps = cap;
    return s;
  }
  bool stops_on_sets() const { return A.has_value() && B.has_value(); }
};

struct MeanWithError {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
};

/// Aggregate statistics of a simulated ensemble. tau statistics exclude
/// paths that hit the jump cap; those are counted in n_max_jumps.
struct EnsembleStats {
  std::size_t n_paths = 0;
  std::size_t n_hit_a = 0;
  std::size_t n_hit_b = 0;
  std::size_t n_horizon = 0;
  std::size_t n_max_jumps = 0;
  MeanWithError hit_b_fraction;
  MeanWithError mean_tau;
  MeanWithError mean_exp_tau;
  MeanWithError mean_log_weight;
  MeanWithError mean_running_cost;
  bool heavy_tail_warning = false;  // top 1% of exp(tau) samples carry > 50% of the mean
  std::uint64_t seed = 0;
};

}  // namespace jumppath
