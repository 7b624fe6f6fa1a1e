#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "jumppath/errors.hpp"
#include "jumppath/state_set.hpp"

namespace jumppath {

/// One finite real value per state. The extended-cost variant used for
/// terminal costs may additionally hold +infinity.
using ScalarField = std::vector<double>;

/// A sparse rate triplet L(from, to) = rate, from != to, rate >= 0.
struct RateEntry {
  int from = 0;
  int to = 0;
  double rate = 0.0;
};

/// One (target, rate) edge in a state's adjacency row.
struct RateEdge {
  int state;
  double rate;
};

struct ValidationReport {
  double total_intensity = 0.0;            // c_L = max_x sum_y L(x,y)
  std::vector<double> exit_rates;          // lambda(x)
  std::vector<int> absorbing_states;       // lambda(x) == 0
  bool zero_intensity_flag = false;        // c_L == 0 (no jumps anywhere)
};

/// Checks raw triplets against the kernel invariants. Throws on the first
/// violation; otherwise returns the exit-rate summary.
inline ValidationReport validate_triplets(int n_states, const std::vector<RateEntry>& rates) {
  if (n_states <= 0) throw DimensionMismatchError("n_states must be positive");
  ValidationReport report;
  report.exit_rates.assign(static_cast<std::size_t>(n_states), 0.0);
  std::vector<std::vector<int>> seen(static_cast<std::size_t>(n_states));
  for (const RateEntry& e : rates) {
    if (e.from < 0 || e.from >= n_states || e.to < 0 || e.to >= n_states) {
      throw DimensionMismatchError("rate entry (" + std::to_string(e.from) + ", " +
                                   std::to_string(e.to) + ") is out of range");
    }
    if (e.from == e.to) {
      throw DiagonalEntryError("diagonal rate entry at state " + std::to_string(e.from));
    }
    if (!std::isfinite(e.rate)) {
      throw NonFiniteRateError("non-finite rate on pair (" + std::to_string(e.from) +
                               ", " + std::to_string(e.to) + ")");
    }
    if (e.rate < 0.0) {
      throw NegativeRateError("negative rate " + std::to_string(e.rate) + " on pair (" +
                              std::to_string(e.from) + ", " + std::to_string(e.to) + ")");
    }
    auto& row = seen[static_cast<std::size_t>(e.from)];
    if (std::find(row.begin(), row.end(), e.to) != row.end()) {
      throw DuplicateRateEntryError("duplicate rate entry on pair (" +
                                    std::to_string(e.from) + ", " +
                                    std::to_string(e.to) + ")");
    }
    row.push_back(e.to);
    report.exit_rates[static_cast<std::size_t>(e.from)] += e.rate;
  }
  for (int x = 0; x < n_states; ++x) {
    const double lam = report.exit_rates[static_cast<std::size_t>(x)];
    report.total_intensity = std::max(report.total_intensity, lam);
    if (lam == 0.0) report.absorbing_states.push_back(x);
  }
  report.zero_intensity_flag = (report.total_intensity == 0.0);
  return report;
}

/// Finite state space plus sparse nonnegative off-diagonal jump rates.
/// Immutable after construction; safe to share across concurrent readers.
class RateKernel {
 public:
  RateKernel(int n_states, std::vector<RateEntry> rates,
             std::vector<std::string> labels = {})
      : n_states_(n_states), labels_(std::move(labels)) {
    ValidationReport report = validate_triplets(n_states, rates);
    if (!labels_.empty() && static_cast<int>(labels_.size()) != n_states_) {
      throw DimensionMismatchError("labels length does not match n_states");
    }
    exit_rate_ = std::move(report.exit_rates);
    total_intensity_ = report.total_intensity;
    out_.assign(static_cast<std::size_t>(n_states_), {});
    in_.assign(static_cast<std::size_t>(n_states_), {});
    for (const RateEntry& e : rates) {
      if (e.rate == 0.0) continue;  // zero entries carry no support
      out_[static_cast<std::size_t>(e.from)].push_back({e.to, e.rate});
      in_[static_cast<std::size_t>(e.to)].push_back({e.from, e.rate});
    }
    auto by_state = [](const RateEdge& a, const RateEdge& b) { return a.state < b.state; };
    for (auto& row : out_) std::sort(row.begin(), row.end(), by_state);
    for (auto& row : in_) std::sort(row.begin(), row.end(), by_state);
    // exit rates recomputed from the kept support so that lambda(x) is the
    // exact floating-point sum of the stored row
    for (int x = 0; x < n_states_; ++x) {
      double lam = 0.0;
      for (const RateEdge& e : out_[static_cast<std::size_t>(x)]) lam += e.rate;
      exit_rate_[static_cast<std::size_t>(x)] = lam;
    }
    total_intensity_ = *std::max_element(exit_rate_.begin(), exit_rate_.end());
  }

  int n_states() const { return n_states_; }

  /// c_L: the maximal exit intensity over all states.
  double total_intensity() const { return total_intensity_; }

  /// lambda(x) = sum_y L(x, y).
  double exit_rate(int x) const { return exit_rate_[static_cast<std::size_t>(x)]; }

  std::span<const RateEdge> out(int x) const { return out_[static_cast<std::size_t>(x)]; }
  std::span<const RateEdge> in(int x) const { return in_[static_cast<std::size_t>(x)]; }

  double rate(int x, int y) const {
    const auto& row = out_[static_cast<std::size_t>(x)];
    auto it = std::lower_bound(row.begin(), row.end(), y,
                               [](const RateEdge& e, int s) { return e.state < s; });
    return (it != row.end() && it->state == y) ? it->rate : 0.0;
  }

  const std::vector<std::string>& labels() const { return labels_; }

  std::vector<RateEntry> triplets() const {
    std::vector<RateEntry> out;
    for (int x = 0; x < n_states_; ++x) {
      for (const RateEdge& e : out_[static_cast<std::size_t>(x)]) {
        out.push_back({x, e.state, e.rate});
      }
    }
    return out;
  }

 private:
  int n_states_;
  std::vector<std::vector<RateEdge>> out_;
  std::vector<std::vector<RateEdge>> in_;
  std::vector<double> exit_rate_;
  double total_intensity_ = 0.0;
  std::vector<std::string> labels_;
};

/// Summary report for an already-constructed kernel.
inline ValidationReport validate_kernel(const RateKernel& k) {
  ValidationReport report;
  report.exit_rates.resize(static_cast<std::size_t>(k.n_states()));
  for (int x = 0; x < k.n_states(); ++x) {
    report.exit_rates[static_cast<std::size_t>(x)] = k.exit_rate(x);
    if (k.exit_rate(x) == 0.0) report.absorbing_states.push_back(x);
  }
  report.total_intensity = k.total_intensity();
  report.zero_intensity_flag = (report.total_intensity == 0.0);
  return report;
}

inline void check_field_size(const RateKernel& k, const ScalarField& phi, const char* name) {
  if (static_cast<int>(phi.size()) != k.n_states()) {
    throw DimensionMismatchError(std::string(name) + " has length " +
                                 std::to_string(phi.size()) + ", expected " +
                                 std::to_string(k.n_states()));
  }
}

/// (L phi)(x) = sum_y L(x,y) (phi(y) - phi(x)).
inline ScalarField apply_generator(const RateKernel& k, const ScalarField& phi) {
  check_field_size(k, phi, "field");
  ScalarField out(phi.size(), 0.0);
  for (int x = 0; x < k.n_states(); ++x) {
    double acc = 0.0;
    const double px = phi[static_cast<std::size_t>(x)];
    for (const RateEdge& e : k.out(x)) {
      acc += e.rate * (phi[static_cast<std::size_t>(e.state)] - px);
    }
    out[static_cast<std::size_t>(x)] = acc;
  }
  return out;
}

/// Adjoint (forward-equation) action: (L^T w)(x) = sum_y w(y) L(y,x) - lambda(x) w(x).
inline ScalarField apply_generator_adjoint(const RateKernel& k, const ScalarField& w) {
  check_field_size(k, w, "weights");
  ScalarField out(w.size(), 0.0);
  for (int x = 0; x < k.n_states(); ++x) {
    double acc = -k.exit_rate(x) * w[static_cast<std::size_t>(x)];
    for (const RateEdge& e : k.in(x)) {
      acc += e.rate * w[static_cast<std::size_t>(e.state)];
    }
    out[static_cast<std::size_t>(x)] = acc;
  }
  return out;
}

/// Probability weights over states; must sum to one within 1e-12.
class Distribution {
 public:
  explicit Distribution(std::vector<double> weights) : w_(std::move(weights)) {
    double sum = 0.0;
    for (double v : w_) {
      if (!(v >= 0.0)) throw DimensionMismatchError("distribution weight is negative or NaN");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw DimensionMismatchError("distribution weights sum to " + std::to_string(sum) +
                                   ", expected 1 within 1e-12");
    }
  }

  static Distribution delta(int n_states, int x) {
    std::vector<double> w(static_cast<std::size_t>(n_states), 0.0);
    w.at(static_cast<std::size_t>(x)) = 1.0;
    return Distribution(std::move(w));
  }

  static Distribution uniform(int n_states) {
    std::vector<double> w(static_cast<std::size_t>(n_states),
                          1.0 / static_cast<double>(n_states));
    return Distribution(std::move(w));
  }

  double operator[](std::size_t i) const { return w_[i]; }
  std::size_t size() const { return w_.size(); }
  const std::vector<double>& weights() const { return w_; }

 private:
  std::vector<double> w_;
};

/// States from which some member of `targets` is reachable along support edges.
inline std::vector<char> reaches_targets(const RateKernel& k, const StateSet& targets) {
  std::vector<char> hit(static_cast<std::size_t>(k.n_states()), 0);
  std::vector<int> stack;
  for (int t : targets.members()) {
    hit[static_cast<std::size_t>(t)] = 1;
    stack.push_back(t);
  }
  // walk reversed edges
  while (!stack.empty()) {
    int y = stack.back();
    stack.pop_back();
    for (const RateEdge& e : k.in(y)) {
      if (!hit[static_cast<std::size_t>(e.state)]) {
        hit[static_cast<std::size_t>(e.state)] = 1;
        stack.push_back(e.state);
      }
    }
  }
  return hit;
}

inline bool strongly_connected(const RateKernel& k) {
  if (k.n_states() == 1) return true;
  auto sweep = [&](bool forward) {
    std::vector<char> seen(static_cast<std::size_t>(k.n_states()), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      auto row = forward ? k.out(x) : k.in(x);
      for (const RateEdge& e : row) {
        if (!seen[static_cast<std::size_t>(e.state)]) {
          seen[static_cast<std::size_t>(e.state)] = 1;
          ++count;
          stack.push_back(e.state);
        }
      }
    }
    return count == static_cast<std::size_t>(k.n_states());
  };
  return sweep(true) && sweep(false);
}

/// Unique stationary law pi with pi^T L_gen = 0, found by a direct sparse
/// solve with the first equation replaced by the normalization constraint.
inline Distribution stationary_distribution(const RateKernel& k) {
  if (!strongly_connected(k)) {
    throw ReducibleError("embedded graph is not strongly connected; stationary law not unique");
  }
  const int n = k.n_states();
  if (n == 1) return Distribution::delta(1, 0);

  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> trip;
  for (int j = 0; j < n; ++j) trip.emplace_back(0, j, 1.0);  // normalization row
  for (int x = 0; x < n; ++x) {
    for (const RateEdge& e : k.out(x)) {
      if (e.state != 0) trip.emplace_back(e.state, x, e.rate);
    }
    if (x != 0) trip.emplace_back(x, x, -k.exit_rate(x));
  }
  Eigen::SparseMatrix<double> mat(n, n);
  mat.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(0) = 1.0;

  Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
  solver.compute(mat);
  if (solver.info() != Eigen::Success) {
    throw SolveError("stationary distribution solve failed to factorize");
  }
  Eigen::VectorXd pi = solver.solve(rhs);
  if (solver.info() != Eigen::Success) {
    throw SolveError("stationary distribution back-substitution failed");
  }

  std::vector<double> w(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = std::max(pi(i), 0.0);
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& v : w) v /= sum;

  ScalarField residual = apply_generator_adjoint(k, w);
  double rmax = 0.0;
  for (double v : residual) rmax = std::max(rmax, std::abs(v));
  if (rmax > 1e-10) {
    throw SolveError("stationary distribution residual " + std::to_string(rmax) +
                     " exceeds 1e-10");
  }
  return Distribution(std::move(w));
}

}  // namespace jumppath
