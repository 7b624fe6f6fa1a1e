#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "jumppath/errors.hpp"
#include "jumppath/path_record.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/state_set.hpp"

namespace jumppath {

struct CommittorSolution {
  ScalarField h;
  StateSet A;
  StateSet B;
  std::optional<int> regularization_n;  // absent for the exact problem
  double residual = 0.0;                // max |(Lh)(x)| over interior states
};

struct CommittorOptions {
  // Direct sparse factorization up to this many states, Jacobi-preconditioned
  // BiCGSTAB above it.
  int direct_threshold = 2000;
  double iterative_tolerance = 1e-10;
};

namespace detail {

/// Solves (Lh)(x) = 0 on the interior with h = a_value on A, b_value on B.
inline ScalarField solve_boundary_value_problem(const RateKernel& k, const StateSet& A,
                                                const StateSet& B, double a_value,
                                                double b_value,
                                                const CommittorOptions& opt) {
  const int n = k.n_states();
  check_ab_pair(A, B, n);
  const StateSet boundary = StateSet::unite(A, B);

  // every interior state must reach A u B, else the interior system is singular
  std::vector<char> reach = reaches_targets(k, boundary);
  for (int x = 0; x < n; ++x) {
    if (!reach[static_cast<std::size_t>(x)]) {
      throw UnreachableBoundaryError("state " + std::to_string(x) +
                                     " cannot reach A ∪ B; committor system is singular");
    }
  }

  std::vector<int> interior_index(static_cast<std::size_t>(n), -1);
  std::vector<int> interior;
  for (int x = 0; x < n; ++x) {
    if (!boundary.contains(x)) {
      interior_index[static_cast<std::size_t>(x)] = static_cast<int>(interior.size());
      interior.push_back(x);
    }
  }

  ScalarField h(static_cast<std::size_t>(n), 0.0);
  for (int x : A.members()) h[static_cast<std::size_t>(x)] = a_value;
  for (int x : B.members()) h[static_cast<std::size_t>(x)] = b_value;
  if (interior.empty()) return h;

  const int m = static_cast<int>(interior.size());
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    const int x = interior[static_cast<std::size_t>(i)];
    trip.emplace_back(i, i, -k.exit_rate(x));
    for (const RateEdge& e : k.out(x)) {
      const int j = interior_index[static_cast<std::size_t>(e.state)];
      if (j >= 0) {
        trip.emplace_back(i, j, e.rate);
      } else {
        rhs(i) -= e.rate * h[static_cast<std::size_t>(e.state)];
      }
    }
  }
  Eigen::SparseMatrix<double> mat(m, m);
  mat.setFromTriplets(trip.begin(), trip.end());

  Eigen::VectorXd sol;
  if (n <= opt.direct_threshold) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> solver;
    solver.compute(mat);
    if (solver.info() != Eigen::Success) throw SolveError("committor factorization failed");
    sol = solver.solve(rhs);
    if (solver.info() != Eigen::Success) throw SolveError("committor solve failed");
  } else {
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double>, Eigen::DiagonalPreconditioner<double>> solver;
    solver.setTolerance(opt.iterative_tolerance);
    solver.compute(mat);
    sol = solver.solve(rhs);
    if (solver.info() != Eigen::Success) {
      throw SolveError("iterative committor solve did not converge (error " +
                       std::to_string(solver.error()) + ")");
    }
  }
  for (int i = 0; i < m; ++i) h[static_cast<std::size_t>(interior[static_cast<std::size_t>(i)])] = sol(i);

  // maximum principle: clamp floating noise only, reject real violations
  const double lo = std::min(a_value, b_value);
  const double hi = std::max(a_value, b_value);
  for (int i = 0; i < m; ++i) {
    double& v = h[static_cast<std::size_t>(interior[static_cast<std::size_t>(i)])];
    if (v < lo || v > hi) {
      const double overshoot = std::max(lo - v, v - hi);
      if (overshoot >= 1e-9) {
        throw SolveError("committor value " + std::to_string(v) +
                         " violates the maximum principle by " + std::to_string(overshoot));
      }
      v = std::clamp(v, lo, hi);
    }
  }
  return h;
}

inline double interior_residual(const RateKernel& k, const ScalarField& h,
                                const StateSet& boundary) {
  ScalarField lh = apply_generator(k, h);
  double r = 0.0;
  for (int x = 0; x < k.n_states(); ++x) {
    if (!boundary.contains(x)) r = std::max(r, std::abs(lh[static_cast<std::size_t>(x)]));
  }
  return r;
}

}  // namespace detail

/// Committor of the pair (A, B): h = 0 on A, 1 on B, (Lh) = 0 in between.
inline CommittorSolution solve_committor(const RateKernel& k, const StateSet& A,
                                         const StateSet& B,
                                         const CommittorOptions& opt = {}) {
  CommittorSolution sol;
  sol.h = detail::solve_boundary_value_problem(k, A, B, 0.0, 1.0, opt);
  sol.A = A;
  sol.B = B;
  sol.residual = detail::interior_residual(k, sol.h, StateSet::unite(A, B));
  const double tol = 1e-10 * k.total_intensity();
  if (sol.residual > tol) {
    throw SolveError("committor residual " + std::to_string(sol.residual) +
                     " exceeds tolerance " + std::to_string(tol));
  }
  return sol;
}

/// Regularized variant with boundary value e^{-n} on A instead of 0.
/// h^n >= h pointwise and h^n is non-increasing in n.
inline CommittorSolution solve_committor_regularized(const RateKernel& k, const StateSet& A,
                                                     const StateSet& B, int n,
                                                     const CommittorOptions& opt = {}) {
  if (n < 0) throw DimensionMismatchError("regularization index must be nonnegative");
  CommittorSolution sol;
  sol.h = detail::solve_boundary_value_problem(k, A, B, std::exp(-static_cast<double>(n)), 1.0, opt);
  sol.A = A;
  sol.B = B;
  sol.regularization_n = n;
  sol.residual = detail::interior_residual(k, sol.h, StateSet::unite(A, B));
  const double tol = 1e-10 * k.total_intensity();
  if (sol.residual > tol) {
    throw SolveError("regularized committor residual " + std::to_string(sol.residual) +
                     " exceeds tolerance " + std::to_string(tol));
  }
  return sol;
}

struct DynkinReport {
  double empirical_mean = 0.0;  // mean of h(X_tau) over the batch
  double std_error = 0.0;
  double reference = 0.0;  // h(x0)
  double gap = 0.0;        // |empirical_mean - reference|
  std::size_t n_paths = 0;
};

/// Empirical check of the stopped-mean identity E[h(X_tau)] = h(x):
/// for the exact committor the empirical mean is the hit-B fraction.
inline DynkinReport dynkin_check(const RateKernel& k, const CommittorSolution& sol, int x0,
                                 std::span<const PathRecord> paths) {
  if (paths.empty()) throw NoPathsError("dynkin_check needs at least one path");
  check_field_size(k, sol.h, "committor");
  double sum = 0.0, sumsq = 0.0;
  for (const PathRecord& p : paths) {
    const double v = sol.h[static_cast<std::size_t>(p.final_state())];
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(paths.size());
  DynkinReport report;
  report.n_paths = paths.size();
  report.empirical_mean = sum / n;
  const double var = std::max(0.0, (sumsq - sum * sum / n) / std::max(1.0, n - 1.0));
  report.std_error = std::sqrt(var / n);
  report.reference = sol.h[static_cast<std::size_t>(x0)];
  report.gap = std::abs(report.empirical_mean - report.reference);
  return report;
}

}  // namespace jumppath
