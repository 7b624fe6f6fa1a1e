#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "jumppath/errors.hpp"
#include "jumppath/pair_field.hpp"
#include "jumppath/rate_kernel.hpp"

namespace jumppath {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Uniform partition of [0, T].
struct TimeGrid {
  double horizon = 1.0;
  int n_steps = 1;

  static TimeGrid uniform(double T, int n_steps) {
    if (!(T > 0.0) || n_steps <= 0) {
      throw DimensionMismatchError("time grid needs T > 0 and n_steps >= 1");
    }
    return TimeGrid{T, n_steps};
  }
  double dt() const { return horizon / static_cast<double>(n_steps); }
  double node(int i) const { return horizon * static_cast<double>(i) / static_cast<double>(n_steps); }
};

namespace detail {

enum class Direction { Backward, Forward };  // exp(dt L) vs exp(dt L^T)

/// One uniformization step: field <- exp(dt L_gen) field (or the adjoint).
/// With c >= max exit rate, P = I + L_gen / c is a stochastic matrix and
/// exp(dt L_gen) = e^{-c dt} sum_k (c dt)^k / k! P^k. All series terms are
/// nonnegative, so positivity and the maximum principle are preserved; the
/// truncated Poisson weights are renormalized so constants are reproduced
/// exactly.
inline void uniformization_step(const RateKernel& k, ScalarField& field, double dt,
                                Direction dir) {
  const double c = k.total_intensity();
  const double rho = c * dt;
  if (rho == 0.0) return;

  const double inv_c = 1.0 / c;
  auto apply_p = [&](const ScalarField& in, ScalarField& out) {
    const ScalarField lg = (dir == Direction::Backward) ? apply_generator(k, in)
                                                        : apply_generator_adjoint(k, in);
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] + inv_c * lg[i];
  };

  ScalarField term = field;
  ScalarField next(term.size());
  double w = std::exp(-rho);
  double wsum = w;
  ScalarField acc(term.size());
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = w * term[i];

  const int max_terms = 1024;
  for (int j = 1; j < max_terms && (1.0 - wsum) > 1e-16; ++j) {
    apply_p(term, next);
    term.swap(next);
    w *= rho / static_cast<double>(j);
    wsum += w;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * term[i];
  }
  const double inv_wsum = 1.0 / wsum;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    acc[i] *= inv_wsum;
    // inputs are nonnegative fields; negative values are rounding noise
    if (acc[i] < 0.0) acc[i] = 0.0;
  }
  field.swap(acc);
}

/// field <- exp(dt L_gen) field with internal substepping so the
/// uniformization series stays short.
inline ScalarField propagate(const RateKernel& k, ScalarField field, double dt, Direction dir) {
  check_field_size(k, field, "field");
  if (dt < 0.0) throw DimensionMismatchError("propagation time must be nonnegative");
  if (dt == 0.0 || k.total_intensity() == 0.0) return field;
  const double rho = k.total_intensity() * dt;
  const int chunks = std::max(1, static_cast<int>(std::ceil(rho / 16.0)));
  const double sub = dt / static_cast<double>(chunks);
  for (int c = 0; c < chunks; ++c) uniformization_step(k, field, sub, dir);
  return field;
}

}  // namespace detail

/// Backward Kolmogorov solution h_t on a grid, with psi = log h and the
/// extended terminal cost f (h_T = e^{-f}, +inf entries giving exact zeros).
struct BackwardSolution {
  TimeGrid grid;
  std::vector<ScalarField> h;    // h[i] at node t_i, i = 0..n_steps
  std::vector<ScalarField> psi;  // log h; -inf allowed only at the terminal node
  ScalarField terminal_cost;
};

/// Integrates the backward equation d/dt h_t + L h_t = 0 from h_T = e^{-f}.
/// Instantaneous positivity (h_t > 0 for t < T) is verified, not assumed.
inline BackwardSolution solve_bke(const RateKernel& k, const ScalarField& f,
                                  const TimeGrid& grid) {
  check_field_size(k, f, "terminal cost");
  bool proper = false;
  for (double v : f) {
    if (std::isnan(v) || v < 0.0) {
      throw ImproperTerminalError("terminal cost must be nonnegative (and not NaN)");
    }
    if (std::isfinite(v)) proper = true;
  }
  if (!proper) throw ImproperTerminalError("terminal cost is +inf everywhere");
  if (grid.dt() * k.total_intensity() > 0.5) {
    throw StepTooLargeError("dt * c_L = " + std::to_string(grid.dt() * k.total_intensity()) +
                            " exceeds the stability bound 0.5");
  }

  BackwardSolution sol;
  sol.grid = grid;
  sol.terminal_cost = f;
  sol.h.assign(static_cast<std::size_t>(grid.n_steps) + 1, {});
  sol.psi.assign(static_cast<std::size_t>(grid.n_steps) + 1, {});

  ScalarField h(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) h[i] = std::exp(-f[i]);
  sol.h[static_cast<std::size_t>(grid.n_steps)] = h;

  for (int i = grid.n_steps - 1; i >= 0; --i) {
    detail::uniformization_step(k, h, grid.dt(), detail::Direction::Backward);
    sol.h[static_cast<std::size_t>(i)] = h;
  }

  for (int i = 0; i <= grid.n_steps; ++i) {
    const ScalarField& hi = sol.h[static_cast<std::size_t>(i)];
    ScalarField psi(hi.size());
    for (std::size_t x = 0; x < hi.size(); ++x) {
      if (hi[x] > 0.0) {
        psi[x] = std::log(hi[x]);
      } else if (i == grid.n_steps) {
        psi[x] = -kInf;
      } else {
        throw SolveError("instantaneous positivity failed: h = 0 at node " +
                         std::to_string(i) + ", state " + std::to_string(x) +
                         " (state cannot reach the support of e^{-f})");
      }
    }
    sol.psi[static_cast<std::size_t>(i)] = std::move(psi);
  }
  return sol;
}

/// H(x, xi) = sum_y (e^{xi(x,y)} - 1) L(x,y).
inline double local_hamiltonian(const RateKernel& k, int x, const PairField& xi) {
  xi.check_shape(k, "xi");
  auto row = k.out(x);
  const auto& vals = xi.row(x);
  double acc = 0.0;
  for (std::size_t s = 0; s < row.size(); ++s) {
    acc += (std::exp(vals[s]) - 1.0) * row[s].rate;
  }
  return acc;
}

/// Max over grid nodes t < T and states of |dpsi/dt + H(x, grad psi_t)|,
/// a first-order consistency residual of the Hamilton-Jacobi equation.
/// Pairs whose forward value psi_{t+dt}(x) is -inf (possible only at the
/// terminal node of an unbounded cost) are skipped.
inline double hje_residual(const RateKernel& k, const BackwardSolution& sol) {
  const double dt = sol.grid.dt();
  double worst = 0.0;
  for (int i = 0; i < sol.grid.n_steps; ++i) {
    const ScalarField& cur = sol.psi[static_cast<std::size_t>(i)];
    const ScalarField& nxt = sol.psi[static_cast<std::size_t>(i) + 1];
    for (int x = 0; x < k.n_states(); ++x) {
      if (!std::isfinite(nxt[static_cast<std::size_t>(x)])) continue;
      const double dq = (nxt[static_cast<std::size_t>(x)] - cur[static_cast<std::size_t>(x)]) / dt;
      double ham = 0.0;
      for (const RateEdge& e : k.out(x)) {
        ham += (std::exp(cur[static_cast<std::size_t>(e.state)] -
                         cur[static_cast<std::size_t>(x)]) -
                1.0) *
               e.rate;
      }
      worst = std::max(worst, std::abs(dq + ham));
    }
  }
  return worst;
}

/// Relative entropy of the flux q against p (x) L:
///   sum ent(q / pL) * pL, with ent(0) = 1 so a vanished flux over live mass
///   costs pL, and +inf when q charges a pair outside the support of pL.
inline double lagrangian(const RateKernel& k, const ScalarField& p, const PairField& q) {
  check_field_size(k, p, "density");
  q.check_shape(k, "flux");
  double acc = 0.0;
  for (int x = 0; x < k.n_states(); ++x) {
    auto row = k.out(x);
    const auto& qrow = q.row(x);
    const double px = p[static_cast<std::size_t>(x)];
    for (std::size_t s = 0; s < row.size(); ++s) {
      const double qv = qrow[s];
      if (qv < 0.0) throw NegativeFieldError("flux must be nonnegative");
      const double pl = px * row[s].rate;
      if (pl > 0.0) {
        acc += ent(qv / pl) * pl;
      } else if (qv > 0.0) {
        return kInf;
      }
    }
  }
  return acc;
}

inline double lagrangian(const RateKernel& k, const Distribution& p, const PairField& q) {
  return lagrangian(k, p.weights(), q);
}

struct DualityReport {
  double lagrangian_value = 0.0;
  double gap_at_optimum = 0.0;  // |<xi*, q> - H(p, xi*) - L(p, q)|
  double max_excess = 0.0;      // max over samples of <xi, q> - H(p, xi) - L(p, q)
  std::size_t n_samples = 0;
};

/// Samples bounded test fields xi and confirms the convex-duality inequality
/// <xi, q> - H(p, xi) <= L(p, q), with equality at xi = log(q / pL).
inline DualityReport duality_gap_check(const RateKernel& k, const ScalarField& p,
                                       const PairField& q, std::size_t n_samples,
                                       std::uint64_t seed = 0) {
  const double lag = lagrangian(k, p, q);
  if (!std::isfinite(lag)) {
    throw DimensionMismatchError("duality check requires a finite Lagrangian");
  }

  auto pairing_minus_ham = [&](const PairField& xi) {
    double acc = 0.0;
    for (int x = 0; x < k.n_states(); ++x) {
      auto row = k.out(x);
      const auto& xr = xi.row(x);
      const auto& qr = q.row(x);
      const double px = p[static_cast<std::size_t>(x)];
      for (std::size_t s = 0; s < row.size(); ++s) {
        if (qr[s] > 0.0) acc += xr[s] * qr[s];
        acc -= (std::exp(xr[s]) - 1.0) * px * row[s].rate;
      }
    }
    return acc;
  };

  // the maximizer: log(q/pL) on the support, -inf (exp -> 0) where q vanishes
  PairField xi_star(k, 0.0);
  for (int x = 0; x < k.n_states(); ++x) {
    auto row = k.out(x);
    auto& xr = xi_star.row(x);
    const auto& qr = q.row(x);
    const double px = p[static_cast<std::size_t>(x)];
    for (std::size_t s = 0; s < row.size(); ++s) {
      const double pl = px * row[s].rate;
      if (pl > 0.0) {
        xr[s] = (qr[s] > 0.0) ? std::log(qr[s] / pl) : -kInf;
      } else {
        xr[s] = 0.0;  // zero-mass row: contributes nothing either way
      }
    }
  }

  DualityReport report;
  report.lagrangian_value = lag;
  report.n_samples = n_samples;
  report.gap_at_optimum = std::abs(pairing_minus_ham(xi_star) - lag);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  double max_excess = -kInf;
  for (std::size_t i = 0; i < n_samples; ++i) {
    PairField xi = PairField::build(k, [&](int, int, double) { return unif(rng); });
    max_excess = std::max(max_excess, pairing_minus_ham(xi) - lag);
  }
  report.max_excess = (n_samples == 0) ? 0.0 : max_excess;
  return report;
}

/// Time-discretized density-flux pair (p_t, q_t) with its accumulated action.
struct DensityFluxTrajectory {
  TimeGrid grid;
  std::vector<ScalarField> p;  // node densities, each summing to 1 within 1e-9
  std::vector<PairField> q;    // node fluxes on the support of L
  double action = 0.0;
  double max_mass_error = 0.0;
};

namespace detail {

/// Integral over [t1, t2] of the two-point model a - b log(T - s) fitted
/// through (t1, f1), (t2, f2); exact for integrands with a log layer at T.
/// Falls back to the trapezoid when the interval is too far from T for the
/// fit to be meaningful.
inline double log_layer_piece(double T, double t1, double t2, double f1, double f2) {
  const double u1 = T - t1;
  const double u2 = T - t2;
  const double dl = std::log(u1) - std::log(u2);
  if (!(dl > 1e-12) || !std::isfinite(dl)) return 0.5 * (t2 - t1) * (f1 + f2);
  const double b = (f2 - f1) / dl;
  const double a = f1 + b * std::log(u1);
  auto antider = [](double u) { return u == 0.0 ? 0.0 : u - u * std::log(u); };
  return a * (u1 - u2) + b * (antider(u1) - antider(u2));
}

inline void check_node_mass(const ScalarField& p, int node, double& max_err) {
  double sum = 0.0;
  for (double v : p) {
    if (v < -1e-12) {
      throw SolveError("evolved density negative at node " + std::to_string(node));
    }
    sum += v;
  }
  const double err = std::abs(sum - 1.0);
  max_err = std::max(max_err, err);
  if (err > 1e-9) {
    throw SolveError("evolved density mass error " + std::to_string(err) + " at node " +
                     std::to_string(node) + " exceeds 1e-9");
  }
}

}  // namespace detail

/// Forward evolution of the optimal density-flux pair driven by a backward
/// solution: q_t = (h_t(y)/h_t(x)) p_t(x) L(x,y). Internally the exact
/// product form p_t = g_t h_t is stepped, where g follows the reference
/// forward equation -- the discrete Doob transform of the reference
/// propagator, which conserves mass structurally.
///
/// The action integral uses trapezoidal quadrature over the grid nodes; when
/// the terminal cost is unbounded the integrand has an integrable log
/// singularity at t = T, and the final interval is refined dyadically toward
/// T with exact substeps instead.
inline DensityFluxTrajectory evolve_controlled_density(const RateKernel& k,
                                                       const BackwardSolution& sol,
                                                       const Distribution& mu) {
  check_field_size(k, mu.weights(), "initial law");
  if (sol.h.size() != static_cast<std::size_t>(sol.grid.n_steps) + 1) {
    throw DimensionMismatchError("backward solution is inconsistent with its grid");
  }
  const int n = sol.grid.n_steps;
  const double dt = sol.grid.dt();

  ScalarField g(mu.size(), 0.0);
  const ScalarField& h0 = sol.h[0];
  for (std::size_t x = 0; x < mu.size(); ++x) {
    if (mu[x] > 0.0) {
      if (!(h0[x] > 0.0)) {
        throw InfiniteValueError("initial law charges state " + std::to_string(x) +
                                 " where the value function is infinite");
      }
      g[x] = mu[x] / h0[x];
    }
  }

  DensityFluxTrajectory traj;
  traj.grid = sol.grid;
  traj.p.reserve(static_cast<std::size_t>(n) + 1);
  traj.q.reserve(static_cast<std::size_t>(n) + 1);

  auto density_at = [&](const ScalarField& gg, const ScalarField& hh) {
    ScalarField p(gg.size());
    for (std::size_t x = 0; x < gg.size(); ++x) p[x] = gg[x] * hh[x];
    return p;
  };
  auto flux_at = [&](const ScalarField& gg, const ScalarField& hh) {
    // q(x,y) = h(y) g(x) L(x,y); rows with zero density carry no flux
    return PairField::build(k, [&](int x, int y, double rate) {
      const double px = gg[static_cast<std::size_t>(x)] * hh[static_cast<std::size_t>(x)];
      if (px == 0.0) return 0.0;
      return hh[static_cast<std::size_t>(y)] * gg[static_cast<std::size_t>(x)] * rate;
    });
  };

  std::vector<ScalarField> g_nodes;
  g_nodes.reserve(static_cast<std::size_t>(n) + 1);
  g_nodes.push_back(g);
  for (int i = 0; i < n; ++i) {
    detail::uniformization_step(k, g, dt, detail::Direction::Forward);
    g_nodes.push_back(g);
  }

  std::vector<double> node_integrand(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i <= n; ++i) {
    const ScalarField& gi = g_nodes[static_cast<std::size_t>(i)];
    const ScalarField& hi = sol.h[static_cast<std::size_t>(i)];
    ScalarField p = density_at(gi, hi);
    detail::check_node_mass(p, i, traj.max_mass_error);
    PairField q = flux_at(gi, hi);
    node_integrand[static_cast<std::size_t>(i)] = lagrangian(k, p, q);
    traj.p.push_back(std::move(p));
    traj.q.push_back(std::move(q));
  }

  bool unbounded_terminal = false;
  for (double v : sol.terminal_cost) {
    if (!std::isfinite(v)) { unbounded_terminal = true; break; }
  }

  double action = 0.0;
  const double T = sol.grid.horizon;
  // the integrand has an integrable log layer at T when f is unbounded:
  // switch to the log-exact rule on the closing window and refine the final
  // interval dyadically with exact substeps
  const int window = unbounded_terminal ? std::min(8, n) : 0;
  for (int i = 0; i + 1 <= n - window; ++i) {
    action += 0.5 * dt * (node_integrand[static_cast<std::size_t>(i)] +
                          node_integrand[static_cast<std::size_t>(i) + 1]);
  }
  for (int i = n - window; i + 1 <= n - 1; ++i) {
    if (i < 0) continue;
    action += detail::log_layer_piece(T, sol.grid.node(i), sol.grid.node(i + 1),
                                      node_integrand[static_cast<std::size_t>(i)],
                                      node_integrand[static_cast<std::size_t>(i) + 1]);
  }
  if (unbounded_terminal && n >= 1) {
    const int levels = 40;
    ScalarField g_sub = g_nodes[static_cast<std::size_t>(n) - 1];
    double s_prev = T - dt;
    double f_prev = node_integrand[static_cast<std::size_t>(n) - 1];
    const ScalarField& h_term = sol.h[static_cast<std::size_t>(n)];
    for (int j = 1; j <= levels; ++j) {
      const double s = T - dt * std::ldexp(1.0, -j);
      g_sub = detail::propagate(k, std::move(g_sub), s - s_prev, detail::Direction::Forward);
      ScalarField h_sub = detail::propagate(k, h_term, T - s, detail::Direction::Backward);
      const double f_here = lagrangian(k, density_at(g_sub, h_sub), flux_at(g_sub, h_sub));
      action += detail::log_layer_piece(T, s_prev, s, f_prev, f_here);
      s_prev = s;
      f_prev = f_here;
    }
    action += (T - s_prev) * f_prev;  // closing sliver, left value
  }
  traj.action = action;
  return traj;
}

/// gamma_det(mu) = -int psi_0 d mu.
inline double deterministic_value(const BackwardSolution& sol, const Distribution& mu) {
  const ScalarField& psi0 = sol.psi[0];
  if (mu.size() != psi0.size()) throw DimensionMismatchError("mu does not match the solution");
  double acc = 0.0;
  for (std::size_t x = 0; x < mu.size(); ++x) {
    if (mu[x] > 0.0) {
      if (!std::isfinite(psi0[x])) {
        throw InfiniteValueError("initial law charges a state with infinite value");
      }
      acc -= psi0[x] * mu[x];
    }
  }
  return acc;
}

struct CutoffEntry {
  int n = 0;
  double max_gap_t0 = 0.0;       // ||h_0 - h_0^n||_inf
  double max_gap_any_node = 0.0; // max over nodes of ||h_t - h_t^n||_inf
  double bound_t0 = 0.0;         // e^{-n} e^{T c_L}
  double value = 0.0;            // gamma_det^n(mu)
};

struct CutoffReport {
  std::vector<CutoffEntry> entries;  // in increasing n
  double value_limit = 0.0;          // gamma_det(mu) for the uncut cost
};

/// Solves the backward equation for each cut-off cost f ^ n and verifies the
/// uniform bound ||h_t - h_t^n||_inf <= e^{-n} e^{(T-t) c_L} together with
/// the monotone convergence h^n >= h^{n+1} >= h and the value convergence
/// gamma^n increasing to gamma. Violations throw; the report carries the
/// measured gaps.
inline CutoffReport cutoff_convergence_study(const RateKernel& k, const ScalarField& f,
                                             const TimeGrid& grid, std::vector<int> n_list,
                                             const Distribution& mu) {
  std::sort(n_list.begin(), n_list.end());
  BackwardSolution base = solve_bke(k, f, grid);
  CutoffReport report;
  report.value_limit = deterministic_value(base, mu);

  const double fp_slack = 1e-12;
  std::vector<ScalarField> prev_h;
  double prev_value = -kInf;
  for (int n : n_list) {
    ScalarField fn(f.size());
    for (std::size_t x = 0; x < f.size(); ++x) {
      fn[x] = std::min(f[x], static_cast<double>(n));
    }
    BackwardSolution cut = solve_bke(k, fn, grid);

    CutoffEntry entry;
    entry.n = n;
    entry.bound_t0 = std::exp(-static_cast<double>(n)) *
                     std::exp(grid.horizon * k.total_intensity());
    for (int i = 0; i <= grid.n_steps; ++i) {
      const ScalarField& hb = base.h[static_cast<std::size_t>(i)];
      const ScalarField& hc = cut.h[static_cast<std::size_t>(i)];
      double gap = 0.0;
      for (std::size_t x = 0; x < hb.size(); ++x) {
        const double d = hc[x] - hb[x];
        if (d < -fp_slack) {
          throw SolveError("cut-off solution dropped below the limit solution at node " +
                           std::to_string(i));
        }
        gap = std::max(gap, std::abs(d));
        if (!prev_h.empty() && hc[x] > prev_h[static_cast<std::size_t>(i)][x] + fp_slack) {
          throw SolveError("cut-off solutions are not non-increasing in n at node " +
                           std::to_string(i));
        }
      }
      const double bound = std::exp(-static_cast<double>(n)) *
                           std::exp((grid.horizon - grid.node(i)) * k.total_intensity());
      if (gap > bound * (1.0 + 1e-12) + 1e-14) {
        throw SolveError("cut-off gap " + std::to_string(gap) + " violates the bound " +
                         std::to_string(bound) + " at node " + std::to_string(i));
      }
      entry.max_gap_any_node = std::max(entry.max_gap_any_node, gap);
      if (i == 0) entry.max_gap_t0 = gap;
    }
    entry.value = deterministic_value(cut, mu);
    if (entry.value < prev_value - fp_slack) {
      throw SolveError("cut-off values are not non-decreasing in n");
    }
    if (entry.value > report.value_limit + fp_slack) {
      throw SolveError("cut-off value exceeds the limit value");
    }
    prev_value = entry.value;
    prev_h = cut.h;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace jumppath
