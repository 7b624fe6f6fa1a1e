#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "jumppath/errors.hpp"
#include "jumppath/finite_horizon.hpp"
#include "jumppath/pair_field.hpp"
#include "jumppath/rate_kernel.hpp"
#include "jumppath/state_set.hpp"

namespace jumppath {

/// A velocity field v(x,y) over the support of a reference kernel, either
/// time-homogeneous (velocity) or per time node (velocity_nodes + grid).
struct ControlSpec {
  PairField velocity;
  std::vector<PairField> velocity_nodes;  // nonempty for time-grid controls
  std::optional<TimeGrid> grid;
  ScalarField source_field;  // the h the control was built from (provenance)
  StateSet absorbing;        // control stops here; outgoing rows removed

  bool time_dependent() const { return !velocity_nodes.empty(); }
};

/// The controlled kernel v * L. Rows of absorbing states are removed; the
/// controlled kernel gets its own (possibly larger) total intensity.
inline RateKernel controlled_kernel(const RateKernel& base, const ControlSpec& spec) {
  if (spec.time_dependent()) {
    throw DimensionMismatchError("time-grid controls do not define a single kernel");
  }
  spec.velocity.check_shape(base, "velocity");
  std::vector<RateEntry> entries;
  for (int x = 0; x < base.n_states(); ++x) {
    if (spec.absorbing.contains(x)) continue;
    auto row = base.out(x);
    const auto& vr = spec.velocity.row(x);
    for (std::size_t s = 0; s < row.size(); ++s) {
      const double r = vr[s] * row[s].rate;
      if (r > 0.0) entries.push_back({x, row[s].state, r});
    }
  }
  return RateKernel(base.n_states(), std::move(entries), base.labels());
}

/// Doob transform: v(x,y) = h(y)/h(x), controlled rate v * L. States with
/// h = 0 and outgoing rates must either be absorbing or listed in `exclude`
/// (their rows are then dropped and simulation cannot start there).
inline std::pair<ControlSpec, RateKernel> doob_transform(const RateKernel& k,
                                                         const ScalarField& h,
                                                         const StateSet& absorbing,
                                                         const StateSet& exclude = {}) {
  check_field_size(k, h, "h");
  absorbing.check_bounds(k.n_states(), "absorbing");
  for (int x = 0; x < k.n_states(); ++x) {
    const double hx = h[static_cast<std::size_t>(x)];
    if (!(hx >= 0.0)) throw NegativeFieldError("h must be nonnegative");
    if (hx == 0.0 && !absorbing.contains(x) && !exclude.contains(x) &&
        !k.out(x).empty()) {
      throw ZeroDivisorError("h vanishes at non-absorbing state " + std::to_string(x) +
                             "; the control is undefined there");
    }
  }

  ControlSpec spec;
  spec.source_field = h;
  spec.absorbing = absorbing;
  spec.velocity = PairField::build(k, [&](int x, int y, double) {
    const double hx = h[static_cast<std::size_t>(x)];
    if (spec.absorbing.contains(x) || hx == 0.0) return 0.0;
    return h[static_cast<std::size_t>(y)] / hx;
  });
  // excluded rows become dead like absorbing ones
  for (int x : exclude.members()) {
    auto& row = spec.velocity.row(x);
    std::fill(row.begin(), row.end(), 0.0);
  }

  RateKernel controlled = controlled_kernel(k, spec);
  return {std::move(spec), std::move(controlled)};
}

/// max |(Lh)(x)| over the interior. Zero certifies that the Girsanov
/// exponential compensator vanishes, so Z_t = h(X_t)/h(X_0) path-by-path.
inline double harmonicity_certificate(const RateKernel& k, const ScalarField& h,
                                      const StateSet& interior) {
  check_field_size(k, h, "h");
  interior.check_bounds(k.n_states(), "interior");
  ScalarField lh = apply_generator(k, h);
  double worst = 0.0;
  for (int x : interior.members()) {
    worst = std::max(worst, std::abs(lh[static_cast<std::size_t>(x)]));
  }
  return worst;
}

/// Instantaneous entropy cost rate at x: sum_y ent(v(x,y)) L(x,y).
inline double entropy_rate(const RateKernel& base, const ControlSpec& spec, int x) {
  if (spec.absorbing.contains(x)) {
    throw DimensionMismatchError("entropy rate is undefined at absorbing state " +
                                 std::to_string(x));
  }
  spec.velocity.check_shape(base, "velocity");
  auto row = base.out(x);
  const auto& vr = spec.velocity.row(x);
  double acc = 0.0;
  for (std::size_t s = 0; s < row.size(); ++s) acc += ent(vr[s]) * row[s].rate;
  return acc;
}

/// Per-state compensator rates sum_y (v(x,y) - 1) L(x,y) used by the
/// Girsanov weight; zero on the interior when v comes from a harmonic h.
inline ScalarField compensator_rates(const RateKernel& base, const ControlSpec& spec) {
  spec.velocity.check_shape(base, "velocity");
  ScalarField out(static_cast<std::size_t>(base.n_states()), 0.0);
  for (int x = 0; x < base.n_states(); ++x) {
    auto row = base.out(x);
    const auto& vr = spec.velocity.row(x);
    double acc = 0.0;
    for (std::size_t s = 0; s < row.size(); ++s) acc += (vr[s] - 1.0) * row[s].rate;
    out[static_cast<std::size_t>(x)] = acc;
  }
  return out;
}

/// The time-grid control of the finite-horizon problem:
/// v_t(x,y) = h_t(y)/h_t(x) at every grid node.
inline ControlSpec make_finite_horizon_control(const RateKernel& k,
                                               const BackwardSolution& sol) {
  ControlSpec spec;
  spec.grid = sol.grid;
  spec.source_field = sol.h[0];
  spec.velocity_nodes.reserve(sol.h.size());
  for (std::size_t i = 0; i < sol.h.size(); ++i) {
    const ScalarField& hi = sol.h[i];
    spec.velocity_nodes.push_back(PairField::build(k, [&](int x, int y, double) {
      const double hx = hi[static_cast<std::size_t>(x)];
      if (hx == 0.0) return 0.0;  // only possible at the terminal node
      return hi[static_cast<std::size_t>(y)] / hx;
    }));
  }
  spec.velocity = spec.velocity_nodes.front();
  return spec;
}

/// Convex blend of a time-grid control with the unit (reference) velocity:
/// weight 1 returns the control itself, weight 0 the reference process.
inline ControlSpec blend_with_reference(const RateKernel& k, const ControlSpec& spec,
                                        double weight) {
  if (!spec.time_dependent()) {
    throw DimensionMismatchError("blend_with_reference expects a time-grid control");
  }
  ControlSpec out = spec;
  for (PairField& node : out.velocity_nodes) {
    for (int x = 0; x < k.n_states(); ++x) {
      for (double& v : node.row(x)) v = weight * v + (1.0 - weight);
    }
  }
  out.velocity = out.velocity_nodes.front();
  return out;
}

/// Forward evolution of the density under an arbitrary time-grid control by
/// the exponential midpoint rule: each step freezes the node-averaged
/// velocity and propagates exactly on the frozen kernel. Node fluxes use the
/// node velocities; the action uses trapezoidal quadrature.
inline DensityFluxTrajectory evolve_with_control(const RateKernel& k, const ControlSpec& spec,
                                                 const Distribution& mu) {
  if (!spec.time_dependent() || !spec.grid.has_value()) {
    throw DimensionMismatchError("evolve_with_control expects a time-grid control");
  }
  const TimeGrid grid = *spec.grid;
  if (spec.velocity_nodes.size() != static_cast<std::size_t>(grid.n_steps) + 1) {
    throw DimensionMismatchError("velocity nodes do not match the grid");
  }
  if (grid.dt() * k.total_intensity() > 0.5) {
    throw StepTooLargeError("dt * c_L exceeds the stability bound 0.5");
  }

  DensityFluxTrajectory traj;
  traj.grid = grid;
  ScalarField p = mu.weights();

  auto node_flux = [&](const ScalarField& pp, const PairField& v) {
    PairField q(k);
    for (int x = 0; x < k.n_states(); ++x) {
      auto row = k.out(x);
      const auto& vr = v.row(x);
      auto& qr = q.row(x);
      for (std::size_t s = 0; s < row.size(); ++s) {
        qr[s] = vr[s] * pp[static_cast<std::size_t>(x)] * row[s].rate;
      }
    }
    return q;
  };

  std::vector<double> node_integrand;
  node_integrand.reserve(static_cast<std::size_t>(grid.n_steps) + 1);
  for (int i = 0; i <= grid.n_steps; ++i) {
    if (i > 0) {
      // frozen midpoint kernel for the step [t_{i-1}, t_i]
      const PairField& va = spec.velocity_nodes[static_cast<std::size_t>(i) - 1];
      const PairField& vb = spec.velocity_nodes[static_cast<std::size_t>(i)];
      std::vector<RateEntry> entries;
      for (int x = 0; x < k.n_states(); ++x) {
        auto row = k.out(x);
        const auto& ra = va.row(x);
        const auto& rb = vb.row(x);
        for (std::size_t s = 0; s < row.size(); ++s) {
          const double vmid = 0.5 * (ra[s] + rb[s]);
          if (vmid > 0.0) entries.push_back({x, row[s].state, vmid * row[s].rate});
        }
      }
      RateKernel frozen(k.n_states(), std::move(entries));
      p = detail::propagate(frozen, std::move(p), grid.dt(), detail::Direction::Forward);
    }
    detail::check_node_mass(p, i, traj.max_mass_error);
    PairField q = node_flux(p, spec.velocity_nodes[static_cast<std::size_t>(i)]);
    node_integrand.push_back(lagrangian(k, p, q));
    traj.p.push_back(p);
    traj.q.push_back(std::move(q));
  }
  double action = 0.0;
  for (int i = 0; i < grid.n_steps; ++i) {
    action += 0.5 * grid.dt() * (node_integrand[static_cast<std::size_t>(i)] +
                                 node_integrand[static_cast<std::size_t>(i) + 1]);
  }
  traj.action = action;
  return traj;
}

/// Terminal-plus-running cost of a trajectory for the extended cost f,
/// +inf when the terminal density charges an infinite-cost state.
inline double control_cost(const DensityFluxTrajectory& traj, const ScalarField& f) {
  const ScalarField& pT = traj.p.back();
  if (pT.size() != f.size()) throw DimensionMismatchError("terminal cost size mismatch");
  double terminal = 0.0;
  for (std::size_t x = 0; x < f.size(); ++x) {
    if (pT[x] > 0.0) {
      if (!std::isfinite(f[x])) return kInf;
      terminal += f[x] * pT[x];
    }
  }
  return terminal + traj.action;
}

}  // namespace jumppath
