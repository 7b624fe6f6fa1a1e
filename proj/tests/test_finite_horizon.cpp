#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "jumppath/doob.hpp"
#include "jumppath/finite_horizon.hpp"
#include "model_fixtures.hpp"

using namespace jumppath;
using Catch::Matchers::WithinAbs;

namespace {

// m2 eigen-oracle for the backward solution with terminal h_T
ScalarField m2_bke_oracle(double T, double t, const ScalarField& h_T) {
  return fixtures::m2_exp_apply(T - t, h_T);
}

}  // namespace

TEST_CASE("solve_bke basics") {
  RateKernel m2 = fixtures::m2();

  SECTION("zero terminal cost gives the constant solution exactly") {
    TimeGrid grid = TimeGrid::uniform(1.0, 50);
    BackwardSolution sol = solve_bke(m2, {0.0, 0.0}, grid);
    for (const ScalarField& h : sol.h) {
      CHECK(h[0] == 1.0);
      CHECK(h[1] == 1.0);
    }
    for (const ScalarField& psi : sol.psi) {
      CHECK(psi[0] == 0.0);
      CHECK(psi[1] == 0.0);
    }
  }

  SECTION("bounded cost against the 2x2 eigen-oracle") {
    const double M = 1.0, T = 1.0;
    TimeGrid grid = TimeGrid::uniform(T, 400);
    BackwardSolution sol = solve_bke(m2, {M, 0.0}, grid);
    const ScalarField h_T{std::exp(-M), 1.0};
    for (int i = 0; i <= grid.n_steps; i += 25) {
      ScalarField oracle = m2_bke_oracle(T, grid.node(i), h_T);
      CHECK_THAT(sol.h[i][0], WithinAbs(oracle[0], 1e-12));
      CHECK_THAT(sol.h[i][1], WithinAbs(oracle[1], 1e-12));
    }
    // spec closed form h_t(a) = (1 + e^-M)/2 - (1 - e^-M)/2 * e^{-2(T-t)}
    const double t = grid.node(100);
    const double closed = 0.5 * (1.0 + std::exp(-M)) -
                          0.5 * (1.0 - std::exp(-M)) * std::exp(-2.0 * (T - t));
    CHECK_THAT(sol.h[100][0], WithinAbs(closed, 1e-12));
  }

  SECTION("infinite cost: instantaneous positivity holds for t < T") {
    const double T = 1.0;
    TimeGrid grid = TimeGrid::uniform(T, 400);
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, grid);
    CHECK(sol.h[grid.n_steps][0] == 0.0);
    CHECK(sol.psi[grid.n_steps][0] == -kInf);
    for (int i = 0; i < grid.n_steps; ++i) {
      CHECK(sol.h[i][0] > 0.0);
      const double oracle = 0.5 * (1.0 - std::exp(-2.0 * (T - grid.node(i))));
      CHECK_THAT(sol.h[i][0], WithinAbs(oracle, 1e-12));
    }
  }

  SECTION("errors") {
    CHECK_THROWS_AS(solve_bke(m2, {kInf, kInf}, TimeGrid::uniform(1.0, 10)),
                    ImproperTerminalError);
    CHECK_THROWS_AS(solve_bke(m2, {0.0, 0.0}, TimeGrid::uniform(10.0, 10)),
                    StepTooLargeError);  // dt * c_L = 1 > 0.5
    // state 0 is a trap that cannot reach the support of e^{-f}
    RateKernel trap(2, {{1, 0, 1.0}});
    CHECK_THROWS_AS(solve_bke(trap, {kInf, 0.0}, TimeGrid::uniform(1.0, 10)), SolveError);
  }
}

TEST_CASE("maximum principle for solve_bke on random kernels") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> cost(0.0, 4.0);
  for (int trial = 0; trial < 10; ++trial) {
    RateKernel k = fixtures::random_strongly_connected(rng, 5);
    ScalarField f(5);
    double fmax = 0.0;
    for (auto& v : f) {
      v = cost(rng);
      fmax = std::max(fmax, v);
    }
    TimeGrid grid = TimeGrid::uniform(1.0, 4 * static_cast<int>(k.total_intensity() + 1));
    BackwardSolution sol = solve_bke(k, f, grid);
    const double hmax = 1.0;  // max e^{-f} <= 1
    for (const ScalarField& h : sol.h) {
      for (double v : h) {
        CHECK(v >= 0.0);
        CHECK(v <= hmax + 1e-10);
        CHECK(v >= std::exp(-fmax) - 1e-10);  // min principle as well
      }
    }
  }
}

TEST_CASE("hje_residual") {
  RateKernel m2 = fixtures::m2();

  SECTION("zero cost gives exactly zero residual") {
    BackwardSolution sol = solve_bke(m2, {0.0, 0.0}, TimeGrid::uniform(1.0, 50));
    CHECK(hje_residual(m2, sol) == 0.0);
  }

  SECTION("first-order decay under grid refinement") {
    BackwardSolution coarse = solve_bke(m2, {1.0, 0.0}, TimeGrid::uniform(1.0, 100));
    BackwardSolution fine = solve_bke(m2, {1.0, 0.0}, TimeGrid::uniform(1.0, 200));
    const double r1 = hje_residual(m2, coarse);
    const double r2 = hje_residual(m2, fine);
    CHECK(r1 > 0.0);
    const double ratio = r1 / r2;
    CHECK(ratio > 1.6);
    CHECK(ratio < 2.4);
  }

  SECTION("gauge invariance: a constant shift of psi leaves the residual unchanged") {
    BackwardSolution sol = solve_bke(m2, {1.0, 0.0}, TimeGrid::uniform(1.0, 100));
    const double base = hje_residual(m2, sol);
    BackwardSolution shifted = sol;
    for (ScalarField& psi : shifted.psi) {
      for (double& v : psi) v += 3.7;
    }
    CHECK_THAT(hje_residual(m2, shifted), WithinAbs(base, 1e-12));
  }

  SECTION("unbounded terminal cost skips only the -inf pairs") {
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, TimeGrid::uniform(1.0, 100));
    const double r = hje_residual(m2, sol);
    CHECK(std::isfinite(r));
    CHECK(r > 0.0);
  }
}

TEST_CASE("local_hamiltonian") {
  RateKernel m3 = fixtures::m3();

  SECTION("zero field gives zero") {
    PairField xi(m3, 0.0);
    for (int x = 0; x < 3; ++x) CHECK(local_hamiltonian(m3, x, xi) == 0.0);
  }

  SECTION("m3 at state 1 with xi(1,0) = log 2") {
    PairField xi(m3, 0.0);
    xi.row(1)[0] = std::log(2.0);  // slot 0 is the edge to state 0
    CHECK_THAT(local_hamiltonian(m3, 1, xi), WithinAbs(1.0, 1e-14));
  }

  SECTION("xi -> -inf approaches -lambda(x)") {
    PairField xi(m3, -1e3);
    CHECK_THAT(local_hamiltonian(m3, 1, xi), WithinAbs(-3.0, 1e-12));
  }

  SECTION("convex in xi along a segment") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> unif(-1.5, 1.5);
    for (int trial = 0; trial < 20; ++trial) {
      PairField a = PairField::build(m3, [&](int, int, double) { return unif(rng); });
      PairField b = PairField::build(m3, [&](int, int, double) { return unif(rng); });
      PairField mid = PairField::build(m3, [&](int, int, double) { return 0.0; });
      for (int x = 0; x < 3; ++x) {
        for (std::size_t s = 0; s < mid.row(x).size(); ++s) {
          mid.row(x)[s] = 0.5 * (a.row(x)[s] + b.row(x)[s]);
        }
      }
      const double lhs = local_hamiltonian(m3, 1, mid);
      const double rhs = 0.5 * local_hamiltonian(m3, 1, a) + 0.5 * local_hamiltonian(m3, 1, b);
      CHECK(lhs <= rhs + 1e-12);
    }
  }
}

TEST_CASE("lagrangian conventions") {
  RateKernel m2 = fixtures::m2();

  SECTION("unit velocity has zero cost") {
    ScalarField p{0.25, 0.75};
    PairField q = PairField::build(m2, [&](int x, int, double rate) {
      return p[static_cast<std::size_t>(x)] * rate;
    });
    CHECK_THAT(lagrangian(m2, p, q), WithinAbs(0.0, 1e-15));
  }

  SECTION("single-term evaluation: p = delta_a, q(a,b) = 2") {
    ScalarField p{1.0, 0.0};
    PairField q(m2, 0.0);
    q.row(0)[0] = 2.0;
    CHECK_THAT(lagrangian(m2, p, q), WithinAbs(2.0 * std::log(2.0) - 1.0, 1e-14));
  }

  SECTION("flux off the support of p (x) L costs +inf") {
    ScalarField p{1.0, 0.0};
    PairField q(m2, 0.0);
    q.row(1)[0] = 0.5;  // p(b) = 0 but q(b,a) > 0
    CHECK(lagrangian(m2, p, q) == kInf);
  }

  SECTION("vanished flux over live mass costs pL") {
    ScalarField p{1.0, 0.0};
    PairField q(m2, 0.0);  // q(a,b) = 0 while p(a) L(a,b) = 1
    CHECK_THAT(lagrangian(m2, p, q), WithinAbs(1.0, 1e-15));
  }
}

TEST_CASE("duality gap check") {
  RateKernel m2 = fixtures::m2();

  SECTION("q = p (x) L: both sides vanish at xi* = 0") {
    ScalarField p{0.5, 0.5};
    PairField q = PairField::build(m2, [&](int x, int, double rate) {
      return p[static_cast<std::size_t>(x)] * rate;
    });
    DualityReport rep = duality_gap_check(m2, p, q, 50, 3);
    CHECK_THAT(rep.lagrangian_value, WithinAbs(0.0, 1e-14));
    CHECK(rep.gap_at_optimum <= 1e-10);
    CHECK(rep.max_excess <= 1e-10);
  }

  SECTION("m2 single-term example achieves the supremum at xi*") {
    ScalarField p{1.0, 0.0};
    PairField q(m2, 0.0);
    q.row(0)[0] = 2.0;
    DualityReport rep = duality_gap_check(m2, p, q, 200, 17);
    CHECK(rep.gap_at_optimum <= 1e-10);
    CHECK(rep.max_excess <= 1e-10);
  }

  SECTION("random flux on m3") {
    RateKernel m3 = fixtures::m3();
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> unif(0.1, 2.0);
    ScalarField p{0.2, 0.5, 0.3};
    PairField q = PairField::build(m3, [&](int x, int, double rate) {
      return unif(rng) * p[static_cast<std::size_t>(x)] * rate;
    });
    DualityReport rep = duality_gap_check(m3, p, q, 500, 31);
    CHECK(rep.gap_at_optimum <= 1e-10);
    CHECK(rep.max_excess <= 1e-10);
  }
}

TEST_CASE("evolve_controlled_density") {
  RateKernel m2 = fixtures::m2();
  const double T = 1.0;
  TimeGrid grid = TimeGrid::uniform(T, 400);

  SECTION("zero cost reduces to the reference forward equation with zero action") {
    BackwardSolution sol = solve_bke(m2, {0.0, 0.0}, grid);
    Distribution mu = Distribution::delta(2, 0);
    DensityFluxTrajectory traj = evolve_controlled_density(m2, sol, mu);
    CHECK_THAT(traj.action, WithinAbs(0.0, 1e-12));
    // m2 is symmetric, so the forward solution is the same eigen-oracle
    for (int i = 0; i <= grid.n_steps; i += 50) {
      ScalarField oracle = fixtures::m2_exp_apply(grid.node(i), {1.0, 0.0});
      CHECK_THAT(traj.p[i][0], WithinAbs(oracle[0], 1e-12));
      CHECK_THAT(traj.p[i][1], WithinAbs(oracle[1], 1e-12));
    }
  }

  SECTION("unbounded cost from delta_b: mass conserved, flux matches the h ratio") {
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, grid);
    Distribution mu = Distribution::delta(2, 1);
    DensityFluxTrajectory traj = evolve_controlled_density(m2, sol, mu);
    CHECK(traj.max_mass_error <= 1e-9);
    for (int i = 100; i < grid.n_steps; i += 100) {
      const double ha = sol.h[i][0];
      const double hb = sol.h[i][1];
      const double pb = traj.p[i][1];
      // q(b, a) = (h(a)/h(b)) p(b) L(b,a); slot 0 of row 1 is the edge to 0
      CHECK_THAT(traj.q[i].row(1)[0], WithinAbs(ha / hb * pb, 1e-12));
    }
    // terminal density vanishes exactly on the infinite-cost state
    CHECK(traj.p.back()[0] == 0.0);
  }

  SECTION("isolated start state stays put") {
    RateKernel k(3, {{0, 1, 1.0}, {1, 0, 1.0}});
    BackwardSolution sol = solve_bke(k, {0.0, 0.0, 0.0}, TimeGrid::uniform(1.0, 100));
    DensityFluxTrajectory traj =
        evolve_controlled_density(k, sol, Distribution::delta(3, 2));
    for (const ScalarField& p : traj.p) {
      CHECK(p[2] == 1.0);
      CHECK(p[0] == 0.0);
    }
  }

  SECTION("initial law on an infinite-value state is rejected") {
    // build a solution whose psi_0 is -inf at state 0 by hand
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, grid);
    sol.h[0][0] = 0.0;
    sol.psi[0][0] = -kInf;
    CHECK_THROWS_AS(evolve_controlled_density(m2, sol, Distribution::delta(2, 0)),
                    InfiniteValueError);
    CHECK_THROWS_AS(deterministic_value(sol, Distribution::delta(2, 0)), InfiniteValueError);
  }
}

TEST_CASE("deterministic value and the optimality identity") {
  RateKernel m2 = fixtures::m2();
  const double T = 1.0;
  TimeGrid grid = TimeGrid::uniform(T, 400);
  Distribution mu = Distribution::delta(2, 0);

  SECTION("zero cost means zero value") {
    BackwardSolution sol = solve_bke(m2, {0.0, 0.0}, grid);
    CHECK(deterministic_value(sol, mu) == 0.0);
    CHECK(deterministic_value(sol, Distribution::uniform(2)) == 0.0);
  }

  SECTION("bounded cost value matches the eigen-oracle closed form") {
    const double M = 1.0;
    BackwardSolution sol = solve_bke(m2, {M, 0.0}, grid);
    const double oracle = -std::log(0.5 * (1.0 + std::exp(-M)) -
                                    0.5 * (1.0 - std::exp(-M)) * std::exp(-2.0 * T));
    CHECK_THAT(deterministic_value(sol, mu), WithinAbs(oracle, 1e-6));
    // value is bounded by max f
    CHECK(deterministic_value(sol, mu) <= M + 1e-12);
  }

  SECTION("verification identity: evolved cost equals the value (M = 1)") {
    const double M = 1.0;
    BackwardSolution sol = solve_bke(m2, {M, 0.0}, grid);
    DensityFluxTrajectory traj = evolve_controlled_density(m2, sol, mu);
    const double cost = control_cost(traj, {M, 0.0});
    CHECK_THAT(cost, WithinAbs(deterministic_value(sol, mu), 5e-4));
  }

  SECTION("verification identity: evolved cost equals the value (M = +inf)") {
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, grid);
    DensityFluxTrajectory traj = evolve_controlled_density(m2, sol, mu);
    const double cost = control_cost(traj, {kInf, 0.0});
    const double value = deterministic_value(sol, mu);
    const double oracle = -std::log(0.5 * (1.0 - std::exp(-2.0 * T)));
    CHECK_THAT(value, WithinAbs(oracle, 1e-6));
    CHECK_THAT(cost, WithinAbs(value, 5e-4));
  }

  SECTION("perturbed controls cost strictly more") {
    for (double M : {1.0}) {
      BackwardSolution sol = solve_bke(m2, {M, 0.0}, grid);
      const double value = deterministic_value(sol, mu);
      ControlSpec optimal = make_finite_horizon_control(m2, sol);
      for (double w : {0.0, 0.5, 0.9}) {
        ControlSpec blended = blend_with_reference(m2, optimal, w);
        DensityFluxTrajectory traj = evolve_with_control(m2, blended, mu);
        const double cost = control_cost(traj, {M, 0.0});
        CHECK(cost > value + 1e-6);
      }
    }
    // unbounded cost: any control leaving mass on A pays +inf
    BackwardSolution sol = solve_bke(m2, {kInf, 0.0}, grid);
    ControlSpec optimal = make_finite_horizon_control(m2, sol);
    ControlSpec blended = blend_with_reference(m2, optimal, 0.5);
    DensityFluxTrajectory traj = evolve_with_control(m2, blended, mu);
    CHECK(control_cost(traj, {kInf, 0.0}) == kInf);
  }
}

TEST_CASE("cutoff convergence study") {
  RateKernel m2 = fixtures::m2();
  const double T = 1.0;
  TimeGrid grid = TimeGrid::uniform(T, 200);
  Distribution mu = Distribution::delta(2, 0);

  SECTION("inactive cutoff reproduces the solution exactly") {
    ScalarField f{3.0, 0.0};
    CutoffReport rep = cutoff_convergence_study(m2, f, grid, {3, 5, 8}, mu);
    for (const CutoffEntry& e : rep.entries) {
      CHECK(e.max_gap_any_node == 0.0);
      CHECK_THAT(e.value, WithinAbs(rep.value_limit, 1e-14));
    }
  }

  SECTION("m2 with infinite cost: oracle gaps and monotone decrease") {
    CutoffReport rep = cutoff_convergence_study(m2, {kInf, 0.0}, grid, {5, 10, 20}, mu);
    REQUIRE(rep.entries.size() == 3);
    // two eigen-oracle solves: difference field d_T = (e^-n, 0) propagated to 0
    // gives d_0 = (e^-n (1+e^{-2T})/2, e^-n (1-e^{-2T})/2); the sup gap sits
    // on state a
    for (const CutoffEntry& e : rep.entries) {
      const double oracle =
          0.5 * std::exp(-static_cast<double>(e.n)) * (1.0 + std::exp(-2.0 * T));
      CHECK_THAT(e.max_gap_t0, WithinAbs(oracle, 1e-12));
      CHECK(e.max_gap_t0 <= e.bound_t0);
    }
    CHECK(rep.entries[0].max_gap_t0 > rep.entries[1].max_gap_t0);
    CHECK(rep.entries[1].max_gap_t0 > rep.entries[2].max_gap_t0);
    // values increase toward the limit
    CHECK(rep.entries[0].value <= rep.entries[1].value);
    CHECK(rep.entries[1].value <= rep.entries[2].value);
    CHECK(rep.entries[2].value <= rep.value_limit + 1e-12);
  }
}
