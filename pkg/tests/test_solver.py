import numpy as np
import pytest

from tsco import solver
from tsco.solver import (EQ, GE, LE, LinearProgram, LpBuilder, LpStatus,
                         MilpSpec, check_certificate, check_solution,
                         solve_lp, solve_milp)

import oracles


def lp_min_x_ge_3():
    b = LpBuilder()
    b.add_var("x", cost=1.0, lower=0.0)
    b.add_row("r", [(0, 1.0)], GE, 3.0)
    return b.build()


def test_single_active_constraint():
    lp = lp_min_x_ge_3()
    out = solve_lp(lp)
    assert out.status == LpStatus.OPTIMAL
    assert out.x[0] == pytest.approx(3.0, abs=1e-9)
    assert out.objective == pytest.approx(3.0, abs=1e-9)
    assert out.duals[0] == pytest.approx(1.0, abs=1e-9)


def test_triangle_vertex_and_pivot_rule():
    # min -x - y s.t. x + y <= 1, x,y >= 0: ties in pricing resolve to the
    # lowest index, so the solver lands on (1, 0)
    b = LpBuilder()
    b.add_var("x", cost=-1.0)
    b.add_var("y", cost=-1.0)
    b.add_row("cap", [(0, 1.0), (1, 1.0)], LE, 1.0)
    lp = b.build()
    out = solve_lp(lp)
    assert out.status == LpStatus.OPTIMAL
    assert out.objective == pytest.approx(-1.0, abs=1e-9)
    assert out.x[0] == pytest.approx(1.0, abs=1e-9)
    assert out.x[1] == pytest.approx(0.0, abs=1e-9)
    assert out.objective == pytest.approx(oracles.min_vertex_objective(lp), abs=1e-8)


def test_infeasible_certificate():
    b = LpBuilder()
    b.add_var("x", lower=-np.inf)
    b.add_row("hi", [(0, 1.0)], LE, -1.0)
    b.add_row("lo", [(0, 1.0)], GE, 0.0)
    lp = b.build()
    out = solve_lp(lp)
    assert out.status == LpStatus.INFEASIBLE
    cert = out.farkas
    assert cert.infeasibility > 0
    # <=-normalized weights are nonnegative and proportional to (1, 1)
    w = cert.row_weights
    assert w[0] > 0 and w[1] > 0
    assert w[0] == pytest.approx(w[1], rel=1e-9)
    assert check_certificate(lp, cert) > 0


def test_check_solution_clean_and_perturbed():
    lp = lp_min_x_ge_3()
    out = solve_lp(lp)
    rep = check_solution(lp, out)
    assert rep.all_ok
    assert rep.max_primal_residual == pytest.approx(0.0, abs=1e-12)
    perturbed = solver.LpOutcome(status=LpStatus.OPTIMAL,
                                 x=np.array([3.1]), duals=out.duals,
                                 reduced_costs=out.reduced_costs,
                                 objective=3.1)
    rep2 = check_solution(lp, perturbed)
    assert rep2.max_primal_residual <= 1e-12
    assert rep2.duality_gap == pytest.approx(0.1, abs=1e-9)
    assert not rep2.gap_ok


def test_random_lp_residuals():
    rng = np.random.default_rng(7)
    lp = oracles.random_feasible_lp(rng)
    out = solve_lp(lp)
    assert out.status == LpStatus.OPTIMAL
    rep = check_solution(lp, out)
    assert rep.all_ok
    assert rep.max_primal_residual <= 1e-8


def test_vertex_enumeration_agreement():
    for seed in range(12):
        rng = np.random.default_rng(1000 + seed)
        lp = oracles.random_feasible_lp(rng, n_vars=5, n_rows=4)
        out = solve_lp(lp)
        assert out.status == LpStatus.OPTIMAL
        assert out.objective == pytest.approx(
            oracles.min_vertex_objective(lp), abs=1e-8)


def test_strong_duality_and_cs_on_seeds():
    for seed in range(20):
        rng = np.random.default_rng(2000 + seed)
        lp = oracles.random_feasible_lp(rng, n_vars=8, n_rows=6)
        out = solve_lp(lp)
        assert out.status == LpStatus.OPTIMAL
        rep = check_solution(lp, out)
        assert rep.all_ok, f"seed {seed}: {rep}"


def test_unbounded():
    b = LpBuilder()
    b.add_var("x", cost=-1.0)
    b.add_row("r", [(0, 1.0)], GE, 0.0)
    out = solve_lp(b.build())
    assert out.status == LpStatus.UNBOUNDED


def test_equality_rows_and_free_vars():
    # min x + y s.t. x - y = 2, x + y >= 4 with y free
    b = LpBuilder()
    b.add_var("x", cost=1.0)
    b.add_var("y", cost=1.0, lower=-np.inf)
    b.add_row("eq", [(0, 1.0), (1, -1.0)], EQ, 2.0)
    b.add_row("ge", [(0, 1.0), (1, 1.0)], GE, 4.0)
    out = solve_lp(b.build())
    assert out.status == LpStatus.OPTIMAL
    assert out.objective == pytest.approx(4.0, abs=1e-9)
    assert out.x[0] == pytest.approx(3.0, abs=1e-9)
    assert out.x[1] == pytest.approx(1.0, abs=1e-9)


def test_dimension_mismatch():
    lp = LinearProgram(cost=np.array([1.0]), rows=[[(0, 1.0)]], senses=[GE],
                       rhs=np.array([1.0, 2.0]), lower=np.zeros(1),
                       upper=np.full(1, np.inf))
    with pytest.raises(solver.DimensionMismatch):
        solve_lp(lp)


def test_determinism_bit_identical():
    rng = np.random.default_rng(42)
    lp = oracles.random_feasible_lp(rng)
    a = solve_lp(lp)
    b = solve_lp(lp)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.duals, b.duals)
    assert a.objective == b.objective


def test_warm_start_same_answer():
    rng = np.random.default_rng(5)
    lp = oracles.random_feasible_lp(rng)
    cold = solve_lp(lp)
    lp2 = LinearProgram(cost=lp.cost, rows=lp.rows, senses=lp.senses,
                        rhs=lp.rhs + 0.01, lower=lp.lower, upper=lp.upper)
    warm = solve_lp(lp2, basis=cold.basis)
    cold2 = solve_lp(lp2)
    assert warm.status == cold2.status == LpStatus.OPTIMAL
    assert warm.objective == pytest.approx(cold2.objective, abs=1e-9)
    assert warm.iterations <= cold2.iterations


# ---------------------------------------------------------------------------
# MILP


def test_milp_rounding_forced():
    b = LpBuilder()
    b.add_var("x", cost=-1.0, lower=0.0, upper=1.0)
    b.add_row("r", [(0, 1.0)], LE, 0.5)
    out = solve_milp(MilpSpec(lp=b.build(), integer_indices=[0]))
    assert out.status == LpStatus.OPTIMAL
    assert out.x[0] == pytest.approx(0.0, abs=1e-9)
    assert out.objective == pytest.approx(0.0, abs=1e-9)


def test_knapsack():
    # max 3x1 + 4x2 + 5x3 s.t. 2x1 + 3x2 + 4x3 <= 5; brute force over the 8
    # assignments gives 7 at (1, 1, 0)
    b = LpBuilder()
    for name, c in (("x1", -3.0), ("x2", -4.0), ("x3", -5.0)):
        b.add_var(name, cost=c, lower=0.0, upper=1.0)
    b.add_row("cap", [(0, 2.0), (1, 3.0), (2, 4.0)], LE, 5.0)
    spec = MilpSpec(lp=b.build(), integer_indices=[0, 1, 2])
    out = solve_milp(spec)
    assert out.objective == pytest.approx(oracles.brute_force_milp(spec), abs=1e-9)
    assert out.objective == pytest.approx(-7.0, abs=1e-9)
    assert np.allclose(out.x, [1.0, 1.0, 0.0], atol=1e-9)


def test_integral_relaxation_no_branching():
    b = LpBuilder()
    b.add_var("x", cost=1.0, lower=0.0, upper=1.0)
    b.add_row("r", [(0, 1.0)], GE, 1.0)
    out = solve_milp(MilpSpec(lp=b.build(), integer_indices=[0]))
    assert out.nodes_branched == 0
    assert out.objective == pytest.approx(1.0, abs=1e-9)


def test_milp_matches_brute_force():
    rng = np.random.default_rng(99)
    for trial in range(8):
        n = int(rng.integers(3, 9))
        m = int(rng.integers(2, 5))
        cost = rng.uniform(-5, 5, n)
        a = rng.uniform(-2, 4, (m, n))
        rhs = a @ rng.uniform(0, 1, n) + rng.uniform(0.1, 2.0, m)
        rows = [[(j, float(a[i, j])) for j in range(n)] for i in range(m)]
        lp = LinearProgram(cost=cost, rows=rows, senses=[LE] * m, rhs=rhs,
                           lower=np.zeros(n), upper=np.ones(n))
        spec = MilpSpec(lp=lp, integer_indices=list(range(n)))
        out = solve_milp(spec)
        expect = oracles.brute_force_milp(spec)
        assert out.status == LpStatus.OPTIMAL
        assert out.objective == pytest.approx(expect, abs=1e-6)


def test_milp_infeasible():
    b = LpBuilder()
    b.add_var("x", cost=1.0, lower=0.0, upper=1.0)
    b.add_row("r", [(0, 1.0)], GE, 2.0)
    out = solve_milp(MilpSpec(lp=b.build(), integer_indices=[0]))
    assert out.status == LpStatus.INFEASIBLE


def test_milp_node_limit():
    # a knapsack-style instance large enough to need more than two nodes
    rng = np.random.default_rng(3)
    n = 12
    cost = -rng.uniform(1, 10, n)
    w = rng.uniform(1, 10, n)
    rows = [[(j, float(w[j])) for j in range(n)]]
    lp = LinearProgram(cost=cost, rows=rows, senses=[LE],
                       rhs=np.array([float(w.sum()) / 2]),
                       lower=np.zeros(n), upper=np.ones(n))
    with pytest.raises(solver.NodeLimitExceeded) as exc:
        solve_milp(MilpSpec(lp=lp, integer_indices=list(range(n)),
                            node_limit=2))
    assert exc.value.outcome.hit_node_limit


def test_lp_dump_format():
    lp = lp_min_x_ge_3()
    text = solver.lp_to_text(lp)
    lines = text.strip().split("\n")
    assert lines[0].startswith("min ")
    assert lines[-1] == ">= 3 0:1"
