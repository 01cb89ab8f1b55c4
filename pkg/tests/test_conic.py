import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from lcvx.conic import ConeSpec, ConicProgram, SolverSettings, Status, residuals, solve


def program(c, A, b, blocks):
    return ConicProgram(np.asarray(c, float), sp.csc_matrix(np.asarray(A, float)),
                        np.asarray(b, float), ConeSpec(tuple(blocks)))


def tight_bound():
    # min x  s.t.  x >= 1  ->  -x + s = -1, s >= 0
    return program([1.0], [[-1.0]], [-1.0], [("L", 1)])


def pythagoras():
    # min t  s.t.  |(3, 4)| <= t  ->  s = (t, 3, 4) in Q3
    return program([1.0], [[-1.0], [0.0], [0.0]], [0.0, 3.0, 4.0], [("Q", 3)])


def test_tight_bound():
    sol = solve(tight_bound())
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_pythagorean_norm():
    sol = solve(pythagoras())
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(5.0, abs=1e-7)


def test_contradictory_bounds_give_certificate():
    # x >= 1 and -x >= 0
    prog = program([1.0], [[-1.0], [1.0]], [-1.0, 0.0], [("L", 2)])
    sol = solve(prog)
    assert sol.status is Status.PRIMAL_INFEASIBLE
    y = sol.y
    assert prog.cone.dual_contains(y, tol=1e-9)
    assert prog.b @ y < 0
    assert np.linalg.norm(prog.A.T @ y) <= 1e-7 * abs(prog.b @ y)


def test_unbounded_is_dual_infeasible():
    # min -x  s.t.  x >= 0
    sol = solve(program([-1.0], [[-1.0]], [0.0], [("L", 1)]))
    assert sol.status is Status.DUAL_INFEASIBLE


def test_equality_rows():
    # min x1 + x2  s.t.  x1 + 2 x2 = 4, x >= 0  ->  x = (0, 2)
    prog = program([1.0, 1.0], [[1.0, 2.0], [-1.0, 0.0], [0.0, -1.0]], [4.0, 0.0, 0.0],
                   [("Z", 1), ("L", 2)])
    sol = solve(prog)
    assert sol.status is Status.OPTIMAL
    np.testing.assert_allclose(sol.x, [0.0, 2.0], atol=1e-7)


def test_lp_matches_vertex_enumeration():
    rng = np.random.default_rng(7)
    n, m = 20, 22
    A = rng.standard_normal((m, n))
    b = rng.uniform(0.5, 2.0, m)  # origin strictly feasible
    lam = rng.uniform(0.1, 1.0, m)
    c = -A.T @ lam  # dual feasible, so the LP is bounded
    best = np.inf
    for rows in itertools.combinations(range(m), n):
        Ar = A[list(rows)]
        if abs(np.linalg.det(Ar)) < 1e-10:
            continue
        v = np.linalg.solve(Ar, b[list(rows)])
        if np.all(A @ v <= b + 1e-9):
            best = min(best, float(c @ v))
    sol = solve(program(c, A, b, [("L", m)]))
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(best, abs=1e-6, rel=1e-6)


def test_residuals_of_exact_optimum():
    prog = pythagoras()
    x = np.array([5.0])
    s = np.array([5.0, 3.0, 4.0])
    y = np.array([1.0, -0.6, -0.8])  # A'y + c = 0, b'y = -5
    res = residuals(prog, x, y, s)
    assert max(res.values()) <= 1e-9


def test_residual_zero_at_origin_when_b_in_cone():
    prog = program([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]], [2.0, 3.0], [("L", 2)])
    res = residuals(prog, np.zeros(2), np.zeros(2), prog.b.copy())
    assert res["primal_res"] == 0.0


def test_primal_residual_grows_linearly_with_perturbation():
    prog = pythagoras()
    s = np.array([5.0, 3.0, 4.0])
    y = np.array([1.0, -0.6, -0.8])
    r1 = residuals(prog, np.array([5.0 + 1e-3]), y, s)["primal_res"]
    r2 = residuals(prog, np.array([5.0 + 2e-3]), y, s)["primal_res"]
    assert r1 > 0
    assert r2 == pytest.approx(2 * r1, rel=1e-9)
    assert r1 == pytest.approx(1e-3 / (1 + np.linalg.norm(prog.b)), rel=1e-9)


def test_residuals_shape_check():
    with pytest.raises(ValueError):
        residuals(pythagoras(), np.zeros(2), np.zeros(3), np.zeros(3))


def test_cone_spec_validation():
    with pytest.raises(ValueError):
        ConeSpec((("X", 2),))
    with pytest.raises(ValueError):
        ConeSpec((("Q", 1),))
    with pytest.raises(ValueError):
        program([1.0], [[1.0]], [1.0, 2.0], [("L", 2)])
    with pytest.raises(ValueError):
        program([np.nan], [[1.0]], [1.0], [("L", 1)])


def test_deterministic():
    rng = np.random.default_rng(3)
    prog = random_feasible_socp(rng, 6, [("L", 3), ("Q", 3), ("Q", 4)])
    a, b = solve(prog), solve(prog)
    assert a.iterations == b.iterations
    assert a.objective == b.objective
    np.testing.assert_array_equal(a.x, b.x)


def test_cost_scaling_leaves_argmin():
    rng = np.random.default_rng(11)
    prog = random_feasible_socp(rng, 5, [("L", 4), ("Q", 3)])
    scaled = ConicProgram(10.0 * prog.c, prog.A, prog.b, prog.cone)
    x1, x2 = solve(prog).x, solve(scaled).x
    np.testing.assert_allclose(x1, x2, atol=1e-5 * (1 + np.linalg.norm(x1)))


def test_max_iterations_status():
    rng = np.random.default_rng(5)
    prog = random_feasible_socp(rng, 6, [("L", 4), ("Q", 4)])
    sol = solve(prog, SolverSettings(max_iters=2))
    assert sol.status is Status.MAX_ITERATIONS


def random_feasible_socp(rng, n, blocks):
    """Strictly primal and dual feasible program: b = A x0 + s0, c = -A' y0."""
    m = sum(d for _, d in blocks)
    A = rng.standard_normal((m, n))
    s0, y0 = [], []
    for kind, d in blocks:
        if kind == "L":
            s0.append(rng.uniform(0.1, 2.0, d))
            y0.append(rng.uniform(0.1, 2.0, d))
        else:
            for out in (s0, y0):
                v = rng.standard_normal(d - 1)
                out.append(np.concatenate([[np.linalg.norm(v) + rng.uniform(0.1, 1.0)], v]))
    s0, y0 = np.concatenate(s0), np.concatenate(y0)
    b = A @ rng.standard_normal(n) + s0
    return program(-A.T @ y0, A, b, blocks)


block = st.one_of(st.tuples(st.just("L"), st.integers(1, 4)),
                  st.tuples(st.just("Q"), st.integers(2, 5)))


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8),
       blocks=st.lists(block, min_size=1, max_size=4))
def test_random_feasible_socps(seed, n, blocks):
    rng = np.random.default_rng(seed)
    prog = random_feasible_socp(rng, n, blocks)
    opts = SolverSettings()
    sol = solve(prog, opts)
    assert sol.status is Status.OPTIMAL
    res = residuals(prog, sol.x, sol.y, sol.s)
    assert res["primal_res"] <= opts.feas_tol
    assert res["dual_res"] <= opts.feas_tol
    assert res["gap"] <= opts.gap_tol
    tol = 1e-7 * (1 + np.linalg.norm(sol.s) + np.linalg.norm(sol.y))
    assert prog.cone.contains(sol.s, tol)
    assert prog.cone.dual_contains(sol.y, tol)
    # weak duality: c'x - (-b'y) = s'y >= 0 for a feasible pair
    primal, dual = prog.c @ sol.x, -prog.b @ sol.y
    assert primal >= dual - 1e-7 * (1 + abs(primal) + abs(dual))
