import numpy as np
import pytest
import scipy.linalg
import scipy.optimize
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from lcvx import rocket
from lcvx.conditions import (AdjointTrajectory, RankDeficientCone, channel_gains,
                             check_condition1, check_condition4_posteriori,
                             check_conditions23_posteriori, contact_set, full_report,
                             gain_activation_consistency, in_normal_cone_interior,
                             project_onto_cone, project_point, recover_primer,
                             weakly_unobservable_subspace)
from lcvx.driver import EDGE, audit_losslessness, solve_fixed_tf
from lcvx.ocp import Halfspace, InputChannel, SemiContinuousOCP, StateConstraintSet
from lcvx.transcription import OCPSolution

from conftest import double_integrator


def moreau_projection(y, C):
    """Projection onto {C z <= 0} as y minus its projection onto cone(C')."""
    # bvls rather than nnls: nnls in some scipy releases stops at non-optimal points
    res = scipy.optimize.lsq_linear(C.T, y, bounds=(0.0, np.inf), method="bvls", tol=1e-14)
    return y - C.T @ res.x


# -- projection ---------------------------------------------------------------

def test_projection_inside_is_identity():
    C = np.array([[0.0, -1.0]])
    assert project_onto_cone([1.0, 2.0], C) == pytest.approx(np.sqrt(5.0))


def test_projection_of_polar_point_is_zero():
    C = np.eye(2)  # cone is the negative orthant, polar is the positive one
    assert project_onto_cone([1.0, 3.0], C) == pytest.approx(0.0, abs=1e-15)


def test_projection_hand_geometry():
    C = np.array([[0.0, -1.0]])
    np.testing.assert_allclose(project_point([3.0, -4.0], C), [3.0, 0.0], atol=1e-15)
    assert project_onto_cone([3.0, -4.0], C) == pytest.approx(3.0)


def test_projection_rank_deficient():
    with pytest.raises(RankDeficientCone):
        project_point([1.0, 1.0], [[1.0, 0.0], [2.0, 0.0]])


def test_projection_many_rows_uses_solver():
    rng = np.random.default_rng(2)
    C = rng.standard_normal((10, 3))
    y = rng.standard_normal(3) * 5
    np.testing.assert_allclose(project_point(y, C), moreau_projection(y, C), atol=1e-6)


@settings(max_examples=1000, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 4), m=st.integers(1, 3),
       inside=st.booleans())
def test_projection_identities(seed, p, m, inside):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((p, m))
    assume(np.linalg.svd(C, compute_uv=False).min() > 1e-3)
    y = rng.standard_normal(m) * rng.uniform(0.1, 10.0)
    if inside:
        y = moreau_projection(y, C)
    ny = np.linalg.norm(y)
    assume(ny > 1e-6)
    mag = project_onto_cone(y, C)
    assert mag == pytest.approx(np.linalg.norm(moreau_projection(y, C)), abs=1e-9 * (1 + ny))
    assert project_onto_cone(2.0 * y, C) == pytest.approx(2.0 * mag, rel=1e-10, abs=1e-10 * ny)
    assert mag <= ny * (1 + 1e-12)
    if np.all(C @ y <= 1e-12 * ny):
        assert mag == pytest.approx(ny, rel=1e-10)
    elif np.max(C @ y) > 1e-6 * ny:
        assert mag < ny


def test_normal_cone_interior():
    C = np.eye(2)
    assert in_normal_cone_interior([1.0, 2.0], C)
    assert not in_normal_cone_interior([1.0, 0.0], C)
    assert not in_normal_cone_interior([-1.0, 2.0], C)
    assert not in_normal_cone_interior([1.0, 1.0], [[1.0, 0.0]])  # p < m: no interior
    C3 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert in_normal_cone_interior([1.0, 1.0], C3)
    assert not in_normal_cone_interior([1.0, -0.5], C3)


# -- strong observability -------------------------------------------------------

def test_wus_fully_observed():
    assert weakly_unobservable_subspace(np.eye(3), np.zeros((3, 1)), np.eye(3),
                                        np.zeros((3, 1))).shape[1] == 0


def test_wus_double_integrator():
    V = weakly_unobservable_subspace([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]],
                                     [[0.0]])
    assert V.shape[1] == 0


def test_wus_rocket(rocket_cfg):
    A, B, _ = rocket.dynamics_matrices(rocket_cfg.omega, rocket_cfg.l, rocket_cfg.g)
    D = rocket.running_cost_directions(rocket_cfg)
    V = weakly_unobservable_subspace(-A.T, D, B.T, np.zeros((2, 2)))
    assert V.shape[1] == 0


def test_wus_known_unobservable_mode():
    V = weakly_unobservable_subspace(np.diag([1.0, 2.0]), np.zeros((2, 1)), [[1.0, 0.0]],
                                     [[0.0]])
    assert V.shape[1] == 1
    assert abs(V[1, 0]) == pytest.approx(1.0)


def invariance_residual(A, B, C, D, V):
    """Largest least-squares residual of the fixed-point property over V's basis."""
    n = A.shape[0]
    Pc = np.eye(n) - V @ V.T
    lhs = np.vstack([Pc @ B, D])
    worst = 0.0
    for v in V.T:
        rhs = -np.concatenate([Pc @ A @ v, C @ v])
        u, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        worst = max(worst, float(np.linalg.norm(lhs @ u - rhs)))
    return worst


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), m=st.integers(0, 2),
       p=st.integers(1, 3), pad=st.integers(0, 2))
def test_wus_recursion_properties(seed, n, m, p, pad):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = rng.standard_normal((p, m)) * rng.integers(0, 2)
    if pad:
        # append modes invisible to the output and untouched by the input
        A = scipy.linalg.block_diag(A, rng.standard_normal((pad, pad)))
        B = np.vstack([B, np.zeros((pad, m))])
        C = np.hstack([C, np.zeros((p, pad))])
    V, dims = weakly_unobservable_subspace(A, B, C, D, return_history=True)
    N = A.shape[0]
    assert dims[0] == N
    assert all(a >= b for a, b in zip(dims, dims[1:]))
    assert len(dims) - 1 <= N + 1
    assert V.shape[1] >= pad
    if V.shape[1]:
        np.testing.assert_allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-9)
        assert invariance_residual(A, B, C, D, V) <= 1e-8


def test_condition1_rocket(rocket_cfg):
    res = check_condition1(rocket.build_rocket_ocp(rocket_cfg),
                           rocket.running_cost_directions(rocket_cfg))
    assert res.holds and res.dimension == 0


def test_condition1_fails_without_input_or_cost():
    p = SemiContinuousOCP(A=np.zeros((2, 2)), B=np.zeros((2, 1)), w=np.zeros(2),
                          channels=[InputChannel(1.0, 2.0, [[-1.0]])], K=1, x0=np.zeros(2),
                          E=np.eye(2), target=np.zeros(2))
    assert not check_condition1(p)


def test_condition1_fails_with_padded_mode():
    # the extra state neither drives nor is seen by the primer
    A = scipy.linalg.block_diag([[0.0, 1.0], [0.0, 0.0]], [[-1.0]])
    p = SemiContinuousOCP(A=A, B=[[0.0], [1.0], [0.0]], w=np.zeros(3),
                          channels=[InputChannel(1.0, 2.0, [[-1.0]])], K=1, x0=np.zeros(3),
                          E=np.eye(3), target=np.zeros(3))
    res = check_condition1(p, D=np.zeros((3, 0)))
    assert not res.holds and res.dimension == 1


# -- conditions 2 and 3 -------------------------------------------------------------

def test_strict_gap_holds():
    res = check_conditions23_posteriori(np.array([[5.0], [1.0]]), K=1)
    assert res.condition2.all() and res.condition3.all()


def test_tie_at_budget_violates_condition3():
    res = check_conditions23_posteriori(np.array([[3.0], [3.0]]), K=1)
    assert not res.condition3[0]
    assert res.condition2[0]


def test_tie_inside_budget_is_fine():
    res = check_conditions23_posteriori(np.array([[3.0], [3.0]]), K=2)
    assert res.condition3.all()


def test_zero_gain_violates_condition2():
    res = check_conditions23_posteriori(np.array([[0.0, 2.0], [0.0, 1.0]]), K=1)
    assert list(res.condition2) == [False, True]


def test_violation_runs_and_exemption():
    G = np.array([[3.0, 3.0, 3.0, 5.0, 3.0], [3.0, 3.0, 3.0, 1.0, 3.0]])
    res = check_conditions23_posteriori(G, K=1)
    assert res.runs3 == [(0, 2), (4, 4)]
    assert res.longest_run == 3
    ex = np.zeros_like(G, dtype=bool)
    ex[:, :3] = True
    assert check_conditions23_posteriori(G, K=1, exempt=ex).runs3 == [(4, 4)]


# -- condition 4 and contact set ------------------------------------------------------

def solution_from(x, sigma=None):
    N = len(x)
    sigma = np.zeros((1, N - 1)) if sigma is None else np.atleast_2d(sigma)
    u = sigma[:, :, None].copy()
    return OCPSolution(t=np.arange(N, dtype=float), x=np.asarray(x, dtype=float), u=u,
                       sigma=sigma, gamma=np.zeros_like(sigma), xi=np.zeros(N), cost=0.0,
                       t_f=float(N - 1), dt=1.0, dynamics_duals=np.zeros((N - 1, 2)))


def test_condition4_vanishes_without_cost():
    p = double_integrator(zeta=0)
    assert not check_condition4_posteriori(solution_from(np.zeros((5, 2))), p)


def test_condition4_zeta1_only_on_active_nodes():
    p = double_integrator(zeta=1)
    sigma = np.array([1.5, 0.0, 2.0, 0.0])
    res = check_condition4_posteriori(solution_from(np.zeros((5, 2)), sigma), p)
    assert list(res.values > 0) == [True, False, True, False]
    assert not res.holds


def test_condition4_rocket(rocket_800_fixed):
    relaxed, _, sol = rocket_800_fixed
    res = check_condition4_posteriori(sol, relaxed)
    assert res.holds and res.margin > 0


def test_contact_set_interior_and_slide():
    ss = StateConstraintSet([Halfspace([1.0, 0.0], 1.0)])
    inside = solution_from(np.column_stack([np.linspace(-1, 0.5, 8), np.zeros(8)]))
    c = contact_set(inside, ss, 1e-9)
    assert c.nodes == [] and c.discrete
    x = np.zeros((10, 2))
    x[:, 0] = [0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.2, 0.0]
    c = contact_set(solution_from(x), ss, 1e-9)
    assert c.nodes == [2, 3, 4, 5, 6] and not c.discrete


def test_contact_set_rocket(case_800_zeta0):
    c = case_800_zeta0.conditions.contact
    assert c.discrete
    assert 1 <= len(c.nodes) <= 2


# -- primer recovery ----------------------------------------------------------------

def test_primer_orders_channels(rocket_800_fixed):
    relaxed, tp, sol = rocket_800_fixed
    adj = recover_primer(tp, sol)
    rep = audit_losslessness(sol, relaxed)
    assert gain_activation_consistency(adj, rep.classes) == 1.0
    strict = 0
    total = 0
    for k in range(sol.N - 1):
        col = rep.classes[:, k]
        if np.any(col == EDGE) or not np.any(col == "Active"):
            continue
        i = int(np.flatnonzero(col == "Active")[0])
        total += 1
        strict += adj.gains[i, k] > np.delete(adj.gains[:, k], i).max()
    assert strict / total >= 0.98


def test_gain_order_scale_invariant(rocket_800_fixed):
    relaxed, tp, sol = rocket_800_fixed
    adj = recover_primer(tp, sol)
    for c in (0.1, 7.0):
        g = channel_gains(c * adj.y, relaxed.channels, relaxed.cost.zeta)
        np.testing.assert_array_equal(np.argmax(g, axis=0), np.argmax(adj.gains, axis=0))


def test_primer_degenerate_at_target(at_target_relaxed):
    from lcvx.transcription import transcribe

    sol = solve_fixed_tf(at_target_relaxed, 5, 2.0)
    adj = recover_primer(transcribe(at_target_relaxed, 5, 2.0), sol)
    assert isinstance(adj, AdjointTrajectory)
    assert adj.y.shape == (4, 1)


def test_full_report_rocket(rocket_800_fixed, rocket_cfg):
    _, tp, sol = rocket_800_fixed
    rep, _ = full_report(tp, sol, rocket.running_cost_directions(rocket_cfg))
    assert rep.all_hold
    assert rep.conditions23.longest_run <= 1
