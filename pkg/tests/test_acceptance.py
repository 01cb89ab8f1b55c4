"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from lcvx import rocket
from lcvx.conditions import (check_condition1, gain_activation_consistency, project_onto_cone,
                             weakly_unobservable_subspace)
from lcvx.conic import SolverSettings, Status, residuals, solve
from lcvx.discretization import zoh_discretize

from conftest import cached_case, record
from test_conditions import invariance_residual, moreau_projection
from test_conic import random_feasible_socp
from test_discretization import random_system

REFERENCE_COSTS = {(650.0, 0): 636.2, (650.0, 1): 374.5, (800.0, 0): 577.7,
                   (800.0, 1): 350.8, (1000.0, 0): 548.9, (1000.0, 1): 333.7,
                   (1500.0, 0): 493.4, (1500.0, 1): 316.1, (3000.0, 0): 558.0,
                   (3000.0, 1): 323.0}
MAX_EDGE = 6


@pytest.fixture(scope="module")
def reference_cases(rocket_cfg):
    return {key: cached_case(rocket_cfg.replace(h0=key[0], zeta=key[1], N=150))
            for key in REFERENCE_COSTS}


def audit_ok(b):
    return b.lossless.verdict and len(b.lossless.edge_nodes) <= MAX_EDGE


def conditions_ok(b):
    c = b.conditions
    return (c.condition4_margin is not None and c.condition4_margin > 0
            and c.conditions23.longest_run <= 1)


def test_criterion1_reference_costs(reference_cases):
    errs = {k: abs(b.cost - REFERENCE_COSTS[k]) / REFERENCE_COSTS[k]
            for k, b in reference_cases.items()}
    slowest = max(b.runtime for b in reference_cases.values())
    ok = max(errs.values()) <= 0.01 and slowest <= 60.0
    worst = max(errs, key=errs.get)
    record(1, ok, f"max rel err {errs[worst]:.2e} at h0={worst[0]:g} zeta={worst[1]}, "
                  f"slowest case {slowest:.1f} s")
    assert ok


def test_criterion2_final_times(reference_cases):
    t0, t1 = reference_cases[(800.0, 0)].t_f, reference_cases[(800.0, 1)].t_f
    ok = abs(t0 - 46.93) <= 0.25 and abs(t1 - 53.97) <= 0.25
    record(2, ok, f"t_f = {t0:.3f} (zeta=0), {t1:.3f} (zeta=1)")
    assert ok


def test_criterion3_lossless_audit(reference_cases):
    bad = [k for k, b in reference_cases.items() if not audit_ok(b)]
    most = max(len(b.lossless.edge_nodes) for b in reference_cases.values())
    total = len(reference_cases)
    record(3, not bad, f"{total - len(bad)}/{total} cases lossless, max Edge nodes {most}")
    assert not bad


def test_criterion4_micp_equivalence(rocket_cfg):
    rows = []
    t0 = time.perf_counter()
    for zeta in (0, 1):
        rows.append(rocket.run_micp_comparison(rocket_cfg.replace(h0=800.0, zeta=zeta),
                                               N_small=12, max_nodes=100_000))
    elapsed = time.perf_counter() - t0
    ok = (all(r["equivalent"] and r["micp_nodes"] <= 100_000 for r in rows)
          and elapsed <= 600.0)
    parts = []
    for r in rows:
        gap = "n/a" if r["rel_gap"] is None else f"{r['rel_gap']:.1e}"
        parts.append(f"zeta={r['zeta']}: {r['micp_status']} gap {gap} nodes {r['micp_nodes']}")
    record(4, ok, "; ".join(parts) + f"; {elapsed:.0f} s")
    assert ok


def test_criterion5_condition1(rocket_cfg):
    p = rocket.build_rocket_ocp(rocket_cfg)
    res = check_condition1(p, rocket.running_cost_directions(rocket_cfg))
    ok = res.holds and res.dimension == 0
    record(5, ok, f"weakly unobservable subspace dimension {res.dimension}")
    assert ok


def test_criterion6_conditions_posteriori(reference_cases):
    bad = [k for k, b in reference_cases.items() if not conditions_ok(b)]
    margin = min(b.conditions.condition4_margin for b in reference_cases.values())
    run = max(b.conditions.conditions23.longest_run for b in reference_cases.values())
    record(6, not bad, f"min Condition 4 margin {margin:.3g}, longest 2/3 violation run {run}")
    assert not bad


def test_criterion7_gain_consistency(reference_cases):
    fr = {k: gain_activation_consistency(b.adjoint, b.lossless.classes)
          for k, b in reference_cases.items()}
    worst = min(fr, key=fr.get)
    ok = fr[worst] >= 0.98
    record(7, ok, f"min fraction {fr[worst]:.3f} at h0={worst[0]:g} zeta={worst[1]}")
    assert ok


def socp_suite(rng, count=100):
    opts = SolverSettings()
    fails = 0
    for _ in range(count):
        blocks = [("L", int(rng.integers(1, 5))) if rng.random() < 0.5
                  else ("Q", int(rng.integers(2, 6))) for _ in range(rng.integers(1, 5))]
        prog = random_feasible_socp(rng, int(rng.integers(1, 9)), blocks)
        sol = solve(prog, opts)
        if sol.status is not Status.OPTIMAL:
            fails += 1
            continue
        res = residuals(prog, sol.x, sol.y, sol.s)
        tol = 1e-7 * (1 + np.linalg.norm(sol.s) + np.linalg.norm(sol.y))
        primal, dual = prog.c @ sol.x, -prog.b @ sol.y
        fails += not (res["primal_res"] <= opts.feas_tol and res["dual_res"] <= opts.feas_tol
                      and res["gap"] <= opts.gap_tol and prog.cone.contains(sol.s, tol)
                      and prog.cone.dual_contains(sol.y, tol)
                      and primal >= dual - 1e-7 * (1 + abs(primal) + abs(dual)))
    return fails


def projection_suite(rng, count=1000):
    fails = done = 0
    while done < count:
        p, m = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        C = rng.standard_normal((p, m))
        y = rng.standard_normal(m) * rng.uniform(0.1, 10.0)
        if rng.random() < 0.5:
            y = moreau_projection(y, C)
        ny = np.linalg.norm(y)
        if np.linalg.svd(C, compute_uv=False).min() <= 1e-3 or ny <= 1e-6:
            continue
        done += 1
        mag = project_onto_cone(y, C)
        ok = abs(mag - np.linalg.norm(moreau_projection(y, C))) <= 1e-9 * (1 + ny)
        ok &= abs(project_onto_cone(2.0 * y, C) - 2.0 * mag) <= 1e-10 * (2 * mag + ny)
        ok &= mag <= ny * (1 + 1e-12)
        if np.all(C @ y <= 1e-12 * ny):
            ok &= abs(mag - ny) <= 1e-10 * ny
        fails += not ok
    return fails


def zoh_suite(rng, count=50):
    fails = 0
    for _ in range(count):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        A, B, w, r = random_system(int(rng.integers(2**32)), n, m)
        dt = rng.uniform(0.05, 1.0)
        x0, u = r.standard_normal(n), r.standard_normal(m)
        Ad, Bd, wd = zoh_discretize(A, B, w, dt)
        ref = solve_ivp(lambda t, x: A @ x + B @ u + w, (0.0, dt), x0, method="DOP853",
                        rtol=1e-13, atol=1e-13).y[:, -1]
        fails += np.max(np.abs(Ad @ x0 + Bd @ u + wd - ref)) > 1e-9
    return fails


def subspace_suite(rng, count=100):
    fails = 0
    for _ in range(count):
        n, m, p = int(rng.integers(1, 6)), int(rng.integers(0, 3)), int(rng.integers(1, 4))
        A, B = rng.standard_normal((n, n)), rng.standard_normal((n, m))
        C, D = rng.standard_normal((p, n)), rng.standard_normal((p, m)) * rng.integers(0, 2)
        V, dims = weakly_unobservable_subspace(A, B, C, D, return_history=True)
        ok = dims[0] == n and all(a >= b for a, b in zip(dims, dims[1:]))
        ok &= len(dims) - 1 <= n + 1
        if V.shape[1]:
            ok &= invariance_residual(A, B, C, D, V) <= 1e-8
        fails += not ok
    return fails


def test_criterion8_property_suites():
    rng = np.random.default_rng(20240817)
    fails = {"socp": socp_suite(rng), "projection": projection_suite(rng),
             "zoh": zoh_suite(rng), "subspace": subspace_suite(rng)}
    ok = not any(fails.values())
    record(8, ok, "failures " + ", ".join(f"{k} {v}" for k, v in fails.items()))
    assert ok


def test_criterion9_sweep(rocket_cfg):
    h0s = np.linspace(650.0, 6000.0, 50)
    t0 = time.perf_counter()
    rows, bundles = rocket.run_sweep(rocket_cfg.replace(zeta=0, N=30), h0s, keep_bundles=True)
    elapsed = time.perf_counter() - t0
    optimal = sum(r["status"] == "Optimal" for r in rows)
    bad = [r["h0"] for r, b in zip(rows, bundles)
           if b is None or not (audit_ok(b) and conditions_ok(b))]
    ok = optimal == len(h0s) and not bad and elapsed <= 300.0
    detail = f"{optimal}/{len(h0s)} Optimal in {elapsed:.0f} s"
    if bad:
        detail += ", criteria 3/6 fail at h0 = " + ", ".join(f"{h:.1f}" for h in bad)
    record(9, ok, detail)
    assert ok
