"""Best-first branch and bound over the activation binaries.

The mixed-integer problem is the relaxed problem with every gamma restricted
to {0, 1}. Node bounds come from the convex relaxation with some gammas pinned.
Used as ground truth on small grids.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .conic import SolverSettings
from .driver import Infeasible, solve_transcribed, tighten_slacks
from .ocp import RelaxedOCP
from .transcription import OCPSolution, transcribe


@dataclass
class MICPSettings:
    int_tol: float = 1e-5
    gap_target: float = 1e-6  # absolute, on the solver-scaled cost
    max_nodes: int = 100_000
    solver: SolverSettings | None = None


@dataclass
class BnBNode:
    fixed: dict  # (i, k) -> 0 / 1
    bound: float  # scaled relaxation cost
    depth: int
    parent: int | None
    id: int = 0


@dataclass
class TreeStats:
    explored: int = 0
    pruned: int = 0
    infeasible: int = 0
    branched: int = 0
    max_depth: int = 0
    root_bound: float = np.nan
    incumbents: list = field(default_factory=list)  # (node id, unscaled cost)
    exhausted: bool = False
    gap: float = 0.0
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if k == "incumbents" else v)
                for k, v in self.__dict__.items()}


def integral_gamma(sol: OCPSolution, problem, tol: float = 1e-6) -> np.ndarray | None:
    """Binary gammas consistent with (u, sigma) under the original constraints, if any.

    Each channel is on iff its norm is positive; the result must respect the
    thrust bounds and the budget.
    """
    P = getattr(problem, "problem", problem)
    norms = sol.input_norms
    gam = np.zeros_like(sol.gamma)
    for i, ch in enumerate(P.channels):
        on = norms[i] > tol * ch.rho2
        if np.any(on & ((norms[i] < ch.rho1 - tol * ch.rho2) | (norms[i] > ch.rho2 * (1 + tol)))):
            return None
        gam[i] = on
    if np.any(gam.sum(axis=0) > P.K):
        return None
    return gam


def _most_fractional(gamma, fixed, int_tol):
    frac = np.abs(gamma - np.round(gamma))
    best, key = None, None
    M, nk = gamma.shape
    for k in range(nk):
        for i in range(M):
            if (i, k) in fixed or frac[i, k] <= int_tol:
                continue
            # closest to 0.5; ties broken by lowest (k, i)
            cand = (-frac[i, k], k, i)
            if key is None or cand < key:
                best, key = (i, k), cand
    return best


def solve_micp(relaxed: RelaxedOCP, N: int, t_f: float, settings: MICPSettings | None = None):
    """Return (solution or Infeasible, TreeStats)."""
    settings = settings or MICPSettings()
    t0 = time.perf_counter()
    stats = TreeStats()
    ids = itertools.count()

    def evaluate(fixed):
        tp = transcribe(relaxed, N, t_f, fixed)
        sol = solve_transcribed(tp, settings.solver, tighten=False)
        if isinstance(sol, Infeasible):
            return None, None
        return sol, sol.cost / tp.cost_scale

    def integer_point(sol):
        """An integer-feasible solution with the node's cost, if one is at hand."""
        for cand in (sol, tighten_slacks(sol, relaxed)):
            if np.all(np.abs(cand.gamma - np.round(cand.gamma)) <= settings.int_tol):
                return dataclasses.replace(cand, gamma=np.round(cand.gamma),
                                           stats=dict(cand.stats, integral=True))
        gam = integral_gamma(sol, relaxed)
        return None if gam is None else _with_gamma(sol, gam)

    root_sol, root_bound = evaluate({})
    stats.explored = 1
    if root_sol is None:
        stats.runtime = time.perf_counter() - t0
        return Infeasible(t_f), stats
    stats.root_bound = root_bound
    incumbent, inc_val = None, np.inf
    queue = []
    counter = itertools.count()
    root = BnBNode({}, root_bound, 0, None, next(ids))
    heapq.heappush(queue, (root_bound, next(counter), root, root_sol))
    while queue:
        bound, _, node, sol = heapq.heappop(queue)
        if bound >= inc_val - settings.gap_target:
            stats.pruned += 1
            continue
        point = integer_point(sol)
        if point is not None:
            incumbent = point
            inc_val = bound
            stats.incumbents.append((node.id, float(sol.cost)))
            continue
        pick = _most_fractional(sol.gamma, node.fixed, settings.int_tol)
        if pick is None:  # cannot happen: integral gammas make an integer point
            stats.infeasible += 1
            continue
        stats.branched += 1
        for val in (1, 0):
            if stats.explored >= settings.max_nodes:
                stats.exhausted = True
                break
            fixed = dict(node.fixed)
            fixed[pick] = val
            child_sol, child_bound = evaluate(fixed)
            stats.explored += 1
            if child_sol is None:
                stats.infeasible += 1
                continue
            child = BnBNode(fixed, child_bound, node.depth + 1, node.id, next(ids))
            stats.max_depth = max(stats.max_depth, child.depth)
            if child_bound >= inc_val - settings.gap_target:
                stats.pruned += 1
                continue
            heapq.heappush(queue, (child_bound, next(counter), child, child_sol))
        if stats.exhausted:
            break
    if stats.exhausted:
        lowest = min([q[0] for q in queue], default=inc_val)
        stats.gap = float(inc_val - lowest) if np.isfinite(inc_val) else np.inf
    stats.runtime = time.perf_counter() - t0
    if incumbent is None:
        return Infeasible(t_f, {"reason": "no integral solution found"}), stats
    return incumbent, stats


def _with_gamma(sol: OCPSolution, gam) -> OCPSolution:
    norms = sol.input_norms
    xi = np.concatenate([[sol.xi[0]], sol.xi[0] + sol.dt * np.cumsum(norms.sum(axis=0))])
    return dataclasses.replace(sol, gamma=np.asarray(gam, dtype=float),
                               sigma=np.where(gam > 0, norms, 0.0), xi=xi,
                               stats=dict(sol.stats, integral=True))


class GridMismatch(ValueError):
    pass


def verify_equivalence(lcvx, micp, rel_tol: float = 1e-3):
    """(equivalent, relative gap) between two costs or two same-grid solutions."""
    if isinstance(lcvx, OCPSolution) and isinstance(micp, OCPSolution):
        if lcvx.N != micp.N or not np.isclose(lcvx.t_f, micp.t_f, rtol=1e-12, atol=0):
            raise GridMismatch(f"grids differ: N {lcvx.N} vs {micp.N}, "
                               f"t_f {lcvx.t_f} vs {micp.t_f}")
        j1, j2 = lcvx.cost, micp.cost
    else:
        j1, j2 = float(lcvx), float(micp)
    gap = abs(j1 - j2) / max(1.0, abs(j2))
    return gap <= rel_tol, gap
