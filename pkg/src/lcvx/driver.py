"""Fixed-final-time solves, golden-section search over t_f, losslessness audit."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import SolverSettings, Status, solve
from .ocp import RelaxedOCP
from .transcription import OCPSolution, TranscribedProblem, extract_solution, transcribe

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0

OFF, ACTIVE, EDGE = "Off", "Active", "Edge"


@dataclass
class Infeasible:
    """Marker returned when the relaxed problem has no feasible point at t_f."""

    t_f: float
    stats: dict = field(default_factory=dict)

    def __bool__(self):
        return False


class SolveFailure(RuntimeError):
    """The conic solver stopped without an optimality or infeasibility verdict."""

    def __init__(self, status: Status, t_f: float):
        self.status = status
        self.t_f = t_f
        super().__init__(f"solver returned {status.value} at t_f = {t_f:.6g}")


class InfeasibleBracket(RuntimeError):
    def __init__(self, bracket, endpoint_status):
        self.bracket = tuple(bracket)
        self.endpoint_status = tuple(endpoint_status)
        super().__init__(f"no feasible t_f found in {self.bracket} "
                         f"(endpoints: {', '.join(self.endpoint_status)})")


def tighten_slacks(sol: OCPSolution, problem) -> OCPSolution:
    """Canonical (sigma, gamma) on the optimal face when sigma carries no cost.

    With zeta = 0 the objective ignores sigma, so an interior-point method
    returns the analytic center of a face where sigma > |u| and gamma is
    fractional even on coast arcs. Setting sigma = |u| and clipping gamma
    into [sigma / rho2, sigma / rho1] keeps every constraint and the cost; gamma
    can only decrease (up to the solver's cone tolerance), so the budget still holds.
    """
    P = getattr(problem, "problem", problem)
    if P.cost.zeta != 0:
        return sol
    norms = sol.input_norms
    sigma = norms.copy()
    gamma = sol.gamma.copy()
    for i, ch in enumerate(P.channels):
        gamma[i] = np.clip(gamma[i], sigma[i] / ch.rho2, sigma[i] / ch.rho1)
    xi = np.concatenate([[sol.xi[0]], sol.xi[0] + sol.dt * np.cumsum(sigma.sum(axis=0))])
    stats = dict(sol.stats, slacks_tightened=True)
    return dataclasses.replace(sol, sigma=sigma, gamma=gamma, xi=xi, stats=stats)


def solve_transcribed(tp: TranscribedProblem, settings: SolverSettings | None = None,
                      tighten: bool = True):
    cs = solve(tp.program, settings)
    if cs.status is Status.OPTIMAL:
        sol = extract_solution(tp, cs)
        return tighten_slacks(sol, tp.relaxed) if tighten else sol
    if cs.status is Status.PRIMAL_INFEASIBLE:
        return Infeasible(tp.t_f, {"iterations": cs.iterations, "solve_time": cs.solve_time})
    raise SolveFailure(cs.status, tp.t_f)


def solve_fixed_tf(relaxed: RelaxedOCP, N: int, t_f: float,
                   settings: SolverSettings | None = None,
                   fixed_gammas: dict | None = None, tighten: bool = True) -> OCPSolution | Infeasible:
    if not t_f > 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    return solve_transcribed(transcribe(relaxed, N, t_f, fixed_gammas), settings, tighten)


@dataclass
class GoldenResult:
    x: float
    fx: float
    evaluations: int
    bracket: tuple
    history: list


def golden_section(f, lo: float, hi: float, tol: float) -> GoldenResult:
    """Minimize a unimodal f on [lo, hi] until the bracket is narrower than tol.

    f may return +inf; ties move the bracket right, which is correct when the
    infeasible region is a prefix of the interval.
    """
    if not hi > lo:
        raise ValueError("need hi > lo")
    if not tol > 0:
        raise ValueError("tol must be positive")
    history = []

    def ev(t):
        v = f(t)
        history.append((t, v))
        return v

    a, b = lo, hi
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = ev(c), ev(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = ev(d)
    x = 0.5 * (a + b)
    fx = ev(x)
    if not fx <= min(fc, fd):
        x, fx = (c, fc) if fc <= fd else (d, fd)
    return GoldenResult(x, fx, len(history), (a, b), history)


def golden_search_tf(relaxed: RelaxedOCP, N: int, bracket=(1.0, 100.0), tol_t: float = 0.05,
                     settings: SolverSettings | None = None):
    """Return (t_f*, solution at t_f*, search info)."""
    lo, hi = map(float, bracket)
    if not hi > lo > 0:
        raise ValueError("bracket must satisfy t_hi > t_lo > 0")
    cache: dict[float, OCPSolution | Infeasible] = {}

    def cost(t):
        sol = solve_fixed_tf(relaxed, N, t, settings)
        cache[t] = sol
        return sol.cost if isinstance(sol, OCPSolution) else math.inf

    res = golden_section(cost, lo, hi, tol_t)
    if not math.isfinite(res.fx):
        ends = []
        for t in (lo, hi):
            try:
                s = solve_fixed_tf(relaxed, N, t, settings)
                ends.append("Optimal" if isinstance(s, OCPSolution) else "Infeasible")
            except SolveFailure as exc:
                ends.append(exc.status.value)
        if "Optimal" not in ends:
            raise InfeasibleBracket((lo, hi), ends)
        # feasible only at the upper end: collapse onto it
        t_star = hi
        sol = solve_fixed_tf(relaxed, N, hi, settings)
        return t_star, sol, {"evaluations": res.evaluations + 3, "history": res.history}
    info = {"evaluations": res.evaluations, "history": res.history, "bracket": res.bracket}
    return res.x, cache[res.x], info


@dataclass
class LosslessReport:
    classes: np.ndarray  # (M, N-1) of Off / Active / Edge
    edge_nodes: list
    max_off_norm: float
    min_active_norm: np.ndarray  # per channel, nan if never active
    max_active_norm: np.ndarray
    max_active_count: int
    norm_equality_gap: float
    verdict: bool
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": bool(self.verdict),
            "edge_nodes": [int(k) for k in self.edge_nodes],
            "n_edge": len(self.edge_nodes),
            "max_off_norm": float(self.max_off_norm),
            "min_active_norm": [None if np.isnan(v) else float(v) for v in self.min_active_norm],
            "max_active_norm": [None if np.isnan(v) else float(v) for v in self.max_active_norm],
            "max_active_count": int(self.max_active_count),
            "norm_equality_gap": float(self.norm_equality_gap),
            "failures": list(self.failures),
        }


def classify_nodes(sigma, rho1, rho2, off_rel: float = 1e-4) -> np.ndarray:
    """Per-channel Off/Active/Edge labels from sigma.

    Edge covers sigma strictly between the thresholds and Active nodes next to
    an Off node of the same channel (the interval holding the switch may carry
    a partial thrust). Off nodes are never relabelled since their bound is exact.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    M, K = sigma.shape
    cls = np.full((M, K), EDGE, dtype=object)
    for i in range(M):
        cls[i, sigma[i] >= rho1[i] / 2] = ACTIVE
        cls[i, sigma[i] <= off_rel * rho2[i]] = OFF
    base = cls.copy()
    for i in range(M):
        for k in range(K - 1):
            a, b = base[i, k], base[i, k + 1]
            if a == ACTIVE and b == OFF:
                cls[i, k] = EDGE
            elif a == OFF and b == ACTIVE:
                cls[i, k + 1] = EDGE
    return cls


def audit_losslessness(sol: OCPSolution, problem, off_rel: float = 1e-4,
                       norm_rel: float = 1e-4) -> LosslessReport:
    """Check the bang-bang / budget structure of a relaxed solution."""
    P = getattr(problem, "problem", problem)
    rho1 = np.array([ch.rho1 for ch in P.channels])
    rho2 = np.array([ch.rho2 for ch in P.channels])
    norms = sol.input_norms  # (M, N-1)
    M, nk = norms.shape
    cls = classify_nodes(sol.sigma, rho1, rho2, off_rel)
    edge_nodes = [k for k in range(nk) if np.any(cls[:, k] == EDGE)]
    clean = np.array([k not in set(edge_nodes) for k in range(nk)], dtype=bool)
    tol_off = off_rel * rho2
    tol = norm_rel * rho2
    failures = []
    max_off = 0.0
    mins = np.full(M, np.nan)
    maxs = np.full(M, np.nan)
    eq_gap = 0.0
    for i in range(M):
        off = (cls[i] == OFF) & clean
        act = (cls[i] == ACTIVE) & clean
        if np.any(off):
            mo = float(np.max(norms[i, off]))
            max_off = max(max_off, mo)
            if mo > tol_off[i]:
                failures.append(f"channel {i + 1}: Off-node norm {mo:.3e} above {tol_off[i]:.1e}")
        if np.any(act):
            mins[i] = float(np.min(norms[i, act]))
            maxs[i] = float(np.max(norms[i, act]))
            if mins[i] < rho1[i] - tol[i] or maxs[i] > rho2[i] + tol[i]:
                failures.append(f"channel {i + 1}: Active norms [{mins[i]:.4g}, {maxs[i]:.4g}] "
                                f"outside [{rho1[i]}, {rho2[i]}]")
            if P.cost.zeta == 1:
                g = float(np.max(sol.sigma[i, act] - norms[i, act]))
                eq_gap = max(eq_gap, g)
                if g > tol[i]:
                    failures.append(f"channel {i + 1}: norm below sigma by {g:.3e}")
    count = (cls == ACTIVE).sum(axis=0)
    max_count = int(np.max(count[clean], initial=0))
    if max_count > P.K:
        failures.append(f"{max_count} channels active at once, budget {P.K}")
    return LosslessReport(classes=cls, edge_nodes=edge_nodes, max_off_norm=max_off,
                          min_active_norm=mins, max_active_norm=maxs,
                          max_active_count=max_count, norm_equality_gap=eq_gap,
                          verdict=not failures, failures=failures)
