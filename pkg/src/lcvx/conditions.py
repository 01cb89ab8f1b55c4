"""Sufficient conditions for lossless convexification, checked a priori or on a solution.

The adjoint system is lam' = -A' lam + v with output (primer vector) y = B' lam.
Channel gains are Gamma_i = (|proj_{U_i}(y)| - zeta) * rho2_i, where U_i is the
pointing cone {u : C_i u <= 0}.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp

from . import conic
from .ocp import SemiContinuousOCP
from .transcription import OCPSolution, TranscribedProblem

SVD_TOL = 1e-10
ENUM_MAX_ROWS = 8


class RankDeficientCone(ValueError):
    pass


# ---------------------------------------------------------------------------
# projection onto a polyhedral cone


def _projection_by_solver(y, C):
    p, m = C.shape
    # variables (t, z): min t  s.t.  |y - z| <= t,  C z <= 0
    A = sp.bmat([[sp.csc_matrix(-np.ones((1, 1))), None],
                 [None, sp.identity(m)],
                 [None, sp.csc_matrix(C)]], format="csc")
    b = np.concatenate([[0.0], y, np.zeros(p)])
    c = np.concatenate([[1.0], np.zeros(m)])
    prog = conic.ConicProgram(c, A, b, conic.ConeSpec((("Q", m + 1), ("L", p))))
    sol = conic.solve(prog, conic.SolverSettings(feas_tol=1e-11, gap_tol=1e-11))
    if sol.status not in (conic.Status.OPTIMAL, conic.Status.MAX_ITERATIONS,
                          conic.Status.NUMERICAL_FAILURE):
        raise RuntimeError(f"projection solve failed: {sol.status.value}")
    return sol.x[1:]


def project_point(y, C) -> np.ndarray:
    """Euclidean projection of y onto {z : C z <= 0}."""
    y = np.asarray(y, dtype=float).ravel()
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p, m = C.shape
    if m != y.size:
        raise ValueError("C and y dimensions differ")
    if np.linalg.matrix_rank(C, tol=SVD_TOL * max(1.0, np.abs(C).max())) < min(p, m):
        raise RankDeficientCone("pointing-cone matrix is rank deficient")
    if p > ENUM_MAX_ROWS:
        return _projection_by_solver(y, C)
    scale = max(1.0, float(np.linalg.norm(y)))
    tol = 1e-12 * scale * max(1.0, np.abs(C).max())
    best, best_d = None, np.inf
    # the projection is the projection onto the span of its face; any other
    # feasible face projection is in the cone and hence not closer
    for size in range(0, min(p, m) + 1):
        for rows in itertools.combinations(range(p), size):
            if size == 0:
                z = y
            else:
                Cs = C[list(rows)]
                mult = np.linalg.solve(Cs @ Cs.T, Cs @ y)
                z = y - Cs.T @ mult
            if np.all(C @ z <= tol):
                d = float(np.linalg.norm(y - z))
                if d < best_d - 1e-15 * scale:
                    best, best_d = z, d
    return best


def project_onto_cone(y, C) -> float:
    """Magnitude |proj_U(y)| of the projection onto U = {z : C z <= 0}."""
    return float(np.linalg.norm(project_point(y, C)))


def in_normal_cone_interior(y, C, rel_tol: float = 1e-9) -> bool:
    """Whether y lies in the interior of the normal cone of U at 0.

    That cone is {C' mu : mu >= 0}; it has interior only when C has at least
    as many rows as columns, and then y is interior iff some mu > 0 reproduces it.
    """
    y = np.asarray(y, dtype=float).ravel()
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p, m = C.shape
    ny = float(np.linalg.norm(y))
    if p < m or ny == 0.0:
        return False
    if p == m:
        mu = np.linalg.solve(C.T, y)
        return bool(np.min(mu) > rel_tol * ny)
    # max t  s.t.  C' mu = y,  mu >= t,  t <= |y|
    c = np.zeros(p + 1)
    c[-1] = -1.0
    A_eq = np.hstack([C.T, np.zeros((m, 1))])
    A_ub = np.hstack([-np.eye(p), np.ones((p, 1))])
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(p), A_eq=A_eq, b_eq=y,
                                 bounds=[(None, None)] * p + [(None, ny)], method="highs")
    return bool(res.status == 0 and -res.fun > rel_tol * ny)


# ---------------------------------------------------------------------------
# adjoint recovery


@dataclass
class AdjointTrajectory:
    t: np.ndarray  # interval start times (N-1,)
    lam: np.ndarray  # (N-1, n), sign-corrected, unnormalized
    y: np.ndarray  # (N-1, m) primer, unnormalized
    gains: np.ndarray  # (M, N-1)
    sign: float
    normalization: float  # max_k |y_k|
    agreement: float  # fraction of nodes where the gamma = 1 channel has max gain
    degenerate: bool = False
    exempt: np.ndarray | None = None  # (M, N-1): y inside the normal cone of U_i at 0

    @property
    def y_normalized(self) -> np.ndarray:
        if self.normalization > 0:
            return self.y / self.normalization
        return self.y.copy()


def channel_gains(y, channels, zeta) -> np.ndarray:
    y = np.atleast_2d(y)
    out = np.empty((len(channels), y.shape[0]))
    for i, ch in enumerate(channels):
        for k in range(y.shape[0]):
            out[i, k] = (project_onto_cone(y[k], ch.C) - zeta) * ch.rho2
    return out


def _agreement(gains, gamma, tol=1e-3) -> float:
    on = np.isclose(gamma, 1.0, atol=tol)
    nodes = np.flatnonzero(on.any(axis=0))
    if nodes.size == 0:
        return 0.0
    top = gains.max(axis=0)
    hits = sum(bool(np.any(on[:, k] & (gains[:, k] >= top[k] - 1e-9 * max(1.0, abs(top[k])))))
               for k in nodes)
    return hits / nodes.size


def recover_primer(tp: TranscribedProblem, sol: OCPSolution, B=None) -> AdjointTrajectory:
    """Primer vector and gains from the dynamics-row duals of a relaxed solve.

    The discrete duals fix the adjoint only up to the solver's sign convention;
    the sign is chosen so that channels with gamma = 1 carry the largest gain
    as often as possible.
    """
    if sol.dynamics_duals is None or np.size(sol.dynamics_duals) == 0:
        raise ValueError("solution carries no dynamics duals")
    P = tp.relaxed.problem
    B = P.B if B is None else np.asarray(B, dtype=float)
    lam0 = np.asarray(sol.dynamics_duals, dtype=float)
    best = None
    for sign in (1.0, -1.0):
        lam = sign * lam0
        y = lam @ B
        g = channel_gains(y, P.channels, P.cost.zeta)
        agr = _agreement(g, sol.gamma)
        if best is None or agr > best[0] + 1e-12:
            best = (agr, sign, lam, y, g)
    agr, sign, lam, y, g = best
    norm = float(np.max(np.linalg.norm(y, axis=1), initial=0.0))
    exempt = np.array([[in_normal_cone_interior(y[k], ch.C) for k in range(y.shape[0])]
                       for ch in P.channels], dtype=bool).reshape(P.M, -1)
    return AdjointTrajectory(t=sol.t[:-1], lam=lam, y=y, gains=g, sign=sign,
                             normalization=norm, agreement=agr,
                             degenerate=norm <= 1e-12, exempt=exempt)


# ---------------------------------------------------------------------------
# strong observability


def _orth(M, tol=SVD_TOL):
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    if s.size == 0:
        return np.zeros((M.shape[0], 0))
    r = int(np.sum(s > tol * max(1.0, s[0])))
    return U[:, :r]


def _null(M, tol=SVD_TOL):
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    _, s, Vt = np.linalg.svd(M)
    smax = s[0] if s.size else 0.0
    r = int(np.sum(s > tol * max(1.0, smax)))
    return Vt[r:].T


def weakly_unobservable_subspace(A, B, C, D, return_history: bool = False):
    """Orthonormal basis of the weakly unobservable subspace of (A, B, C, D).

    Fixed point of V0 = R^n, V_{k+1} = {x : A x + B u in V_k, C x + D u = 0 for some u}.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    C = np.asarray(C, dtype=float).reshape(-1, n)
    p, m = C.shape[0], B.shape[1]
    D = np.asarray(D, dtype=float).reshape(p, m) if p * m else np.zeros((p, m))
    V = np.eye(n)
    dims = [n]
    for _ in range(n + 1):
        if V.shape[1] == 0:
            break
        Pc = np.eye(n) - V @ V.T
        M = np.vstack([np.hstack([Pc @ A, Pc @ B]), np.hstack([C, D])])
        ker = _null(M)
        Vn = _orth(ker[:n])
        dims.append(Vn.shape[1])
        done = Vn.shape[1] == V.shape[1]
        V = Vn
        if done:
            break
    return (V, dims) if return_history else V


def cost_directions(problem: SemiContinuousOCP) -> np.ndarray:
    """Basis of the span of running-cost subgradient directions."""
    n = problem.n
    if not problem.cost.running:
        return np.zeros((n, 0))
    return _orth(np.column_stack([np.asarray(r.a, dtype=float) for r in problem.cost.running]))


@dataclass
class Condition1Result:
    holds: bool
    dimension: int
    basis: np.ndarray
    history: list

    def __bool__(self):
        return self.holds


def check_condition1(problem: SemiContinuousOCP, D=None) -> Condition1Result:
    """Strong observability of the adjoint quadruple (-A', D, B', 0)."""
    D = cost_directions(problem) if D is None else np.asarray(D, dtype=float).reshape(problem.n, -1)
    V, hist = weakly_unobservable_subspace(-problem.A.T, D, problem.B.T,
                                           np.zeros((problem.m, D.shape[1])),
                                           return_history=True)
    return Condition1Result(V.shape[1] == 0, V.shape[1], V, hist)


# ---------------------------------------------------------------------------
# a posteriori checks


def _runs(mask) -> list[tuple[int, int]]:
    """Inclusive (start, end) index runs where mask is true."""
    out = []
    k = 0
    mask = np.asarray(mask, dtype=bool)
    while k < mask.size:
        if mask[k]:
            j = k
            while j + 1 < mask.size and mask[j + 1]:
                j += 1
            out.append((k, j))
            k = j + 1
        else:
            k += 1
    return out


@dataclass
class Conditions23Result:
    condition2: np.ndarray  # per-node bool
    condition3: np.ndarray
    K_prime: np.ndarray
    K_double_prime: np.ndarray
    runs2: list
    runs3: list

    @property
    def longest_run(self) -> int:
        return max([b - a + 1 for a, b in self.runs2 + self.runs3], default=0)

    def to_dict(self) -> dict:
        return {
            "condition2_violations": int((~self.condition2).sum()),
            "condition3_violations": int((~self.condition3).sum()),
            "condition2_runs": [list(map(int, r)) for r in self.runs2],
            "condition3_runs": [list(map(int, r)) for r in self.runs3],
            "longest_violated_run": int(self.longest_run),
        }


def check_conditions23_posteriori(adj: AdjointTrajectory | np.ndarray, K: int,
                                  tie_tol: float = 1e-6, exempt=None) -> Conditions23Result:
    """Node-wise normality (gain nonzero) and ambiguity (no gain ties at the budget).

    Channels whose primer lies inside the normal cone of their pointing set at
    0 are exempt from case (a) of both checks; ``exempt`` defaults to the mask
    stored on the adjoint.
    """
    if isinstance(adj, AdjointTrajectory):
        G = adj.gains
        if exempt is None:
            exempt = adj.exempt
    else:
        G = np.atleast_2d(np.asarray(adj, dtype=float))
    M, nk = G.shape
    ex = np.zeros((M, nk), dtype=bool) if exempt is None else np.asarray(exempt, dtype=bool)
    c2 = np.ones(nk, dtype=bool)
    c3 = np.ones(nk, dtype=bool)
    kp = np.zeros(nk, dtype=int)
    kpp = np.zeros(nk, dtype=int)
    for k in range(nk):
        g = G[:, k]
        tie = tie_tol * max(float(np.max(np.abs(g))), 1e-300)
        pos = g > tie
        kp[k] = int(pos.sum())
        kpp[k] = min(K, kp[k])
        for i in range(M):
            if ex[i, k]:
                continue
            others = np.delete(g, i)
            if abs(g[i]) <= tie and np.sum(others > tie) < K:
                c2[k] = False
            for j in range(M):
                if j != i and abs(g[i] - g[j]) <= tie:
                    above = np.sum(g > g[i] + tie)
                    below = np.sum(g < g[i] - tie)
                    if above < K and below < M - K:
                        c3[k] = False
    return Conditions23Result(c2, c3, kp, kpp, _runs(~c2), _runs(~c3))


@dataclass
class Condition4Result:
    holds: bool
    margin: float
    values: np.ndarray

    def __bool__(self):
        return self.holds


def check_condition4_posteriori(sol: OCPSolution, problem, tol: float = 1e-9) -> Condition4Result:
    """l(x_k) + zeta * sum_i sigma_ik + dm/dt at every node before t_f."""
    P = getattr(problem, "problem", problem)
    cost = P.cost
    vals = np.array([cost.ell(sol.x[k]) + cost.zeta * sol.sigma[:, k].sum() + cost.dm_dt()
                     for k in range(sol.N - 1)])
    margin = float(np.min(np.abs(vals))) if vals.size else np.inf
    return Condition4Result(margin > tol, margin, vals)


@dataclass
class ContactSet:
    nodes: list
    discrete: bool

    def to_dict(self):
        return {"nodes": [int(k) for k in self.nodes], "discrete": bool(self.discrete)}


def contact_set(sol: OCPSolution, state_set, tol: float, nodes=None) -> ContactSet:
    """Nodes where some state-constraint atom is active within tol."""
    if nodes is None:
        nodes = range(sol.N)
    hits = []
    if state_set.atoms:
        for k in nodes:
            if np.min(state_set.slacks(sol.x[k])) <= tol:
                hits.append(int(k))
    discrete = all(b - a > 1 for a, b in zip(hits, hits[1:]))
    return ContactSet(hits, discrete)


# ---------------------------------------------------------------------------
# aggregate report


@dataclass
class ConditionReport:
    assumption1: bool
    assumption2: bool
    condition1: bool
    unobservable_dim: int
    condition2: bool | None = None
    condition3: bool | None = None
    conditions23: Conditions23Result | None = None
    condition4: bool | None = None
    condition4_margin: float | None = None
    contact: ContactSet | None = None
    notes: list = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        flags = [self.assumption1, self.assumption2, self.condition1, self.condition2,
                 self.condition3, self.condition4]
        return all(f is not False for f in flags)

    def to_dict(self) -> dict:
        d = {
            "assumption1": self.assumption1,
            "assumption2": self.assumption2,
            "condition1": self.condition1,
            "unobservable_dim": self.unobservable_dim,
            "condition2": self.condition2,
            "condition3": self.condition3,
            "condition4": self.condition4,
            "condition4_margin": self.condition4_margin,
            "all_hold": self.all_hold,
            "notes": list(self.notes),
        }
        if self.conditions23 is not None:
            d["conditions23"] = self.conditions23.to_dict()
        if self.contact is not None:
            d["contact_set"] = self.contact.to_dict()
        return d


def a_priori_report(problem: SemiContinuousOCP, D=None) -> ConditionReport:
    from .ocp import validate

    codes = validate(problem).codes()
    c1 = check_condition1(problem, D)
    return ConditionReport(assumption1="Assumption 1" not in codes,
                           assumption2="Assumption 2" not in codes,
                           condition1=c1.holds, unobservable_dim=c1.dimension)


def full_report(tp: TranscribedProblem, sol: OCPSolution, D=None, tie_tol: float = 1e-6,
                contact_rel_tol: float = 1e-7, max_run: int = 1):
    """A priori checks plus the a posteriori ones; returns (report, adjoint)."""
    P = tp.relaxed.problem
    rep = a_priori_report(P, D)
    adj = recover_primer(tp, sol)
    c23 = check_conditions23_posteriori(adj, P.K, tie_tol)
    longest2 = max([b - a + 1 for a, b in c23.runs2], default=0)
    longest3 = max([b - a + 1 for a, b in c23.runs3], default=0)
    rep.conditions23 = c23
    rep.condition2 = longest2 <= max_run
    rep.condition3 = longest3 <= max_run
    c4 = check_condition4_posteriori(sol, P)
    rep.condition4, rep.condition4_margin = c4.holds, c4.margin
    contact_tol = contact_rel_tol * max(1.0, float(np.max(np.abs(P.x0))))
    rep.contact = contact_set(sol, P.state_set, contact_tol, range(1, sol.N - 1))
    if adj.degenerate:
        rep.notes.append("primer vector vanishes; gain checks are degenerate")
    rep.notes.append("adjoint sign chosen by gamma/gain agreement "
                     f"({adj.agreement:.3f} of active nodes)")
    return rep, adj


def gain_activation_consistency(adj: AdjointTrajectory, classes, rel_tol: float = 1e-6) -> float:
    """Fraction of clean Active (channel, node) pairs whose channel has the node-max gain.

    ``classes`` is the (M, N-1) Off/Active/Edge label array of a losslessness audit.
    Nodes with any Edge label are skipped.
    """
    classes = np.asarray(classes, dtype=object)
    G = adj.gains
    hits = total = 0
    for k in range(G.shape[1]):
        col = classes[:, k]
        if np.any(col == "Edge"):
            continue
        top = G[:, k].max()
        for i in np.flatnonzero(col == "Active"):
            total += 1
            hits += G[i, k] >= top - rel_tol * max(1.0, abs(top))
    return hits / total if total else 1.0
