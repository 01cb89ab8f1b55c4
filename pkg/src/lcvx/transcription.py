"""Direct transcription of the relaxed problem into a standard-form SOCP.

Grid: N nodes, N - 1 zero-order-hold intervals. States and the accumulator
``xi`` live on all nodes; inputs, slacks, activations and running-cost
epigraph variables live on the intervals (node k = 0..N-2). Variables are
nondimensionalized before assembly and unscaled on extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import ConeSpec, ConicProgram, ConicSolution, Status
from .discretization import discretize
from .ocp import Halfspace, NormCone, RelaxedOCP


@dataclass
class _NodeCols:
    x: slice
    u: list  # per channel slice (intervals only)
    sigma: list  # per channel column index
    gamma: list
    xi: int
    eps: list  # running-term epigraph columns


@dataclass
class TranscribedProblem:
    program: ConicProgram
    relaxed: RelaxedOCP
    N: int
    dt: float
    t_f: float
    cols: list  # _NodeCols per node
    dyn_rows: list  # row index arrays of node-k dynamics (k = 0..N-2)
    rows: dict  # named row groups
    x_scale: np.ndarray
    u_scale: float
    xi_scale: float
    eps_scale: np.ndarray
    cost_scale: float
    cost_offset: float
    fixed_gammas: dict = field(default_factory=dict)

    @property
    def n_intervals(self) -> int:
        return self.N - 1


@dataclass
class OCPSolution:
    t: np.ndarray  # (N,)
    x: np.ndarray  # (N, n)
    u: np.ndarray  # (M, N-1, m)
    sigma: np.ndarray  # (M, N-1)
    gamma: np.ndarray  # (M, N-1)
    xi: np.ndarray  # (N,)
    cost: float
    t_f: float
    dt: float
    dynamics_duals: np.ndarray  # (N-1, n)
    stats: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.t.size

    @property
    def u_total(self) -> np.ndarray:
        return self.u.sum(axis=0)

    @property
    def input_norms(self) -> np.ndarray:
        return np.linalg.norm(self.u, axis=2)


class _Rows:
    """Row accumulator for one cone kind."""

    def __init__(self):
        self.r, self.c, self.v, self.b = [], [], [], []
        self.count = 0

    def add(self, entries, rhs):
        """entries: list of (col, val); returns the new row index (local)."""
        row = self.count
        for col, val in entries:
            if val != 0.0:
                self.r.append(row)
                self.c.append(col)
                self.v.append(val)
        self.b.append(rhs)
        self.count += 1
        return row


def _scales(problem):
    x_scale = np.maximum(np.maximum(np.abs(problem.x0), 1.0), 1.0)
    if problem.E.shape == (problem.n, problem.n):
        tgt = np.abs(np.linalg.lstsq(problem.E, problem.target, rcond=None)[0])
        x_scale = np.maximum(x_scale, tgt)
    u_scale = max(ch.rho2 for ch in problem.channels)
    return x_scale, u_scale


def transcribe(relaxed: RelaxedOCP, N: int, t_f: float, fixed_gammas: dict | None = None) -> TranscribedProblem:
    """Build the SOCP of the relaxed problem for fixed final time ``t_f``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    if not t_f > 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    fixed_gammas = dict(fixed_gammas or {})
    P = relaxed.problem
    n, m, M = P.n, P.m, P.M
    dyn = discretize(P.A, P.B, P.w, t_f, N)
    dt = dyn.dt
    x_scale, u_scale = _scales(P)
    xi_scale = max(u_scale * t_f, 1.0)
    terms = P.cost.running
    eps_scale = np.array([max(float(np.abs(t.a) @ x_scale) + abs(t.offset), 1e-12) for t in terms])

    # column layout, node-major
    cols = []
    col = 0
    for k in range(N):
        xs = slice(col, col + n)
        col += n
        us, sig, gam, eps = [], [], [], []
        if k < N - 1:
            for _ in range(M):
                us.append(slice(col, col + m))
                col += m
            sig = list(range(col, col + M))
            col += M
            gam = list(range(col, col + M))
            col += M
            eps = list(range(col, col + len(terms)))
            col += len(terms)
        cols.append(_NodeCols(x=xs, u=us, sigma=sig, gamma=gam, xi=col, eps=eps))
        col += 1
    nvar = col

    Z, L, Q = _Rows(), _Rows(), []  # Q: list of (entries-per-row, rhs) blocks
    rows = {"x0": [], "terminal": [], "xi": [], "fixed": {}}
    dyn_rows = []

    Sx = x_scale
    # initial condition
    for j in range(n):
        rows["x0"].append(Z.add([(cols[0].x.start + j, 1.0)], P.x0[j] / Sx[j]))
    # dynamics rows scaled by 1/Sx: xh_{k+1} - Sx^-1 Ad Sx xh_k - Sx^-1 Bd su sum uh = Sx^-1 wd
    Ah = dyn.Ad * Sx[None, :] / Sx[:, None]
    Bh = dyn.Bd * u_scale / Sx[:, None]
    wh = dyn.wd / Sx
    for k in range(N - 1):
        rk = []
        ck, cn = cols[k], cols[k + 1]
        for j in range(n):
            ent = [(cn.x.start + j, 1.0)]
            ent += [(ck.x.start + l, -Ah[j, l]) for l in range(n)]
            for i in range(M):
                ent += [(ck.u[i].start + l, -Bh[j, l]) for l in range(m)]
            rk.append(Z.add(ent, wh[j]))
        dyn_rows.append(rk)
    # accumulator: xi_0 = 0, xi_{k+1} = xi_k + dt sum sigma
    rows["xi"].append(Z.add([(cols[0].xi, 1.0)], relaxed.xi0 / xi_scale))
    for k in range(N - 1):
        ent = [(cols[k + 1].xi, 1.0), (cols[k].xi, -1.0)]
        ent += [(cols[k].sigma[i], -dt * u_scale / xi_scale) for i in range(M)]
        rows["xi"].append(Z.add(ent, 0.0))
    # terminal manifold E x_{N-1} = target
    cN = cols[N - 1]
    for r in range(P.E.shape[0]):
        ent = [(cN.x.start + j, P.E[r, j] * Sx[j]) for j in range(n)]
        rows["terminal"].append(Z.add(ent, P.target[r]))
    # pinned activations
    for (i, k), val in sorted(fixed_gammas.items()):
        if not (0 <= i < M and 0 <= k < N - 1):
            raise ValueError(f"fixed gamma index {(i, k)} out of range")
        rows["fixed"][(i, k)] = Z.add([(cols[k].gamma[i], 1.0)], float(val))

    # orthant rows: a'x <= b
    for k in range(N - 1):
        ck = cols[k]
        for i, ch in enumerate(P.channels):
            s, g = ck.sigma[i], ck.gamma[i]
            L.add([(g, ch.rho1 / u_scale), (s, -1.0)], 0.0)
            L.add([(s, 1.0), (g, -ch.rho2 / u_scale)], 0.0)
            L.add([(g, -1.0)], 0.0)
            L.add([(g, 1.0)], 1.0)
            for row in ch.C:
                L.add([(ck.u[i].start + l, row[l]) for l in range(m)], 0.0)
        L.add([(g, 1.0) for g in ck.gamma], float(P.K))
        for j, term in enumerate(terms):
            e = ck.eps[j]
            ax = [(ck.x.start + l, term.a[l] * Sx[l] / eps_scale[j]) for l in range(n)]
            L.add(ax + [(e, -1.0)], -term.offset / eps_scale[j])
            L.add([(c, -v) for c, v in ax] + [(e, -1.0)], term.offset / eps_scale[j])
    # a fully pinned terminal state that satisfies the atoms makes them redundant
    # there; dropping them keeps the cone program strictly feasible
    last = N - 1
    if np.linalg.matrix_rank(P.E) == n and P.state_set.atoms:
        x_target = np.linalg.lstsq(P.E, P.target, rcond=None)[0]
        if P.state_set.contains(x_target, tol=1e-12):
            last = N - 2
    state_nodes = range(1, last + 1)
    state_rows = []
    for k in state_nodes:
        ck = cols[k]
        for atom in P.state_set.atoms:
            if isinstance(atom, Halfspace):
                rr = L.add([(ck.x.start + l, atom.a[l] * Sx[l]) for l in range(n)], atom.c)
                state_rows.append(("L", k, rr))

    # second-order cones: s = b - A x in Q
    for k in range(N - 1):
        ck = cols[k]
        for i in range(M):
            blk = [([(ck.sigma[i], -1.0)], 0.0)]
            blk += [([(ck.u[i].start + l, -1.0)], 0.0) for l in range(m)]
            Q.append(blk)
    for k in state_nodes:
        ck = cols[k]
        for atom in P.state_set.atoms:
            if isinstance(atom, NormCone):
                blk = [([(ck.x.start + l, -atom.q[l] * Sx[l]) for l in range(n)], atom.r)]
                for r in range(atom.P.shape[0]):
                    blk.append(([(ck.x.start + l, -atom.P[r, l] * Sx[l]) for l in range(n)], 0.0))
                Q.append(blk)

    # assemble: Z rows, L rows, Q blocks
    r_all, c_all, v_all, b_all = list(Z.r), list(Z.c), list(Z.v), list(Z.b)
    off = Z.count
    r_all += [r + off for r in L.r]
    c_all += L.c
    v_all += L.v
    b_all += L.b
    off += L.count
    blocks = []
    if Z.count:
        blocks.append(("Z", Z.count))
    if L.count:
        blocks.append(("L", L.count))
    for blk in Q:
        for ent, rhs in blk:
            for cidx, val in ent:
                if val != 0.0:
                    r_all.append(off)
                    c_all.append(cidx)
                    v_all.append(val)
            b_all.append(rhs)
            off += 1
        blocks.append(("Q", len(blk)))
    A = sp.csc_matrix((v_all, (r_all, c_all)), shape=(off, nvar))

    # objective: m(t_f, x_N) + zeta xi_N + dt sum_k sum_j w_j eps_jk
    c = np.zeros(nvar)
    if P.cost.state_weights is not None:
        c[cN.x] += P.cost.state_weights * Sx
    c[cN.xi] += P.cost.zeta * xi_scale
    for k in range(N - 1):
        for j, term in enumerate(terms):
            c[cols[k].eps[j]] += dt * term.weight * eps_scale[j]
    cost_offset = P.cost.time_weight * t_f
    cost_scale = max(float(np.max(np.abs(c))), 1e-12)
    program = ConicProgram(c=c / cost_scale, A=A, b=np.asarray(b_all), cone=ConeSpec(tuple(blocks)))
    rows["Z"] = Z.count
    rows["L"] = L.count
    rows["state"] = state_rows
    return TranscribedProblem(
        program=program, relaxed=relaxed, N=N, dt=dt, t_f=t_f, cols=cols,
        dyn_rows=[np.asarray(r) for r in dyn_rows], rows=rows, x_scale=x_scale,
        u_scale=u_scale, xi_scale=xi_scale, eps_scale=eps_scale, cost_scale=cost_scale,
        cost_offset=cost_offset, fixed_gammas=fixed_gammas,
    )


class NotOptimalError(RuntimeError):
    def __init__(self, status):
        self.status = status
        super().__init__(f"conic solve ended with status {status.value}")


def extract_solution(tp: TranscribedProblem, cs: ConicSolution) -> OCPSolution:
    """Map an optimal conic solution back to unscaled trajectories and duals."""
    if cs.status is not Status.OPTIMAL:
        raise NotOptimalError(cs.status)
    P = tp.relaxed.problem
    m, M, N = P.m, P.M, tp.N
    z = cs.x
    x = np.array([z[c.x] * tp.x_scale for c in tp.cols])
    xi = np.array([z[c.xi] * tp.xi_scale for c in tp.cols])
    u = np.zeros((M, N - 1, m))
    sigma = np.zeros((M, N - 1))
    gamma = np.zeros((M, N - 1))
    for k in range(N - 1):
        ck = tp.cols[k]
        for i in range(M):
            u[i, k] = z[ck.u[i]] * tp.u_scale
            sigma[i, k] = z[ck.sigma[i]] * tp.u_scale
            gamma[i, k] = z[ck.gamma[i]]
    duals = np.array([cs.y[r] * tp.cost_scale / tp.x_scale for r in tp.dyn_rows])
    cost = cs.objective * tp.cost_scale + tp.cost_offset
    stats = {
        "iterations": cs.iterations,
        "solve_time": cs.solve_time,
        "primal_res": cs.primal_res,
        "dual_res": cs.dual_res,
        "gap": cs.gap,
        "status": cs.status.value,
    }
    return OCPSolution(t=np.linspace(0.0, tp.t_f, N), x=x, u=u, sigma=sigma, gamma=gamma,
                       xi=xi, cost=float(cost), t_f=tp.t_f, dt=tp.dt,
                       dynamics_duals=duals, stats=stats)


def recompute_cost(sol: OCPSolution, problem) -> float:
    """Objective recomputed from trajectories (left-endpoint running cost)."""
    cost = problem.cost
    val = cost.terminal(sol.t_f, sol.x[-1]) + cost.zeta * sol.xi[-1]
    val += sol.dt * sum(cost.ell(sol.x[k]) for k in range(sol.N - 1))
    return float(val)


def constraint_violation(sol: OCPSolution, relaxed: RelaxedOCP) -> dict:
    """Largest violation of each relaxed-problem constraint family."""
    P = relaxed.problem
    out = {}
    norms = sol.input_norms
    out["soc"] = float(np.max(norms - sol.sigma, initial=0.0))
    out["gamma_box"] = float(max(np.max(-sol.gamma, initial=0.0), np.max(sol.gamma - 1, initial=0.0)))
    out["budget"] = float(np.max(sol.gamma.sum(axis=0) - P.K, initial=0.0))
    bnd = 0.0
    point = 0.0
    for i, ch in enumerate(P.channels):
        bnd = max(bnd, np.max(sol.gamma[i] * ch.rho1 - sol.sigma[i], initial=0.0),
                  np.max(sol.sigma[i] - sol.gamma[i] * ch.rho2, initial=0.0))
        point = max(point, np.max(sol.u[i] @ ch.C.T, initial=0.0))
    out["sigma_bounds"] = float(bnd)
    out["pointing"] = float(point)
    st = 0.0
    for k in range(1, sol.N):
        if P.state_set.atoms:
            st = max(st, float(np.max(-P.state_set.slacks(sol.x[k]), initial=0.0)))
    out["state"] = st
    out["terminal"] = float(np.max(np.abs(P.E @ sol.x[-1] - P.target)))
    out["initial"] = float(np.max(np.abs(sol.x[0] - P.x0)))
    return out
