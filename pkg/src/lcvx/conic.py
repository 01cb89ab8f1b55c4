"""Standard-form second-order cone programs and a primal-dual interior-point solver.

Programs are stated as

    minimize    c'x
    subject to  A x + s = b,   s in K

where K is a product of zero cones ("Z"), nonnegative orthants ("L") and
second-order cones ("Q", first coordinate bounds the norm of the rest).

The solver runs a Mehrotra predictor-corrector method on the homogeneous
self-dual embedding with Nesterov-Todd scaling. Zero-cone rows are kept as
equality constraints; the reduced KKT system is assembled sparse and
factorized with a statically regularized LU plus iterative refinement.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "ConeSpec",
    "ConicProgram",
    "ConicSolution",
    "SolverSettings",
    "Status",
    "dump_program",
    "residuals",
    "solve",
]

_KINDS = ("Z", "L", "Q")


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class ConeSpec:
    """Ordered cone blocks, each a ``(kind, dim)`` pair with kind in Z/L/Q."""

    blocks: tuple[tuple[str, int], ...]

    def __post_init__(self):
        blocks = tuple((str(k), int(d)) for k, d in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        for kind, dim in blocks:
            if kind not in _KINDS:
                raise ValueError(f"unknown cone kind {kind!r}")
            if dim < 1 or (kind == "Q" and dim < 2):
                raise ValueError(f"invalid dimension {dim} for cone {kind}")
        if self.dim == 0:
            raise ValueError("cone has zero total dimension")

    @property
    def dim(self) -> int:
        return sum(d for _, d in self.blocks)

    @property
    def degree(self) -> int:
        return sum(d if k == "L" else 1 for k, d in self.blocks if k != "Z")

    def offsets(self):
        """Yield ``(kind, start, dim)`` for every block."""
        start = 0
        for kind, dim in self.blocks:
            yield kind, start, dim
            start += dim

    def contains(self, s, tol: float = 0.0) -> bool:
        """Membership test with absolute slack ``tol``."""
        s = np.asarray(s, dtype=float)
        for kind, start, dim in self.offsets():
            blk = s[start:start + dim]
            if kind == "Z" and np.max(np.abs(blk)) > tol:
                return False
            if kind == "L" and np.min(blk) < -tol:
                return False
            if kind == "Q" and np.linalg.norm(blk[1:]) - blk[0] > tol:
                return False
        return True

    def dual_contains(self, y, tol: float = 0.0) -> bool:
        """Membership in the dual cone (zero-cone coordinates are free)."""
        y = np.asarray(y, dtype=float)
        for kind, start, dim in self.offsets():
            blk = y[start:start + dim]
            if kind == "L" and np.min(blk) < -tol:
                return False
            if kind == "Q" and np.linalg.norm(blk[1:]) - blk[0] > tol:
                return False
        return True


@dataclass(frozen=True)
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cone: ConeSpec
    names: dict | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        A = sp.csc_matrix(self.A, dtype=float)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        if A.shape != (b.size, c.size):
            raise ValueError(f"A has shape {A.shape}, expected {(b.size, c.size)}")
        if self.cone.dim != b.size:
            raise ValueError(f"cone dimension {self.cone.dim} != row count {b.size}")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b))
                and np.all(np.isfinite(c))):
            raise ValueError("program data contains non-finite entries")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    regularization: float = 1e-9
    refine_steps: int = 10
    step_fraction: float = 0.99
    verbose: bool = False


@dataclass
class ConicSolution:
    status: Status
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    objective: float
    gap: float
    primal_res: float
    dual_res: float
    iterations: int
    solve_time: float
    history: list = field(default_factory=list, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def residuals(program: ConicProgram, x, y, s) -> dict:
    """Normalized primal residual, dual residual and duality gap.

    primal_res = |Ax + s - b| / (1 + |b|), dual_res = |A'y + c| / (1 + |c|),
    gap = |c'x + b'y| / (1 + |c'x| + |b'y|).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    if x.shape != (program.n,) or y.shape != (program.m,) or s.shape != (program.m,):
        raise ValueError("dimension mismatch between program and iterate")
    A, b, c = program.A, program.b, program.c
    pres = np.linalg.norm(A @ x + s - b) / (1.0 + np.linalg.norm(b))
    dres = np.linalg.norm(A.T @ y + c) / (1.0 + np.linalg.norm(c))
    cx, by = float(c @ x), float(b @ y)
    gap = abs(cx + by) / (1.0 + abs(cx) + abs(by))
    return {"primal_res": float(pres), "dual_res": float(dres), "gap": float(gap)}


def dump_program(program: ConicProgram, path) -> None:
    """Write a plain-text debug dump (not a stable format)."""
    A = program.A.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{program.n} {program.m}\n")
        fh.write(" ".join(repr(float(v)) for v in program.c) + "\n")
        for r, col, v in zip(A.row, A.col, A.data):
            fh.write(f"{r} {col} {float(v)!r}\n")
        fh.write(" ".join(repr(float(v)) for v in program.b) + "\n")
        fh.write(" | ".join(f"{k} {d}" for k, d in program.cone.blocks) + "\n")


# ---------------------------------------------------------------------------
# cone arithmetic on the internal (L then grouped Q) layout


class _Cones:
    """Index bookkeeping for the inequality part: orthant then SOC groups."""

    def __init__(self, n_lin: int, soc_dims: list[int]):
        self.n_lin = n_lin
        self.groups = []  # (dim, index matrix nb x dim)
        start = n_lin
        starts: dict[int, list[int]] = {}
        for d in soc_dims:
            starts.setdefault(d, []).append(start)
            start += d
        for d, st in starts.items():
            idx = np.asarray(st)[:, None] + np.arange(d)[None, :]
            self.groups.append((d, idx))
        self.dim = start
        self.degree = n_lin + len(soc_dims)

    def e(self):
        v = np.zeros(self.dim)
        v[:self.n_lin] = 1.0
        for _, idx in self.groups:
            v[idx[:, 0]] = 1.0
        return v

    def margin(self, u):
        """Largest t with u - t e on the cone boundary (negative => interior)."""
        t = -np.inf
        if self.n_lin:
            t = max(t, -np.min(u[:self.n_lin]))
        for _, idx in self.groups:
            blk = u[idx]
            t = max(t, np.max(np.linalg.norm(blk[:, 1:], axis=1) - blk[:, 0]))
        return t

    def dot(self, u, v):
        return float(u @ v)

    def jprod(self, u, v):
        out = np.empty_like(u)
        k = self.n_lin
        out[:k] = u[:k] * v[:k]
        for _, idx in self.groups:
            a, b = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", a, b)
            out[idx[:, 1:]] = a[:, :1] * b[:, 1:] + b[:, :1] * a[:, 1:]
        return out

    def jdiv(self, lam, r):
        """Solve lam o x = r for x."""
        out = np.empty_like(r)
        k = self.n_lin
        out[:k] = r[:k] / lam[:k]
        for _, idx in self.groups:
            l, q = lam[idx], r[idx]
            l0, l1 = l[:, 0], l[:, 1:]
            det = l0 * l0 - np.einsum("ij,ij->i", l1, l1)
            x0 = (l0 * q[:, 0] - np.einsum("ij,ij->i", l1, q[:, 1:])) / det
            out[idx[:, 0]] = x0
            out[idx[:, 1:]] = (q[:, 1:] - x0[:, None] * l1) / l0[:, None]
        return out

    def max_step(self, u, du):
        """Largest alpha with u + alpha du in the cone (u interior)."""
        alpha = np.inf
        k = self.n_lin
        if k:
            neg = du[:k] < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-u[:k][neg] / du[:k][neg]))
        for _, idx in self.groups:
            x, d = u[idx], du[idx]
            x0, x1, d0, d1 = x[:, 0], x[:, 1:], d[:, 0], d[:, 1:]
            a = d0 * d0 - np.einsum("ij,ij->i", d1, d1)
            b = x0 * d0 - np.einsum("ij,ij->i", x1, d1)
            c = x0 * x0 - np.einsum("ij,ij->i", x1, x1)
            c = np.maximum(c, 0.0)
            roots = np.full(x0.shape, np.inf)
            disc = b * b - a * c
            lin = np.abs(a) < 1e-14 * np.maximum(1.0, np.abs(b))
            with np.errstate(divide="ignore", invalid="ignore"):
                sq = np.sqrt(np.maximum(disc, 0.0))
                # roots of a t^2 + 2 b t + c, written to avoid cancellation
                qq = -(b + np.copysign(sq, b))
                r1 = np.where(qq != 0, c / qq, np.inf)
                r2 = np.where(a != 0, qq / a, np.inf)
                rl = np.where((b < 0) & lin, -c / (2 * b), np.inf)
            cand = np.stack([r1, r2])
            cand = np.where((cand > 0) & (disc >= 0)[None, :], cand, np.inf)
            roots = np.where(lin, rl, np.min(cand, axis=0))
            with np.errstate(divide="ignore", invalid="ignore"):
                apex = np.where(d0 < 0, -x0 / d0, np.inf)
            alpha = min(alpha, float(np.min(np.minimum(roots, apex))))
        return alpha


class _Scaling:
    """Nesterov-Todd scaling W (symmetric) with W z = W^{-1} s = lam."""

    def __init__(self, cones: _Cones, s, z):
        self.cones = cones
        k = cones.n_lin
        self.d = np.sqrt(s[:k] / z[:k])
        self.soc = []
        for _, idx in cones.groups:
            sb, zb = s[idx], z[idx]
            sn = np.sqrt(np.maximum(sb[:, 0] ** 2 - np.einsum("ij,ij->i", sb[:, 1:], sb[:, 1:]), 1e-300))
            zn = np.sqrt(np.maximum(zb[:, 0] ** 2 - np.einsum("ij,ij->i", zb[:, 1:], zb[:, 1:]), 1e-300))
            sbar = sb / sn[:, None]
            zbar = zb / zn[:, None]
            gam = np.sqrt(np.maximum((1.0 + np.einsum("ij,ij->i", sbar, zbar)) / 2.0, 1e-300))
            w = sbar.copy()
            w[:, 0] += zbar[:, 0]
            w[:, 1:] -= zbar[:, 1:]
            w /= (2.0 * gam)[:, None]
            eta = np.sqrt(sn / zn)
            self.soc.append((idx, w, eta))

    def _apply(self, v, inverse: bool):
        out = np.empty_like(v)
        k = self.cones.n_lin
        out[:k] = v[:k] / self.d if inverse else v[:k] * self.d
        for idx, w, eta in self.soc:
            u = v[idx]
            w0, w1 = w[:, 0], w[:, 1:]
            sgn = -1.0 if inverse else 1.0
            wu = np.einsum("ij,ij->i", w1, u[:, 1:])
            r0 = w0 * u[:, 0] + sgn * wu
            r1 = u[:, 1:] + sgn * u[:, :1] * w1 + (wu / (1.0 + w0))[:, None] * w1
            scale = 1.0 / eta if inverse else eta
            out[idx[:, 0]] = scale * r0
            out[idx[:, 1:]] = scale[:, None] * r1
        return out

    def W(self, v):
        return self._apply(v, inverse=False)

    def Winv(self, v):
        return self._apply(v, inverse=True)

    def inverse_matrix(self, offset: int = 0):
        """Sparse W^{-1} on the inequality block."""
        k = self.cones.n_lin
        rows = [np.arange(k)]
        cols = [np.arange(k)]
        vals = [1.0 / self.d]
        for idx, w, eta in self.soc:
            nb, d = idx.shape
            w0, w1 = w[:, 0], w[:, 1:]
            M = np.empty((nb, d, d))
            M[:, 0, 0] = w0
            M[:, 0, 1:] = -w1
            M[:, 1:, 0] = -w1
            M[:, 1:, 1:] = np.eye(d - 1)[None] + np.einsum("bi,bj->bij", w1, w1) / (1.0 + w0)[:, None, None]
            M /= eta[:, None, None]
            rows.append(np.repeat(idx, d, axis=1).ravel())
            cols.append(np.tile(idx, (1, d)).ravel())
            vals.append(M.ravel())
        dim = self.cones.dim
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(dim, dim))


# ---------------------------------------------------------------------------
# KKT system


class _KKT:
    """Scaled system [[0, A', Gs'], [A, 0, 0], [Gs, 0, -I]] with Gs = W^{-1} G.

    Solves the unscaled system [[0, A', G'], [A, 0, 0], [G, 0, -W^2]] through
    the substitution dz~ = W dz, which keeps the z block well conditioned.
    """

    def __init__(self, A, G, reg, refine):
        self.n = A.shape[1]
        self.p = A.shape[0]
        self.mc = G.shape[0]
        self.reg = reg
        self.refine = refine
        self.A = A
        self.G = G.tocsr()
        self.dim = self.n + self.p + self.mc

    def factor(self, scaling: _Scaling | None):
        n, p, mc = self.n, self.p, self.mc
        self.scaling = scaling
        Gs = self.G if scaling is None else scaling.inverse_matrix() @ self.G
        exact = sp.bmat([[sp.csc_matrix((n, n)), self.A.T, Gs.T],
                         [self.A, sp.csc_matrix((p, p)), None],
                         [Gs, None, -sp.identity(mc)]], format="csc")
        diag = np.concatenate([np.full(n, self.reg), np.full(p + mc, -self.reg)])
        self.exact = exact
        self.lu = spla.splu((exact + sp.diags(diag)).tocsc(), permc_spec="COLAMD")

    def solve(self, rhs):
        n, p = self.n, self.p
        W = self.scaling
        rhs = rhs.copy()
        if W is not None:
            rhs[n + p:] = W.Winv(rhs[n + p:])
        sol = self.lu.solve(rhs)
        err = rhs - self.exact @ sol
        en = np.linalg.norm(err, np.inf)
        target = 1e-14 * (1.0 + np.linalg.norm(rhs, np.inf))
        for _ in range(self.refine):
            if not en > target:
                break
            cand = sol + self.lu.solve(err)
            cerr = rhs - self.exact @ cand
            cn = np.linalg.norm(cerr, np.inf)
            if not cn < 0.9 * en:
                if cn < en:
                    sol = cand
                break
            sol, err, en = cand, cerr, cn
        if W is not None:
            sol[n + p:] = W.Winv(sol[n + p:])
        return sol


# ---------------------------------------------------------------------------
# solver


def _split(program: ConicProgram):
    """Reorder rows into equality rows, orthant rows, then SOC blocks."""
    eq_rows, lin_rows, soc_rows, soc_dims = [], [], [], []
    for kind, start, dim in program.cone.offsets():
        rows = list(range(start, start + dim))
        if kind == "Z":
            eq_rows += rows
        elif kind == "L":
            lin_rows += rows
        else:
            soc_rows += rows
            soc_dims.append(dim)
    return (np.asarray(eq_rows, dtype=int), np.asarray(lin_rows + soc_rows, dtype=int),
            len(lin_rows), soc_dims)


def _equilibrate(Aeq, G, cones: _Cones, iters: int = 15):
    """Ruiz scaling; SOC blocks share one row factor so cones are preserved."""
    p, mc = Aeq.shape[0], G.shape[0]
    nn = Aeq.shape[1]
    d_eq, d_in, e_col = np.ones(p), np.ones(mc), np.ones(nn)
    if nn == 0:
        return d_eq, d_in, e_col
    M = sp.vstack([Aeq, G]).tocsr()
    absM = abs(M)
    for _ in range(iters):
        S = sp.diags(np.concatenate([d_eq, d_in])) @ absM @ sp.diags(e_col)
        rn = np.asarray(S.max(axis=1).todense()).ravel()
        cn = np.asarray(S.max(axis=0).todense()).ravel()
        rin = rn[p:]
        for _, idx in cones.groups:
            blockmax = rin[idx].max(axis=1)
            rin[idx] = blockmax[:, None]
        rn[p:] = rin
        rn = np.where(rn > 0, rn, 1.0)
        cn = np.where(cn > 0, cn, 1.0)
        d_eq = np.clip(d_eq / np.sqrt(rn[:p]), 1e-4, 1e4)
        d_in = np.clip(d_in / np.sqrt(rn[p:]), 1e-4, 1e4)
        e_col = np.clip(e_col / np.sqrt(cn), 1e-4, 1e4)
    return d_eq, d_in, e_col


def _empty_row_col(program: ConicProgram):
    A = program.A
    row_nnz = np.diff(A.tocsr().indptr)
    col_nnz = np.diff(A.indptr)
    return row_nnz, col_nnz


def solve(program: ConicProgram, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve ``program``; never raises for solver outcomes, see ``status``."""
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    n, m = program.n, program.m
    eq_rows, ineq_rows, n_lin, soc_dims = _split(program)

    # presolve: drop empty equality rows (b == 0) and empty columns
    row_nnz, col_nnz = _empty_row_col(program)
    keep_eq = eq_rows[(row_nnz[eq_rows] > 0) | (program.b[eq_rows] != 0)]
    empty_cols = np.flatnonzero(col_nnz == 0)
    if np.any(program.c[empty_cols] != 0):
        return _finish(program, Status.DUAL_INFEASIBLE, np.zeros(n), np.zeros(m),
                       program.b.copy(), 0, t_start, [])
    cols = np.flatnonzero(col_nnz > 0)

    Acsr = program.A.tocsr()
    Aeq0 = Acsr[keep_eq][:, cols].tocsc()
    G0 = Acsr[ineq_rows][:, cols].tocsc()
    beq0, h0, c0 = program.b[keep_eq], program.b[ineq_rows], program.c[cols]
    cones = _Cones(n_lin, soc_dims)
    d_eq, d_in, e_col = _equilibrate(Aeq0, G0, cones)
    Aeq = (sp.diags(d_eq) @ Aeq0 @ sp.diags(e_col)).tocsc()
    G = (sp.diags(d_in) @ G0 @ sp.diags(e_col)).tocsc()
    beq, h, c = d_eq * beq0, d_in * h0, e_col * c0

    nn, p, mc = c.size, beq.size, h.size
    kkt = _KKT(Aeq, G, settings.regularization, settings.refine_steps)
    history = []

    def unpack(v):
        return v[:nn], v[nn:nn + p], v[nn + p:]

    def assemble(xv, yv, zv):
        """Unscale and scatter back to the user's layout."""
        xf = np.zeros(n)
        xf[cols] = e_col * xv
        yf = np.zeros(m)
        yf[keep_eq] = d_eq * yv
        yf[ineq_rows] = d_in * zv
        return xf, yf

    def slack_full(xf, sv):
        sf = np.zeros(m)
        sf[ineq_rows] = sv / d_in
        return sf

    cones_empty = mc == 0
    try:
        kkt.factor(None)
        x, y, zsol = unpack(kkt.solve(np.concatenate([np.zeros(nn), beq, h])))
        s = -zsol
        _, yd, z = unpack(kkt.solve(np.concatenate([-c, np.zeros(p), np.zeros(mc)])))
        y = yd
    except (RuntimeError, ValueError):
        return _finish(program, Status.NUMERICAL_FAILURE, np.zeros(n), np.zeros(m),
                       program.b.copy(), 0, t_start, history)
    e = cones.e()
    if not cones_empty:
        ap = cones.margin(s)
        if ap >= -1e-8:
            s = s + (1.0 + max(ap, 0.0)) * e
        ad = cones.margin(z)
        if ad >= -1e-8:
            z = z + (1.0 + max(ad, 0.0)) * e
    tau, kappa = 1.0, 1.0
    nu = cones.degree

    bnorm = np.linalg.norm(program.b)
    cnorm = np.linalg.norm(program.c)
    status = Status.MAX_ITERATIONS
    it = 0
    best = None
    for it in range(settings.max_iters + 1):
        # residuals of the embedding
        rx = Aeq.T @ y + G.T @ z + c * tau
        ry = -(Aeq @ x) + beq * tau
        rz = -(G @ x) + h * tau - s
        cx, by, hz = float(c @ x), float(beq @ y), float(h @ z)
        rt = -cx - by - hz - kappa
        mu = (float(s @ z) + tau * kappa) / (nu + 1)

        ry_u, rz_u = ry / d_eq, rz / d_in
        pres = np.sqrt(ry_u @ ry_u + rz_u @ rz_u) / tau / (1.0 + bnorm)
        dres = np.linalg.norm(rx / e_col) / tau / (1.0 + cnorm)
        pcost, dcost = cx / tau, -(by + hz) / tau
        gap = abs(pcost - dcost) / (1.0 + abs(pcost) + abs(dcost))
        history.append({"iter": it, "pcost": pcost, "dcost": dcost, "pres": pres,
                        "dres": dres, "gap": gap, "tau": tau, "kappa": kappa, "mu": mu})
        if settings.verbose:
            print(f"{it:3d} {pcost:+.8e} {dcost:+.8e} {pres:.1e} {dres:.1e} {gap:.1e} "
                  f"{tau:.1e} {kappa:.1e}")
        if pres <= settings.feas_tol and dres <= settings.feas_tol and gap <= settings.gap_tol:
            status = Status.OPTIMAL
            break
        # infeasibility certificates
        if by + hz < 0:
            hrx = (Aeq.T @ y + G.T @ z) / e_col
            if np.linalg.norm(hrx) / -(by + hz) <= settings.feas_tol * max(1.0, cnorm):
                scale = -(by + hz)
                xf, yf = assemble(np.zeros(nn), y / scale, z / scale)
                return _finish(program, Status.PRIMAL_INFEASIBLE, xf, yf,
                               program.b.copy(), it, t_start, history)
        if cx < 0:
            hr = np.sqrt(np.linalg.norm((Aeq @ x) / d_eq) ** 2
                         + np.linalg.norm((G @ x + s) / d_in) ** 2)
            if hr / -cx <= settings.feas_tol * max(1.0, bnorm):
                xf, yf = assemble(x / -cx, np.zeros(p), np.zeros(mc))
                sf = slack_full(xf, s / -cx)
                return _finish(program, Status.DUAL_INFEASIBLE, xf, yf, sf, it,
                               t_start, history)
        if it == settings.max_iters:
            break
        if best is None or max(pres, dres, gap) < best[0]:
            best = (max(pres, dres, gap), x / tau, y / tau, z / tau, s / tau)

        try:
            W = _Scaling(cones, s, z)
            lam = W.W(z)
            kkt.factor(W)
            u1 = kkt.solve(np.concatenate([-c, beq, h]))
        except (RuntimeError, ValueError, FloatingPointError):
            status = Status.NUMERICAL_FAILURE
            break
        q_u1 = float(c @ u1[:nn] + beq @ u1[nn:nn + p] + h @ u1[nn + p:])

        def direction(scale_res, rs, rk):
            rhs = np.concatenate([
                -scale_res * rx,
                scale_res * ry,
                scale_res * rz - W.W(cones.jdiv(lam, rs)),
            ])
            u2 = kkt.solve(rhs)
            q_u2 = float(c @ u2[:nn] + beq @ u2[nn:nn + p] + h @ u2[nn + p:])
            rtau = -scale_res * rt
            dtau = (rtau + rk / tau + q_u2) / (kappa / tau - q_u1)
            d = u2 + dtau * u1
            dx, dy, dz = unpack(d)
            # from the linearized primal rows; equals the complementarity
            # form in exact arithmetic but does not amplify solve error by W
            ds = scale_res * rz - G @ dx + h * dtau
            dkappa = (rk - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_length(dz, ds, dtau, dkappa):
            a = min(cones.max_step(lam, W.Winv(ds)), cones.max_step(lam, W.W(dz)))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        ll = cones.jprod(lam, lam)
        aff = direction(1.0, -ll, -tau * kappa)
        if not all(np.all(np.isfinite(v)) for v in aff[:4]):
            status = Status.NUMERICAL_FAILURE
            break
        a_aff = min(1.0, step_length(aff[2], aff[3], aff[4], aff[5]))
        sigma = float(np.clip((1.0 - a_aff) ** 3, 0.0, 1.0))

        # corrector
        dz_s = W.W(aff[2])
        ds_s = W.Winv(aff[3])
        rs = -ll - cones.jprod(ds_s, dz_s) + sigma * mu * e
        rk = -tau * kappa - aff[4] * aff[5] + sigma * mu
        dx, dy, dz, ds, dtau, dkappa = direction(1.0 - sigma, rs, rk)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            status = Status.NUMERICAL_FAILURE
            break
        alpha = min(1.0, settings.step_fraction * step_length(dz, ds, dtau, dkappa))
        if settings.verbose:
            print(f"    a_aff={a_aff:.3f} sigma={sigma:.3e} alpha={alpha:.3f}")
        if alpha < 1e-12:
            status = Status.NUMERICAL_FAILURE
            break

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa

    if status is Status.OPTIMAL:
        xo, yo, zo, so = x / tau, y / tau, z / tau, s / tau
    elif best is not None:
        _, xo, yo, zo, so = best
    else:
        xo, yo, zo, so = x / tau, y / tau, z / tau, s / tau
    xf, yf = assemble(xo, yo, zo)
    sf = slack_full(xf, so)
    return _finish(program, status, xf, yf, sf, it, t_start, history)


def _finish(program, status, x, y, s, iters, t_start, history):
    res = residuals(program, x, y, s)
    return ConicSolution(
        status=status,
        x=x,
        y=y,
        s=s,
        objective=float(program.c @ x),
        gap=res["gap"],
        primal_res=res["primal_res"],
        dual_res=res["dual_res"],
        iterations=iters,
        solve_time=time.perf_counter() - t_start,
        history=history,
    )
