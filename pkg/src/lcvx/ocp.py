"""Data model for LTI optimal control problems with semi-continuous input norms.

The original problem (binary activations) is :class:`SemiContinuousOCP`; its
convex relaxation is carried by :class:`RelaxedOCP`, which adds per-channel
slacks ``sigma``, continuous activations ``gamma`` and an accumulator state
``xi`` with ``xi' = sum(sigma)``, ``xi(0) = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RANK_TOL = 1e-10


def _arr(v, ndim=None):
    a = np.array(v, dtype=float)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(1, -1)
    return a


@dataclass(frozen=True)
class InputChannel:
    rho1: float
    rho2: float
    C: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", _arr(self.C, ndim=2))

    def pointing_ok(self, u, tol=0.0) -> bool:
        return bool(np.all(self.C @ np.asarray(u) <= tol))


@dataclass(frozen=True)
class Halfspace:
    """``a'x <= c``."""

    a: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "a", _arr(self.a))

    def slack(self, x):
        return float(self.c - self.a @ x)


@dataclass(frozen=True)
class NormCone:
    """``||P x||_2 <= q'x + r``."""

    P: np.ndarray
    q: np.ndarray
    r: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "P", _arr(self.P, ndim=2))
        object.__setattr__(self, "q", _arr(self.q))

    def slack(self, x):
        return float(self.q @ x + self.r - np.linalg.norm(self.P @ x))


@dataclass(frozen=True)
class StateConstraintSet:
    atoms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))

    def slacks(self, x) -> np.ndarray:
        """Per-atom slack, nonnegative inside the set."""
        return np.array([a.slack(np.asarray(x, dtype=float)) for a in self.atoms])

    def contains(self, x, tol=0.0) -> bool:
        return bool(np.all(self.slacks(x) >= -tol)) if self.atoms else True


@dataclass(frozen=True)
class RunningTerm:
    """``weight * |a'x + offset|``."""

    weight: float
    a: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", _arr(self.a))

    def __call__(self, x):
        return self.weight * abs(float(self.a @ x) + self.offset)


@dataclass(frozen=True)
class CostSpec:
    """Terminal cost ``time_weight*t_f + state_weights'x(t_f)``, running ``sum |.|``."""

    zeta: int = 0
    time_weight: float = 0.0
    state_weights: np.ndarray | None = None
    running: tuple = ()

    def __post_init__(self):
        if self.state_weights is not None:
            object.__setattr__(self, "state_weights", _arr(self.state_weights))
        object.__setattr__(self, "running", tuple(self.running))

    def terminal(self, t_f, x_f) -> float:
        val = self.time_weight * t_f
        if self.state_weights is not None:
            val += float(self.state_weights @ x_f)
        return val

    def ell(self, x) -> float:
        return sum(term(x) for term in self.running)

    def dm_dt(self) -> float:
        return self.time_weight


@dataclass(frozen=True)
class SemiContinuousOCP:
    A: np.ndarray
    B: np.ndarray
    w: np.ndarray
    channels: tuple
    K: int
    x0: np.ndarray
    E: np.ndarray
    target: np.ndarray
    state_set: StateConstraintSet = field(default_factory=StateConstraintSet)
    cost: CostSpec = field(default_factory=CostSpec)

    def __post_init__(self):
        for name in ("A", "B", "E"):
            object.__setattr__(self, name, _arr(getattr(self, name), ndim=2))
        for name in ("w", "x0", "target"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def M(self) -> int:
        return len(self.channels)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        atoms = []
        for a in self.state_set.atoms:
            if isinstance(a, Halfspace):
                atoms.append({"type": "halfspace", "a": a.a.tolist(), "c": a.c})
            else:
                atoms.append({"type": "norm_cone", "P": a.P.tolist(), "q": a.q.tolist(), "r": a.r})
        cost = self.cost
        return {
            "dynamics": {"A": self.A.tolist(), "B": self.B.tolist(), "w": self.w.tolist()},
            "channels": [{"rho1": ch.rho1, "rho2": ch.rho2, "C": ch.C.tolist()}
                         for ch in self.channels],
            "K": self.K,
            "x0": self.x0.tolist(),
            "terminal": {"E": self.E.tolist(), "target": self.target.tolist()},
            "state_set": atoms,
            "cost": {
                "zeta": cost.zeta,
                "terminal": {
                    "time_weight": cost.time_weight,
                    "state_weights": None if cost.state_weights is None
                    else cost.state_weights.tolist(),
                },
                "running": [{"weight": t.weight, "a": t.a.tolist(), "offset": t.offset}
                            for t in cost.running],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SemiContinuousOCP":
        dyn = d["dynamics"]
        channels = [InputChannel(float(c["rho1"]), float(c["rho2"]), c["C"]) for c in d["channels"]]
        atoms = []
        for a in d.get("state_set", []):
            kind = a.get("type", "halfspace")
            if kind == "halfspace":
                atoms.append(Halfspace(a["a"], float(a["c"])))
            elif kind == "norm_cone":
                atoms.append(NormCone(a["P"], a["q"], float(a.get("r", 0.0))))
            else:
                raise ValueError(f"unknown state constraint type {kind!r}")
        c = d.get("cost", {})
        term = c.get("terminal", {}) or {}
        running = [RunningTerm(float(t["weight"]), t["a"], float(t.get("offset", 0.0)))
                   for t in c.get("running", [])]
        cost = CostSpec(zeta=int(c.get("zeta", 0)),
                        time_weight=float(term.get("time_weight", 0.0)),
                        state_weights=term.get("state_weights"),
                        running=running)
        n = len(d["x0"])
        w = dyn.get("w", [0.0] * n)
        return cls(A=dyn["A"], B=dyn["B"], w=w, channels=channels, K=int(d["K"]),
                   x0=d["x0"], E=d["terminal"]["E"], target=d["terminal"]["target"],
                   state_set=StateConstraintSet(atoms), cost=cost)

    @classmethod
    def load(cls, path) -> "SemiContinuousOCP":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    channel: int | None = None


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def numerical_rank(M, rtol=RANK_TOL) -> int:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def validate(problem: SemiContinuousOCP) -> ValidationReport:
    """Collect every violated structural invariant."""
    out = []
    n, m = problem.A.shape[0], problem.B.shape[1]
    if problem.A.shape != (n, n):
        out.append(Violation("dimension", f"A must be square, got {problem.A.shape}"))
    if problem.B.shape[0] != n:
        out.append(Violation("dimension", f"B has {problem.B.shape[0]} rows, expected {n}"))
    if problem.w.shape != (n,):
        out.append(Violation("dimension", f"w has shape {problem.w.shape}, expected ({n},)"))
    if problem.x0.shape != (n,):
        out.append(Violation("dimension", f"x0 has shape {problem.x0.shape}, expected ({n},)"))
    if problem.E.shape[1] != n:
        out.append(Violation("dimension", f"E has {problem.E.shape[1]} columns, expected {n}"))
    if problem.target.shape != (problem.E.shape[0],):
        out.append(Violation("dimension", "terminal target length must equal rows of E"))
    for name in ("A", "B", "w", "x0", "E", "target"):
        if not np.all(np.isfinite(getattr(problem, name))):
            out.append(Violation("finite", f"{name} has non-finite entries"))
    M = len(problem.channels)
    if M == 0:
        out.append(Violation("channels", "at least one input channel is required"))
    if not 1 <= problem.K <= max(M, 1):
        out.append(Violation("budget", f"K={problem.K} must satisfy 1 <= K <= M={M}"))
    for i, ch in enumerate(problem.channels):
        if not ch.rho1 > 0:
            out.append(Violation("Definition 1", f"rho1={ch.rho1} must be positive", i))
        if not ch.rho1 < ch.rho2:
            out.append(Violation("Assumption 2",
                                 f"norm bounds must be distinct: rho1={ch.rho1}, rho2={ch.rho2}", i))
        if ch.C.shape[1] != m:
            out.append(Violation("dimension", f"C has {ch.C.shape[1]} columns, expected {m}", i))
        elif numerical_rank(ch.C) < ch.C.shape[0]:
            out.append(Violation("Assumption 1", "pointing cone matrix is not full row rank", i))
    for j, atom in enumerate(problem.state_set.atoms):
        width = atom.a.size if isinstance(atom, Halfspace) else atom.P.shape[1]
        if width != n or (isinstance(atom, NormCone) and atom.q.size != n):
            out.append(Violation("dimension", f"state constraint {j} has wrong width"))
    cost = problem.cost
    if cost.zeta not in (0, 1):
        out.append(Violation("cost", f"zeta must be 0 or 1, got {cost.zeta}"))
    for j, term in enumerate(cost.running):
        if term.weight < 0:
            out.append(Violation("cost", f"running term {j} has negative weight"))
        if term.a.size != n:
            out.append(Violation("dimension", f"running term {j} has wrong width"))
    if cost.state_weights is not None and cost.state_weights.size != n:
        out.append(Violation("dimension", "terminal state weights have wrong width"))
    return ValidationReport(out)


class ValidationError(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        msgs = "; ".join(f"[{v.code}] {v.message}" for v in report.violations)
        super().__init__(msgs)


@dataclass(frozen=True)
class RelaxedOCP:
    """Problem R: the original data plus relaxation metadata (no numerics)."""

    problem: SemiContinuousOCP
    sigma_channels: int
    gamma_channels: int
    xi0: float = 0.0

    @property
    def xi_weight(self) -> int:
        return self.problem.cost.zeta

    def __getattr__(self, name):
        # forward problem data (A, B, channels, ...) for convenience
        if name == "problem":
            raise AttributeError(name)
        return getattr(self.problem, name)

    def input_point_feasible(self, u, gamma, sigma, tol=1e-9) -> bool:
        """Pointwise check of the relaxed input constraints at one instant."""
        u = np.asarray(u, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        if np.any(gamma < -tol) or np.any(gamma > 1 + tol) or gamma.sum() > self.problem.K + tol:
            return False
        for i, ch in enumerate(self.problem.channels):
            if gamma[i] * ch.rho1 > sigma[i] + tol or sigma[i] > gamma[i] * ch.rho2 + tol:
                return False
            if np.linalg.norm(u[i]) > sigma[i] + tol:
                return False
            if not ch.pointing_ok(u[i], tol):
                return False
        return True


def original_point_feasible(problem: SemiContinuousOCP, u, gamma, tol=1e-9) -> bool:
    """Pointwise check of the original (binary) input constraints."""
    u = np.asarray(u, dtype=float)
    gamma = np.asarray(gamma)
    if not np.all(np.isin(gamma, (0, 1))) or gamma.sum() > problem.K:
        return False
    for i, ch in enumerate(problem.channels):
        nrm = np.linalg.norm(u[i])
        if gamma[i] * ch.rho1 > nrm + tol or nrm > gamma[i] * ch.rho2 + tol:
            return False
        if not ch.pointing_ok(u[i], tol):
            return False
    return True


def relax(problem: SemiContinuousOCP) -> RelaxedOCP:
    report = validate(problem)
    if not report.ok:
        raise ValidationError(report)
    M = problem.M
    return RelaxedOCP(problem=problem, sigma_channels=M, gamma_channels=M)
