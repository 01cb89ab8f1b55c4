"""Planar rocket landing with a two-mode gimballed thruster."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conditions import AdjointTrajectory, ConditionReport, full_report
from .driver import (InfeasibleBracket, LosslessReport, SolveFailure, audit_losslessness,
                     golden_search_tf)
from .micp import MICPSettings, solve_micp, verify_equivalence
from .ocp import (CostSpec, InputChannel, NormCone, RunningTerm, SemiContinuousOCP,
                  StateConstraintSet, relax)
from .transcription import OCPSolution, transcribe

S = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass
class RocketConfig:
    """Mars divert parameters; ``l_km`` is the pad position in kilometres."""

    omega: float = 2 * np.pi / 88775
    rho1: tuple = (4.0, 8.0)
    rho2: tuple = (8.0, 12.0)
    theta_deg: tuple = (120.0, 10.0)
    gamma_gs_deg: float = 10.0
    l_km: tuple = (0.0, 3396.2)
    g: tuple = (0.0, -3.71)
    h0: float = 800.0
    r0_downrange: float = 1500.0
    v0: tuple = (50.0, -70.0)
    zeta: int = 0
    t_f_max: float = 100.0
    t_f_min: float = 1.0
    N: int = 150
    K: int = 1
    # weight of the |r2| term in the state running cost; 0 reproduces the
    # reference cost table, 1 is the full downrange+altitude penalty
    altitude_cost_weight: float = 0.0

    def __post_init__(self):
        for name in ("rho1", "rho2", "theta_deg", "l_km", "g", "v0"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        errs = self.errors()
        if errs:
            raise ValueError("; ".join(errs))

    def errors(self) -> list[str]:
        out = []
        if not (len(self.rho1) == len(self.rho2) == len(self.theta_deg)):
            out.append("rho1, rho2 and theta_deg must have one entry per mode")
        for th in self.theta_deg:
            if not 0 < th < 180:
                out.append(f"theta {th} deg outside (0, 180)")
        if not 0 < self.gamma_gs_deg < 90:
            out.append(f"glide slope angle {self.gamma_gs_deg} deg outside (0, 90)")
        if self.zeta not in (0, 1):
            out.append("zeta must be 0 or 1")
        if not self.h0 > 0:
            out.append("h0 must be positive")
        if self.N < 2:
            out.append("N must be at least 2")
        if not 1 <= self.K <= len(self.rho1):
            out.append("K must lie in [1, M]")
        return out

    @property
    def M(self) -> int:
        return len(self.rho1)

    @property
    def xi_max(self) -> float:
        return self.t_f_max * max(self.rho2)

    @property
    def l(self) -> np.ndarray:
        return np.asarray(self.l_km) * 1e3

    def replace(self, **kw) -> "RocketConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "RocketConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown rocket config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RocketConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def dynamics_matrices(omega, l, g):
    I = np.eye(2)
    Z = np.zeros((2, 2))
    A = np.block([[Z, I], [omega ** 2 * I, 2 * omega * S]])
    B = np.vstack([Z, I])
    w = np.concatenate([np.zeros(2), omega ** 2 * np.asarray(l) + np.asarray(g)])
    return A, B, w


def gimbal_matrix(theta_deg) -> np.ndarray:
    h = np.deg2rad(theta_deg) / 2
    return np.array([[-np.cos(h), -np.sin(h)], [np.cos(h), -np.sin(h)]])


def glide_slope(gamma_gs_deg) -> NormCone:
    """||r|| <= r_2 / sin(gamma_gs) on x = (r, v)."""
    P = np.hstack([np.eye(2), np.zeros((2, 2))])
    q = np.array([0.0, 1.0 / np.sin(np.deg2rad(gamma_gs_deg)), 0.0, 0.0])
    return NormCone(P, q, 0.0)


def build_rocket_ocp(cfg: RocketConfig) -> SemiContinuousOCP:
    A, B, w = dynamics_matrices(cfg.omega, cfg.l, cfg.g)
    channels = [InputChannel(r1, r2, gimbal_matrix(th))
                for r1, r2, th in zip(cfg.rho1, cfg.rho2, cfg.theta_deg)]
    tan_gs = np.tan(np.deg2rad(cfg.gamma_gs_deg))
    scale = 1e-3 * cfg.xi_max / cfg.h0
    running = [RunningTerm(scale * tan_gs, [1.0, 0.0, 0.0, 0.0])]
    if cfg.altitude_cost_weight:
        running.append(RunningTerm(scale * cfg.altitude_cost_weight, [0.0, 1.0, 0.0, 0.0]))
    cost = CostSpec(zeta=cfg.zeta, time_weight=(1 - cfg.zeta) * cfg.xi_max / cfg.t_f_max,
                    running=running)
    x0 = np.array([cfg.r0_downrange, cfg.h0, *cfg.v0])
    return SemiContinuousOCP(A=A, B=B, w=w, channels=channels, K=cfg.K, x0=x0,
                             E=np.eye(4), target=np.zeros(4),
                             state_set=StateConstraintSet([glide_slope(cfg.gamma_gs_deg)]),
                             cost=cost)


def running_cost_directions(cfg: RocketConfig) -> np.ndarray:
    """Basis D of the span of the running-cost subdifferentials (position block)."""
    return np.vstack([np.eye(2), np.zeros((2, 2))])


# ---------------------------------------------------------------------------
# case orchestration


def assumption_proxies(sol: OCPSolution, cfg: RocketConfig) -> dict:
    """Node-level stand-ins for the non-degeneracy assumptions of the running cost."""
    tol = 1e-6 * cfg.h0
    r = sol.x[:, :2]
    zero_nodes = [int(k) for k in range(sol.N) if np.any(np.abs(r[k]) <= tol)]
    ux = sol.u[:, :, 0].sum(axis=0)
    signs = np.sign(ux[np.abs(ux) > 1e-6 * max(cfg.rho2)])
    changes = int(np.sum(signs[1:] != signs[:-1]))
    out = {
        "coordinate_zero_nodes": zero_nodes,
        "assumption3_ok": len(zero_nodes) <= 2,
        "downrange_sign_changes": changes,
        "assumption4_ok": changes >= 1,
    }
    if not out["assumption3_ok"]:
        warnings.warn(f"{len(zero_nodes)} nodes with a zero position coordinate", RuntimeWarning)
    return out


def trajectory_checks(sol: OCPSolution, cfg: RocketConfig) -> dict:
    r = sol.x[:, :2]
    s = np.sin(np.deg2rad(cfg.gamma_gs_deg))
    gs = r[:, 1] - np.linalg.norm(r, axis=1) * s
    return {
        "glide_slope_min_margin": float(gs.min()),
        "glide_slope_ok": bool(gs.min() >= -1e-6 * cfg.h0),
        "terminal_position_error": float(np.linalg.norm(sol.x[-1, :2])),
        "terminal_velocity_error": float(np.linalg.norm(sol.x[-1, 2:])),
    }


@dataclass
class CaseBundle:
    cfg: RocketConfig
    t_f: float
    solution: OCPSolution
    adjoint: AdjointTrajectory
    conditions: ConditionReport
    lossless: LosslessReport
    proxies: dict
    checks: dict
    evaluations: int
    runtime: float

    @property
    def cost(self) -> float:
        return self.solution.cost

    @property
    def ok(self) -> bool:
        return self.conditions.all_hold and self.lossless.verdict

    def summary(self) -> dict:
        sol = self.solution
        return {
            "status": "Optimal",
            "h0": self.cfg.h0,
            "zeta": self.cfg.zeta,
            "cost": sol.cost,
            "t_f": self.t_f,
            "N": sol.N,
            "golden_evaluations": self.evaluations,
            "runtime": self.runtime,
            "solver": {k: sol.stats.get(k) for k in ("iterations", "solve_time", "primal_res",
                                                     "dual_res", "gap")},
            "conditions": self.conditions.to_dict(),
            "lossless": self.lossless.to_dict(),
            "assumption_proxies": self.proxies,
            "checks": self.checks,
            "config": self.cfg.to_dict(),
        }


def run_case(cfg: RocketConfig, out_dir=None, tol_t: float = 0.05) -> CaseBundle:
    t0 = time.perf_counter()
    problem = build_rocket_ocp(cfg)
    relaxed = relax(problem)
    t_f, sol, info = golden_search_tf(relaxed, cfg.N, (cfg.t_f_min, cfg.t_f_max), tol_t)
    tp = transcribe(relaxed, cfg.N, t_f)
    report, adj = full_report(tp, sol, running_cost_directions(cfg))
    audit = audit_losslessness(sol, relaxed)
    bundle = CaseBundle(cfg=cfg, t_f=t_f, solution=sol, adjoint=adj, conditions=report,
                        lossless=audit, proxies=assumption_proxies(sol, cfg),
                        checks=trajectory_checks(sol, cfg), evaluations=info["evaluations"],
                        runtime=time.perf_counter() - t0)
    if out_dir is not None:
        write_case(bundle, out_dir)
    return bundle


def _fmt(v) -> str:
    return f"{float(v):.9g}"


def trajectory_rows(sol: OCPSolution):
    """Node rows; the last node repeats the input of the last interval."""
    M = sol.u.shape[0]
    for k in range(sol.N):
        j = min(k, sol.N - 2)
        row = [sol.t[k], *sol.x[k]]
        for i in range(M):
            row += list(sol.u[i, j])
        row += list(sol.sigma[:, j]) + list(sol.gamma[:, j]) + [sol.xi[k]]
        yield row


def trajectory_header(n, m, M, rocket: bool) -> list[str]:
    if rocket:
        states = ["rx", "ry", "vx", "vy"]
        inputs = [f"u{i + 1}{a}" for i in range(M) for a in "xy"]
    else:
        states = [f"x{j + 1}" for j in range(n)]
        inputs = [f"u{i + 1}_{j + 1}" for i in range(M) for j in range(m)]
    return (["t"] + states + inputs + [f"sigma{i + 1}" for i in range(M)]
            + [f"gamma{i + 1}" for i in range(M)] + ["xi"])


def write_trajectory(sol: OCPSolution, path, rocket: bool = True) -> None:
    n, m, M = sol.x.shape[1], sol.u.shape[2], sol.u.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trajectory_header(n, m, M, rocket))
        for row in trajectory_rows(sol):
            w.writerow([_fmt(v) for v in row])


def write_gains(adj: AdjointTrajectory, path) -> None:
    y = adj.y_normalized
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"y{j + 1}" for j in range(y.shape[1])]
                   + [f"Gamma{i + 1}" for i in range(adj.gains.shape[0])])
        for k in range(y.shape[0]):
            w.writerow([_fmt(v) for v in [adj.t[k], *y[k], *adj.gains[:, k]]])


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, default=_json_default))


def write_case(bundle: CaseBundle, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(bundle.solution, out / "trajectory.csv")
    write_gains(bundle.adjoint, out / "gains.csv")
    write_json(bundle.summary(), out / "summary.json")
    return out


SWEEP_FIELDS = ["h0", "zeta", "status", "cost", "t_f", "runtime", "lossless", "n_edge",
                "condition1", "condition2", "condition3", "condition4", "error"]


def _sweep_worker(args):
    cfg, out_dir, tol_t = args
    case_dir = None if out_dir is None else Path(out_dir) / f"h0_{cfg.h0:g}"
    try:
        b = run_case(cfg, case_dir, tol_t)
    except (InfeasibleBracket, SolveFailure) as exc:
        status = "Infeasible" if isinstance(exc, InfeasibleBracket) else exc.status.value
        return {"h0": cfg.h0, "zeta": cfg.zeta, "status": status, "error": str(exc)}, None
    c = b.conditions
    row = {"h0": cfg.h0, "zeta": cfg.zeta, "status": "Optimal", "cost": b.cost, "t_f": b.t_f,
           "runtime": b.runtime, "lossless": b.lossless.verdict,
           "n_edge": len(b.lossless.edge_nodes), "condition1": c.condition1,
           "condition2": c.condition2, "condition3": c.condition3, "condition4": c.condition4,
           "error": ""}
    return row, b


def run_sweep(cfg: RocketConfig, h0_list, out_dir=None, workers: int | None = None,
              tol_t: float = 0.05, keep_bundles: bool = False):
    """One case per h0 (in parallel), rows ordered by h0; failures become rows."""
    h0_list = sorted(float(h) for h in h0_list)
    if not h0_list:
        raise ValueError("h0_list is empty")
    jobs = [(cfg.replace(h0=h), out_dir, tol_t) for h in h0_list]
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) == 1:
        results = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    rows = [r for r, _ in results]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    if keep_bundles:
        return rows, [b for _, b in results]
    return rows


def run_micp_comparison(cfg: RocketConfig, N_small: int = 12, max_nodes: int = 100_000,
                        rel_tol: float = 1e-3, tol_t: float = 0.05) -> dict:
    """LCvx and branch and bound on the same small grid and final time."""
    if N_small > 20:
        raise ValueError("the oracle is meant for N <= 20")
    relaxed = relax(build_rocket_ocp(cfg))
    t0 = time.perf_counter()
    t_f, lc, _ = golden_search_tf(relaxed, N_small, (cfg.t_f_min, cfg.t_f_max), tol_t)
    t_lcvx = time.perf_counter() - t0
    mi, stats = solve_micp(relaxed, N_small, t_f, MICPSettings(max_nodes=max_nodes))
    row = {"h0": cfg.h0, "zeta": cfg.zeta, "N": N_small, "t_f": t_f, "lcvx_cost": lc.cost,
           "lcvx_time": t_lcvx, "micp_nodes": stats.explored, "micp_time": stats.runtime,
           "micp_exhausted": stats.exhausted}
    if isinstance(mi, OCPSolution):
        eq, gap = verify_equivalence(lc, mi, rel_tol)
        row.update(micp_cost=mi.cost, micp_status="Optimal", equivalent=eq, rel_gap=gap)
    else:
        row.update(micp_cost=None, micp_status="Infeasible", equivalent=False, rel_gap=None)
    return row
