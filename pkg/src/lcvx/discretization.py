"""Zero-order-hold discretization of LTI dynamics on a uniform grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass(frozen=True)
class DiscreteDynamics:
    Ad: np.ndarray
    Bd: np.ndarray
    wd: np.ndarray
    dt: float
    N: int

    def step(self, x, u):
        return self.Ad @ x + self.Bd @ u + self.wd


def matrix_exponential(M) -> np.ndarray:
    """exp(M) by scaling and squaring with a degree-13 Pade approximant."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix_exponential needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix_exponential got non-finite entries")
    return scipy.linalg.expm(M)


def zoh_discretize(A, B, w, dt):
    """Return (Ad, Bd, wd) so that x+ = Ad x + Bd u + wd is exact for constant u."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    w = np.asarray(w, dtype=float).ravel()
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = B.shape
    aug = np.zeros((n + m + 1, n + m + 1))
    aug[:n, :n] = A
    aug[:n, n:n + m] = B
    aug[:n, n + m] = w
    E = matrix_exponential(dt * aug)
    return E[:n, :n], E[:n, n:n + m], E[:n, n + m]


def discretize(A, B, w, t_f: float, N: int) -> DiscreteDynamics:
    """Uniform grid of N nodes (N - 1 intervals) over [0, t_f]."""
    if N < 2:
        raise ValueError("need at least two nodes")
    if not t_f > 0:
        raise ValueError(f"t_f must be positive, got {t_f}")
    dt = t_f / (N - 1)
    Ad, Bd, wd = zoh_discretize(A, B, w, dt)
    return DiscreteDynamics(Ad, Bd, wd, dt, N)
