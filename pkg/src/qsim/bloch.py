"""Bloch equations for magnetization relaxation.

dM/dt = gamma M x B - (Mx/T2, My/T2, (Mz - M0)/T1), with the cross product
in that order. NMR texts often flip the sign; this module does not.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np


def gyromagnetic_default(mu: float, hbar: float) -> float:
    """gamma = 2 mu / hbar."""
    if not (mu > 0 and hbar > 0):
        raise ValueError("mu and hbar must be positive")
    return 2.0 * mu / hbar


@dataclass(frozen=True)
class BlochParams:
    T1: float
    T2: float
    M0: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        vals = (self.T1, self.T2, self.M0, self.gamma)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("Bloch parameters must be finite")
        if not (self.T1 > 0 and self.T2 > 0):
            raise ValueError("T1 and T2 must be positive")
        if self.T2 > 2 * self.T1:
            warnings.warn(f"T2={self.T2:g} > 2 T1={2 * self.T1:g} is unphysical", RuntimeWarning, stacklevel=3)


@dataclass(frozen=True)
class MagnetizationState:
    M: np.ndarray
    t: float
    params: BlochParams

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float).reshape(3)
        if not np.all(np.isfinite(M)):
            raise ValueError("magnetization must be finite")
        object.__setattr__(self, "M", M)


def _field(B, t):
    b = np.asarray(B(t) if callable(B) else B, dtype=float).reshape(3)
    if not np.all(np.isfinite(b)):
        raise ValueError("magnetic field must be finite")
    return b


def bloch_rhs(M: np.ndarray, B: np.ndarray, p: BlochParams) -> np.ndarray:
    relax = np.array([M[0] / p.T2, M[1] / p.T2, (M[2] - p.M0) / p.T1])
    return p.gamma * np.cross(M, B) - relax


def bloch_step(state: MagnetizationState, B: np.ndarray | Callable, dt: float) -> MagnetizationState:
    """One RK4 step; a callable B(t) is sampled at the stage times."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    p, t, M = state.params, state.t, state.M
    k1 = bloch_rhs(M, _field(B, t), p)
    k2 = bloch_rhs(M + dt / 2 * k1, _field(B, t + dt / 2), p)
    k3 = bloch_rhs(M + dt / 2 * k2, _field(B, t + dt / 2), p)
    k4 = bloch_rhs(M + dt * k3, _field(B, t + dt), p)
    return replace(state, M=M + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), t=t + dt)


def integrate_bloch(state: MagnetizationState, B, dt: float, steps: int):
    """Times (steps+1,) and magnetization (steps+1, 3) including the start."""
    ts, Ms = [state.t], [state.M]
    for _ in range(steps):
        state = bloch_step(state, B, dt)
        ts.append(state.t)
        Ms.append(state.M)
    return np.array(ts), np.array(Ms)


def closed_form(t, M_init, B0: float, p: BlochParams) -> np.ndarray:
    """Exact solution for B = B0 z: the transverse part rotates at -gamma B0 and decays with T2."""
    t = np.asarray(t, dtype=float)
    Mx0, My0, Mz0 = M_init
    w = p.gamma * B0
    e2 = np.exp(-t / p.T2)
    # dMx/dt = gamma B0 My, dMy/dt = -gamma B0 Mx
    Mx = e2 * (Mx0 * np.cos(w * t) + My0 * np.sin(w * t))
    My = e2 * (My0 * np.cos(w * t) - Mx0 * np.sin(w * t))
    Mz = p.M0 + (Mz0 - p.M0) * np.exp(-t / p.T1)
    return np.stack([Mx, My, Mz], axis=-1)


def relaxation_time_to_axis(state: MagnetizationState, B, tolerance: float, dt: float | None = None,
                            t_max: float | None = None) -> float:
    """First time |M - (0, 0, M0)| < tolerance |M0|, refined by linear interpolation.

    Integrates with RK4 at ``dt`` (default min(T1, T2)/1000).
    """
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    p = state.params
    target = np.array([0.0, 0.0, p.M0])
    thr = tolerance * abs(p.M0)
    dev = np.linalg.norm(state.M - target)
    if dev < thr:
        return 0.0
    dt = dt or min(p.T1, p.T2) / 1000
    t_max = t_max or 50 * max(p.T1, p.T2) * (1 + np.log(1 + dev / thr))
    t0 = state.t
    while state.t - t0 < t_max:
        nxt = bloch_step(state, B, dt)
        dn = np.linalg.norm(nxt.M - target)
        if dn < thr:
            frac = (dev - thr) / (dev - dn)
            return float(state.t - t0 + frac * dt)
        state, dev = nxt, dn
    raise RuntimeError(f"magnetization did not relax within t={t_max:g}")


def fit_relaxation_times(t, M, M0: float) -> tuple[float, float]:
    """(T1, T2) from log-linear fits of |Mz - M0| and the transverse magnitude."""
    t = np.asarray(t, dtype=float)
    M = np.asarray(M, dtype=float)
    dz = np.abs(M[:, 2] - M0)
    perp = np.hypot(M[:, 0], M[:, 1])

    def rate(y):
        ok = y > 1e-12 * max(y.max(), 1e-300)
        if ok.sum() < 2:
            return float("inf")
        slope, _ = np.polyfit(t[ok], np.log(y[ok]), 1)
        return -1.0 / slope

    return rate(dz), rate(perp)


def write_bloch_csv(t, M, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "Mx", "My", "Mz"])
        for ti, m in zip(t, M):
            wr.writerow([repr(float(ti))] + [repr(float(v)) for v in m])
    return path
