"""Bohmian and classical particle trajectories.

Bohmian particles follow dx/dt = v(x, t) with v interpolated multilinearly
(trilinear in 3D, periodic wrap) in space and linearly in time between stored
velocity snapshots. Classical particles obey dv/dt = k(v x B + E). Both use
classical RK4.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import grid as g
from .em_fields import FieldConfig

NODAL = "entered nodal region"


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    spins: np.ndarray | None = None
    truncated: bool = False
    reason: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 3)
        n = self.times.size
        if self.positions.shape[0] != n or self.velocities.shape[0] != n:
            raise ValueError("trajectory arrays must have equal lengths")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if self.spins is not None:
            self.spins = np.asarray(self.spins, dtype=float).reshape(-1, 3)
            if self.spins.shape[0] != n:
                raise ValueError("spin samples must match the time samples")

    def __len__(self):
        return self.times.size


# --- classical ------------------------------------------------------------

def _lorentz(cfg: FieldConfig):
    k = cfg.constants.k

    def rhs(t, x, v):
        p = x.reshape(3, 1)
        B = cfg.magnetic_field(p, t)[:, 0]
        E = cfg.electric_field(p, t)[:, 0]
        return v, k * (np.cross(v, B) + E)

    return rhs


def classical_trajectory(x0, v0, cfg: FieldConfig, t_span, dt: float, domain: g.GridSpec | None = None) -> Trajectory:
    """RK4 for dx/dt = v, dv/dt = k(v x B + E) over ``t_span`` = (t0, t1) or t1.

    The run stops (flagged) when the particle leaves ``domain`` or the field's
    validity region.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t0, t1 = (0.0, float(t_span)) if np.isscalar(t_span) else map(float, t_span)
    steps = int(round((t1 - t0) / dt))
    if steps < 1:
        raise ValueError("time span shorter than one step")
    f = _lorentz(cfg)
    x = np.asarray(x0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    ts, xs, vs = [t0], [x.copy()], [v.copy()]
    truncated, reason = False, ""
    for n in range(steps):
        t = t0 + n * dt
        try:
            k1x, k1v = f(t, x, v)
            k2x, k2v = f(t + dt / 2, x + dt / 2 * k1x, v + dt / 2 * k1v)
            k3x, k3v = f(t + dt / 2, x + dt / 2 * k2x, v + dt / 2 * k2v)
            k4x, k4v = f(t + dt, x + dt * k3x, v + dt * k3v)
        except ValueError as exc:
            truncated, reason = True, f"left the field domain: {exc}"
            break
        xn = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        vn = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if domain is not None and not domain.contains(xn):
            truncated, reason = True, "left the simulation domain"
            break
        x, v = xn, vn
        ts.append(t0 + (n + 1) * dt)
        xs.append(x.copy())
        vs.append(v.copy())
    return Trajectory(np.array(ts), np.array(xs), np.array(vs), truncated=truncated, reason=reason)


# --- grid interpolation -----------------------------------------------------

@dataclass
class VelocitySnapshot:
    t: float
    v: np.ndarray            # (3, *shape)
    mask: np.ndarray         # True where v is defined
    s: np.ndarray | None = None  # optional (3, *shape) spin field


def snapshot_from_state(state, cfg: FieldConfig) -> VelocitySnapshot:
    from .schrodinger import velocity_field

    v, mask = velocity_field(state.grid, state.components, cfg, state.t)
    s = None
    if state.components.shape[0] == 2:
        from .pauli import spin_density

        s, _ = spin_density(state)
    return VelocitySnapshot(float(state.t), v, mask, s)


class GridInterpolator:
    """Multilinear periodic interpolation of grid fields at arbitrary points."""

    def __init__(self, grid: g.GridSpec):
        self.grid = grid
        self._corners = list(product((0, 1), repeat=grid.dim))

    def stencil(self, points: np.ndarray):
        """Corner indices and weights for points of shape (P, 3)."""
        grid = self.grid
        idx0, frac = [], []
        for i, ax in enumerate(grid.axes):
            f = (points[:, ax] - grid.origin[i]) / grid.spacing[i]
            i0 = np.floor(f)
            frac.append(f - i0)
            idx0.append(i0.astype(int))
        out = []
        for corner in self._corners:
            w = np.ones(points.shape[0])
            ids = []
            for i, c in enumerate(corner):
                w = w * (frac[i] if c else 1.0 - frac[i])
                ids.append((idx0[i] + c) % grid.n[i])
            out.append((tuple(ids), w))
        return out

    def __call__(self, field: np.ndarray, points: np.ndarray, stencil=None) -> np.ndarray:
        """field (C, *shape) -> values (P, C)."""
        st = stencil or self.stencil(points)
        val = 0.0
        for ids, w in st:
            val = val + field[(slice(None),) + ids].T * w[:, None]
        return val

    def defined(self, mask: np.ndarray, points: np.ndarray, stencil=None) -> np.ndarray:
        """True where every corner of the enclosing cell is unmasked."""
        st = stencil or self.stencil(points)
        ok = np.ones(points.shape[0], dtype=bool)
        for ids, _ in st:
            ok &= mask[ids]
        return ok


class BohmianIntegrator:
    """Advance a set of particles through a stream of velocity snapshots.

    Only the latest snapshot is kept; each new one triggers ``substeps`` RK4
    steps across the interval with v linear in time between the two.
    """

    def __init__(self, grid: g.GridSpec, seeds, substeps: int = 4):
        self.grid = grid
        self.interp = GridInterpolator(grid)
        self.x = np.array(seeds, dtype=float).reshape(-1, 3)
        self.substeps = int(substeps)
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        P = self.x.shape[0]
        self.alive = np.ones(P, dtype=bool)
        self.reason = [""] * P
        self._last: VelocitySnapshot | None = None
        self.times: list[float] = []
        self.pos: list[np.ndarray] = []
        self.vel: list[np.ndarray] = []
        self.spin: list[np.ndarray] = []
        self._lengths = np.zeros(P, dtype=int)

    def _sample(self, snap: VelocitySnapshot, x: np.ndarray):
        st = self.interp.stencil(x)
        v = self.interp(snap.v, x, st)
        ok = self.interp.defined(snap.mask, x, st)
        s = None
        if snap.s is not None:
            s = self.interp(snap.s, x, st)
            s /= np.maximum(np.linalg.norm(s, axis=1, keepdims=True), 1e-300)
        return v, ok, s

    def _record(self, t, snap):
        v, ok, s = self._sample(snap, self.x)
        newly = self.alive & ~ok
        for p in np.flatnonzero(newly):
            self.reason[p] = NODAL
        self.alive &= ok
        self._lengths[self.alive] += 1
        self.times.append(t)
        self.pos.append(self.x.copy())
        self.vel.append(v)
        self.spin.append(s if s is not None else np.full_like(v, np.nan))

    def push(self, snap: VelocitySnapshot) -> None:
        if self._last is None:
            if not np.all([self.grid.contains(p) for p in self.x]):
                raise ValueError("seed outside the grid")
            self._last = snap
            self._record(snap.t, snap)
            return
        a, b = self._last, snap
        if not b.t > a.t:
            raise ValueError("snapshots must have increasing times")
        span = b.t - a.t
        h = span / self.substeps
        x = self.x

        def vel(t, pos):
            wa = (b.t - t) / span
            va, oka, _ = self._sample(a, pos)
            vb, okb, _ = self._sample(b, pos)
            return wa * va + (1 - wa) * vb, oka & okb

        ok_all = self.alive.copy()
        for n in range(self.substeps):
            t = a.t + n * h
            k1, o1 = vel(t, x)
            k2, o2 = vel(t + h / 2, x + h / 2 * k1)
            k3, o3 = vel(t + h / 2, x + h / 2 * k2)
            k4, o4 = vel(t + h, x + h * k3)
            ok_all &= o1 & o2 & o3 & o4
            step = h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            x = np.where(ok_all[:, None], x + step, x)
        for p in np.flatnonzero(self.alive & ~ok_all):
            self.reason[p] = NODAL
        self.alive &= ok_all
        self.x = x
        self._last = b
        self._record(b.t, b)

    def trajectories(self) -> list[Trajectory]:
        T = np.array(self.times)
        X = np.array(self.pos)
        V = np.array(self.vel)
        Sp = np.array(self.spin)
        out = []
        for p in range(self.x.shape[0]):
            n = int(self._lengths[p])
            spins = None if np.all(np.isnan(Sp[:n, p])) else Sp[:n, p]
            out.append(Trajectory(T[:n], X[:n, p], V[:n, p], spins, truncated=bool(self.reason[p]), reason=self.reason[p]))
        return out


def bohmian_trajectory(grid: g.GridSpec, x0, snapshots, substeps: int = 4) -> Trajectory:
    """Integrate one particle from ``x0`` through an iterable of VelocitySnapshot."""
    integ = BohmianIntegrator(grid, [x0], substeps)
    for snap in snapshots:
        integ.push(snap)
    return integ.trajectories()[0]


def quantile_seeds(grid: g.GridSpec, rho: np.ndarray, count: int, axis: int | None = None) -> np.ndarray:
    """Seeds at the (i + 1/2)/count quantiles of the density marginal along ``axis``.

    The other coordinates sit at the density centroid. ``axis`` is a physical
    axis and defaults to the first grid axis.
    """
    axis = grid.axes[0] if axis is None else axis
    gi = grid.grid_axis(axis)
    if gi is None:
        raise ValueError(f"axis {axis} is not spanned by the grid")
    centre = np.asarray(g.integrate(grid, rho * grid.positions)) / g.integrate(grid, rho)
    others = tuple(i for i in range(grid.dim) if i != gi)
    marg = np.sum(rho, axis=others) if others else rho
    cdf = np.cumsum(marg) / np.sum(marg)
    coords = grid.coords(gi)
    # cell-centred cumulative: cdf at coordinate c_i counts half of cell i
    mid = cdf - 0.5 * marg / np.sum(marg)
    q = (np.arange(count) + 0.5) / count
    seeds = np.tile(centre, (count, 1))
    seeds[:, axis] = np.interp(q, mid, coords)
    return seeds


def trajectory_deviation(a: Trajectory, b: Trajectory) -> tuple[float, float]:
    """(max, rms) of |x_a - x_b| at a's sample times inside the common range."""
    lo, hi = max(a.times[0], b.times[0]), min(a.times[-1], b.times[-1])
    if hi < lo or (hi == lo and len(a) > 1 and len(b) > 1):
        raise ValueError("trajectories have disjoint time ranges")
    eps = 1e-12 * max(1.0, abs(hi))
    sel = (a.times >= lo - eps) & (a.times <= hi + eps)
    t = a.times[sel]
    xb = np.stack([np.interp(t, b.times, b.positions[:, i]) for i in range(3)], axis=1)
    d = np.linalg.norm(a.positions[sel] - xb, axis=1)
    return float(d.max()), float(np.sqrt(np.mean(d**2)))


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    """Columns t, x, y, z, vx, vy, vz, sx, sy, sz; spin cells empty without spins."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "x", "y", "z", "vx", "vy", "vz", "sx", "sy", "sz"])
        for i in range(len(traj)):
            row = [repr(float(traj.times[i]))]
            row += [repr(float(v)) for v in traj.positions[i]]
            row += [repr(float(v)) for v in traj.velocities[i]]
            if traj.spins is None:
                row += ["", "", ""]
            else:
                row += [repr(float(v)) for v in traj.spins[i]]
            wr.writerow(row)
    return path
