"""Expectation-value laws for scalar and spinor states.

Any state exposing ``grid``, ``t`` and ``components`` (shape (n, *grid.shape))
works here. Expectations are plain quadratures of bilinear forms, with no
density floor.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import grid as g
from .em_fields import FieldConfig

TERMS = ("magnetic", "electric", "spin")


def _spin_vector(components):
    if components.shape[0] != 2:
        return None
    u, d = components
    ud = np.conj(u) * d
    return np.stack([2 * ud.real, 2 * ud.imag, np.abs(u) ** 2 - np.abs(d) ** 2])


def _density(components):
    return np.sum(np.abs(components) ** 2, axis=0)


def expectation_position(state) -> np.ndarray:
    """<x> = int psi^dagger x psi dV (both spinor components summed)."""
    grid = state.grid
    return np.asarray(g.integrate(grid, _density(state.components) * grid.positions), dtype=float)


def apply_velocity(grid: g.GridSpec, cfg: FieldConfig, psi: np.ndarray, t: float = 0.0) -> np.ndarray:
    """w = v_o psi = (1/m)(-i hbar grad - eA) psi, shape (3, *psi.shape)."""
    c = cfg.constants
    out = np.zeros((3,) + psi.shape, dtype=complex)
    for i, ax in enumerate(grid.axes):
        out[ax] = -1j * c.hbar * g.partial(grid, psi, i)
    if c.e != 0 and cfg.has_vector_potential:
        A = cfg.vector_potential(grid.positions, t)
        out -= c.e * A.reshape((3,) + (1,) * (psi.ndim - grid.dim) + grid.shape) * psi
    return out / c.m


def expectation_velocity(state, cfg: FieldConfig, form: str = "operator") -> np.ndarray:
    """<v_o> as Re int psi^dagger v_o psi, or the hydrodynamic int rho v dV."""
    grid, comp = state.grid, state.components
    if form == "operator":
        w = apply_velocity(grid, cfg, comp, state.t)
        return np.asarray(g.integrate(grid, np.sum(np.real(np.conj(comp) * w), axis=1)), dtype=float)
    if form == "hydrodynamic":
        from .schrodinger import current_density

        return np.asarray(g.integrate(grid, current_density(grid, comp, cfg, state.t)), dtype=float)
    raise ValueError(f"unknown form {form!r}")


def second_law_rhs(state, cfg: FieldConfig, kind: str | None = None) -> dict:
    """Named right-hand-side terms of d<v>/dt.

    magnetic: (k/2) <v_o x B - B x v_o> = k int Re(psi^dagger w) x B
    electric: k int rho E
    spin:     -(mu/m) int (psi^dagger sigma_i psi) grad B_i   (spinor states only)
    No quantum potential or spin quantum force enters.
    """
    grid, comp = state.grid, state.components
    c = cfg.constants
    if kind is None:
        kind = "pauli" if comp.shape[0] == 2 else "schrodinger"
    if kind not in ("schrodinger", "pauli"):
        raise ValueError("kind must be schrodinger|pauli")
    x = grid.positions
    B = cfg.magnetic_field(x, state.t)
    E = cfg.electric_field(x, state.t)
    w = apply_velocity(grid, cfg, comp, state.t)
    sym = np.sum(np.real(np.conj(comp)[np.newaxis] * w), axis=1)
    terms = {
        "magnetic": c.k * np.asarray(g.integrate(grid, np.cross(sym, B, axis=0))),
        "electric": c.k * np.asarray(g.integrate(grid, _density(comp) * E)),
        "spin": np.zeros(3),
    }
    if kind == "pauli":
        S = _spin_vector(comp)
        if S is None:
            raise ValueError("pauli form needs a spinor state")
        J = cfg.field_gradient(x, state.t)  # J[i, j] = d_j B_i
        terms["spin"] = -(c.mu / c.m) * np.asarray(g.integrate(grid, np.einsum("ij...,i...->j...", J, S)))
    terms["total"] = terms["magnetic"] + terms["electric"] + terms["spin"]
    return terms


def commutator_identity_check(state, cfg: FieldConfig) -> float:
    """Compare <[v_o, B_i] sigma_i> with -(i hbar/m) <(grad B_i) sigma_i>.

    The left side applies v_o to (B.sigma) psi and to psi separately; the
    right side integrates the B Jacobian. Only grid axes are compared (v_o is
    multiplicative along suppressed axes). The residual is divided by
    (hbar/m) int rho |grad B|_F, a scale that cannot cancel the way the
    signed right side does (for a transverse spin it integrates to ~0).
    """
    from .pauli import apply_sigma

    grid, comp = state.grid, state.components
    if comp.shape[0] != 2:
        raise ValueError("commutator check needs a spinor state")
    c = cfg.constants
    x = grid.positions
    B = cfg.magnetic_field(x, state.t)
    Bpsi = apply_sigma(B, comp)
    w_Bpsi = apply_velocity(grid, cfg, Bpsi, state.t)
    w_psi = apply_velocity(grid, cfg, comp, state.t)
    lhs = g.integrate(grid, np.sum(np.conj(comp)[np.newaxis] * w_Bpsi, axis=1)) - g.integrate(
        grid, np.sum(np.conj(Bpsi)[np.newaxis] * w_psi, axis=1)
    )
    S = _spin_vector(comp)
    J = cfg.field_gradient(x, state.t)
    rhs = -1j * c.hbar / c.m * g.integrate(grid, np.einsum("ij...,i...->j...", J, S))
    ax = list(grid.axes)
    diff = np.linalg.norm((lhs - rhs)[ax])
    scale = c.hbar / abs(c.m) * float(g.integrate(grid, _density(comp) * np.sqrt(np.sum(J**2, axis=(0, 1)))))
    return float(diff / scale) if scale > 0 else float(diff)


def linearity_gap(state, cfg: FieldConfig):
    """(k<E(x)>, kE(<x>), |difference|)."""
    k = cfg.constants.k
    grid = state.grid
    lhs = k * np.asarray(g.integrate(grid, _density(state.components) * cfg.electric_field(grid.positions, state.t)))
    rhs = k * cfg.electric_field(expectation_position(state).reshape(3, 1), state.t)[:, 0]
    return lhs, rhs, float(np.linalg.norm(lhs - rhs))


# --- time series --------------------------------------------------------------

@dataclass
class ExpectationSeries:
    times: list = field(default_factory=list)
    x_mean: list = field(default_factory=list)
    v_mean: list = field(default_factory=list)
    rhs_terms: dict = field(default_factory=lambda: {k: [] for k in TERMS})
    energy: list = field(default_factory=list)

    def record(self, state, cfg: FieldConfig, kind: str | None = None, energy: float | None = None):
        self.times.append(float(state.t))
        self.x_mean.append(expectation_position(state))
        self.v_mean.append(expectation_velocity(state, cfg))
        terms = second_law_rhs(state, cfg, kind)
        for k in TERMS:
            self.rhs_terms[k].append(terms[k])
        self.energy.append(float("nan") if energy is None else float(energy))

    def __len__(self):
        return len(self.times)

    def arrays(self):
        return np.asarray(self.times), np.asarray(self.x_mean), np.asarray(self.v_mean)

    def rhs_total(self) -> np.ndarray:
        return sum(np.asarray(self.rhs_terms[k]) for k in TERMS)


def _central(t, f):
    return (f[2:] - f[:-2]) / (t[2:] - t[:-2])[:, None]


def first_law_residual(series: ExpectationSeries) -> float:
    """max over interior samples of |d<x>/dt - <v>| (central differences)."""
    if len(series) < 3:
        raise ValueError("first law residual needs at least 3 samples")
    t, x, v = series.arrays()
    return float(np.max(np.linalg.norm(_central(t, x) - v[1:-1], axis=1)))


def second_law_residual(series: ExpectationSeries, axes=(0, 1, 2)) -> tuple[float, float]:
    """(max |d<v>/dt - RHS|, that value over max |RHS|), interior samples, given axes."""
    if len(series) < 3:
        raise ValueError("second law residual needs at least 3 samples")
    t, _, v = series.arrays()
    ax = list(axes)
    r = _central(t, v)[:, ax] - series.rhs_total()[1:-1, ax]
    absolute = float(np.max(np.linalg.norm(r, axis=1)))
    scale = float(np.max(np.linalg.norm(series.rhs_total()[1:-1, ax], axis=1)))
    return absolute, absolute / scale if scale > 0 else float("inf")


def write_series_csv(series: ExpectationSeries, path) -> Path:
    """t, <x>, <v>, d<x>/dt, d<v>/dt, every RHS term and both residual norms per row.

    Derivative and residual cells are empty at the two endpoints.
    """
    t, x, v = series.arrays()
    n = len(t)
    dx = np.full((n, 3), np.nan)
    dv = np.full((n, 3), np.nan)
    if n >= 3:
        dx[1:-1] = _central(t, x)
        dv[1:-1] = _central(t, v)
    rhs = series.rhs_total()
    terms = {k: np.asarray(series.rhs_terms[k]) for k in TERMS}
    cols = ["t"] + [f"{p}_{a}" for p in ("x", "v", "dxdt", "dvdt") for a in "xyz"]
    cols += [f"{k}_{a}" for k in TERMS for a in "xyz"] + ["first_law_residual", "second_law_residual"]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i in range(n):
            r1 = np.linalg.norm(dx[i] - v[i])
            r2 = np.linalg.norm(dv[i] - rhs[i])
            row = [t[i], *x[i], *v[i], *dx[i], *dv[i]]
            for k in TERMS:
                row += list(terms[k][i])
            row += [r1, r2]
            wr.writerow(["" if isinstance(val, float) and np.isnan(val) else repr(float(val)) for val in row])
    return path
