"""Spin-less wave-function propagation and its Madelung / Bohm decomposition.

Propagators
-----------
``split``  Strang splitting. With no vector potential (or zero charge) the
           kinetic factor is one n-dimensional FFT multiply. When every
           component A_j is independent of x_j ("separable" potentials: the
           symmetric gauge, the Stern-Gerlach potential) each directional
           kinetic factor (p_j - e A_j)^2 / 2m is diagonal in the mixed
           (k_j, x_other) representation and is applied exactly.
``cn``     Crank-Nicolson for arbitrary A(x, t): the minimal-coupling
           operator is applied spectrally and the implicit system is solved
           with preconditioned GMRES to round-off (relative residual CN_TOL).

Both are unitary (CN up to the solve tolerance) and second order in dt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from . import grid as g
from .em_fields import Constants, FieldConfig, zero_field

DENSITY_FLOOR = 1e-12
PHASE_LIMIT = np.pi
# Solve to round-off: v = j/rho amplifies solver residue by 1/|psi| near the density floor.
CN_TOL = 1e-16
# restart cycles; on large grids GMRES can stall just above CN_TOL, so cap the work
CN_CYCLES = 3


@dataclass
class SchrodingerState:
    grid: g.GridSpec
    psi: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != self.grid.shape:
            raise ValueError(f"psi shape {self.psi.shape} does not match grid {self.grid.shape}")

    @property
    def components(self) -> np.ndarray:
        return self.psi[np.newaxis]

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(g.integrate(self.grid, self.density()))

    def normalized(self) -> "SchrodingerState":
        return SchrodingerState(self.grid, self.psi / np.sqrt(self.norm()), self.t)


def gaussian_packet(grid: g.GridSpec, center, sigma, wavevector=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Normalized Gaussian with position standard deviation ``sigma`` per axis.

    psi ~ exp(-|x - c|^2 / (4 sigma^2) + i k.x); ``center`` and ``wavevector``
    are physical 3-vectors.
    """
    x = grid.positions
    c = np.asarray(center, dtype=float).reshape((3,) + (1,) * grid.dim)
    kv = np.asarray(wavevector, dtype=float).reshape((3,) + (1,) * grid.dim)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (3,)).reshape((3,) + (1,) * grid.dim)
    mask = np.zeros((3,) + (1,) * grid.dim)
    mask[list(grid.axes)] = 1.0
    expo = -np.sum(mask * (x - c) ** 2 / (4 * sig**2), axis=0) + 1j * np.sum(mask * kv * x, axis=0)
    psi = np.exp(expo)
    return psi / np.sqrt(g.integrate(grid, np.abs(psi) ** 2))


def boundary_amplitude(grid: g.GridSpec, psi: np.ndarray) -> float:
    """Largest |psi| on the outermost grid layer relative to max |psi|."""
    a = np.abs(psi)
    if a.ndim > grid.dim:
        a = np.sqrt(np.sum(a**2, axis=tuple(range(a.ndim - grid.dim))))
    peak = a.max()
    edge = 0.0
    for i in range(grid.dim):
        edge = max(edge, np.take(a, 0, axis=i).max(), np.take(a, -1, axis=i).max())
    return float(edge / peak) if peak > 0 else 0.0


# --- potentials on the grid -------------------------------------------------

def grid_potentials(grid: g.GridSpec, cfg: FieldConfig, t: float):
    """(A (3, *shape), e*phi) sampled on the grid."""
    x = grid.positions
    return cfg.vector_potential(x, t), cfg.constants.e * cfg.scalar_potential(x, t)


def _diagonal_potential(grid, cfg, A, ephi, include_all_A):
    """Pointwise part of H: e phi plus e^2 A_j^2/2m for axes handled as potential."""
    c = cfg.constants
    V = np.array(ephi, dtype=float)
    for ax in range(3):
        if include_all_A or grid.grid_axis(ax) is None:
            V = V + c.e**2 * A[ax] ** 2 / (2 * c.m)
    return V


class OrbitalPropagator:
    """Advance psi (leading batch axes allowed) under H_S by one step ``dt``."""

    def __init__(self, grid: g.GridSpec, cfg: FieldConfig, dt: float, method: str = "auto"):
        if not dt > 0:
            raise ValueError(f"time step must be positive, got {dt}")
        self.grid, self.cfg, self.dt = grid, cfg, float(dt)
        c = cfg.constants
        coupled = c.e != 0 and cfg.has_vector_potential
        if method == "auto":
            method = "cn" if coupled and not cfg.separable else "split"
        if method == "split" and coupled and not cfg.separable:
            raise ValueError("split propagation needs A_j independent of x_j; use method='cn'")
        if method not in ("split", "cn"):
            raise ValueError(f"unknown propagator {method!r}")
        self.method = method
        self.coupled = coupled
        self._cache_t = None
        self._prepare(0.0)
        span = float(self._V.max() - self._V.min())
        if span > 0:
            dt_max = PHASE_LIMIT * c.hbar / span
            if self.dt > dt_max:
                raise ValueError(
                    f"dt={self.dt:g} exceeds the stability bound dt_max={dt_max:.6g} "
                    f"(potential phase per step must stay below pi)"
                )

    @property
    def _axes(self):
        return tuple(range(-self.grid.dim, 0))

    def _prepare(self, t):
        if self._cache_t is not None and (self.cfg.static or self._cache_t == t):
            return
        grid, c = self.grid, self.cfg.constants
        A, ephi = grid_potentials(grid, self.cfg, t)
        self._A = A
        # CN keeps all of A in the differential operator; split moves off-grid components into V
        self._V = _diagonal_potential(grid, self.cfg, A if self.coupled else 0 * A, ephi,
                                      include_all_A=False)
        if self.method == "cn":
            self._cache_t = t
            return
        tau = self.dt / c.hbar
        self._half_V = np.exp(-0.5j * tau * self._V)
        if not self.coupled or all(not np.any(A[ax]) for ax in grid.axes):
            self._kinetic = np.exp(-1j * tau * c.hbar**2 * grid.k_squared / (2 * c.m))
            self._directional = None
        else:
            phases = []
            d = grid.dim
            for i, ax in enumerate(grid.axes):
                frac = 1.0 if i == d - 1 else 0.5
                p = c.hbar * grid.wavenumbers(i) - c.e * A[ax]
                phases.append(np.exp(-1j * frac * tau * p**2 / (2 * c.m)))
            self._directional = phases
        self._cache_t = t

    def step(self, psi: np.ndarray, t: float = 0.0) -> np.ndarray:
        tm = t + 0.5 * self.dt
        self._prepare(tm)
        if self.method == "cn":
            return self._cn_step(psi, tm)
        w = g.fft_workers()
        psi = self._half_V * psi
        if self._directional is None:
            psi = sfft.ifftn(self._kinetic * sfft.fftn(psi, axes=self._axes, workers=w), axes=self._axes, workers=w)
        else:
            d = self.grid.dim
            order = list(range(d)) + list(range(d - 2, -1, -1))
            for i in order:
                ax = psi.ndim - d + i
                psi = sfft.ifft(self._directional[i] * sfft.fft(psi, axis=ax, workers=w), axis=ax, workers=w)
        return self._half_V * psi

    # -- Crank-Nicolson --------------------------------------------------------

    def apply_hamiltonian(self, psi: np.ndarray, t: float) -> np.ndarray:
        """H_S psi with spectral minimal coupling (scalar field, grid shape)."""
        self._prepare(t)
        return _apply_h(self.grid, self.cfg.constants, self._A, self._V, psi, self.coupled)

    def _cn_step(self, psi, tm):
        grid, c = self.grid, self.cfg.constants
        shape = grid.shape
        tau = 0.5 * self.dt / c.hbar
        n = grid.size
        precond = 1.0 / (1.0 + 1j * tau * c.hbar**2 * grid.k_squared / (2 * c.m))
        w = g.fft_workers()

        def lhs(v):
            v = v.reshape(shape)
            return (v + 1j * tau * self.apply_hamiltonian(v, tm)).ravel()

        def prec(v):
            v = v.reshape(shape)
            return sfft.ifftn(precond * sfft.fftn(v, workers=w), workers=w).ravel()

        A_op = LinearOperator((n, n), matvec=lhs, dtype=complex)
        M_op = LinearOperator((n, n), matvec=prec, dtype=complex)
        flat = psi.reshape((-1,) + shape)
        out = np.empty_like(flat)
        for b in range(flat.shape[0]):
            p = flat[b]
            rhs = (p - 1j * tau * self.apply_hamiltonian(p, tm)).ravel()
            x, info = gmres(A_op, rhs, x0=p.ravel(), rtol=CN_TOL, atol=0.0, restart=60, maxiter=CN_CYCLES, M=M_op)
            res = np.linalg.norm(lhs(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if info != 0 and res > 1e-10:
                raise RuntimeError(f"Crank-Nicolson solve did not converge (relative residual {res:.3g}); reduce dt")
            out[b] = x.reshape(shape)
        return out.reshape(psi.shape)


def _apply_h(grid, c, A, V, psi, coupled):
    out = V * psi
    for i, ax in enumerate(grid.axes):
        if coupled:
            wv = -1j * c.hbar * g.partial(grid, psi, i) - c.e * A[ax] * psi
            out = out + (-1j * c.hbar * g.partial(grid, wv, i) - c.e * A[ax] * wv) / (2 * c.m)
        else:
            out = out - c.hbar**2 * g.second_partial(grid, psi, i) / (2 * c.m)
    return out


def apply_hamiltonian(grid: g.GridSpec, cfg: FieldConfig, psi: np.ndarray, t: float = 0.0) -> np.ndarray:
    """H_S psi = (p - eA)^2/2m psi + e phi psi, spectral; leading batch axes allowed."""
    c = cfg.constants
    A, ephi = grid_potentials(grid, cfg, t)
    coupled = c.e != 0 and cfg.has_vector_potential
    V = _diagonal_potential(grid, cfg, A if coupled else 0 * A, ephi, include_all_A=False)
    return _apply_h(grid, c, A, V, np.asarray(psi, dtype=complex), coupled)


@lru_cache(maxsize=16)
def _cached_propagator(grid, cfg, dt, method):
    return OrbitalPropagator(grid, cfg, dt, method)


def propagator(grid: g.GridSpec, cfg: FieldConfig, dt: float, method: str = "auto") -> OrbitalPropagator:
    try:
        return _cached_propagator(grid, cfg, float(dt), method)
    except TypeError:  # unhashable configuration
        return OrbitalPropagator(grid, cfg, dt, method)


def schrodinger_step(state: SchrodingerState, cfg: FieldConfig, dt: float, method: str = "auto") -> SchrodingerState:
    """Advance ``state`` by ``dt`` under H_S = (p - eA)^2/2m + e phi."""
    prop = propagator(state.grid, cfg, dt, method)
    return SchrodingerState(state.grid, prop.step(state.psi, state.t), state.t + dt)


def evolve(state: SchrodingerState, cfg: FieldConfig, dt: float, steps: int, method: str = "auto"):
    """Yield the states after each of ``steps`` propagation steps."""
    prop = propagator(state.grid, cfg, dt, method)
    psi, t = state.psi, state.t
    for _ in range(steps):
        psi = prop.step(psi, t)
        t += dt
        yield SchrodingerState(state.grid, psi, t)


# --- Madelung decomposition -------------------------------------------------

@dataclass
class MadelungFields:
    a: np.ndarray
    phase: np.ndarray
    rho_hat: np.ndarray
    v: np.ndarray
    mask: np.ndarray = field(repr=False)


def density_mask(rho: np.ndarray, floor: float = DENSITY_FLOOR) -> np.ndarray:
    """True where the density exceeds ``floor * max(rho)``."""
    peak = float(np.max(rho))
    return rho > floor * peak if peak > 0 else np.zeros(rho.shape, dtype=bool)


def _unwrap_line(vals, valid, s):
    out = np.zeros_like(vals)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return out
    anchor = idx[np.argmin(np.abs(idx - s))]
    fwd = idx[idx >= anchor]
    bwd = idx[idx <= anchor][::-1]
    out[fwd] = np.unwrap(vals[fwd])
    out[bwd] = np.unwrap(vals[bwd])
    # keep the anchor's value (already placed in the previous sweep)
    return out


def unwrap_phase(phase: np.ndarray, mask: np.ndarray, start) -> np.ndarray:
    """Unwrap along grid lines, sweeping outward from ``start`` axis by axis.

    Axis 0 is unwrapped along the line through ``start``; each later axis is
    unwrapped along every line anchored on the hyperplane already done.
    Masked points are skipped and returned as 0.
    """
    out = np.where(mask, phase, 0.0)
    d = phase.ndim
    for ax in range(d):
        sel = [slice(None)] * d
        for later in range(ax + 1, d):
            sel[later] = start[later]
        sub = out[tuple(sel)]
        subm = mask[tuple(sel)]
        moved = np.moveaxis(sub, ax, -1)
        movedm = np.moveaxis(subm, ax, -1)
        lines = moved.reshape(-1, moved.shape[-1]).copy()
        linesm = movedm.reshape(-1, movedm.shape[-1])
        for r in range(lines.shape[0]):
            lines[r] = _unwrap_line(lines[r], linesm[r], start[ax])
        out[tuple(sel)] = np.moveaxis(lines.reshape(moved.shape), -1, ax)
    return np.where(mask, out, 0.0)


def velocity_field(grid: g.GridSpec, components: np.ndarray, cfg: FieldConfig, t: float = 0.0,
                   floor: float = DENSITY_FLOOR):
    """Hydrodynamic velocity j/rho for a stack of components (1 or 2), masked.

    Uses hbar Im(psi^dagger grad psi)/(m rho) - kA, identical to (hbar/m) grad(phase) - (e/m)A.
    """
    c = cfg.constants
    rho = np.sum(np.abs(components) ** 2, axis=0)
    mask = density_mask(rho, floor)
    cur = current_density(grid, components, cfg, t)
    v = np.where(mask, cur / np.where(mask, rho, 1.0), 0.0)
    return v, mask


def current_density(grid: g.GridSpec, components: np.ndarray, cfg: FieldConfig, t: float = 0.0) -> np.ndarray:
    """Probability current (hbar/m) Im(psi^dagger grad psi) - k A rho."""
    c = cfg.constants
    rho = np.sum(np.abs(components) ** 2, axis=0)
    j = np.zeros((3,) + grid.shape)
    for i, ax in enumerate(grid.axes):
        d = g.partial(grid, components, i)
        j[ax] = c.hbar / c.m * np.sum(np.imag(np.conj(components) * d), axis=0)
    if c.e != 0 and cfg.has_vector_potential:
        j -= c.k * cfg.vector_potential(grid.positions, t) * rho
    return j


def madelung_decompose(state: SchrodingerState, cfg: FieldConfig | None = None) -> MadelungFields:
    """psi = a exp(i phase): modulus, unwrapped phase, mass density and velocity."""
    cfg = cfg or zero_field()
    grid = state.grid
    a = np.abs(state.psi)
    rho = a**2
    mask = density_mask(rho)
    start = np.unravel_index(int(np.argmax(rho)), grid.shape)
    phase = unwrap_phase(np.angle(state.psi), mask, start)
    v, _ = velocity_field(grid, state.components, cfg, state.t)
    return MadelungFields(a=a, phase=phase, rho_hat=cfg.constants.m * rho, v=v, mask=mask)


def continuity_residual_from(prev, cur, nxt, cfg: FieldConfig) -> float:
    """L2 norm of d(rho_hat)/dt + div(rho_hat v) at ``cur`` over unmasked points.

    The time derivative is the central difference of ``prev`` and ``nxt``.
    Works for scalar and spinor states (anything with ``components``).
    """
    grid, m = cur.grid, cfg.constants.m
    dt2 = nxt.t - prev.t
    rho = lambda s: np.sum(np.abs(s.components) ** 2, axis=0)  # noqa: E731
    drho = m * (rho(nxt) - rho(prev)) / dt2
    div = m * g.divergence(grid, current_density(grid, cur.components, cfg, cur.t))
    mask = density_mask(rho(cur))
    r = np.where(mask, drho + div, 0.0)
    return float(np.sqrt(g.integrate(grid, r**2)))


def continuity_residual(state: SchrodingerState, cfg: FieldConfig, dt: float, method: str = "auto") -> float:
    """Propagate two steps and evaluate the continuity residual at the middle one."""
    s1 = schrodinger_step(state, cfg, dt, method)
    s2 = schrodinger_step(s1, cfg, dt, method)
    return continuity_residual_from(state, s1, s2, cfg)


# --- quantum potential ------------------------------------------------------

def quantum_potential(grid: g.GridSpec, rho_hat: np.ndarray, constants: Constants | None = None):
    """Q = -(hbar^2/2m) lap(sqrt rho_hat)/sqrt(rho_hat); returns (Q, mask).

    Masked points (rho_hat < 1e-12 max) hold 0.
    """
    c = constants or Constants()
    rho_hat = np.asarray(rho_hat, dtype=float)
    if np.any(rho_hat < 0):
        raise ValueError("mass density must be non-negative")
    mask = density_mask(rho_hat)
    R = np.sqrt(rho_hat)
    lapR = g.laplacian(grid, R)
    Q = np.where(mask, -(c.hbar**2 / (2 * c.m)) * lapR / np.where(mask, R, 1.0), 0.0)
    return Q, mask


def quantum_force(grid: g.GridSpec, rho_hat: np.ndarray, constants: Constants | None = None):
    """F_Q = -grad Q, returns (F (3, *shape), mask).

    Differentiates Q through the amplitude R = sqrt(rho_hat):
    grad Q = -(hbar^2/2m) [grad(lap R)/R - lap R grad R / R^2], so only the
    smooth periodic R is differentiated spectrally.
    """
    c = constants or Constants()
    rho_hat = np.asarray(rho_hat, dtype=float)
    mask = density_mask(rho_hat)
    R = np.sqrt(rho_hat)
    Rs = np.where(mask, R, 1.0)
    lapR = g.laplacian(grid, R)
    gR = g.gradient(grid, R)
    glap = g.gradient(grid, lapR)
    gradQ = -(c.hbar**2 / (2 * c.m)) * (glap / Rs - lapR * gR / Rs**2)
    return np.where(mask, -gradQ, 0.0), mask


# --- classicality -----------------------------------------------------------

@dataclass
class ClassicalityLengths:
    L_R: float
    L_Rc: float
    F_L: float
    classical: bool
    reason: str
    estimator: str = "density-weighted median of a/|grad a|"

    @property
    def ratio(self) -> float:
        return self.L_R / self.L_Rc if np.isfinite(self.L_Rc) else float("inf")


def amplitude_length(grid: g.GridSpec, rho: np.ndarray) -> float:
    """Typical amplitude-gradient length: density-weighted median of a/|grad a|."""
    mask = density_mask(rho)
    a = np.sqrt(rho)
    ga = np.sqrt(np.sum(g.gradient(grid, a) ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(ga > 0, a / ga, np.inf)
    return g.weighted_median(ratio[mask], rho[mask])


def lorentz_force_magnitude(cfg: FieldConfig, x, v, t: float = 0.0) -> float:
    x = np.asarray(x, dtype=float).reshape(3, 1)
    B = cfg.magnetic_field(x, t)[:, 0]
    E = cfg.electric_field(x, t)[:, 0]
    return float(abs(cfg.constants.e) * np.linalg.norm(np.cross(np.asarray(v, float), B) + E))


def critical_length(F_L: float, constants: Constants) -> float:
    """(hbar^2 / 2 m F_L)^(1/3); infinite when F_L = 0."""
    if F_L <= 0:
        return float("inf")
    return (constants.hbar**2 / (2 * constants.m * F_L)) ** (1.0 / 3.0)


def classicality_lengths(state, cfg: FieldConfig, threshold: float = 10.0) -> ClassicalityLengths:
    """L_R, L_Rc and whether L_R >> L_Rc (ratio above ``threshold``).

    F_L is the Lorentz force at the density centroid moving with <v>.
    """
    from .ehrenfest import expectation_position, expectation_velocity

    grid = state.grid
    rho = np.sum(np.abs(state.components) ** 2, axis=0)
    L_R = amplitude_length(grid, rho)
    xc = expectation_position(state)
    vc = expectation_velocity(state, cfg)
    F_L = lorentz_force_magnitude(cfg, xc, vc, state.t)
    L_Rc = critical_length(F_L, cfg.constants)
    if not np.isfinite(L_Rc):
        return ClassicalityLengths(L_R, L_Rc, F_L, False, "F_L = 0: no classical force to compare against")
    ok = L_R / L_Rc > threshold
    reason = f"L_R/L_Rc = {L_R / L_Rc:.4g} {'>' if ok else '<='} {threshold:g}"
    return ClassicalityLengths(L_R, L_Rc, F_L, bool(ok), reason)


# --- Bohm equation of motion ------------------------------------------------

def velocity_jacobian(grid: g.GridSpec, components: np.ndarray, cfg: FieldConfig, t: float = 0.0):
    """(v, dv_i/dx_j, mask) from the analytic chain rule on psi.

    v_i = (hbar/m) Im(psi^dagger d_i psi)/rho - k A_i, so d_j v_i only needs
    spectral derivatives of psi and a finite-difference Jacobian of A.
    """
    c = cfg.constants
    rho = np.sum(np.abs(components) ** 2, axis=0)
    mask = density_mask(rho)
    rs = np.where(mask, rho, 1.0)
    d1 = {ax: g.partial(grid, components, i) for i, ax in enumerate(grid.axes)}
    J_im = np.zeros((3,) + grid.shape)
    for ax, d in d1.items():
        J_im[ax] = np.sum(np.imag(np.conj(components) * d), axis=0)
    grho = np.zeros((3,) + grid.shape)
    for ax, d in d1.items():
        grho[ax] = 2 * np.sum(np.real(np.conj(components) * d), axis=0)
    v = c.hbar / c.m * J_im / rs
    dv = np.zeros((3, 3) + grid.shape)
    for i, ax_i in enumerate(grid.axes):
        for j, ax_j in enumerate(grid.axes):
            dij = g.partial(grid, d1[ax_i], j)
            dJ = np.sum(np.imag(np.conj(d1[ax_j]) * d1[ax_i] + np.conj(components) * dij), axis=0)
            dv[ax_i, ax_j] = c.hbar / c.m * (dJ / rs - J_im[ax_i] * grho[ax_j] / rs**2)
    if c.e != 0 and cfg.has_vector_potential:
        x = grid.positions
        v = v - c.k * cfg.vector_potential(x, t)
        dv = dv - c.k * vector_potential_jacobian(cfg, x, t, h=1e-5 * max(grid.length))
    v = np.where(mask, v, 0.0)
    dv = np.where(mask, dv, 0.0)
    return v, dv, mask


def vector_potential_jacobian(cfg: FieldConfig, x, t, h):
    J = np.zeros((3, 3) + x.shape[1:])
    for j in range(3):
        s = np.zeros((3,) + (1,) * (x.ndim - 1))
        s[j] = h
        J[:, j] = (cfg.vector_potential(x + s, t) - cfg.vector_potential(x - s, t)) / (2 * h)
    return J


def material_acceleration(prev, cur, nxt, cfg: FieldConfig):
    """Dv/Dt = dv/dt + (v.grad)v at ``cur`` plus v and the mask."""
    grid = cur.grid
    vp, mp = velocity_field(grid, prev.components, cfg, prev.t)
    vn, mn = velocity_field(grid, nxt.components, cfg, nxt.t)
    v, dv, mask = velocity_jacobian(grid, cur.components, cfg, cur.t)
    # a point must be defined at all three times for the time difference to mean anything
    mask = mask & mp & mn
    dvdt = (vn - vp) / (nxt.t - prev.t)
    adv = np.einsum("j...,ij...->i...", v, dv)
    return np.where(mask, dvdt + adv, 0.0), v, mask


def weighted_l2(grid: g.GridSpec, r: np.ndarray, rho: np.ndarray) -> float:
    """sqrt(int rho |r|^2 dV) for a vector residual r."""
    return float(np.sqrt(g.integrate(grid, rho * np.sum(r**2, axis=0))))


def in_plane(grid: g.GridSpec, r: np.ndarray) -> np.ndarray:
    """Zero the components along suppressed axes.

    A reduced-dimension run cannot move along a suppressed axis, so forces
    there have no dynamical counterpart and are left out of residuals.
    """
    keep = np.zeros((3,) + (1,) * (r.ndim - 1))
    keep[list(grid.axes)] = 1.0
    return r * keep


def bohm_equation_residual(prev, cur, nxt, cfg: FieldConfig) -> float:
    """Density-weighted L2 residual of Dv/Dt = -grad(Q/m) + k(E + v x B)."""
    grid, c = cur.grid, cfg.constants
    acc, v, mask = material_acceleration(prev, cur, nxt, cfg)
    rho = np.sum(np.abs(cur.components) ** 2, axis=0)
    FQ, _ = quantum_force(grid, c.m * rho, c)
    x = grid.positions
    B, E = cfg.magnetic_field(x, cur.t), cfg.electric_field(x, cur.t)
    rhs = FQ / c.m + c.k * (E + np.cross(v, B, axis=0))
    return weighted_l2(grid, in_plane(grid, np.where(mask, acc - rhs, 0.0)), rho)
