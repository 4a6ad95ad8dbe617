"""Two-component spinor propagation and spin hydrodynamics.

Every spin quantity is built from the bilinears rho = psi^dagger psi and
S = psi^dagger sigma psi and their spectral derivatives, so nothing is
differentiated across a phase branch cut or an angle-chart pole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as g
from .em_fields import Constants, FieldConfig, zero_field
from .schrodinger import (
    DENSITY_FLOOR,
    apply_hamiltonian,
    current_density,
    density_mask,
    propagator,
    quantum_force,
    unwrap_phase,
    velocity_field,
    velocity_jacobian,
    in_plane,
    amplitude_length,
    critical_length,
    lorentz_force_magnitude,
    weighted_l2,
)

AMPLITUDE_FLOOR = 1e-8
CORE_FRACTION = 1e-2  # spin-length and force maxima use rho >= this * max rho

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


@dataclass
class PauliState:
    grid: g.GridSpec
    spinor: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.spinor = np.asarray(self.spinor, dtype=complex)
        if self.spinor.shape != (2,) + self.grid.shape:
            raise ValueError(f"spinor shape {self.spinor.shape} does not match (2, *{self.grid.shape})")

    @property
    def components(self) -> np.ndarray:
        return self.spinor

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.spinor) ** 2, axis=0)

    def norm(self) -> float:
        return float(g.integrate(self.grid, self.density()))


def spinor_from_direction(direction) -> np.ndarray:
    """Unit 2-spinor whose spin expectation points along ``direction``."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if not n > 0:
        raise ValueError("spin direction must be non-zero")
    x, y, z = d / n
    theta = np.arctan2(np.hypot(x, y), z)  # arccos(z) loses digits near the poles
    azim = np.arctan2(y, x)
    return np.array([np.cos(theta / 2), np.exp(1j * azim) * np.sin(theta / 2)])


def packet_spinor(psi: np.ndarray, direction) -> np.ndarray:
    """Orbital wave function times a uniform spin state along ``direction``."""
    chi = spinor_from_direction(direction)
    return chi.reshape((2,) + (1,) * psi.ndim) * psi[np.newaxis]


# --- propagation --------------------------------------------------------------

def apply_sigma(vec: np.ndarray, spinor: np.ndarray) -> np.ndarray:
    """(vec . sigma) spinor, pointwise; vec has shape (3, ...)."""
    u, d = spinor[0], spinor[1]
    up = vec[2] * u + (vec[0] - 1j * vec[1]) * d
    dn = (vec[0] + 1j * vec[1]) * u - vec[2] * d
    return np.stack([up, dn])


def spin_rotation(spinor: np.ndarray, B: np.ndarray, mu: float, hbar: float, tau: float) -> np.ndarray:
    """exp(-i mu tau B.sigma / hbar) spinor in closed form.

    With a = mu tau B / hbar: cos|a| I - i sin|a| (a/|a|).sigma, written with
    sin|a|/|a| so a zero field is the identity.
    """
    a = (mu * tau / hbar) * B
    th = np.sqrt(np.sum(a**2, axis=0))
    return np.cos(th) * spinor - 1j * np.sinc(th / np.pi) * apply_sigma(a, spinor)


def pauli_step(state: PauliState, cfg: FieldConfig, dt: float, method: str = "auto") -> PauliState:
    """Half spin rotation, full orbital step on both components, half spin rotation."""
    prop = propagator(state.grid, cfg, dt, method)
    c = cfg.constants
    tm = state.t + 0.5 * dt
    B = cfg.magnetic_field(state.grid.positions, tm)
    psi = spin_rotation(state.spinor, B, c.mu, c.hbar, 0.5 * dt)
    psi = prop.step(psi, state.t)
    psi = spin_rotation(psi, B, c.mu, c.hbar, 0.5 * dt)
    return PauliState(state.grid, psi, state.t + dt)


def evolve(state: PauliState, cfg: FieldConfig, dt: float, steps: int, method: str = "auto"):
    """Yield the states after each of ``steps`` Pauli steps (static B cached)."""
    prop = propagator(state.grid, cfg, dt, method)
    c = cfg.constants
    x = state.grid.positions
    B = cfg.magnetic_field(x, state.t + 0.5 * dt) if cfg.static else None
    psi, t = state.spinor, state.t
    for _ in range(steps):
        Bt = B if B is not None else cfg.magnetic_field(x, t + 0.5 * dt)
        psi = spin_rotation(psi, Bt, c.mu, c.hbar, 0.5 * dt)
        psi = prop.step(psi, t)
        psi = spin_rotation(psi, Bt, c.mu, c.hbar, 0.5 * dt)
        t += dt
        yield PauliState(state.grid, psi, t)


# --- currents and velocities --------------------------------------------------

def probability_current(state: PauliState, cfg: FieldConfig | None = None):
    """(rho_p, j) with j = (hbar/m) Im(psi^dagger grad psi) - k A rho_p."""
    cfg = cfg or zero_field()
    return state.density(), current_density(state.grid, state.spinor, cfg, state.t)


def velocity_field_pauli(state: PauliState, cfg: FieldConfig | None = None):
    """v = j / rho_p and its mask."""
    cfg = cfg or zero_field()
    return velocity_field(state.grid, state.spinor, cfg, state.t)


def _phase_gradient(grid, psi, valid):
    """grad arg(psi) = Im(conj(psi) grad psi)/|psi|^2 where ``valid``."""
    out = np.zeros((3,) + grid.shape)
    a2 = np.where(valid, np.abs(psi) ** 2, 1.0)
    for i, ax in enumerate(grid.axes):
        out[ax] = np.where(valid, np.imag(np.conj(psi) * g.partial(grid, psi, i)) / a2, 0.0)
    return out


def velocity_from_angles(state: PauliState, cfg: FieldConfig | None = None):
    """v = (hbar/2m)(grad chi + cos(theta) grad phi) - kA, angles from the components.

    arg(up) = (chi + phi)/2 and arg(down) = pi/2 + (chi - phi)/2, so the angle
    gradients are sums and differences of the component phase gradients. At a
    pole only the surviving component carries the phase (phi is frozen to 0).
    """
    cfg = cfg or zero_field()
    c = cfg.constants
    grid = state.grid
    hf = holland_decompose(state)
    u, d = state.spinor
    eps = AMPLITUDE_FLOOR * np.sqrt(np.max(state.density()))
    vu, vd = np.abs(u) > eps, np.abs(d) > eps
    gu, gd = _phase_gradient(grid, u, vu), _phase_gradient(grid, d, vd)
    both = vu & vd
    grad_chi = np.where(both, gu + gd, np.where(vu, 2 * gu, 2 * gd))
    grad_phi = np.where(both, gu - gd, 0.0)
    v = c.hbar / (2 * c.m) * (grad_chi + np.cos(hf.theta) * grad_phi)
    if c.e != 0 and cfg.has_vector_potential:
        v = v - c.k * cfg.vector_potential(grid.positions, state.t)
    return np.where(hf.mask, v, 0.0), hf.mask


# --- Holland representation ---------------------------------------------------

@dataclass
class HollandFields:
    R: np.ndarray
    chi: np.ndarray
    theta: np.ndarray
    phi_angle: np.ndarray
    s_hat: np.ndarray
    mask: np.ndarray
    phi_mask: np.ndarray


def holland_decompose(state: PauliState) -> HollandFields:
    """R, chi, theta, phi with up = R e^{i chi/2} cos(theta/2) e^{i phi/2},
    down = i R e^{i chi/2} sin(theta/2) e^{-i phi/2}.

    phi is masked where either component is below 1e-8 max|psi|; there chi
    carries the whole phase. chi and phi are unwrapped from the density peak.
    """
    grid = state.grid
    u, d = state.spinor
    rho = state.density()
    mask = density_mask(rho)
    R = np.sqrt(rho)
    theta = 2 * np.arctan2(np.abs(d), np.abs(u))
    eps = AMPLITUDE_FLOOR * np.sqrt(np.max(rho))
    phi_mask = mask & (np.abs(u) > eps) & (np.abs(d) > eps)
    au, ad = np.angle(u), np.angle(d)
    up_only = np.abs(d) <= eps
    chi_w = np.where(phi_mask, au + ad - np.pi / 2, np.where(up_only, 2 * au, 2 * ad - np.pi))
    phi_w = np.where(phi_mask, au - ad + np.pi / 2, 0.0)
    start = np.unravel_index(int(np.argmax(rho)), grid.shape)
    chi = unwrap_phase(chi_w, mask, start)
    phi = unwrap_phase(phi_w, phi_mask, start)
    # shifting chi or phi alone by 2 pi flips the sign of the spinor: the two
    # branch counts must share parity (pole points need an even chi count)
    n = np.round((chi - chi_w) / (2 * np.pi)).astype(int)
    m = np.round((phi - phi_w) / (2 * np.pi)).astype(int)
    odd = ((n + m) % 2).astype(bool)
    phi = np.where(phi_mask & odd, phi + 2 * np.pi, phi)
    chi = np.where(~phi_mask & odd, chi + 2 * np.pi, chi)
    s_hat, _ = spin_density(state)
    return HollandFields(R, np.where(mask, chi, 0.0), theta, np.where(phi_mask, phi, 0.0), s_hat, mask, phi_mask)


def holland_reconstruct(h: HollandFields) -> np.ndarray:
    ph = np.where(h.phi_mask, h.phi_angle, 0.0)
    up = h.R * np.exp(0.5j * h.chi) * np.cos(h.theta / 2) * np.exp(0.5j * ph)
    dn = 1j * h.R * np.exp(0.5j * h.chi) * np.sin(h.theta / 2) * np.exp(-0.5j * ph)
    return np.stack([up, dn])


def spin_vector_density(spinor: np.ndarray) -> np.ndarray:
    """S = psi^dagger sigma psi, shape (3, ...)."""
    u, d = spinor[0], spinor[1]
    ud = np.conj(u) * d
    return np.stack([2 * ud.real, 2 * ud.imag, np.abs(u) ** 2 - np.abs(d) ** 2])


def spin_density(state: PauliState):
    """Unit spin field s_hat = psi^dagger sigma psi / rho_p and its mask."""
    rho = state.density()
    mask = density_mask(rho)
    S = spin_vector_density(state.spinor)
    return np.where(mask, S / np.where(mask, rho, 1.0), 0.0), mask


def spin_amplitudes(state: PauliState):
    """(a_up, a_down) = (R|cos(theta/2)|, R|sin(theta/2)|) = (|up|, |down|)."""
    return np.abs(state.spinor[0]), np.abs(state.spinor[1])


# --- spin gradients -----------------------------------------------------------

@dataclass
class SpinGradients:
    rho: np.ndarray
    s: np.ndarray          # (3, ...)
    ds: np.ndarray         # ds[j, k] = d_k s_j
    dlnrho: np.ndarray     # grad(rho) / rho, (3, ...)
    mask: np.ndarray
    d2s: np.ndarray | None = None   # d2s[j, i, k] = d_i d_k s_j


def _bilinears(a, b):
    """(Re a^dagger sigma b, Re a^dagger b) for spinors a, b."""
    ab01 = np.conj(a[0]) * b[1]
    ab10 = np.conj(a[1]) * b[0]
    sx = (ab01 + ab10).real
    sy = (-1j * ab01 + 1j * ab10).real
    sz = (np.conj(a[0]) * b[0] - np.conj(a[1]) * b[1]).real
    return np.stack([sx, sy, sz]), np.sum(np.real(np.conj(a) * b), axis=0)


def spin_gradients(grid: g.GridSpec, spinor: np.ndarray, second: bool = False) -> SpinGradients:
    """s_hat and its first (optionally second) derivatives from psi by the chain rule.

    Derivatives of psi are divided by R = |psi| before forming bilinears, so
    round-off is amplified by 1/R rather than 1/rho near the density floor.
    """
    rho = np.sum(np.abs(spinor) ** 2, axis=0)
    mask = density_mask(rho)
    R = np.sqrt(np.where(mask, rho, 1.0))
    n = spinor / R
    D = {ax: g.partial(grid, spinor, i) / R for i, ax in enumerate(grid.axes)}
    s, _ = _bilinears(n, n)
    ds = np.zeros((3, 3) + grid.shape)
    dl = np.zeros((3,) + grid.shape)
    for k, Dk in D.items():
        dS, dr = _bilinears(n, Dk)
        dl[k] = 2 * dr
        ds[:, k] = 2 * dS - s * dl[k]
    d2s = None
    if second:
        d2s = np.zeros((3, 3, 3) + grid.shape)
        for i, ax_i in enumerate(grid.axes):
            for k, ax_k in enumerate(grid.axes):
                if k < i:
                    d2s[:, ax_i, ax_k] = d2s[:, ax_k, ax_i]
                    continue
                Dik = g.partial(grid, D[ax_i] * R, k) / R
                S1, r1 = _bilinears(D[ax_i], D[ax_k])
                S2, r2 = _bilinears(n, Dik)
                d2S, d2r = 2 * (S1 + S2), 2 * (r1 + r2)
                d2s[:, ax_i, ax_k] = d2S - ds[:, ax_i] * dl[ax_k] - ds[:, ax_k] * dl[ax_i] - s * d2r
    m = lambda f: np.where(mask, f, 0.0)  # noqa: E731
    return SpinGradients(rho, m(s), m(ds), m(dl), mask, None if d2s is None else m(d2s))


def spin_quantum_force(state: PauliState, constants: Constants | None = None):
    """F_QS,i = -(hbar^2/4m)(1/rho) d_k(rho d_i s_j d_k s_j); returns (F, mask).

    Expanded by the product rule so only derivatives of psi are taken.
    """
    c = constants or Constants()
    sg = spin_gradients(state.grid, state.spinor, second=True)
    ds, d2s = sg.ds, sg.d2s
    G = np.einsum("ji...,jk...->ik...", ds, ds)         # d_i s . d_k s
    t1 = np.einsum("k...,ik...->i...", sg.dlnrho, G)
    t2 = np.einsum("jki...,jk...->i...", d2s, ds)       # d_k d_i s . d_k s
    lap_s = np.einsum("jkk...->j...", d2s)
    t3 = np.einsum("ji...,j...->i...", ds, lap_s)
    F = -(c.hbar**2 / (4 * c.m)) * (t1 + t2 + t3)
    return np.where(sg.mask, F, 0.0), sg.mask


def grad_B_force(state: PauliState, cfg: FieldConfig):
    """F_i = -mu (d_i B_j) s_j; returns (F, mask)."""
    s, mask = spin_density(state)
    J = cfg.field_gradient(state.grid.positions, state.t)  # J[j, i] = d_i B_j
    F = -cfg.constants.mu * np.einsum("ji...,j...->i...", J, s)
    return np.where(mask, F, 0.0), mask


@dataclass
class SpinLengths:
    L_s: float
    L_R: float
    L_sR: float
    classical: bool
    reason: str
    estimator: str = "1 / max |grad s| over rho >= 1e-2 max rho"


def harmonic_length(L_s: float, L_R: float) -> float:
    """L_sR = (1/L_s + 1/L_R)^-1, with infinities allowed."""
    inv = (0.0 if np.isinf(L_s) else 1.0 / L_s) + (0.0 if np.isinf(L_R) else 1.0 / L_R)
    return float("inf") if inv == 0 else 1.0 / inv


def spin_length(grid: g.GridSpec, spinor: np.ndarray, core: float = CORE_FRACTION) -> float:
    """L_s = 1 / max |grad s| over the core (rho >= core * max rho); inf for a uniform texture.

    |grad s| is the Frobenius norm of the spin Jacobian, so a helix of
    wavenumber q gives exactly 1/q. The maximum picks out the finest texture
    scale, which a localized wall or skyrmion would lose under averaging.
    """
    sg = spin_gradients(grid, spinor)
    norms = np.sqrt(np.sum(sg.ds**2, axis=(0, 1)))
    sel = sg.mask & (sg.rho >= core * sg.rho.max())
    worst = float(norms[sel].max()) if np.any(sel) else 0.0
    if worst <= 1e-10 / min(grid.spacing):
        return float("inf")
    return 1.0 / worst


def max_core_force(state: PauliState, constants: Constants | None = None, core: float = CORE_FRACTION) -> float:
    """max |F_QS| over points with rho >= core * max rho."""
    F, mask = spin_quantum_force(state, constants)
    rho = state.density()
    sel = mask & (rho >= core * rho.max())
    return float(np.sqrt(np.sum(F**2, axis=0))[sel].max())


def spin_lengths(state: PauliState, cfg: FieldConfig | None = None, threshold: float = 10.0) -> SpinLengths:
    """L_s, L_R, L_sR and the two-branch classicality flag.

    With F the Lorentz force at the density centroid the flag requires
    L_R / (hbar^2/2mF)^(1/3) > threshold and L_s above ``threshold`` times
    (hbar^2/4mF)^(1/3) when L_s <= L_R, else (hbar^2/(4mF L_R))^(1/2).
    """
    from .ehrenfest import expectation_position, expectation_velocity

    cfg = cfg or zero_field()
    c = cfg.constants
    grid = state.grid
    rho = state.density()
    L_s = spin_length(grid, state.spinor)
    L_R = amplitude_length(grid, rho)
    L_sR = harmonic_length(L_s, L_R)
    F = lorentz_force_magnitude(cfg, expectation_position(state), expectation_velocity(state, cfg), state.t)
    if F <= 0:
        return SpinLengths(L_s, L_R, L_sR, False, "F_L = 0: no classical force to compare against")
    orbital_ok = L_R / critical_length(F, c) > threshold
    if np.isinf(L_s):
        spin_ok, branch = True, "uniform spin"
    elif L_s <= L_R:
        spin_ok = L_s > threshold * (c.hbar**2 / (4 * c.m * F)) ** (1 / 3)
        branch = "L_s <= L_R"
    else:
        spin_ok = L_s > threshold * (c.hbar**2 / (4 * c.m * F * L_R)) ** 0.5
        branch = "L_R < L_s"
    ok = bool(orbital_ok and spin_ok)
    reason = f"orbital {'ok' if orbital_ok else 'quantum'}, spin ({branch}) {'ok' if spin_ok else 'quantum'}"
    return SpinLengths(L_s, L_R, L_sR, ok, reason)


def spin_force_estimate(L_s: float, L_sR: float, constants: Constants | None = None) -> float:
    """(hbar^2/4m) / (L_s^2 L_sR)."""
    c = constants or Constants()
    if np.isinf(L_s):
        return 0.0
    return c.hbar**2 / (4 * c.m) / (L_s**2 * L_sR)


# --- spin orientation equation ------------------------------------------------

def effective_field(state: PauliState, cfg: FieldConfig):
    """B_eff = B - (hbar^2 / (4 mu m R^2)) d_i(rho d_i s); returns (B_eff, mask)."""
    c = cfg.constants
    sg = spin_gradients(state.grid, state.spinor, second=True)
    # d_i(rho d_i s) / rho
    div = np.einsum("i...,ji...->j...", sg.dlnrho, sg.ds) + np.einsum("jii...->j...", sg.d2s)
    B = cfg.magnetic_field(state.grid.positions, state.t)
    if c.mu == 0:
        raise ValueError("effective field needs a non-zero magnetic moment")
    return np.where(sg.mask, B - c.hbar**2 / (4 * c.mu * c.m) * div, 0.0), sg.mask


def spin_evolution_residual(prev: PauliState, cur: PauliState, nxt: PauliState, cfg: FieldConfig) -> float:
    """Density-weighted L2 residual of ds/dt + (v.grad)s - (2 mu/hbar) B_eff x s at ``cur``."""
    c = cfg.constants
    grid = cur.grid
    sp, mp = spin_density(prev)
    sn, mn = spin_density(nxt)
    sg = spin_gradients(grid, cur.spinor)
    v, _ = velocity_field(grid, cur.spinor, cfg, cur.t)
    Beff, mask = effective_field(cur, cfg)
    mask = mask & mp & mn
    dsdt = (sn - sp) / (nxt.t - prev.t) + np.einsum("k...,jk...->j...", v, sg.ds)
    r = dsdt - (2 * c.mu / c.hbar) * np.cross(Beff, sg.s, axis=0)
    return weighted_l2(grid, np.where(mask, r, 0.0), sg.rho)


def spin_evolution_check(states, cfg: FieldConfig) -> float:
    """Largest spin-equation residual over the interior of a state sequence (>= 3)."""
    states = list(states)
    if len(states) < 3:
        raise ValueError("spin evolution check needs at least 3 snapshots")
    return max(spin_evolution_residual(a, b, c, cfg) for a, b, c in zip(states, states[1:], states[2:]))


def precession_frequency(times, sx, sy) -> float:
    """Angular frequency from a least-squares line through the unwrapped angle atan2(sy, sx)."""
    ang = np.unwrap(np.arctan2(np.asarray(sy), np.asarray(sx)))
    slope, _ = np.polyfit(np.asarray(times, dtype=float), ang, 1)
    return float(slope)


# --- energy -------------------------------------------------------------------

@dataclass
class EnergyExpectation:
    E_total: float
    E_S: float
    E_spin: float
    E_spin_z: float
    dipole: np.ndarray


def energy_expectation(state: PauliState, cfg: FieldConfig) -> EnergyExpectation:
    """<H_S> + mu <B.sigma>, with the z-only form mu int B_z (a_up^2 - a_down^2).

    ``dipole`` is -mu int psi^dagger sigma psi, so E_spin = -dipole . B for uniform B.
    """
    c = cfg.constants
    grid = state.grid
    x = grid.positions
    Hpsi = apply_hamiltonian(grid, cfg, state.spinor, state.t)
    E_S = float(np.real(g.integrate(grid, np.sum(np.conj(state.spinor) * Hpsi, axis=0))))
    S = spin_vector_density(state.spinor)
    B = cfg.magnetic_field(x, state.t)
    E_spin = float(c.mu * g.integrate(grid, np.sum(B * S, axis=0)))
    au, ad = spin_amplitudes(state)
    E_spin_z = float(c.mu * g.integrate(grid, B[2] * (au**2 - ad**2)))
    dipole = -c.mu * np.asarray(g.integrate(grid, S))
    return EnergyExpectation(E_S + E_spin, E_S, E_spin, E_spin_z, dipole)


# --- Bohm-Pauli equation ------------------------------------------------------

def bohm_pauli_residual(prev: PauliState, cur: PauliState, nxt: PauliState, cfg: FieldConfig) -> float:
    """Density-weighted L2 residual of
    Dv/Dt = -grad(Q/m) + F_QS/m + k(E + v x B) - (mu/m)(grad B_j) s_j."""
    from .schrodinger import material_acceleration

    c = cfg.constants
    grid = cur.grid
    acc, v, mask = material_acceleration(prev, cur, nxt, cfg)
    rho = cur.density()
    FQ, _ = quantum_force(grid, c.m * rho, c)
    FQS, _ = spin_quantum_force(cur, c)
    FB, _ = grad_B_force(cur, cfg)
    x = grid.positions
    B, E = cfg.magnetic_field(x, cur.t), cfg.electric_field(x, cur.t)
    rhs = (FQ + FQS + FB) / c.m + c.k * (E + np.cross(v, B, axis=0))
    return weighted_l2(grid, in_plane(grid, np.where(mask, acc - rhs, 0.0)), rho)


__all__ = [
    "max_core_force",
    "CORE_FRACTION",
    "PAULI", "PauliState", "HollandFields", "SpinLengths", "EnergyExpectation",
    "pauli_step", "evolve", "probability_current", "velocity_field_pauli", "velocity_from_angles",
    "holland_decompose", "holland_reconstruct", "spin_density", "spin_amplitudes",
    "spin_quantum_force", "grad_B_force", "spin_lengths", "spin_evolution_check",
    "spin_evolution_residual", "energy_expectation", "bohm_pauli_residual", "precession_frequency",
    "spinor_from_direction", "packet_spinor", "spin_rotation", "effective_field",
    "DENSITY_FLOOR", "velocity_jacobian",
]
