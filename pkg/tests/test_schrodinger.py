import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsim import em_fields as ef
from qsim import grid as g
from qsim import schrodinger as sc
from qsim.grid import GridSpec

# Frozen closed forms for a 2D amplitude exp(-r^2 / 2 s^2), s = 1.5, hbar = m = 1:
# Q = (2 s^2 - r^2) / (2 s^4), F_Q = r / s^4 (evaluated symbolically once).
Q_ORACLE_2D = [
    ((0.0, 0.0), 0.4444444444444444, (0.0, 0.0)),
    ((1.0, 0.0), 0.345679012345679, (0.19753086419753085, 0.0)),
    ((0.5, -1.25), 0.26543209876543206, (0.09876543209876543, -0.24691358024691357)),
    ((2.0, 1.0), -0.04938271604938271, (0.3950617283950617, 0.19753086419753085)),
]


def free_width(t, sigma0, hbar=1.0, m=1.0):
    return sigma0 * np.sqrt(1 + (hbar * t / (2 * m * sigma0**2)) ** 2)


def position_sigma(grid, psi, axis=0):
    rho = np.abs(psi) ** 2
    x = grid.positions[axis]
    n = g.integrate(grid, rho)
    mean = g.integrate(grid, rho * x) / n
    return float(np.sqrt(g.integrate(grid, rho * (x - mean) ** 2) / n))


def test_plane_wave_phase_advance():
    L = 10.0
    grid = GridSpec((64,), (L,))
    k = 2 * np.pi * 3 / L
    psi = np.exp(1j * k * grid.positions[0])
    dt = 0.05
    out = sc.schrodinger_step(sc.SchrodingerState(grid, psi), ef.zero_field(), dt).psi
    assert np.abs(out - psi * np.exp(-1j * k**2 * dt / 2)).max() <= 1e-10
    assert np.abs(np.abs(out) - 1).max() <= 1e-10


def test_gaussian_packet_is_normalized_with_sigma():
    grid = GridSpec((256,), (40.0,))
    psi = sc.gaussian_packet(grid, (1.0, 0, 0), 1.3, (0.5, 0, 0))
    assert g.integrate(grid, np.abs(psi) ** 2) == pytest.approx(1.0, abs=1e-12)
    assert position_sigma(grid, psi) == pytest.approx(1.3, rel=1e-10)


def test_free_packet_width_oracle():
    grid = GridSpec((256,), (48.0,))
    state = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (0, 0, 0), 1.0, (0.5, 0, 0)))
    dt, steps = 0.01, 347  # t_end = 3.47 > 2 sqrt(3), where the width doubles
    worst = 0.0
    for s in sc.evolve(state, ef.zero_field(), dt, steps):
        worst = max(worst, abs(position_sigma(grid, s.psi) / free_width(s.t, 1.0) - 1))
    assert free_width(s.t, 1.0) > 2.0
    assert worst <= 5e-3


def test_linear_potential_follows_parabola():
    E0 = 0.5
    grid = GridSpec((512,), (80.0,))
    x0 = -10.0
    state = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (x0, 0, 0), 1.0))
    cfg = ef.uniform_electric((E0, 0, 0))
    for s in sc.evolve(state, cfg, 0.01, 400):
        pass
    mean = g.integrate(grid, np.abs(s.psi) ** 2 * grid.positions[0])
    expected = x0 + 0.5 * E0 * s.t**2
    assert abs(mean - expected) <= 5e-3 * abs(expected - x0)


def test_stability_bound_rejects_large_dt():
    grid = GridSpec((64,), (40.0,))
    with pytest.raises(ValueError, match="stability bound"):
        sc.OrbitalPropagator(grid, ef.uniform_electric((1.0, 0, 0)), 1.0)
    with pytest.raises(ValueError):
        sc.OrbitalPropagator(grid, ef.zero_field(), 0.0)


def test_split_refuses_non_separable_potential():
    grid = GridSpec((32, 32), (10.0, 10.0))
    cfg = ef.gauge_transform(ef.uniform_magnetic(1.0), ef.GaugeFunction.from_expression("0.1*x**2*y"))
    with pytest.raises(ValueError, match="cn"):
        sc.OrbitalPropagator(grid, cfg, 0.01, "split")
    assert sc.OrbitalPropagator(grid, cfg, 0.01).method == "cn"


def test_cn_and_split_agree_in_uniform_B():
    grid = GridSpec((64, 64), (20.0, 20.0))
    cfg = ef.uniform_magnetic(1.0)
    psi = sc.gaussian_packet(grid, (1, 0, 0), 1.0, (0, 1, 0))
    a = b = psi
    dt = 0.005
    ps, pc = sc.OrbitalPropagator(grid, cfg, dt, "split"), sc.OrbitalPropagator(grid, cfg, dt, "cn")
    for i in range(40):
        a, b = ps.step(a, i * dt), pc.step(b, i * dt)
    # both second order in dt; they must agree to the common O(dt^2) error
    assert np.abs(a - b).max() < 2e-4


@pytest.mark.parametrize(
    "cfg",
    [
        ef.zero_field(),
        ef.uniform_electric((0.05, 0.02, 0)),
        ef.uniform_magnetic(1.0),
        ef.stern_gerlach_field(0.5, 0.2, "physical"),
        ef.gauge_transform(ef.uniform_magnetic(1.0), ef.GaugeFunction.from_expression("0.02*x**2*y")),
    ],
    ids=["zero", "uniform_E", "uniform_B", "sg_physical", "gauge_cn"],
)
def test_unitarity_over_1000_steps(cfg):
    grid = GridSpec((48, 48), (24.0, 24.0))
    state = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (0.5, 0, 0), 1.0, (0.5, 0.3, 0)))
    dt = 0.005 if cfg.kind == "gauge_transformed" else 0.01
    steps = 200 if cfg.kind == "gauge_transformed" else 1000
    n0 = state.norm()
    drift = 0.0
    for s in sc.evolve(state, cfg, dt, steps):
        drift = max(drift, abs(s.norm() - n0))
    assert drift <= 1e-8


def test_plane_wave_velocity_and_amplitude():
    L = 8.0
    grid = GridSpec((32,), (L,))
    k = 2 * np.pi * 2 / L
    st_ = sc.SchrodingerState(grid, np.exp(1j * k * grid.positions[0]))
    mf = sc.madelung_decompose(st_)
    assert np.abs(mf.a - 1).max() < 1e-14
    assert np.abs(mf.v[0] - k).max() < 1e-10
    assert np.abs(mf.phase - mf.phase[0] - k * (grid.positions[0] - grid.positions[0][0])).max() < 1e-10


def test_velocity_real_gaussian_and_constant_A():
    grid = GridSpec((64,), (16.0,))
    gauss = sc.gaussian_packet(grid, (0, 0, 0), 1.0)
    v, _ = sc.velocity_field(grid, gauss[None], ef.zero_field())
    # exactly zero up to round-off divided by the smallest unmasked density
    assert np.abs(v).max() < 1e-9
    A0, k = 0.3, 2 * np.pi * 3 / 16.0
    cfg = ef.custom_field(A=lambda x, t: np.stack([A0 + 0 * x[0], 0 * x[0], 0 * x[0]]), box=16.0)
    v, mask = sc.velocity_field(grid, np.exp(1j * k * grid.positions[0])[None], cfg)
    assert mask.all()
    assert np.abs(v[0] - (k - A0)).max() < 1e-10


def test_phase_unwrap_follows_winding_ramp():
    grid = GridSpec((64, 64), (12.0, 12.0))
    x, y = grid.positions[0], grid.positions[1]
    true = 2.5 * x + 1.5 * y
    mf = sc.madelung_decompose(sc.SchrodingerState(grid, np.exp(-(x**2 + y**2) / 8 + 1j * true)))
    c = np.unravel_index(np.argmax(mf.a), grid.shape)
    assert np.abs((mf.phase - true)[mf.mask] - (mf.phase - true)[c]).max() < 1e-9


def _harmonic():
    """phi = x^2/2 with e = m = 1: ground state exp(-x^2/2) is stationary."""
    return ef.custom_field(phi=lambda x, t: 0.5 * x[0] ** 2, box=16.0,
                           E=lambda x, t: np.stack([-x[0], 0 * x[0], 0 * x[0]]))


def test_continuity_stationary_and_plane_wave():
    grid = GridSpec((128,), (16.0,))
    ground = np.exp(-grid.positions[0] ** 2 / 2) / np.pi**0.25
    assert sc.continuity_residual(sc.SchrodingerState(grid, ground), _harmonic(), 0.01) <= 1e-10
    k = 2 * np.pi / 16.0
    pw = sc.SchrodingerState(grid, np.exp(1j * k * grid.positions[0]) / 4)
    assert sc.continuity_residual(pw, ef.zero_field(), 0.01) <= 1e-10


def _continuity_after(n, L, dt, T0=0.5):
    grid = GridSpec((n,), (L,))
    s = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (0, 0, 0), 0.7, (1.0, 0, 0)))
    for s in sc.evolve(s, ef.zero_field(), dt, int(round(T0 / dt))):
        pass
    return sc.continuity_residual(s, ef.zero_field(), dt)


def test_continuity_converges_under_halving():
    r1 = _continuity_after(256, 24.0, 0.02)
    r2 = _continuity_after(512, 24.0, 0.01)
    assert r1 / r2 >= 3.5


def test_quantum_potential_1d_gaussian():
    s = 1.2
    grid = GridSpec((256,), (30.0,))
    x = grid.positions[0]
    rho = np.exp(-x**2 / s**2)
    Q, mask = sc.quantum_potential(grid, rho)
    # amplitude exp(-x^2/2s^2): Q = -(1/2) a''/a = (s^2 - x^2) / (2 s^4), F_Q = x / s^4
    exact = (s**2 - x**2) / (2 * s**4)
    assert np.sqrt(np.mean((Q - exact)[mask] ** 2)) <= 1e-6
    F, mask = sc.quantum_force(grid, rho)
    assert np.sqrt(np.mean((F[0] - x / s**4)[mask] ** 2)) <= 1e-6


def test_quantum_potential_2d_frozen_values():
    s = 1.5
    grid = GridSpec((160, 160), (20.0, 20.0))
    x, y = grid.positions[0], grid.positions[1]
    rho = np.exp(-(x**2 + y**2) / s**2)
    Q, _ = sc.quantum_potential(grid, rho)
    F, _ = sc.quantum_force(grid, rho)
    h = grid.spacing[0]
    for (px, py), q, (fx, fy) in Q_ORACLE_2D:
        i, j = int(round((px + 10) / h)), int(round((py + 10) / h))
        assert x[i, j] == pytest.approx(px) and y[i, j] == pytest.approx(py)
        assert Q[i, j] == pytest.approx(q, abs=1e-8)
        assert F[0, i, j] == pytest.approx(fx, abs=1e-8)
        assert F[1, i, j] == pytest.approx(fy, abs=1e-8)


def test_uniform_density_has_no_quantum_potential():
    grid = GridSpec((32, 32), (5.0, 5.0))
    Q, mask = sc.quantum_potential(grid, np.full(grid.shape, 2.0))
    F, _ = sc.quantum_force(grid, np.full(grid.shape, 2.0))
    assert mask.all() and np.abs(Q).max() < 1e-12 and np.abs(F).max() < 1e-12
    with pytest.raises(ValueError):
        sc.quantum_potential(grid, -np.ones(grid.shape))


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0.6, 2.0))
def test_quantum_potential_ignores_density_scale(lam, s):
    grid = GridSpec((64,), (20.0,))
    rho = np.exp(-grid.positions[0] ** 2 / s**2)
    Q1, m1 = sc.quantum_potential(grid, rho)
    Q2, m2 = sc.quantum_potential(grid, lam * rho)
    assert np.array_equal(m1, m2)
    assert np.abs(Q1 - Q2)[m1].max() <= 1e-9 * max(1.0, np.abs(Q1)[m1].max())


def test_quantum_force_magnitude_estimate():
    """max |F_Q| over rho >= 1e-2 max rho against hbar^2 / (2 m L_R^3), 2D Gaussian."""
    grid = GridSpec((128, 128), (24.0, 24.0))
    rho = np.abs(sc.gaussian_packet(grid, (0, 0, 0), 1.0)) ** 2
    L_R = sc.amplitude_length(grid, rho)
    F, mask = sc.quantum_force(grid, rho)
    core = mask & (rho >= 1e-2 * rho.max())
    fmax = np.sqrt(np.sum(F**2, axis=0))[core].max()
    ratio = fmax / (1 / (2 * L_R**3))
    assert 0.2 <= ratio <= 5


def test_classicality_lengths():
    grid = GridSpec((128, 128), (24.0, 24.0))
    rho = np.abs(sc.gaussian_packet(grid, (0, 0, 0), 1.5)) ** 2
    L_R = sc.amplitude_length(grid, rho)
    assert 0.75 <= L_R <= 3.0
    assert sc.critical_length(0.0, ef.Constants()) == np.inf
    assert sc.critical_length(0.5, ef.Constants()) == pytest.approx(1.0)
    state = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (0, 0, 0), 1.5, (1.0, 0, 0)))
    lengths = sc.classicality_lengths(state, ef.uniform_magnetic(2.0))
    assert lengths.F_L == pytest.approx(2.0, rel=1e-6)
    assert lengths.ratio == pytest.approx(lengths.L_R / (1 / 4) ** (1 / 3))
    assert not sc.classicality_lengths(state, ef.zero_field()).classical


def _bohm_residual(cfg, n, dt, k=(0, 1, 0), T0=0.4):
    grid = GridSpec((n, n), (24.0, 24.0))
    s = sc.SchrodingerState(grid, sc.gaussian_packet(grid, (1, 0, 0), 0.8, k))
    for s in sc.evolve(s, cfg, dt, int(round(T0 / dt))):
        pass
    s1 = sc.schrodinger_step(s, cfg, dt)
    s2 = sc.schrodinger_step(s1, cfg, dt)
    return sc.bohm_equation_residual(s, s1, s2, cfg)


@pytest.mark.parametrize(
    "cfg",
    [ef.zero_field(), ef.uniform_magnetic(1.0), ef.uniform_electric((0.5, 0, 0))],
    ids=["zero", "uniform_B", "uniform_E"],
)
def test_bohm_equation_converges(cfg):
    r1 = _bohm_residual(cfg, 64, 0.02)
    r2 = _bohm_residual(cfg, 128, 0.01)
    assert r1 / r2 >= 3.5
