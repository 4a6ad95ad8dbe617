import csv

import numpy as np
import pytest

from qsim import ehrenfest as eh
from qsim import em_fields as ef
from qsim import pauli as pa
from qsim import schrodinger as sc
from qsim.grid import GridSpec


def scalar(grid, center=(0, 0, 0), sigma=1.0, k=(0, 0, 0)):
    return sc.SchrodingerState(grid, sc.gaussian_packet(grid, center, sigma, k))


def test_expectation_position():
    grid = GridSpec((128, 128), (24.0, 24.0))
    assert np.allclose(eh.expectation_position(scalar(grid, (1.5, -0.75, 0))), [1.5, -0.75, 0], atol=1e-9)
    x, y = grid.positions[0], grid.positions[1]
    sym = np.exp(-(x**2 + y**2)) * (1 + x**2 * y**2)
    st = sc.SchrodingerState(grid, sym).normalized()
    assert np.abs(eh.expectation_position(st)).max() < 1e-14
    # two lobes with weights 0.3 / 0.7
    # lobes far enough apart that the cross term is below round-off
    a = sc.gaussian_packet(grid, (0, -4, 0), 0.5)
    b = sc.gaussian_packet(grid, (0, 5, 0), 0.5)
    two = sc.SchrodingerState(grid, np.sqrt(0.3) * a + np.sqrt(0.7) * b)
    assert eh.expectation_position(two)[1] == pytest.approx(0.3 * -4 + 0.7 * 5, abs=1e-9)


def test_expectation_velocity_examples():
    L = 10.0
    grid = GridSpec((64,), (L,))
    k = 2 * np.pi * 2 / L
    pw = sc.SchrodingerState(grid, np.exp(1j * k * grid.positions[0]) / np.sqrt(L))
    assert np.allclose(eh.expectation_velocity(pw, ef.zero_field()), [k, 0, 0], atol=1e-12)
    big = GridSpec((128,), (24.0,))
    gauss = scalar(big)
    assert np.abs(eh.expectation_velocity(gauss, ef.zero_field())).max() < 1e-14
    A0 = 0.6
    cfg = ef.custom_field(A=lambda x, t: np.stack([A0 + 0 * x[0], 0 * x[0], 0 * x[0]]), box=24.0,
                          constants=ef.Constants(e=-1.0))
    assert np.allclose(eh.expectation_velocity(gauss, cfg), [A0, 0, 0], atol=1e-12)  # -e A0 / m
    with pytest.raises(ValueError):
        eh.expectation_velocity(gauss, cfg, "other")


def test_operator_and_hydrodynamic_velocity_agree():
    grid = GridSpec((64, 64), (24.0, 24.0))
    cfg = ef.uniform_magnetic(1.3)
    x, y = grid.positions[0], grid.positions[1]
    psi = sc.gaussian_packet(grid, (1.5, -0.5, 0), 1.0, (0.7, 0, 0)) * np.exp(0.3j * np.sin(y / 2) + 0.2j * x * y / 5)
    st = sc.SchrodingerState(grid, psi)
    a = eh.expectation_velocity(st, cfg)
    b = eh.expectation_velocity(st, cfg, "hydrodynamic")
    assert np.abs(a - b).max() <= 1e-9


def _series(state, cfg, dt, steps, stepper):
    series = eh.ExpectationSeries()
    series.record(state, cfg)
    for s in stepper(state, cfg, dt, steps):
        series.record(s, cfg)
    return series


def test_first_law_stationary_and_free():
    grid = GridSpec((128,), (16.0,))
    ground = sc.SchrodingerState(grid, np.exp(-grid.positions[0] ** 2 / 2) / np.pi**0.25)
    harmonic = ef.custom_field(phi=lambda x, t: 0.5 * x[0] ** 2, box=16.0)
    assert eh.first_law_residual(_series(ground, harmonic, 0.01, 20, sc.evolve)) <= 1e-10
    free = GridSpec((256,), (48.0,))
    ser = _series(scalar(free, k=(0.5, 0, 0)), ef.zero_field(), 0.01, 200, sc.evolve)
    vmax = np.abs(ser.arrays()[2]).max()
    assert eh.first_law_residual(ser) <= 1e-6 * vmax


def _uniform_B_first_law(dt, T=0.4):
    grid = GridSpec((64, 64), (24.0, 24.0))
    cfg = ef.uniform_magnetic(1.0)
    return eh.first_law_residual(_series(scalar(grid, (1, 0, 0), 1.0, (1, 0, 0)), cfg, dt,
                                         int(round(T / dt)), sc.evolve))


def test_first_law_second_order_in_uniform_B():
    r = [_uniform_B_first_law(dt) for dt in (0.02, 0.01, 0.005)]
    assert r[0] / r[1] >= 3.5 and r[1] / r[2] >= 3.5


def test_second_law_terms():
    grid = GridSpec((64, 64), (24.0, 24.0))
    st = scalar(grid, (1.5, -0.5, 0), 1.0, (0.7, 0.2, 0))
    E0 = np.array([0.3, -0.1, 0.0])
    rhs = eh.second_law_rhs(st, ef.uniform_electric(E0))
    assert np.all(rhs["magnetic"] == 0) and np.all(rhs["spin"] == 0)
    assert np.allclose(rhs["total"], E0, atol=1e-12)
    cfg = ef.uniform_magnetic(2.0)
    rhs = eh.second_law_rhs(st, cfg)
    v = eh.expectation_velocity(st, cfg)
    assert np.abs(rhs["magnetic"] - np.cross(v, [0, 0, 2.0])).max() <= 1e-8
    gxz = GridSpec((64, 64), (24.0, 24.0), axes=(0, 2))
    c = ef.Constants(e=0.0, mu=0.5)
    beta = 2.0
    up = pa.PauliState(gxz, pa.packet_spinor(sc.gaussian_packet(gxz, (0, 0, 0.5), 1.0), (0, 0, 1)))
    rhs = eh.second_law_rhs(up, ef.stern_gerlach_field(1.0, beta, "ideal", constants=c))
    assert np.allclose(rhs["spin"], [0, 0, -c.mu / c.m * beta], atol=1e-12)
    assert set(rhs) == {"magnetic", "electric", "spin", "total"}


@pytest.mark.parametrize(
    "cfg, spin",
    [
        # B normal to the x-z plane so the Lorentz force stays in the grid
        (ef.uniform_magnetic(1.0, axis="y"), (1, 0, 1)),
        (ef.stern_gerlach_field(2.0, 1.0, "ideal", constants=ef.Constants(e=0.0, mu=0.5)), (1, 0, 1)),
        (ef.stern_gerlach_field(2.0, 1.0, "physical", constants=ef.Constants(e=0.0, mu=0.5)), (1, 1, 0)),
    ],
    ids=["uniform_B", "sg_ideal", "sg_physical"],
)
def test_second_law_closes_without_quantum_force(cfg, spin):
    grid = GridSpec((64, 64), (24.0, 24.0), axes=(0, 2))
    st = pa.PauliState(grid, pa.packet_spinor(sc.gaussian_packet(grid, (0.5, 0, 0.3), 1.0, (0.6, 0, 0)), spin))
    ser = _series(st, cfg, 0.002, 200, pa.evolve)
    _, rel = eh.second_law_residual(ser, axes=grid.axes)
    assert rel <= 1e-2


def test_commutator_identity():
    grid = GridSpec((64, 64), (24.0, 24.0), axes=(0, 2))
    c = ef.Constants(e=0.0, mu=0.5)
    psi = sc.gaussian_packet(grid, (0, 0, 0.5), 1.0, (0.4, 0, 0))
    for spin in ((0, 0, 1), (1, 0, 1), (1, 0, 0)):
        st = pa.PauliState(grid, pa.packet_spinor(psi, spin))
        assert eh.commutator_identity_check(st, ef.uniform_magnetic(1.0, constants=c)) == 0
        for variant in ("ideal", "physical"):
            cfg = ef.stern_gerlach_field(1.0, 2.0, variant, constants=c)
            assert eh.commutator_identity_check(st, cfg) <= 1e-8
    with pytest.raises(ValueError):
        eh.commutator_identity_check(sc.SchrodingerState(grid, psi), ef.uniform_magnetic(1.0))


def test_linearity_gap():
    grid = GridSpec((256,), (24.0,))
    s = 0.9
    st = scalar(grid, (0.7, 0, 0), s)
    assert eh.linearity_gap(st, ef.uniform_electric((0.4, 0, 0)))[2] <= 1e-15
    lin = ef.custom_field(E=lambda x, t: np.stack([0.3 * x[0], 0 * x[0], 0 * x[0]]), box=24.0)
    assert eh.linearity_gap(st, lin)[2] <= 1e-9
    c = 0.25
    quad = ef.custom_field(E=lambda x, t: np.stack([c * x[0] ** 2, 0 * x[0], 0 * x[0]]), box=24.0)
    assert eh.linearity_gap(st, quad)[2] == pytest.approx(abs(c) * s**2, rel=1e-2)


def test_series_csv_layout(tmp_path):
    grid = GridSpec((64,), (24.0,))
    ser = _series(scalar(grid, k=(0.5, 0, 0)), ef.zero_field(), 0.01, 5, sc.evolve)
    path = eh.write_series_csv(ser, tmp_path / "e.csv")
    rows = list(csv.reader(open(path)))
    header, body = rows[0], rows[1:]
    assert len(body) == 6 and header[0] == "t"
    assert "" in body[0] and "" in body[-1]
    assert "" not in body[2]
    with pytest.raises(ValueError):
        eh.first_law_residual(eh.ExpectationSeries())
