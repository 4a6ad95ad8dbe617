import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsim import grid as g
from qsim.grid import GridSpec


def test_gridspec_defaults_and_geometry():
    grid = GridSpec((64, 32), (8.0, 4.0))
    assert grid.dim == 2
    assert grid.shape == (64, 32)
    assert grid.origin == (-4.0, -2.0)
    assert grid.axes == (0, 1)
    assert grid.spacing == (0.125, 0.125)
    assert grid.cell_volume == pytest.approx(0.125**2)
    assert grid.positions.shape == (3, 64, 32)
    assert np.all(grid.positions[2] == 0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=(4,), length=(1.0,)),
        dict(n=(16,), length=(0.0,)),
        dict(n=(16,), length=(np.inf,)),
        dict(n=(16, 16), length=(1.0,)),
        dict(n=(8, 8, 8, 8), length=(1.0,) * 4),
        dict(n=(16, 16), length=(1.0, 1.0), axes=(0, 0)),
    ],
)
def test_gridspec_rejects_bad_shapes(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


def test_xz_plane_grid_maps_second_axis_to_z():
    grid = GridSpec((16, 16), (4.0, 4.0), axes=(0, 2))
    assert np.all(grid.positions[1] == 0)
    assert grid.grid_axis(2) == 1
    assert grid.grid_axis(1) is None
    assert grid.positions[2][0, 3] == pytest.approx(-2.0 + 3 * 0.25)


def test_gradient_of_constant_is_zero():
    grid = GridSpec((32, 32), (5.0, 5.0))
    grad = g.gradient(grid, np.full(grid.shape, 5.0))
    assert grad.shape == (3, 32, 32)
    assert np.abs(grad).max() < 1e-13


def test_spectral_sine_derivative_1d():
    L = 7.0
    grid = GridSpec((64,), (L,))
    x = grid.positions[0]
    d = g.gradient(grid, np.sin(2 * np.pi * x / L))[0]
    assert np.abs(d - 2 * np.pi / L * np.cos(2 * np.pi * x / L)).max() <= 1e-10


def test_spectral_sine_product_partials_2d():
    L = 6.0
    grid = GridSpec((48, 48), (L, L))
    x, y = grid.positions[0], grid.positions[1]
    k = 2 * np.pi / L
    f = np.sin(k * x) * np.sin(k * y)
    grad = g.gradient(grid, f)
    assert np.abs(grad[0] - k * np.cos(k * x) * np.sin(k * y)).max() <= 1e-10
    assert np.abs(grad[1] - k * np.sin(k * x) * np.cos(k * y)).max() <= 1e-10


def test_complex_gradient_keeps_imaginary_part():
    L = 4.0
    grid = GridSpec((32,), (L,))
    x = grid.positions[0]
    k = 2 * np.pi * 3 / L
    d = g.gradient(grid, np.exp(1j * k * x))[0]
    assert np.abs(d - 1j * k * np.exp(1j * k * x)).max() < 1e-11


def test_laplacian_constant_and_sine():
    L = 5.0
    grid = GridSpec((64,), (L,))
    x = grid.positions[0]
    assert np.abs(g.laplacian(grid, np.full(grid.shape, 3.0))).max() < 1e-12
    k = 2 * np.pi / L
    assert np.abs(g.laplacian(grid, np.sin(k * x)) + k**2 * np.sin(k * x)).max() <= 1e-10


def test_laplacian_gaussian_closed_form():
    sigma = 1.0
    grid = GridSpec((256,), (24.0,))
    x = grid.positions[0]
    f = np.exp(-x**2 / (2 * sigma**2))
    assert f[0] < 1e-12
    exact = (x**2 / sigma**4 - 1 / sigma**2) * f
    rms = np.sqrt(np.mean((g.laplacian(grid, f) - exact) ** 2))
    assert rms <= 1e-8


def test_integrate_constant_gaussian_and_sine():
    grid = GridSpec((64, 64), (6.0, 3.0))
    assert g.integrate(grid, np.ones(grid.shape)) == pytest.approx(grid.volume, rel=1e-14)
    big = GridSpec((128, 128), (20.0, 20.0))
    x, y = big.positions[0], big.positions[1]
    s = 1.3
    gauss = np.exp(-(x**2 + y**2) / (2 * s**2)) / (2 * np.pi * s**2)
    assert abs(g.integrate(big, gauss) - 1) <= 1e-10
    line = GridSpec((50,), (3.0,))
    assert abs(g.integrate(line, np.sin(2 * np.pi * line.positions[0] / 3.0))) <= 1e-12


def test_central2_is_second_order():
    errs = []
    for n in (32, 64):
        grid = GridSpec((n,), (2 * np.pi,))
        x = grid.positions[0]
        d = g.gradient(grid, np.sin(x), method="central2")[0]
        errs.append(np.abs(d - np.cos(x)).max())
    assert 3.8 < errs[0] / errs[1] < 4.2


def test_unknown_method_and_nonfinite_input():
    grid = GridSpec((16,), (1.0,))
    with pytest.raises(ValueError):
        g.gradient(grid, np.zeros(16), method="upwind")
    bad = np.zeros(16)
    bad[3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        g.laplacian(grid, bad)


def test_fft_worker_setting():
    old = g.fft_workers()
    with pytest.raises(ValueError):
        g.set_fft_workers(0)
    g.set_fft_workers(2)
    assert g.fft_workers() == 2
    g.set_fft_workers(old)


def _smooth_field(grid, coeffs):
    """Low-mode periodic field built from a handful of Fourier coefficients."""
    x, y = grid.positions[0], grid.positions[1]
    Lx, Ly = grid.length
    f = np.zeros(grid.shape)
    for (a, b, kx, ky) in coeffs:
        f += a * np.cos(2 * np.pi * (kx * x / Lx + ky * y / Ly)) + b * np.sin(2 * np.pi * (kx * x / Lx + ky * y / Ly))
    return f


coeff = st.tuples(
    st.floats(-2, 2), st.floats(-2, 2), st.integers(-4, 4), st.integers(-4, 4)
)


@settings(max_examples=25, deadline=None)
@given(st.lists(coeff, min_size=1, max_size=5))
def test_integral_of_gradient_vanishes(coeffs):
    grid = GridSpec((32, 32), (3.0, 5.0))
    f = _smooth_field(grid, coeffs)
    integral = g.integrate(grid, g.gradient(grid, f))
    assert np.abs(integral).max() <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(coeff, min_size=1, max_size=5))
def test_laplacian_equals_divergence_of_gradient(coeffs):
    grid = GridSpec((32, 32), (3.0, 5.0))
    f = _smooth_field(grid, coeffs)
    lhs = g.laplacian(grid, f)
    rhs = g.divergence(grid, g.gradient(grid, f))
    assert np.sqrt(np.mean((lhs - rhs) ** 2)) <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.lists(coeff, min_size=1, max_size=5))
def test_band_limited_derivative_is_exact(coeffs):
    grid = GridSpec((32, 32), (3.0, 5.0))
    x, y = grid.positions[0], grid.positions[1]
    Lx, Ly = grid.length
    f = _smooth_field(grid, coeffs)
    dfx = np.zeros(grid.shape)
    for (a, b, kx, ky) in coeffs:
        ph = 2 * np.pi * (kx * x / Lx + ky * y / Ly)
        dfx += 2 * np.pi * kx / Lx * (-a * np.sin(ph) + b * np.cos(ph))
    assert np.abs(g.gradient(grid, f)[0] - dfx).max() <= 1e-10


@pytest.mark.parametrize("kind", ["real", "complex", "spinor"])
def test_snapshot_round_trip(tmp_path, rng, kind):
    grid = GridSpec((8, 12), (1.0, 2.0))
    shape = (2,) + grid.shape if kind == "spinor" else grid.shape
    vals = rng.normal(size=shape)
    if kind != "real":
        vals = vals + 1j * rng.normal(size=shape)
    path = g.write_snapshot(tmp_path / "f.qfld", grid, vals)
    header, back = g.read_snapshot(path)
    assert header.kind == kind and header.n == (8, 12) and header.dim == 2
    assert np.array_equal(back, vals)
    raw = path.read_bytes()
    assert raw[:4] == b"QFLD"
    assert len(raw) == 32 + 8 * vals.size * (1 if kind == "real" else 2)


def test_snapshot_row_major_order(tmp_path):
    grid = GridSpec((8, 8), (1.0, 1.0))
    vals = np.arange(64, dtype=float).reshape(8, 8)
    path = g.write_snapshot(tmp_path / "r.qfld", grid, vals)
    data = np.frombuffer(path.read_bytes()[32:], dtype="<f8")
    assert np.array_equal(data, np.arange(64.0))


def test_snapshot_rejects_corrupt_files(tmp_path):
    grid = GridSpec((8,), (1.0,))
    path = g.write_snapshot(tmp_path / "a.qfld", grid, np.ones(8))
    raw = bytearray(path.read_bytes())
    (tmp_path / "short.qfld").write_bytes(raw[:10])
    with pytest.raises(ValueError):
        g.read_snapshot(tmp_path / "short.qfld")
    raw[:4] = b"XXXX"
    (tmp_path / "magic.qfld").write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="magic"):
        g.read_snapshot(tmp_path / "magic.qfld")
    (tmp_path / "trunc.qfld").write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError, match="payload"):
        g.read_snapshot(tmp_path / "trunc.qfld")


def test_weighted_median():
    assert g.weighted_median(np.array([1.0, 2.0, 3.0]), np.array([1.0, 1.0, 10.0])) == 3.0
    assert g.weighted_median(np.array([5.0, np.inf]), np.array([3.0, 1.0])) == 5.0
    with pytest.raises(ValueError):
        g.weighted_median(np.array([1.0]), np.array([0.0]))
