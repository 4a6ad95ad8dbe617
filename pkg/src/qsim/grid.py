"""Uniform periodic Cartesian grids and spectral / finite-difference calculus.

Fields are plain numpy arrays whose trailing axes match ``GridSpec.shape``:

- scalar (real or complex) field: ``shape``
- vector field: ``(3, *shape)``, x/y/z components even when ``dim < 3``
- spinor field: ``(2, *shape)``, (up, down)

A grid axis may be mapped onto any physical axis through ``GridSpec.axes``;
a 2D ``axes=(0, 2)`` grid spans the x-z plane with y suppressed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

MAX_POINTS = 2**28

_workers = 1


def set_fft_workers(n: int) -> None:
    """Set the FFT thread count used by every spectral operation (default 1)."""
    global _workers
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    _workers = int(n)


def fft_workers() -> int:
    return _workers


@dataclass(frozen=True)
class GridSpec:
    n: tuple[int, ...]
    length: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    axes: tuple[int, ...] | None = None

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        length = tuple(float(v) for v in np.atleast_1d(self.length))
        dim = len(n)
        if not 1 <= dim <= 3:
            raise ValueError(f"grid dimension must be 1..3, got {dim}")
        if len(length) != dim:
            raise ValueError("length must have one entry per axis")
        if any(v < 8 for v in n):
            raise ValueError(f"every axis needs at least 8 points, got {n}")
        if any(not np.isfinite(v) or v <= 0 for v in length):
            raise ValueError(f"axis lengths must be positive and finite, got {length}")
        if int(np.prod(n, dtype=np.int64)) > MAX_POINTS:
            raise ValueError(f"grid has more than 2^28 points: {n}")
        origin = self.origin
        if origin is None:
            origin = tuple(-0.5 * v for v in length)
        origin = tuple(float(v) for v in np.atleast_1d(origin))
        if len(origin) != dim:
            raise ValueError("origin must have one entry per axis")
        axes = tuple(range(dim)) if self.axes is None else tuple(int(a) for a in self.axes)
        if len(axes) != dim or len(set(axes)) != dim or any(a not in (0, 1, 2) for a in axes):
            raise ValueError(f"axes must be {dim} distinct values in 0..2, got {axes}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "axes", axes)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.length, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.length))

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(o + L for o, L in zip(self.origin, self.length))

    def coords(self, i: int) -> np.ndarray:
        """1D coordinates of grid axis ``i``."""
        return self.origin[i] + self.spacing[i] * np.arange(self.n[i])

    def axis_coords(self, i: int) -> np.ndarray:
        """Coordinates of grid axis ``i`` shaped to broadcast against the grid."""
        shape = [1] * self.dim
        shape[i] = self.n[i]
        return self.coords(i).reshape(shape)

    @cached_property
    def positions(self) -> np.ndarray:
        """Physical positions, shape ``(3, *shape)``; suppressed axes sit at 0."""
        out = np.zeros((3,) + self.shape)
        for i, ax in enumerate(self.axes):
            out[ax] = np.broadcast_to(self.axis_coords(i), self.shape)
        out.flags.writeable = False
        return out

    def wavenumbers(self, i: int) -> np.ndarray:
        """Angular wavenumbers of axis ``i`` shaped to broadcast against the grid."""
        k = 2 * np.pi * sfft.fftfreq(self.n[i], d=self.spacing[i])
        shape = [1] * self.dim
        shape[i] = self.n[i]
        return k.reshape(shape)

    @cached_property
    def k_squared(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for i in range(self.dim):
            out = out + self.wavenumbers(i) ** 2
        out.flags.writeable = False
        return out

    @property
    def k_max(self) -> float:
        return max(np.pi / h for h in self.spacing)

    def grid_axis(self, physical_axis: int) -> int | None:
        """Grid axis index spanning ``physical_axis`` or None when suppressed."""
        return self.axes.index(physical_axis) if physical_axis in self.axes else None

    def contains(self, point, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        for i, ax in enumerate(self.axes):
            if p[ax] < self.origin[i] - tol or p[ax] > self.upper[i] + tol:
                return False
        return True


def _check_finite(f: np.ndarray, what: str = "field") -> None:
    if not np.all(np.isfinite(f)):
        bad = int(np.size(f) - np.count_nonzero(np.isfinite(f)))
        raise ValueError(f"{what} contains {bad} non-finite value(s)")


def _grid_axis(grid: GridSpec, f: np.ndarray, i: int) -> int:
    return f.ndim - grid.dim + i


def partial(grid: GridSpec, f: np.ndarray, i: int, method: str = "spectral") -> np.ndarray:
    """Derivative of ``f`` along grid axis ``i``; leading batch axes allowed."""
    ax = _grid_axis(grid, f, i)
    if method == "spectral":
        n = grid.n[i]
        shape = [1] * f.ndim
        if np.iscomplexobj(f):
            k = 2 * np.pi * sfft.fftfreq(n, d=grid.spacing[i])
        else:
            k = 2 * np.pi * sfft.rfftfreq(n, d=grid.spacing[i])
        if n % 2 == 0:
            # Nyquist mode has no odd-derivative partner
            k[n // 2] = 0.0
        shape[ax] = k.size
        k = k.reshape(shape)
        if np.iscomplexobj(f):
            return sfft.ifft(1j * k * sfft.fft(f, axis=ax, workers=_workers), axis=ax, workers=_workers)
        return sfft.irfft(1j * k * sfft.rfft(f, axis=ax, workers=_workers), n=n, axis=ax, workers=_workers)
    if method == "central2":
        h = grid.spacing[i]
        return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * h)
    raise ValueError(f"unknown derivative method {method!r}")


def second_partial(grid: GridSpec, f: np.ndarray, i: int, method: str = "spectral") -> np.ndarray:
    ax = _grid_axis(grid, f, i)
    if method == "spectral":
        n = grid.n[i]
        shape = [1] * f.ndim
        if np.iscomplexobj(f):
            k = 2 * np.pi * sfft.fftfreq(n, d=grid.spacing[i])
        else:
            k = 2 * np.pi * sfft.rfftfreq(n, d=grid.spacing[i])
        shape[ax] = k.size
        k2 = (k**2).reshape(shape)
        if np.iscomplexobj(f):
            return sfft.ifft(-k2 * sfft.fft(f, axis=ax, workers=_workers), axis=ax, workers=_workers)
        return sfft.irfft(-k2 * sfft.rfft(f, axis=ax, workers=_workers), n=n, axis=ax, workers=_workers)
    if method == "central2":
        h = grid.spacing[i]
        return (np.roll(f, -1, axis=ax) - 2 * f + np.roll(f, 1, axis=ax)) / h**2
    raise ValueError(f"unknown derivative method {method!r}")


def gradient(grid: GridSpec, f: np.ndarray, method: str = "spectral") -> np.ndarray:
    """Gradient of a scalar field as a ``(3, *shape)`` vector field.

    Components along physical axes not spanned by the grid are zero.
    Complex input gives a complex result.
    """
    _check_finite(f)
    out = np.zeros((3,) + f.shape, dtype=np.result_type(f.dtype, float))
    for i, ax in enumerate(grid.axes):
        out[ax] = partial(grid, f, i, method)
    return out


def divergence(grid: GridSpec, v: np.ndarray, method: str = "spectral") -> np.ndarray:
    _check_finite(v, "vector field")
    out = np.zeros(v.shape[1:], dtype=v.dtype)
    for i, ax in enumerate(grid.axes):
        out = out + partial(grid, v[ax], i, method)
    return out


def laplacian(grid: GridSpec, f: np.ndarray, method: str = "spectral") -> np.ndarray:
    _check_finite(f)
    if method == "spectral":
        ax = tuple(range(f.ndim - grid.dim, f.ndim))
        if np.iscomplexobj(f):
            return sfft.ifftn(-grid.k_squared * sfft.fftn(f, axes=ax, workers=_workers), axes=ax, workers=_workers)
        return np.real(sfft.ifftn(-grid.k_squared * sfft.fftn(f, axes=ax, workers=_workers), axes=ax, workers=_workers))
    out = np.zeros_like(f)
    for i in range(grid.dim):
        out = out + second_partial(grid, f, i, method)
    return out


def integrate(grid: GridSpec, f: np.ndarray):
    """Riemann sum times cell volume over the trailing grid axes."""
    _check_finite(f)
    ax = tuple(range(f.ndim - grid.dim, f.ndim))
    return np.sum(f, axis=ax) * grid.cell_volume


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Median of ``values`` under non-negative ``weights`` (inf values allowed)."""
    v = np.ravel(values)
    w = np.ravel(weights)
    keep = w > 0
    v, w = v[keep], w[keep]
    if v.size == 0:
        raise ValueError("weighted median of an empty selection")
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    idx = int(np.searchsorted(cw, 0.5 * cw[-1]))
    return float(v[order][min(idx, v.size - 1)])


# --- snapshot files ---------------------------------------------------------

SNAPSHOT_MAGIC = b"QFLD"
SNAPSHOT_VERSION = 1
KIND_CODES = {"real": 0, "complex": 1, "spinor": 2}
_HEADER = struct.Struct("<4sII3III")  # magic, version, dim, n[3], kind, reserved


@dataclass(frozen=True)
class SnapshotHeader:
    version: int
    dim: int
    n: tuple[int, ...]
    kind: str


def write_snapshot(path, grid: GridSpec, values: np.ndarray, kind: str | None = None) -> Path:
    """Write a field snapshot: 32-byte header then little-endian float64 data."""
    values = np.asarray(values)
    if kind is None:
        if values.shape == grid.shape:
            kind = "complex" if np.iscomplexobj(values) else "real"
        elif values.shape == (2,) + grid.shape:
            kind = "spinor"
        else:
            raise ValueError(f"cannot infer snapshot kind for shape {values.shape}")
    expected = (2,) + grid.shape if kind == "spinor" else grid.shape
    if values.shape != expected:
        raise ValueError(f"{kind} snapshot needs shape {expected}, got {values.shape}")
    n3 = list(grid.n) + [1] * (3 - grid.dim)
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.dim, *n3, KIND_CODES[kind], 0)
    if kind == "real":
        data = np.ascontiguousarray(values, dtype="<f8")
    elif kind == "complex":
        c = np.asarray(values, dtype=complex)
        data = np.stack([c.real, c.imag], axis=-1).astype("<f8")
    else:
        c = np.asarray(values, dtype=complex)
        data = np.stack([c[0].real, c[0].imag, c[1].real, c[1].imag], axis=-1).astype("<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="C"))
    return path


def read_snapshot(path) -> tuple[SnapshotHeader, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot file shorter than its header")
    magic, version, dim, n0, n1, n2, code, _ = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    kinds = {v: k for k, v in KIND_CODES.items()}
    if code not in kinds:
        raise ValueError(f"unknown element kind {code}")
    kind = kinds[code]
    n = (n0, n1, n2)[:dim]
    per = {"real": 1, "complex": 2, "spinor": 4}[kind]
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != per * int(np.prod(n)):
        raise ValueError("snapshot payload size does not match header")
    data = data.reshape(n + (per,))
    if kind == "real":
        values = data[..., 0].astype(float)
    elif kind == "complex":
        values = data[..., 0] + 1j * data[..., 1]
    else:
        values = np.stack([data[..., 0] + 1j * data[..., 1], data[..., 2] + 1j * data[..., 3]])
    return SnapshotHeader(version, dim, n, kind), values
