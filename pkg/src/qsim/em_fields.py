"""Analytic electromagnetic configurations, gauge transformations, Maxwell checks.

Positions are arrays of shape ``(3, ...)``; every evaluator broadcasts over the
trailing axes. ``field_gradient`` returns the Jacobian ``J[i, j] = dB_i/dx_j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Constants:
    """Physical constants; natural units hbar = m = |e| = 1 by default.

    ``e`` is the signed charge, ``mu`` the unsigned magnetic moment. When
    ``mu`` is omitted it defaults to the Bohr magneton |e| hbar / 2m.
    """

    hbar: float = 1.0
    m: float = 1.0
    e: float = 1.0
    mu: float | None = None

    def __post_init__(self):
        if self.mu is None:
            object.__setattr__(self, "mu", bohr_magneton(self.e, self.hbar, self.m))
        for name in ("hbar", "m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (np.isfinite(self.e) and np.isfinite(self.mu)) or self.mu < 0:
            raise ValueError("e must be finite and mu finite and non-negative")

    @property
    def k(self) -> float:
        return self.e / self.m


def bohr_magneton(e: float = 1.0, hbar: float = 1.0, m: float = 1.0) -> float:
    return abs(e) * hbar / (2 * m)


class IdealizedFieldWarning(UserWarning):
    """Raised as a warning when validating a deliberately non-Maxwellian field."""


def _zeros_like_points(x, n=3):
    x = np.asarray(x, dtype=float)
    return np.zeros((n,) + x.shape[1:])


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != 3:
        raise ValueError(f"positions need a leading axis of length 3, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class FieldConfig:
    """Base field configuration: zero potentials everywhere.

    ``bounds`` optionally restricts evaluation to a box ``((lo, hi), ...)`` per
    physical axis. ``separable`` marks potentials whose component A_j does not
    depend on x_j, which the propagators exploit.
    """

    constants: Constants = field(default_factory=Constants)
    bounds: tuple | None = None

    kind = "zero"
    separable = True
    ideal = False
    static = True

    def _check(self, x, t):
        x = _as_points(x)
        if not np.isfinite(t):
            raise ValueError("time must be finite")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        if self.bounds is not None:
            for ax, (lo, hi) in enumerate(self.bounds):
                if np.any(x[ax] < lo) or np.any(x[ax] > hi):
                    raise ValueError(
                        f"{self.kind} field evaluated outside its validity region "
                        f"on axis {ax}: [{lo}, {hi}]"
                    )
        return x

    def vector_potential(self, x, t=0.0) -> np.ndarray:
        return _zeros_like_points(self._check(x, t))

    def scalar_potential(self, x, t=0.0) -> np.ndarray:
        x = self._check(x, t)
        return np.zeros(x.shape[1:])

    def magnetic_field(self, x, t=0.0) -> np.ndarray:
        return _zeros_like_points(self._check(x, t))

    def electric_field(self, x, t=0.0) -> np.ndarray:
        return _zeros_like_points(self._check(x, t))

    def field_gradient(self, x, t=0.0) -> np.ndarray:
        x = self._check(x, t)
        return np.zeros((3, 3) + x.shape[1:])

    @property
    def has_vector_potential(self) -> bool:
        return False

    @property
    def is_uniform_B(self) -> bool:
        return True

    def describe(self) -> dict:
        return {"kind": self.kind}


def zero_field(constants: Constants | None = None) -> FieldConfig:
    return FieldConfig(constants or Constants())


@dataclass(frozen=True)
class UniformElectric(FieldConfig):
    """phi = -E0 . (x - center), A = 0."""

    E0: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)
    kind = "uniform_E"

    def scalar_potential(self, x, t=0.0):
        x = self._check(x, t)
        E0 = np.asarray(self.E0, dtype=float)
        c = np.asarray(self.center, dtype=float)
        return -np.tensordot(E0, x - c.reshape((3,) + (1,) * (x.ndim - 1)), axes=1)

    def electric_field(self, x, t=0.0):
        x = self._check(x, t)
        out = np.zeros(x.shape)
        for i in range(3):
            out[i] = self.E0[i]
        return out

    def describe(self):
        return {"kind": self.kind, "E0": list(self.E0)}


def uniform_electric(E0, constants: Constants | None = None, **kw) -> UniformElectric:
    E0 = tuple(float(v) for v in np.broadcast_to(np.asarray(E0, dtype=float), (3,)))
    return UniformElectric(constants or Constants(), E0=E0, **kw)


@dataclass(frozen=True)
class UniformMagnetic(FieldConfig):
    """B = B0 along ``axis`` in the symmetric gauge A = B x (x - center) / 2."""

    B0: float = 0.0
    axis: int = 2
    center: tuple = (0.0, 0.0, 0.0)
    kind = "uniform_B"

    @property
    def B_vector(self) -> np.ndarray:
        b = np.zeros(3)
        b[self.axis] = self.B0
        return b

    @property
    def has_vector_potential(self):
        return self.B0 != 0.0

    def vector_potential(self, x, t=0.0):
        x = self._check(x, t)
        r = x - np.asarray(self.center, dtype=float).reshape((3,) + (1,) * (x.ndim - 1))
        b = self.B_vector.reshape((3,) + (1,) * (x.ndim - 1))
        return 0.5 * np.cross(b, r, axis=0)

    def magnetic_field(self, x, t=0.0):
        x = self._check(x, t)
        out = np.zeros(x.shape)
        out[self.axis] = self.B0
        return out

    def describe(self):
        return {"kind": self.kind, "B0": self.B0, "axis": "xyz"[self.axis]}


def uniform_magnetic(B0: float, axis="z", constants: Constants | None = None, **kw) -> UniformMagnetic:
    if isinstance(axis, str):
        axis = "xyz".index(axis)
    return UniformMagnetic(constants or Constants(), B0=float(B0), axis=int(axis), **kw)


def _window(x, x1, x2, width):
    """Smooth box 0.5[tanh((x-x1)/w) - tanh((x-x2)/w)], its derivative and antiderivative."""
    u1 = (x - x1) / width
    u2 = (x - x2) / width
    w = 0.5 * (np.tanh(u1) - np.tanh(u2))
    dw = 0.5 / width * (1 / np.cosh(u1) ** 2 - 1 / np.cosh(u2) ** 2)
    # log cosh, overflow-safe; antiderivative pinned to zero at the window centre
    lc = lambda u: np.logaddexp(u, -u) - np.log(2.0)  # noqa: E731
    xc = 0.5 * (x1 + x2)
    W = 0.5 * width * (lc(u1) - lc(u2) - lc((xc - x1) / width) + lc((xc - x2) / width))
    return w, dw, W


@dataclass(frozen=True)
class SternGerlach(FieldConfig):
    """Stern-Gerlach field with gradient ``beta`` along z.

    ideal:    B = (0, 0, B0 + beta w(x) z)        -- div B != 0 by construction
    physical: B = (-beta W(x), 0, B0 + beta w(x) z), W' = w  -- divergence free

    Without a window w = 1 and W(x) = x. Both variants share the vector
    potential A = (0, B0 x + beta W(x) z, 0); the ideal B has no potential of
    its own, so charged particles see the physical field's orbital coupling.
    """

    B0: float = 0.0
    beta: float = 1.0
    variant: str = "ideal"
    window: tuple | None = None  # (x1, x2, edge width)
    kind = "stern_gerlach"

    def __post_init__(self):
        if self.variant not in ("ideal", "physical"):
            raise ValueError("Stern-Gerlach variant must be ideal|physical")
        if not (np.isfinite(self.B0) and np.isfinite(self.beta)) or self.beta == 0:
            raise ValueError("Stern-Gerlach needs finite B0 and finite non-zero beta")

    @property
    def ideal(self):
        return self.variant == "ideal"

    @property
    def is_uniform_B(self):
        return False

    @property
    def has_vector_potential(self):
        return True

    def _w(self, xx):
        if self.window is None:
            return np.ones_like(xx), np.zeros_like(xx), xx
        return _window(xx, *self.window)

    def vector_potential(self, x, t=0.0):
        x = self._check(x, t)
        _, _, W = self._w(x[0])
        out = np.zeros(x.shape)
        out[1] = self.B0 * x[0] + self.beta * W * x[2]
        return out

    def magnetic_field(self, x, t=0.0):
        x = self._check(x, t)
        w, _, W = self._w(x[0])
        out = np.zeros(x.shape)
        out[2] = self.B0 + self.beta * w * x[2]
        if self.variant == "physical":
            out[0] = -self.beta * W
        return out

    def field_gradient(self, x, t=0.0):
        x = self._check(x, t)
        w, dw, _ = self._w(x[0])
        J = np.zeros((3, 3) + x.shape[1:])
        J[2, 2] = self.beta * w
        J[2, 0] = self.beta * dw * x[2]
        if self.variant == "physical":
            J[0, 0] = -self.beta * w
        return J

    def describe(self):
        d = {"kind": self.kind, "variant": self.variant, "B0": self.B0, "beta": self.beta}
        if self.window is not None:
            d["window"] = list(self.window)
        return d


def stern_gerlach_field(B0: float, beta: float, variant: str, constants: Constants | None = None,
                        window=None, **kw) -> SternGerlach:
    return SternGerlach(constants or Constants(), B0=float(B0), beta=float(beta), variant=variant,
                        window=None if window is None else tuple(float(v) for v in window), **kw)


@dataclass(frozen=True)
class CustomField(FieldConfig):
    """User potentials A(x, t) -> (3, ...) and phi(x, t) -> (...).

    B and E come from central differences with spatial step ``1e-5 * box`` and
    time step ``1e-5``; the B Jacobian uses a ``1e-3 * box`` step on top of that.
    Analytic ``B``/``E``/``grad_B`` callables override the numerical routes.
    """

    A: Callable | None = None
    phi: Callable | None = None
    box: float = 1.0
    B: Callable | None = None
    E: Callable | None = None
    grad_B: Callable | None = None
    time_dependent: bool = False
    has_A: bool = True
    uniform: bool = False
    is_separable: bool = False
    kind = "custom"

    @property
    def separable(self):
        return self.is_separable

    @property
    def static(self):
        return not self.time_dependent

    @property
    def has_vector_potential(self):
        return self.A is not None and self.has_A

    @property
    def is_uniform_B(self):
        return self.uniform

    def vector_potential(self, x, t=0.0):
        x = self._check(x, t)
        if self.A is None:
            return np.zeros(x.shape)
        return np.broadcast_to(np.asarray(self.A(x, t), dtype=float), x.shape).copy()

    def scalar_potential(self, x, t=0.0):
        x = self._check(x, t)
        if self.phi is None:
            return np.zeros(x.shape[1:])
        return np.broadcast_to(np.asarray(self.phi(x, t), dtype=float), x.shape[1:]).copy()

    def _unit(self, ax, ndim):
        e = np.zeros((3,) + (1,) * (ndim - 1))
        e[ax] = 1.0
        return e

    def magnetic_field(self, x, t=0.0):
        x = self._check(x, t)
        if self.B is not None:
            return np.broadcast_to(np.asarray(self.B(x, t), dtype=float), x.shape).copy()
        if self.A is None:
            return np.zeros(x.shape)
        return numerical_curl(lambda p: self.A(p, t), x, 1e-5 * self.box)

    def electric_field(self, x, t=0.0):
        x = self._check(x, t)
        if self.E is not None:
            return np.broadcast_to(np.asarray(self.E(x, t), dtype=float), x.shape).copy()
        out = np.zeros(x.shape)
        if self.phi is not None:
            out -= numerical_gradient(lambda p: self.phi(p, t), x, 1e-5 * self.box)
        if self.A is not None and self.time_dependent:
            ht = 1e-5
            out -= (np.asarray(self.A(x, t + ht)) - np.asarray(self.A(x, t - ht))) / (2 * ht)
        return out

    def field_gradient(self, x, t=0.0):
        x = self._check(x, t)
        if self.grad_B is not None:
            return np.asarray(self.grad_B(x, t), dtype=float)
        h = 1e-3 * self.box
        J = np.zeros((3, 3) + x.shape[1:])
        for j in range(3):
            d = h * self._unit(j, x.ndim)
            J[:, j] = (self.magnetic_field(x + d, t) - self.magnetic_field(x - d, t)) / (2 * h)
        return J

    def describe(self):
        return {"kind": self.kind}


def custom_field(A=None, phi=None, box: float = 1.0, constants: Constants | None = None, **kw) -> CustomField:
    return CustomField(constants or Constants(), A=A, phi=phi, box=float(box), **kw)


def numerical_gradient(f, x, h):
    out = np.zeros(x.shape)
    for j in range(3):
        d = np.zeros((3,) + (1,) * (x.ndim - 1))
        d[j] = h
        out[j] = (np.asarray(f(x + d)) - np.asarray(f(x - d))) / (2 * h)
    return out


def numerical_curl(F, x, h):
    """Central-difference curl of a vector callable F(x) -> (3, ...)."""
    d = np.zeros((3, 3) + x.shape[1:])  # d[i, j] = dF_i/dx_j
    for j in range(3):
        s = np.zeros((3,) + (1,) * (x.ndim - 1))
        s[j] = h
        d[:, j] = (np.asarray(F(x + s)) - np.asarray(F(x - s))) / (2 * h)
    return np.stack([d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1]])


# --- gauge -----------------------------------------------------------------

@dataclass(frozen=True)
class GaugeFunction:
    """Gauge scalar Lambda(x, t) with analytic gradient and time derivative.

    Optional ``hessian`` (-> (3, 3, ...)) and ``grad_dt`` (-> (3, ...)) make the
    field invariance exact instead of finite-difference based.
    """

    value: Callable
    grad: Callable
    dt: Callable
    hessian: Callable | None = None
    grad_dt: Callable | None = None
    scale: float = 1.0

    @classmethod
    def from_expression(cls, expr: str, **params) -> "GaugeFunction":
        """Build from a sympy-parsable expression in x, y, z, t."""
        import sympy as sp

        x, y, z, t = sp.symbols("x y z t", real=True)
        lam = sp.sympify(expr, locals={k: sp.Float(v) for k, v in params.items()} | {"x": x, "y": y, "z": z, "t": t})
        X = (x, y, z)
        grad = [sp.diff(lam, v) for v in X]
        hess = [[sp.diff(g, v) for v in X] for g in grad]
        lam_t = sp.diff(lam, t)
        grad_t = [sp.diff(lam_t, v) for v in X]

        def vec(exprs):
            fs = [sp.lambdify((x, y, z, t), e, "numpy") for e in exprs]
            return lambda p, tt=0.0: np.stack([np.broadcast_to(np.asarray(f(p[0], p[1], p[2], tt), float), p.shape[1:]) for f in fs])

        def scal(e):
            f = sp.lambdify((x, y, z, t), e, "numpy")
            return lambda p, tt=0.0: np.broadcast_to(np.asarray(f(p[0], p[1], p[2], tt), float), p.shape[1:]).copy()

        hf = [vec(row) for row in hess]
        return cls(
            value=scal(lam),
            grad=vec(grad),
            dt=scal(lam_t),
            hessian=lambda p, tt=0.0: np.stack([h(p, tt) for h in hf]),
            grad_dt=vec(grad_t),
        )


@dataclass(frozen=True)
class GaugeTransformed(FieldConfig):
    """Potentials A + grad(Lambda), phi - dLambda/dt of a base configuration."""

    base: FieldConfig | None = None
    gauge: GaugeFunction | None = None
    fd_step: float = 1e-5
    kind = "gauge_transformed"

    @property
    def separable(self):
        return False

    @property
    def ideal(self):
        return self.base.ideal

    @property
    def static(self):
        return False

    @property
    def has_vector_potential(self):
        return True

    @property
    def is_uniform_B(self):
        return self.base.is_uniform_B

    def vector_potential(self, x, t=0.0):
        x = self._check(x, t)
        return self.base.vector_potential(x, t) + self.gauge.grad(x, t)

    def scalar_potential(self, x, t=0.0):
        x = self._check(x, t)
        return self.base.scalar_potential(x, t) - self.gauge.dt(x, t)

    def magnetic_field(self, x, t=0.0):
        x = self._check(x, t)
        B = self.base.magnetic_field(x, t)
        if self.gauge.hessian is not None:
            H = self.gauge.hessian(x, t)
            curl = np.stack([H[2, 1] - H[1, 2], H[0, 2] - H[2, 0], H[1, 0] - H[0, 1]])
        else:
            curl = numerical_curl(lambda p: self.gauge.grad(p, t), x, self.fd_step * self.gauge.scale)
        return B + curl

    def electric_field(self, x, t=0.0):
        x = self._check(x, t)
        E = self.base.electric_field(x, t)
        # -d/dt grad(Lambda) + grad(dLambda/dt)
        if self.gauge.grad_dt is not None:
            # both terms are the same mixed derivative, so they cancel exactly
            return E
        ht = self.fd_step
        dA = (self.gauge.grad(x, t + ht) - self.gauge.grad(x, t - ht)) / (2 * ht)
        gphi = numerical_gradient(lambda p: self.gauge.dt(p, t), x, self.fd_step * self.gauge.scale)
        return E - dA + gphi

    def field_gradient(self, x, t=0.0):
        return self.base.field_gradient(x, t)

    def describe(self):
        return {"kind": self.kind, "base": self.base.describe()}


def gauge_transform(cfg: FieldConfig, gauge: GaugeFunction) -> GaugeTransformed:
    """New configuration with A' = A + grad(Lambda) and phi' = phi - dLambda/dt."""
    return GaugeTransformed(cfg.constants, cfg.bounds, base=cfg, gauge=gauge)


def fields_from_potentials(cfg: FieldConfig, x, t: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """(B, E) at the given point(s) and time."""
    return cfg.magnetic_field(x, t), cfg.electric_field(x, t)


def with_constants(cfg: FieldConfig, constants: Constants) -> FieldConfig:
    return replace(cfg, constants=constants)


def max_divergence(cfg: FieldConfig, points, t: float = 0.0) -> float:
    """Largest |div B| over ``points`` (shape (3, ...)) from the B Jacobian.

    Validating the ideal Stern-Gerlach field warns instead of failing: its
    divergence is beta by construction.
    """
    if cfg.ideal:
        warnings.warn("idealized field: the ideal Stern-Gerlach variant is not divergence free",
                      IdealizedFieldWarning, stacklevel=2)
    J = cfg.field_gradient(np.asarray(points, dtype=float), t)
    return float(np.max(np.abs(J[0, 0] + J[1, 1] + J[2, 2])))
