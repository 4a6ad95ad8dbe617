"""Declarative scenarios: strict TOML configuration, runners and reports.

A config names a ``scenario`` and up to eight blocks (grid, field, initial,
integrator, constants, output, bloch, analysis). Missing keys take the
scenario's defaults, unknown keys are errors. ``run_scenario`` writes CSVs,
snapshots, heatmaps and a flat ``report.json`` into the output directory.
"""

from __future__ import annotations

import copy
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import bloch as bl
from . import bohmian as bm
from . import ehrenfest as eh
from . import em_fields as ef
from . import grid as g
from . import pauli as pa
from . import schrodinger as sc

SCENARIOS = (
    "free_packet",
    "uniform_field_precession",
    "stern_gerlach",
    "ehrenfest_report",
    "bloch_relaxation",
    "classical_vs_bohm",
)
FIELD_KINDS = ("zero", "uniform_E", "uniform_B", "stern_gerlach", "custom")
FORMATS = ("csv", "pgm", "snapshot", "png")
BOUNDARY_LIMIT = 1e-10

_COMMON = {
    "grid": {"n": [256], "length": [48.0], "origin": None, "axes": None},
    "field": {"kind": "zero"},
    "initial": {"center": [0.0, 0.0, 0.0], "width": 1.0, "momentum": [0.0, 0.0, 0.0], "spin": [1.0, 0.0, 0.0]},
    "integrator": {"dt": 0.01, "steps": 100, "snapshot_every": 5, "method": "auto", "substeps": 4},
    "constants": {"hbar": 1.0, "m": 1.0, "e": 1.0, "mu": None},
    "output": {"directory": "runs/out", "formats": ["csv", "pgm", "snapshot"]},
    "analysis": {},
}

DEFAULTS = {
    "free_packet": {
        "grid": {"n": [256], "length": [48.0]},
        "initial": {"center": [0.0, 0.0, 0.0], "width": 1.0, "momentum": [0.5, 0.0, 0.0]},
        "integrator": {"dt": 0.01, "steps": 347},
        "analysis": {"sample_every": 1},
    },
    "uniform_field_precession": {
        "grid": {"n": [128, 128], "length": [24.0, 24.0]},
        "field": {"kind": "uniform_B", "B0": 1.0, "axis": "z"},
        "initial": {"center": [0.0, 0.0, 0.0], "width": 1.0, "momentum": [1.0, 0.0, 0.0], "spin": [1.0, 0.0, 0.0]},
        "integrator": {"dt": 0.001, "steps": 1000},
        "analysis": {"sample_every": 1},
    },
    "stern_gerlach": {
        "grid": {"n": [256, 256], "length": [64.0, 64.0], "origin": [-32.0, -32.0], "axes": ["x", "z"]},
        "field": {"kind": "stern_gerlach", "B0": 20.0, "beta": 2.0},
        "initial": {"center": [-5.0, 0.0, 0.0], "width": 1.0, "momentum": [2.0, 0.0, 0.0], "spin": [1.0, 0.0, 0.0]},
        "integrator": {"dt": 0.01, "steps": 400, "snapshot_every": 5},
        "constants": {"e": 0.0, "mu": 0.5},
        "analysis": {"peak_floor": 1e-3, "seeds": 9, "sample_every": 1},
    },
    "ehrenfest_report": {
        "grid": {"n": [128, 128], "length": [24.0, 24.0]},
        "field": {"kind": "uniform_B", "B0": 1.0, "axis": "z"},
        "initial": {"center": [0.0, 0.0, 0.0], "width": 1.0, "momentum": [1.0, 0.0, 0.0], "spin": [1.0, 0.0, 1.0]},
        "integrator": {"dt": 0.001, "steps": 1000},
        "analysis": {"sample_every": 1},
    },
    "bloch_relaxation": {
        "grid": {"n": [8], "length": [1.0]},
        "field": {"kind": "zero"},
        "integrator": {"dt": 0.001, "steps": 10000},
        "output": {"formats": ["csv", "png"]},
        "bloch": {"T1": 2.0, "T2": 1.0, "M0": 1.0, "gamma": "electron_default", "B": [0.0, 0.0, 5.0],
                  "M_init": [1.0, 0.0, 0.0]},
    },
    "classical_vs_bohm": {
        "grid": {"n": [640, 640], "length": [48.0, 48.0]},
        "field": {"kind": "uniform_B", "B0": 4.0, "axis": "z"},
        "initial": {"center": [1.0, 0.0, 0.0], "width": 2.2, "momentum": [0.0, -4.0, 0.0]},
        "integrator": {"dt": math.pi / 2000, "steps": 1000, "snapshot_every": 2},
        "analysis": {"narrow_width": 0.15, "offset_sigmas": 1.0},
    },
}

FIELD_KEYS = {
    "zero": set(),
    "uniform_E": {"E0"},
    "uniform_B": {"B0", "axis", "center"},
    "stern_gerlach": {"B0", "beta", "variant", "window"},
    "custom": {"A", "phi", "time_dependent", "box"},
}
BLOCK_KEYS = {
    "grid": {"n", "length", "origin", "axes"},
    "initial": {"center", "width", "momentum", "spin"},
    "integrator": {"dt", "steps", "snapshot_every", "method", "substeps"},
    "constants": {"hbar", "m", "e", "mu"},
    "output": {"directory", "formats"},
    "bloch": {"T1", "T2", "M0", "gamma", "B", "M_init"},
    "analysis": {"sample_every", "peak_floor", "seeds", "narrow_width", "offset_sigmas"},
}
TOP_KEYS = {"scenario", "name"} | set(BLOCK_KEYS) | {"field"}


class ConfigError(ValueError):
    """Every problem found in a configuration, one per line."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class ScenarioError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    name: str
    grid: dict
    field: dict
    initial: dict
    integrator: dict
    constants: dict
    output: dict
    analysis: dict
    bloch: dict | None = None

    def to_dict(self) -> dict:
        d = {k: copy.deepcopy(getattr(self, k)) for k in
             ("scenario", "name", "grid", "field", "initial", "integrator", "constants", "output", "analysis")}
        if self.bloch is not None:
            d["bloch"] = copy.deepcopy(self.bloch)
        return d

    @property
    def horizon(self) -> float:
        return self.integrator["dt"] * self.integrator["steps"]


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _axis_index(a):
    if isinstance(a, str) and a in ("x", "y", "z"):
        return "xyz".index(a)
    if isinstance(a, int) and not isinstance(a, bool) and 0 <= a <= 2:
        return a
    raise ValueError(f"axis must be x|y|z or 0..2, got {a!r}")


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _vec(v, n=3):
    return isinstance(v, list) and len(v) == n and all(_is_num(x) for x in v)


def validate_config(raw: str | dict) -> ScenarioConfig:
    """Parse TOML text (or a dict), fill defaults, and check every block.

    All problems are collected and raised together as a ConfigError.
    """
    if isinstance(raw, str):
        try:
            data = tomllib.loads(raw)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"not parseable: {exc}"]) from None
    else:
        data = copy.deepcopy(raw)
    problems: list[str] = []
    unknown = set(data) - TOP_KEYS
    if unknown:
        problems.append(f"unknown top-level keys: {sorted(unknown)}")
    scen = data.get("scenario")
    if scen is None:
        raise ConfigError(problems + ["missing required key 'scenario'"])
    if scen not in SCENARIOS:
        raise ConfigError(problems + [f"scenario must be one of {'|'.join(SCENARIOS)}, got {scen!r}"])

    for block, keys in BLOCK_KEYS.items():
        if block in data:
            if not isinstance(data[block], dict):
                problems.append(f"[{block}] must be a table")
                continue
            extra = set(data[block]) - keys
            if extra:
                problems.append(f"[{block}] unknown keys: {sorted(extra)}")
    if "bloch" in data and scen != "bloch_relaxation":
        problems.append("[bloch] only applies to the bloch_relaxation scenario")

    user_field = data.get("field", {})
    if not isinstance(user_field, dict):
        problems.append("[field] must be a table")
        user_field = {}
    base = _merge(_COMMON, DEFAULTS[scen])
    if "kind" in user_field and user_field["kind"] != base["field"].get("kind"):
        base["field"] = {"kind": user_field["kind"]}  # do not inherit another kind's parameters
    merged = _merge(base, {k: v for k, v in data.items() if k in BLOCK_KEYS or k == "field"})

    gr = merged["grid"]
    n, length = gr.get("n"), gr.get("length")
    dim = len(n) if isinstance(n, list) else 0
    if not (isinstance(n, list) and 1 <= dim <= 3 and all(isinstance(v, int) and not isinstance(v, bool) for v in n)):
        problems.append("[grid] n must be a list of 1..3 integers")
    elif any(v < 8 for v in n):
        problems.append("[grid] n entries must be >= 8")
    if not (isinstance(length, list) and len(length) == dim and all(_is_num(v) and v > 0 for v in length)):
        problems.append("[grid] length must list one positive extent per axis")
    if gr.get("origin") is not None and not _vec(gr["origin"], dim):
        problems.append("[grid] origin must list one coordinate per axis")
    if gr.get("axes") is not None:
        try:
            ax = [_axis_index(a) for a in gr["axes"]]
            if len(ax) != dim or len(set(ax)) != dim:
                raise ValueError("axes must be distinct, one per grid axis")
        except (ValueError, TypeError) as exc:
            problems.append(f"[grid] {exc}")

    fld = merged["field"]
    kind = fld.get("kind")
    if kind not in FIELD_KINDS:
        problems.append(f"[field] kind must be one of {'|'.join(FIELD_KINDS)}, got {kind!r}")
    else:
        extra = set(fld) - {"kind"} - FIELD_KEYS[kind]
        if extra:
            problems.append(f"[field] unknown keys for kind {kind}: {sorted(extra)}")
        if kind == "uniform_E":
            fld.setdefault("E0", [0.0, 0.0, 0.0])
            if not _vec(fld["E0"]):
                problems.append("[field] E0 must be a 3-vector")
        elif kind == "uniform_B":
            fld.setdefault("B0", 1.0)
            fld.setdefault("axis", "z")
            fld.setdefault("center", [0.0, 0.0, 0.0])
            if not _is_num(fld["B0"]):
                problems.append("[field] B0 must be a number")
            try:
                _axis_index(fld["axis"])
            except ValueError as exc:
                problems.append(f"[field] {exc}")
            if not _vec(fld["center"]):
                problems.append("[field] center must be a 3-vector")
        elif kind == "stern_gerlach":
            if "variant" not in user_field:
                problems.append("[field] stern_gerlach needs variant: ideal|physical required")
            elif fld["variant"] not in ("ideal", "physical"):
                problems.append("[field] variant: ideal|physical required")
            fld.setdefault("B0", 0.0)
            fld.setdefault("beta", 1.0)
            if not (_is_num(fld["B0"]) and _is_num(fld["beta"]) and fld["beta"] != 0):
                problems.append("[field] B0 and non-zero beta must be finite numbers")
            w = fld.get("window")
            if w is not None and not (_vec(w) and w[0] < w[1] and w[2] > 0):
                problems.append("[field] window must be [x1, x2, width] with x1 < x2, width > 0")
        elif kind == "custom":
            A = fld.get("A")
            if A is not None and not (isinstance(A, list) and len(A) == 3 and all(isinstance(v, str) for v in A)):
                problems.append("[field] custom A must be three expression strings")
            if fld.get("phi") is not None and not isinstance(fld["phi"], str):
                problems.append("[field] custom phi must be an expression string")

    ini = merged["initial"]
    if not _vec(ini.get("center")):
        problems.append("[initial] center must be a 3-vector")
    wd = ini.get("width")
    if not ((_is_num(wd) and wd > 0) or (_vec(wd) and all(v > 0 for v in wd))):
        problems.append("[initial] width must be positive (number or 3-vector)")
    if not _vec(ini.get("momentum")):
        problems.append("[initial] momentum must be a 3-vector")
    if not (_vec(ini.get("spin")) and any(v != 0 for v in ini["spin"])):
        problems.append("[initial] spin must be a non-zero 3-vector")

    it = merged["integrator"]
    if not (_is_num(it.get("dt")) and it["dt"] > 0):
        problems.append(f"[integrator] dt must be a positive number, got {it.get('dt')!r}")
    for key in ("steps", "snapshot_every", "substeps"):
        v = it.get(key)
        if not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
            problems.append(f"[integrator] {key} must be an integer >= 1, got {v!r}")
    if it.get("method") not in ("auto", "split", "cn"):
        problems.append("[integrator] method must be auto|split|cn")

    co = merged["constants"]
    for key in ("hbar", "m"):
        if not (_is_num(co.get(key)) and co[key] > 0):
            problems.append(f"[constants] {key} must be positive")
    if not _is_num(co.get("e")):
        problems.append("[constants] e must be a finite number")
    if co.get("mu") is not None and not (_is_num(co["mu"]) and co["mu"] >= 0):
        problems.append("[constants] mu must be a non-negative number")

    out = merged["output"]
    if not isinstance(out.get("directory"), str) or not out["directory"]:
        problems.append("[output] directory must be a non-empty string")
    fm = out.get("formats")
    if not (isinstance(fm, list) and all(f in FORMATS for f in fm)):
        problems.append(f"[output] formats must be a list drawn from {list(FORMATS)}")

    an = merged["analysis"]
    for key in ("sample_every", "seeds"):
        if key in an and not (isinstance(an[key], int) and an[key] >= 1):
            problems.append(f"[analysis] {key} must be an integer >= 1")
    for key in ("peak_floor", "narrow_width", "offset_sigmas"):
        if key in an and not (_is_num(an[key]) and an[key] > 0):
            problems.append(f"[analysis] {key} must be positive")

    blo = merged.get("bloch") if scen == "bloch_relaxation" else None
    if blo is not None:
        for key in ("T1", "T2"):
            if not (_is_num(blo.get(key)) and blo[key] > 0):
                problems.append(f"[bloch] {key} must be positive")
        if not _is_num(blo.get("M0")):
            problems.append("[bloch] M0 must be a number")
        gm = blo.get("gamma")
        if not (gm == "electron_default" or (_is_num(gm) and gm > 0)):
            problems.append("[bloch] gamma must be positive or \"electron_default\"")
        for key in ("B", "M_init"):
            if not _vec(blo.get(key)):
                problems.append(f"[bloch] {key} must be a 3-vector")

    if problems:
        raise ConfigError(problems)

    cfg = ScenarioConfig(
        scenario=scen, name=str(data.get("name", scen)), grid=merged["grid"], field=fld, initial=ini,
        integrator=it, constants=co, output=out, analysis=an, bloch=blo,
    )
    if cfg.scenario != "bloch_relaxation":
        _check_runtime_invariants(cfg)
    return cfg


def _check_runtime_invariants(cfg: ScenarioConfig) -> None:
    problems = []
    try:
        grid = build_grid(cfg)
        const = build_constants(cfg)
        fcfg = build_field(cfg, const, grid)
        psi = initial_orbital(cfg, grid, const, fcfg=fcfg)
        amp = sc.boundary_amplitude(grid, psi)
        if amp >= BOUNDARY_LIMIT:
            problems.append(f"[initial] packet boundary amplitude {amp:.3g} >= {BOUNDARY_LIMIT:g}; enlarge the box")
        sc.OrbitalPropagator(grid, fcfg, cfg.integrator["dt"], cfg.integrator["method"])
    except ValueError as exc:
        problems.append(str(exc))
    if problems:
        raise ConfigError(problems)


def load_config(path) -> ScenarioConfig:
    return validate_config(Path(path).read_text())


# --- builders -----------------------------------------------------------------

def build_grid(cfg: ScenarioConfig) -> g.GridSpec:
    gr = cfg.grid
    axes = None if gr.get("axes") is None else tuple(_axis_index(a) for a in gr["axes"])
    origin = None if gr.get("origin") is None else tuple(gr["origin"])
    return g.GridSpec(tuple(gr["n"]), tuple(gr["length"]), origin, axes)


def build_constants(cfg: ScenarioConfig) -> ef.Constants:
    c = cfg.constants
    return ef.Constants(hbar=float(c["hbar"]), m=float(c["m"]), e=float(c["e"]),
                        mu=None if c.get("mu") is None else float(c["mu"]))


def _expr_callable(expr: str):
    import sympy as sp

    x, y, z, t = sp.symbols("x y z t", real=True)
    f = sp.lambdify((x, y, z, t), sp.sympify(expr, locals={"x": x, "y": y, "z": z, "t": t}), "numpy")
    return lambda p, tt=0.0: np.broadcast_to(np.asarray(f(p[0], p[1], p[2], tt), float), p.shape[1:])


def build_field(cfg: ScenarioConfig, const: ef.Constants, grid: g.GridSpec | None = None) -> ef.FieldConfig:
    f = cfg.field
    kind = f["kind"]
    if kind == "zero":
        return ef.zero_field(const)
    if kind == "uniform_E":
        return ef.uniform_electric(tuple(float(v) for v in f["E0"]), const)
    if kind == "uniform_B":
        return ef.uniform_magnetic(f["B0"], _axis_index(f["axis"]), const, center=tuple(float(v) for v in f["center"]))
    if kind == "stern_gerlach":
        return ef.stern_gerlach_field(f["B0"], f["beta"], f["variant"], const, window=f.get("window"))
    A_exprs = f.get("A")
    A = None
    if A_exprs is not None:
        comps = [_expr_callable(e) for e in A_exprs]
        A = lambda p, tt=0.0: np.stack([c(p, tt) for c in comps])  # noqa: E731
    phi = _expr_callable(f["phi"]) if f.get("phi") else None
    box = float(f.get("box", max(grid.length) if grid is not None else 1.0))
    return ef.custom_field(A, phi, box, const, time_dependent=bool(f.get("time_dependent", False)))


def initial_orbital(cfg: ScenarioConfig, grid: g.GridSpec, const: ef.Constants, width=None,
                    fcfg: ef.FieldConfig | None = None) -> np.ndarray:
    """Gaussian packet whose *kinetic* momentum at its centre is ``initial.momentum``.

    With a vector potential the canonical wavevector is (p + eA(centre))/hbar,
    so the launch velocity does not depend on the gauge.
    """
    ini = cfg.initial
    p = np.asarray(ini["momentum"], dtype=float)
    if fcfg is not None and const.e != 0 and fcfg.has_vector_potential:
        centre = np.asarray(ini["center"], dtype=float).reshape(3, 1)
        p = p + const.e * fcfg.vector_potential(centre, 0.0)[:, 0]
    return sc.gaussian_packet(grid, ini["center"], ini["width"] if width is None else width, p / const.hbar)


def _is_pauli(cfg: ScenarioConfig) -> bool:
    return cfg.scenario in ("uniform_field_precession", "stern_gerlach", "ehrenfest_report")


# --- report -------------------------------------------------------------------

@dataclass
class RunReport:
    scenario: str
    out_dir: Path
    entries: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def metric(self, name: str, value, threshold, criterion: int, relation: str = "<="):
        """Record a metric and its pass/fail against ``threshold`` (None: reported only)."""
        value = float(value)
        if not math.isfinite(value):
            ok = False
        elif threshold is None:
            ok = True
        elif relation == "<=":
            ok = value <= threshold
        elif relation == ">=":
            ok = value >= threshold
        elif relation == ">":
            ok = value > threshold
        elif relation == "<":
            ok = value < threshold
        elif relation == "==":
            ok = value == threshold
        else:
            raise ValueError(relation)
        # non-finite values are kept as strings so report.json stays valid JSON
        self.entries[f"metric.{name}"] = value if math.isfinite(value) else str(value)
        self.entries[f"threshold.{name}"] = "none" if threshold is None else f"{relation} {threshold:g}"
        self.entries[f"criterion.{name}"] = criterion
        self.entries[f"pass.{name}"] = "pass" if ok else "fail"
        return ok

    def value(self, name: str, value):
        """Informational entry without a pass/fail tag."""
        self.entries[f"info.{name}"] = value if isinstance(value, str) else float(value)

    def add_file(self, path):
        self.files.append(Path(path).name)

    @property
    def all_pass(self) -> bool:
        return all(v == "pass" for k, v in self.entries.items() if k.startswith("pass."))

    def failures(self) -> list[str]:
        return [k[5:] for k, v in self.entries.items() if k.startswith("pass.") and v != "pass"]

    def to_flat(self) -> dict:
        out = {"scenario": self.scenario, "all_pass": "pass" if self.all_pass else "fail"}
        out.update(self.entries)
        for i, f in enumerate(self.files):
            out[f"file.{i:02d}"] = f
        for i, n in enumerate(self.notes):
            out[f"note.{i:02d}"] = n
        return out

    def write(self) -> Path:
        path = self.out_dir / "report.json"
        path.write_text(json.dumps(self.to_flat(), indent=2, sort_keys=False) + "\n")
        return path


# --- output helpers -------------------------------------------------------------

def emit_heatmap(values: np.ndarray, path, slice_axis: int | None = None, index: int | None = None):
    """Write an 8-bit binary PGM; returns (path, degenerate).

    Linear map min -> 0, max -> 255; image rows follow the first array axis.
    3D input needs ``slice_axis`` (index defaults to the middle). A constant
    field gives a uniform mid-gray image and ``degenerate=True``.
    """
    f = np.asarray(values, dtype=float)
    if f.ndim == 3:
        if slice_axis is None:
            raise ValueError("3D heatmaps need a slice axis")
        index = f.shape[slice_axis] // 2 if index is None else index
        f = np.take(f, index, axis=slice_axis)
    elif f.ndim == 1:
        f = f[np.newaxis, :]
    if f.ndim != 2:
        raise ValueError("heatmap needs 1D, 2D or sliced 3D data")
    g._check_finite(f, "heatmap field")
    lo, hi = float(f.min()), float(f.max())
    degenerate = not hi > lo
    if degenerate:
        img = np.full(f.shape, 128, dtype=np.uint8)
    else:
        img = np.round((f - lo) / (hi - lo) * 255.0).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes(order="C"))
    return path, degenerate


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


class _CsvWriter:
    def __init__(self, path, columns):
        self.path = Path(path)
        self.fh = open(self.path, "w", newline="")
        self.fh.write(",".join(columns) + "\n")

    def row(self, values):
        self.fh.write(",".join(_fmt(v) for v in values) + "\n")

    def close(self):
        self.fh.close()


# --- runners --------------------------------------------------------------------

class _Guard:
    """Aborts on non-finite states, pointing at the last good snapshot."""

    def __init__(self, out_dir: Path, grid: g.GridSpec):
        self.out_dir, self.grid = out_dir, grid
        self.last = None

    def check(self, state):
        arr = state.components
        if not np.all(np.isfinite(arr)):
            ref = "none"
            if self.last is not None:
                path = self.out_dir / "last_good.qfld"
                vals = self.last.components
                g.write_snapshot(path, self.grid, vals[0] if vals.shape[0] == 1 else vals)
                ref = f"{path} (t={self.last.t:g})"
            raise ScenarioError(f"non-finite wave function at t={state.t:g}; last good snapshot: {ref}")
        self.last = state


def _diag_row(state, cfg_f, cont, pauli: bool):
    grid = state.grid
    rho = np.sum(np.abs(state.components) ** 2, axis=0)
    Q, m = sc.quantum_potential(grid, cfg_f.constants.m * rho, cfg_f.constants)
    row = [state.t, g.integrate(grid, rho), *eh.expectation_position(state), *eh.expectation_velocity(state, cfg_f),
           cont, float(np.max(np.abs(Q[m]))) if np.any(m) else 0.0]
    if pauli:
        S = eh._spin_vector(state.components)
        sig = np.asarray(g.integrate(grid, S))
        en = pa.energy_expectation(state, cfg_f)
        row += [*sig, en.E_spin, pa.spin_length(grid, state.components)]
    return row


DIAG_COLUMNS = ["t", "norm", "x", "y", "z", "vx", "vy", "vz", "continuity_residual", "max_abs_Q"]
PAULI_COLUMNS = ["sigma_x", "sigma_y", "sigma_z", "E_spin", "L_s"]


def _propagate(cfg, grid, fcfg, state, pauli, on_state, guard):
    """Step through the run, calling on_state(prev, cur, next_or_None, index)."""
    it = cfg.integrator
    stepper = pa.evolve if pauli else sc.evolve
    prev, cur = None, state
    idx = 0
    for nxt in stepper(state, fcfg, it["dt"], it["steps"], it["method"]):
        guard.check(nxt)
        on_state(prev, cur, nxt, idx)
        prev, cur = cur, nxt
        idx += 1
    on_state(prev, cur, None, idx)
    return cur


def _continuity(prev, cur, nxt, fcfg):
    if prev is None or nxt is None:
        return None
    return sc.continuity_residual_from(prev, cur, nxt, fcfg)


def _run_wave(cfg: ScenarioConfig, out: Path, report: RunReport):
    """Shared driver for the wave-function scenarios."""
    grid = build_grid(cfg)
    const = build_constants(cfg)
    fcfg = build_field(cfg, const, grid)
    pauli = _is_pauli(cfg)
    psi = initial_orbital(cfg, grid, const, fcfg=fcfg)
    if pauli:
        state = pa.PauliState(grid, pa.packet_spinor(psi, cfg.initial["spin"]))
    else:
        state = sc.SchrodingerState(grid, psi)
    fmts = cfg.output["formats"]
    csv_on = "csv" in fmts
    every = int(cfg.analysis.get("sample_every", 1))
    snap_every = cfg.integrator["snapshot_every"]
    diag = _CsvWriter(out / "diagnostics.csv", DIAG_COLUMNS + (PAULI_COLUMNS if pauli else [])) if csv_on else None
    series = eh.ExpectationSeries()
    norm0 = state.norm()
    ctx = {"norm_drift": 0.0, "boundary": sc.boundary_amplitude(grid, state.components),
           "sigma": [], "states": [], "snapshots": []}
    kind = "pauli" if pauli else "schrodinger"
    hooks = _SCENARIO_HOOKS.get(cfg.scenario)
    if hooks and hooks.get("setup"):
        hooks["setup"](cfg, grid, fcfg, state, ctx, out)

    def on_state(prev, cur, nxt, idx):
        ctx["norm_drift"] = max(ctx["norm_drift"], abs(cur.norm() - norm0))
        if idx % snap_every == 0 or nxt is None:
            ctx["boundary"] = max(ctx["boundary"], sc.boundary_amplitude(grid, cur.components))
            if hooks and hooks.get("snapshot"):
                hooks["snapshot"](cfg, grid, fcfg, cur, ctx)
        if diag is not None and (idx % snap_every == 0 or nxt is None):
            diag.row(_diag_row(cur, fcfg, _continuity(prev, cur, nxt, fcfg), pauli))
        if idx % every == 0:
            series.record(cur, fcfg, kind)
            if hooks and hooks.get("sample"):
                hooks["sample"](cfg, grid, fcfg, cur, ctx)

    guard = _Guard(out, grid)
    guard.check(state)
    final = _propagate(cfg, grid, fcfg, state, pauli, on_state, guard)
    if diag is not None:
        diag.close()
        report.add_file(diag.path)
        path = eh.write_series_csv(series, out / "ehrenfest.csv")
        report.add_file(path)
    if "snapshot" in fmts:
        vals = final.components
        path = g.write_snapshot(out / "final.qfld", grid, vals[0] if vals.shape[0] == 1 else vals)
        report.add_file(path)
    if "pgm" in fmts and grid.dim >= 2:
        rho = np.sum(np.abs(final.components) ** 2, axis=0)
        path, _ = emit_heatmap(rho, out / "density.pgm", slice_axis=2 if grid.dim == 3 else None)
        report.add_file(path)
    report.value("boundary_amplitude_max", ctx["boundary"])
    report.value("norm_drift", ctx["norm_drift"])
    if ctx["boundary"] > BOUNDARY_LIMIT:
        report.notes.append(f"packet reached the boundary at amplitude {ctx['boundary']:.3g}")
    return grid, fcfg, state, final, series, ctx


def _first_law(report, series, criterion=4):
    _, _, v = series.arrays()
    vmax = float(np.max(np.linalg.norm(v, axis=1)))
    r = eh.first_law_residual(series)
    report.value("first_law_abs", r)
    report.metric("first_law_rel", r / vmax if vmax > 0 else r, 1e-6, criterion)


def _second_law(report, series, grid, criterion=5):
    absr, rel = eh.second_law_residual(series, axes=grid.axes)
    report.value("second_law_abs", absr)
    report.metric("second_law_rel", rel, 1e-2, criterion)


# free packet ------------------------------------------------------------------

def _fp_sample(cfg, grid, fcfg, cur, ctx):
    rho = np.sum(np.abs(cur.components) ** 2, axis=0)
    x = grid.positions
    mean = np.asarray(g.integrate(grid, rho * x))
    var = np.asarray(g.integrate(grid, rho * x**2)) - mean**2
    ctx["sigma"].append((cur.t, np.sqrt(np.maximum(var, 0.0))))


def run_free_packet(cfg: ScenarioConfig, out: Path, report: RunReport):
    grid, fcfg, state, final, series, ctx = _run_wave(cfg, out, report)
    report.metric("norm_drift_max", ctx["norm_drift"], 1e-8, 1)
    _first_law(report, series)
    if cfg.field["kind"] != "zero":
        report.notes.append("width oracle skipped: the packet is not free")
        return
    c = fcfg.constants
    w0 = np.broadcast_to(np.asarray(cfg.initial["width"], dtype=float), (3,))
    times = np.array([s[0] for s in ctx["sigma"]])
    meas = np.array([s[1] for s in ctx["sigma"]])
    worst = 0.0
    cols = ["t"]
    rows = [times]
    for ax in grid.axes:
        s0 = w0[ax]
        ana = s0 * np.sqrt(1 + (c.hbar * times / (2 * c.m * s0**2)) ** 2)
        upto = ana <= 2 * s0 * (1 + 1e-9)
        err = np.abs(meas[:, ax] - ana) / ana
        worst = max(worst, float(err[upto].max()))
        cols += [f"sigma_{'xyz'[ax]}", f"sigma_{'xyz'[ax]}_analytic"]
        rows += [meas[:, ax], ana]
        ratio = float(ana[-1] / s0)
        report.value(f"width_ratio_final_{'xyz'[ax]}", ratio)
    if "csv" in cfg.output["formats"]:
        w = _CsvWriter(out / "sigma.csv", cols)
        for r in np.array(rows).T:
            w.row(r)
        w.close()
        report.add_file(w.path)
    report.metric("sigma_rel_error_max", worst, 5e-3, 2)


# uniform-field precession ------------------------------------------------------

def run_precession(cfg: ScenarioConfig, out: Path, report: RunReport):
    grid, fcfg, state, final, series, ctx = _run_wave(cfg, out, report)
    c = fcfg.constants
    report.metric("norm_drift_max", ctx["norm_drift"], 1e-8, 1)
    _first_law(report, series)
    _second_law(report, series, grid)
    sig = np.array(ctx["spin"])
    t = np.array(ctx["spin_t"])
    B = fcfg.magnetic_field(np.zeros((3, 1)))[:, 0]
    B0 = float(np.linalg.norm(B))
    if B0 == 0:
        report.notes.append("no field: precession frequency undefined")
        return
    # rotate into a frame where B is along z, so the transverse angle is atan2(s_y, s_x)
    bz = B / B0
    e1 = np.cross(bz, [0.0, 1.0, 0.0] if abs(bz[1]) < 0.9 else [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(bz, e1)
    omega = pa.precession_frequency(t, sig @ e1, sig @ e2)
    expected = 2 * c.mu * B0 / c.hbar
    report.value("larmor_frequency", omega)
    report.value("larmor_expected", expected)
    report.metric("larmor_rel_error", abs(abs(omega) - expected) / expected, 1e-3, 3)


def _spin_sample(cfg, grid, fcfg, cur, ctx):
    ctx.setdefault("spin", []).append(np.asarray(g.integrate(grid, eh._spin_vector(cur.components))))
    ctx.setdefault("spin_t", []).append(cur.t)


# Stern-Gerlach -----------------------------------------------------------------

def _sg_setup(cfg, grid, fcfg, state, ctx, out):
    if grid.dim != 2 or 2 not in grid.axes:
        raise ScenarioError("stern_gerlach needs a 2D grid spanning z")
    rho = state.density()
    seeds = bm.quantile_seeds(grid, rho, int(cfg.analysis.get("seeds", 9)), axis=2)
    ctx["bohm"] = bm.BohmianIntegrator(grid, seeds, cfg.integrator["substeps"])


def _sg_snapshot(cfg, grid, fcfg, cur, ctx):
    ctx["bohm"].push(bm.snapshot_from_state(cur, fcfg))


def z_marginal_lobes(grid: g.GridSpec, spinor: np.ndarray, peak_floor: float = 1e-3):
    """Local maxima of the z-marginal and per-lobe spin statistics.

    Lobes are split at the marginal minimum between the two strongest maxima.
    Returns (z, marginal, sz_marginal, peaks, lobes) with lobes a list of
    dicts (z_centre, population, s_z) ordered by z.
    """
    gz = grid.grid_axis(2)
    others = tuple(i for i in range(grid.dim) if i != gz)
    rho = np.sum(np.abs(spinor) ** 2, axis=0)
    Sz = np.abs(spinor[0]) ** 2 - np.abs(spinor[1]) ** 2
    h = grid.cell_volume / grid.spacing[gz]
    marg = np.sum(rho, axis=others) * h
    szm = np.sum(Sz, axis=others) * h
    z = grid.coords(gz)
    floor = peak_floor * marg.max()
    interior = (marg[1:-1] > marg[:-2]) & (marg[1:-1] >= marg[2:]) & (marg[1:-1] > floor)
    peaks = list(np.flatnonzero(interior) + 1)
    lobes = []
    if len(peaks) >= 2:
        top = sorted(sorted(peaks, key=lambda i: marg[i])[-2:])
        cut = top[0] + int(np.argmin(marg[top[0]:top[1] + 1]))
        dz = grid.spacing[gz]
        for sl in (slice(0, cut), slice(cut, None)):
            pop = float(np.sum(marg[sl]) * dz)
            lobes.append({"z_centre": float(np.sum(z[sl] * marg[sl]) * dz / pop),
                          "population": pop, "s_z": float(np.sum(szm[sl]) * dz / pop)})
    return z, marg, szm, peaks, lobes


def run_stern_gerlach(cfg: ScenarioConfig, out: Path, report: RunReport):
    t0 = time.perf_counter()
    grid, fcfg, state, final, series, ctx = _run_wave(cfg, out, report)
    c = fcfg.constants
    if fcfg.ideal:
        report.notes.append("ideal field variant: B is not divergence free by construction")
    z, marg, szm, peaks, lobes = z_marginal_lobes(grid, final.spinor, cfg.analysis.get("peak_floor", 1e-3))
    report.metric("lobe_count", len(peaks), 2, 10, "==")
    total = float(np.sum(marg) * grid.spacing[grid.grid_axis(2)])
    if len(lobes) == 2:
        lower, upper = lobes
        # the grad-B force -mu beta s_z pushes s_z = +1 towards -z when mu beta > 0
        sign = float(np.sign(c.mu * fcfg.beta))
        report.value("lobe_lower_z", lower["z_centre"])
        report.value("lobe_upper_z", upper["z_centre"])
        report.metric("lobe_lower_sz_error", abs(lower["s_z"] - sign), 0.05, 10)
        report.metric("lobe_upper_sz_error", abs(upper["s_z"] + sign), 0.05, 10)
        report.metric("lobe_lower_population_error", abs(lower["population"] / total - 0.5), 0.02, 10)
        report.metric("lobe_upper_population_error", abs(upper["population"] / total - 0.5), 0.02, 10)
        report.value("lobe_separation", upper["z_centre"] - lower["z_centre"])
    else:
        report.metric("lobe_split_found", 0.0, 1.0, 10, ">=")
    pauli_final = final
    report.metric("commutator_rel", eh.commutator_identity_check(pauli_final, fcfg), 1e-8, 6)
    _first_law(report, series)
    report.notes.append("no relaxation term: beam populations stay near 50/50 over the run")
    if "csv" in cfg.output["formats"]:
        w = _CsvWriter(out / "z_marginal.csv", ["z", "density", "sz_density"])
        for row in zip(z, marg, szm):
            w.row(row)
        w.close()
        report.add_file(w.path)
        for i, tr in enumerate(ctx["bohm"].trajectories()):
            report.add_file(bm.write_trajectory_csv(tr, out / f"bohm_trajectory_{i:02d}.csv"))
    report.metric("runtime_s", time.perf_counter() - t0, 300.0, 10)


# Ehrenfest report ---------------------------------------------------------------

def run_ehrenfest(cfg: ScenarioConfig, out: Path, report: RunReport):
    grid, fcfg, state, final, series, ctx = _run_wave(cfg, out, report)
    _first_law(report, series)
    _second_law(report, series, grid)
    if not fcfg.is_uniform_B:
        report.metric("commutator_rel", eh.commutator_identity_check(final, fcfg), 1e-8, 6)
    _, _, v = series.arrays()
    terms = {k: np.asarray(series.rhs_terms[k]) for k in eh.TERMS}
    for k, arr in terms.items():
        report.value(f"rhs_{k}_max", float(np.max(np.linalg.norm(arr, axis=1))))
    report.notes.append("right-hand side assembled from Lorentz and grad-B terms only; no quantum potential term")


# Bloch --------------------------------------------------------------------------

def run_bloch(cfg: ScenarioConfig, out: Path, report: RunReport):
    b = cfg.bloch
    const = build_constants(cfg)
    gamma = bl.gyromagnetic_default(const.mu, const.hbar) if b["gamma"] == "electron_default" else float(b["gamma"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        params = bl.BlochParams(float(b["T1"]), float(b["T2"]), float(b["M0"]), gamma)
    for w in caught:
        report.notes.append(str(w.message))
    B = np.asarray(b["B"], dtype=float)
    M_init = np.asarray(b["M_init"], dtype=float)
    dt, steps = cfg.integrator["dt"], cfg.integrator["steps"]
    t, M = bl.integrate_bloch(bl.MagnetizationState(M_init, 0.0, params), B, dt, steps)
    report.value("gamma", gamma)
    if B[0] == 0 and B[1] == 0:
        err = float(np.max(np.abs(M - bl.closed_form(t, M_init, B[2], params))))
        report.metric("max_abs_error", err, 1e-6, 12)
        report.value("dt_over_T2", dt / params.T2)
        T1f, T2f = bl.fit_relaxation_times(t, M, params.M0)
        report.value("T1_fit", T1f)
        report.value("T2_fit", T2f)
        report.metric("T1_rel_error", abs(T1f - params.T1) / params.T1, 1e-2, 12)
        report.metric("T2_rel_error", abs(T2f - params.T2) / params.T2, 1e-2, 12)
    else:
        report.notes.append("closed-form comparison needs B along z; skipped")
    fmts = cfg.output["formats"]
    if "csv" in fmts:
        report.add_file(bl.write_bloch_csv(t, M, out / "bloch.csv"))
    if "png" in fmts:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            report.notes.append("matplotlib unavailable: spiral plot skipped")
        else:
            fig = plt.figure(figsize=(5, 5))
            ax = fig.add_subplot(projection="3d")
            ax.plot(M[:, 0], M[:, 1], M[:, 2], lw=0.8)
            ax.set_xlabel("Mx")
            ax.set_ylabel("My")
            ax.set_zlabel("Mz")
            fig.savefig(out / "bloch.png", dpi=120, metadata={"Software": None})
            plt.close(fig)
            report.add_file(out / "bloch.png")


# classical vs Bohm -------------------------------------------------------------

def _cvb_pass(cfg, grid, fcfg, width, offset, horizon_off):
    """Propagate one packet with a centre particle and one displaced by ``offset`` along x.

    Returns (classicality, bohm centre, bohm offset, classical pair, largest edge amplitude).
    """
    const = fcfg.constants
    state = sc.SchrodingerState(grid, initial_orbital(cfg, grid, const, width=width, fcfg=fcfg))
    lengths = sc.classicality_lengths(state, fcfg)
    x0 = eh.expectation_position(state)
    off = x0.copy()
    off[grid.axes[0]] += offset
    integ = bm.BohmianIntegrator(grid, [x0, off], cfg.integrator["substeps"])
    integ.push(bm.snapshot_from_state(state, fcfg))
    it = cfg.integrator
    snap_every = it["snapshot_every"]
    edge = sc.boundary_amplitude(grid, state.psi)
    for i, s in enumerate(sc.evolve(state, fcfg, it["dt"], it["steps"], it["method"])):
        if not np.all(np.isfinite(s.psi)):
            raise ScenarioError(f"non-finite wave function at t={s.t:g}")
        if (i + 1) % snap_every == 0 or i + 1 == it["steps"]:
            integ.push(bm.snapshot_from_state(s, fcfg))
            edge = max(edge, sc.boundary_amplitude(grid, s.psi))
    centre, displaced = integ.trajectories()
    cl_dt = it["dt"] / 4
    classical = (
        bm.classical_trajectory(centre.positions[0], centre.velocities[0], fcfg, cfg.horizon, cl_dt),
        bm.classical_trajectory(displaced.positions[0], displaced.velocities[0], fcfg, horizon_off, cl_dt),
    )
    return lengths, centre, displaced, classical, edge


def _deviation_until(tr: bm.Trajectory, cl: bm.Trajectory, t_end: float) -> float:
    keep = tr.times <= t_end * (1 + 1e-12)
    part = bm.Trajectory(tr.times[keep], tr.positions[keep], tr.velocities[keep])
    return bm.trajectory_deviation(part, cl)[0]


def run_classical_vs_bohm(cfg: ScenarioConfig, out: Path, report: RunReport):
    """Centre and displaced Bohmian particles against Lorentz orbits, wide and narrow packets.

    The centre comparison runs over the whole horizon. The displaced particle
    (same absolute offset in both packets) is compared over the first quarter
    period only: a phase-coherent packet in a uniform field has vorticity
    -eB/m, and the matching classical ensemble focuses to a point at half a
    period, where any comparison measures the caustic rather than the
    quantum force.
    """
    grid = build_grid(cfg)
    const = build_constants(cfg)
    fcfg = build_field(cfg, const, grid)
    wide = float(np.max(cfg.initial["width"]))
    narrow = float(cfg.analysis.get("narrow_width", 0.15))
    offset = float(cfg.analysis.get("offset_sigmas", 1.0)) * narrow
    v0 = np.asarray(cfg.initial["momentum"], dtype=float) / const.m
    B = fcfg.magnetic_field(np.asarray(cfg.initial["center"], dtype=float).reshape(3, 1))[:, 0]
    Bn = float(np.linalg.norm(B))
    if Bn == 0 or const.e == 0:
        raise ScenarioError("classical_vs_bohm needs a charged particle in a magnetic field")
    vperp = np.linalg.norm(v0 - np.dot(v0, B) * B / Bn**2)
    if vperp == 0:
        raise ScenarioError("classical_vs_bohm needs a velocity component across B")
    radius = vperp / (abs(const.k) * Bn)
    period = 2 * math.pi / (abs(const.k) * Bn)
    quarter = min(period / 4, cfg.horizon)
    report.value("orbit_radius", radius)
    report.value("horizon_periods", cfg.horizon / period)
    report.value("displacement", offset)
    results = {}
    for label, width in (("wide", wide), ("narrow", narrow)):
        lengths, centre, disp, classical, edge = _cvb_pass(cfg, grid, fcfg, width, offset, quarter)
        dev_c = bm.trajectory_deviation(centre, classical[0])[0] / radius
        dev_d = _deviation_until(disp, classical[1], quarter) / radius
        results[label] = (lengths, dev_c, dev_d)
        report.value(f"{label}_L_R", lengths.L_R)
        report.value(f"{label}_L_Rc", lengths.L_Rc)
        report.value(f"{label}_boundary_amplitude", edge)
        report.value(f"{label}_displaced_dev_rel", dev_d)
        if edge > BOUNDARY_LIMIT:
            report.notes.append(f"{label} packet reached the boundary at amplitude {edge:.3g}")
        for tr in (centre, disp):
            if tr.truncated:
                report.notes.append(f"{label} trajectory truncated: {tr.reason}")
        if "csv" in cfg.output["formats"]:
            for name, tr in (("centre", centre), ("displaced", disp)):
                report.add_file(bm.write_trajectory_csv(tr, out / f"bohm_{label}_{name}.csv"))
            for name, tr in zip(("centre", "displaced"), classical):
                report.add_file(bm.write_trajectory_csv(tr, out / f"classical_{label}_{name}.csv"))
    lw, dcw, ddw = results["wide"]
    ln, dcn, ddn = results["narrow"]
    report.metric("wide_L_ratio", lw.ratio, 10.0, 11, ">")
    report.metric("wide_centre_dev_rel", dcw, 1e-2, 11)
    report.metric("narrow_L_ratio", ln.ratio, 1.0, 11, "<")
    report.value("narrow_centre_dev_rel", dcn)
    report.metric("displaced_dev_growth", ddn / max(ddw, 1e-300), 1.0, 11, ">")
    report.notes.append(f"L_R estimator: {lw.estimator}")


_SCENARIO_HOOKS = {
    "free_packet": {"sample": _fp_sample},
    "uniform_field_precession": {"sample": _spin_sample},
    "stern_gerlach": {"setup": _sg_setup, "snapshot": _sg_snapshot},
}

RUNNERS = {
    "free_packet": run_free_packet,
    "uniform_field_precession": run_precession,
    "stern_gerlach": run_stern_gerlach,
    "ehrenfest_report": run_ehrenfest,
    "bloch_relaxation": run_bloch,
    "classical_vs_bohm": run_classical_vs_bohm,
}


def run_scenario(cfg: ScenarioConfig | str | dict, out_dir=None, seed: int | None = None,
                 threads: int | None = None) -> RunReport:
    """Run a validated scenario and write its outputs plus report.json."""
    if not isinstance(cfg, ScenarioConfig):
        cfg = validate_config(cfg)
    out = Path(out_dir or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    if threads is not None:
        g.set_fft_workers(threads)
    echo = cfg.to_dict()
    echo["run"] = {"seed": seed, "threads": g.fft_workers()}
    (out / "effective_config.json").write_text(json.dumps(echo, indent=2) + "\n")
    report = RunReport(cfg.scenario, out)
    report.add_file(out / "effective_config.json")
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ef.IdealizedFieldWarning)
        RUNNERS[cfg.scenario](cfg, out, report)
    elapsed = time.perf_counter() - t0
    if cfg.scenario in ("free_packet", "uniform_field_precession"):
        report.metric("runtime_s", elapsed, 60.0, 1)
    else:
        report.value("runtime_s", elapsed)
    if seed is not None:
        report.value("seed", seed)
    report.write()
    return report
