"""Command-line driver: JSON config in, CSV or JSON table out.

Usage::

    regcloak config.json --out result.csv
    echo '{"experiment": "busting"}' | regcloak --format json

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures outside sweeps (for example a resonant ``solve``). Errors are
written to standard error as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .analysis import (
    boundary_error,
    field_slice,
    find_busting_mu0,
    omega_sweep,
    rho_sweep,
    slice_points,
    tail_slope,
)
from .media import InnerMedium
from .modesolver import (
    CloakScenario,
    Excitation,
    Lossless,
    Lossy,
    ResonanceError,
    _direction,
    mode_array,
    planewave_excitation,
    solve,
    source_coefficients,
)

__all__ = [
    "ConfigError",
    "NumericalFailure",
    "RunConfig",
    "ResultTable",
    "parse_config",
    "serialize_config",
    "config_hash",
    "run",
    "format_table",
    "main",
]

EXPERIMENTS = ("solve", "rho-sweep", "omega-sweep", "busting", "field-slice", "tables")
TABLE_RHOS = (0.1, 0.05, 0.01, 0.005, 0.002, 0.001)
TABLE2_SOURCE = tuple((1, m, complex(5.0), complex(2.0)) for m in (-1, 0, 1))
DIRECTION_TOL = 1e-9


class ConfigError(ValueError):
    """Invalid configuration; maps to exit status 2."""


class NumericalFailure(ArithmeticError):
    """Numerical failure outside a sweep; maps to exit status 3."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class OmegaGrid:
    """Uniform frequency grid ``start, start + step, ...`` up to ``stop``."""

    start: float
    stop: float
    step: float

    def values(self) -> np.ndarray:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(count)


@dataclass(frozen=True)
class SliceSpec:
    axis: str = "x"
    value: float = 0.0
    npts: int = 81
    half_width: float = 2.0
    free_space: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description with every default filled in."""

    experiment: str
    scheme: str
    rho: float | tuple[float, ...]
    tau: float
    eps0: complex
    mu0: complex
    omega: float | tuple[float, ...] | OmegaGrid
    N: int
    d: tuple[float, ...] | None
    P: tuple[complex, ...] | None
    modes: tuple[tuple[int, int, complex, complex], ...] | None
    source: tuple[tuple[int, int, complex, complex], ...]
    degrees: tuple[int, ...] | None
    form: str
    busting_n: int
    busting_k: complex
    slice: SliceSpec
    er_ceiling: float | None
    out: str | None
    format: str

    # -- derived objects --

    def inner(self) -> InnerMedium:
        return InnerMedium(eps0=self.eps0, mu0=self.mu0)

    def rho_list(self) -> list[float]:
        return list(self.rho) if isinstance(self.rho, tuple) else [self.rho]

    def omega_list(self) -> list[float]:
        if isinstance(self.omega, OmegaGrid):
            return [float(x) for x in self.omega.values()]
        return list(self.omega) if isinstance(self.omega, tuple) else [self.omega]

    def scenario(self, rho: float, omega: float, scheme: str | None = None) -> CloakScenario:
        kind = scheme or self.scheme
        sch = Lossy(rho, self.tau) if kind == "lossy" else Lossless(rho)
        return CloakScenario(sch, self.inner(), omega, self.N)

    def excitation(self, omega: float, with_source: bool = True) -> Excitation:
        if self.modes is not None:
            f1, f2 = mode_array(self.N), mode_array(self.N)
            for n, m, a, b in self.modes:
                f1[n - 1, m + self.N] = a
                f2[n - 1, m + self.N] = b
            ex = Excitation(f1, f2)
        else:
            ex = planewave_excitation(omega, self.d, self.P, self.N)
        if with_source and self.source:
            p, q = source_coefficients(self.N, self.source)
            ex = ex.with_source(p, q)
        return ex


_TOP_KEYS = {
    "experiment", "scheme", "rho", "tau", "eps0", "mu0", "omega", "N", "excitation",
    "source", "degrees", "form", "busting", "slice", "er_ceiling", "output",
}
_EXC_KEYS = {"d", "P", "modes"}
_BUST_KEYS = {"n", "k"}
_SLICE_KEYS = {"axis", "value", "npts", "half_width", "free_space"}
_OUT_KEYS = {"path", "format"}
_GRID_KEYS = {"start", "stop", "step"}


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _real(x: Any, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name} must be a number, got {x!r}")
    if not math.isfinite(x):
        raise ConfigError(f"{name} must be finite")
    return float(x)


def _complex(x: Any, name: str) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ConfigError(f"{name} as a list must be [re, im]")
        return complex(_real(x[0], name), _real(x[1], name))
    return complex(_real(x, name))


def _int(x: Any, name: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{name} must be an integer, got {x!r}")
    return int(x)


def _dict(x: Any, name: str) -> dict:
    if not isinstance(x, dict):
        raise ConfigError(f"{name} must be an object")
    return x


def _defaults_for(experiment: str) -> dict[str, Any]:
    rho: Any = list(TABLE_RHOS) if experiment in ("rho-sweep", "tables") else 0.01
    omega: Any = 5.0
    if experiment == "omega-sweep":
        omega = {"start": 1.0, "stop": 3.0, "step": 1e-3}
    if experiment == "busting":
        rho = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]
        omega = 14.0
    return {"rho": rho, "omega": omega, "degrees": [1] if experiment == "omega-sweep" else None}


def parse_config(text: str | dict) -> RunConfig:
    """Validate a JSON config and fill in defaults.

    Parameters
    ----------
    text : str or dict
        JSON text, or an already decoded object.

    Raises
    ------
    ConfigError
        With a message naming the offending field.
    """
    if isinstance(text, str):
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
    else:
        raw = text
    raw = _dict(raw, "config")
    _reject_unknown(raw, _TOP_KEYS, "config")

    experiment = raw.get("experiment", "rho-sweep")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    dflt = _defaults_for(experiment)

    scheme = raw.get("scheme", "lossless")
    if scheme not in ("lossless", "lossy"):
        raise ConfigError(f"scheme must be 'lossless' or 'lossy', got {scheme!r}")

    tau = _real(raw.get("tau", 3.0), "tau")
    if tau < 0:
        raise ConfigError(f"tau must be nonnegative, got {tau}")
    if scheme == "lossy" and tau == 0:
        raise ConfigError("the lossy scheme needs tau > 0")

    N = raw.get("N", 15)
    N = _int(N, "N")
    if N < 1:
        raise ConfigError(f"N must be at least 1, got {N}")

    rho = _parse_rho(raw.get("rho", dflt["rho"]), scheme, experiment)
    eps0 = _complex(raw.get("eps0", 2.0), "eps0")
    mu0 = _complex(raw.get("mu0", 2.0), "mu0")
    if eps0 == 0 or mu0 == 0:
        raise ConfigError("eps0 and mu0 must be nonzero")
    omega = _parse_omega(raw.get("omega", dflt["omega"]), experiment)

    d, P, modes = _parse_excitation(_dict(raw.get("excitation", {}), "excitation"), N)
    source = _parse_modes(raw.get("source", []), N, "source")

    degrees = raw.get("degrees", dflt["degrees"])
    if degrees is not None:
        if not isinstance(degrees, list) or not degrees:
            raise ConfigError("degrees must be a nonempty list of integers")
        degrees = tuple(_int(n, "degrees") for n in degrees)
        if any(not 1 <= n <= N for n in degrees):
            raise ConfigError(f"degrees must lie in 1..N={N}")

    form = raw.get("form", "stable")
    if form not in ("stable", "trace", "det"):
        raise ConfigError(f"form must be 'stable', 'trace' or 'det', got {form!r}")
    if form == "det" and scheme == "lossy":
        raise ConfigError("form 'det' is available for the lossless scheme only")

    bust = _dict(raw.get("busting", {}), "busting")
    _reject_unknown(bust, _BUST_KEYS, "busting")
    busting_n = _int(bust.get("n", 1), "busting.n")
    if busting_n < 1:
        raise ConfigError("busting.n must be at least 1")
    busting_k = _complex(bust.get("k", 1.0), "busting.k")

    sl = _dict(raw.get("slice", {}), "slice")
    _reject_unknown(sl, _SLICE_KEYS, "slice")
    axis = sl.get("axis", "x")
    if axis not in ("x", "y", "z"):
        raise ConfigError("slice.axis must be 'x', 'y' or 'z'")
    npts = _int(sl.get("npts", 81), "slice.npts")
    if npts < 2:
        raise ConfigError("slice.npts must be at least 2")
    half = _real(sl.get("half_width", 2.0), "slice.half_width")
    if half <= 0:
        raise ConfigError("slice.half_width must be positive")
    free = sl.get("free_space", False)
    if not isinstance(free, bool):
        raise ConfigError("slice.free_space must be true or false")
    slice_spec = SliceSpec(axis, _real(sl.get("value", 0.0), "slice.value"), npts, half, free)

    ceiling = raw.get("er_ceiling")
    if ceiling is not None:
        ceiling = _real(ceiling, "er_ceiling")
        if ceiling <= 0:
            raise ConfigError("er_ceiling must be positive")

    out = _dict(raw.get("output", {}), "output")
    _reject_unknown(out, _OUT_KEYS, "output")
    path = out.get("path")
    if path is not None and not isinstance(path, str):
        raise ConfigError("output.path must be a string")
    fmt = out.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output.format must be 'csv' or 'json', got {fmt!r}")

    return RunConfig(
        experiment=experiment, scheme=scheme, rho=rho, tau=tau, eps0=eps0, mu0=mu0,
        omega=omega, N=N, d=d, P=P, modes=modes, source=source, degrees=degrees, form=form,
        busting_n=busting_n, busting_k=busting_k, slice=slice_spec, er_ceiling=ceiling,
        out=path, format=fmt,
    )


def _parse_rho(value: Any, scheme: str, experiment: str) -> float | tuple[float, ...]:
    upper = 0.5 if scheme == "lossy" else 1.0
    vals = value if isinstance(value, list) else [value]
    if not vals:
        raise ConfigError("rho list is empty")
    out = [_real(v, "rho") for v in vals]
    for r in out:
        if r <= 0:
            raise ConfigError(f"rho must be positive, got {r}")
        if r >= upper:
            raise ConfigError(f"rho must be below {upper} for the {scheme} scheme, got {r}")
    if isinstance(value, list):
        if experiment in ("rho-sweep", "tables") and any(b >= a for a, b in zip(out, out[1:])):
            raise ConfigError("rho list must be strictly decreasing")
        if experiment in ("solve", "omega-sweep", "field-slice"):
            raise ConfigError(f"experiment {experiment!r} needs a single rho, got a list")
        return tuple(out)
    if experiment in ("rho-sweep", "tables"):
        return (out[0],)
    return out[0]


def _parse_omega(value: Any, experiment: str) -> float | tuple[float, ...] | OmegaGrid:
    if isinstance(value, dict):
        _reject_unknown(value, _GRID_KEYS, "omega")
        missing = _GRID_KEYS - set(value)
        if missing:
            raise ConfigError(f"omega grid needs {', '.join(sorted(missing))}")
        g = OmegaGrid(*(_real(value[k], f"omega.{k}") for k in ("start", "stop", "step")))
        if g.start <= 0:
            raise ConfigError("omega must be positive")
        if g.step <= 0 or g.stop < g.start:
            raise ConfigError("omega grid needs step > 0 and stop >= start")
        result: Any = g
    elif isinstance(value, list):
        if not value:
            raise ConfigError("omega list is empty")
        result = tuple(_real(v, "omega") for v in value)
        if any(w <= 0 for w in result):
            raise ConfigError("omega must be positive")
    else:
        result = _real(value, "omega")
        if result <= 0:
            raise ConfigError(f"omega must be positive, got {result}")
    if experiment != "omega-sweep" and not isinstance(result, float):
        raise ConfigError(f"experiment {experiment!r} needs a single omega")
    return result


def _parse_modes(value: Any, N: int, name: str) -> tuple[tuple[int, int, complex, complex], ...]:
    if not isinstance(value, list):
        raise ConfigError(f"{name} must be a list of [n, m, first, second] entries")
    out = []
    seen = set()
    for entry in value:
        if not isinstance(entry, list) or len(entry) != 4:
            raise ConfigError(f"each {name} entry must be [n, m, first, second]")
        n, m = _int(entry[0], f"{name}.n"), _int(entry[1], f"{name}.m")
        if not (1 <= n <= N and abs(m) <= n):
            raise ConfigError(f"{name} mode ({n}, {m}) is outside 1 <= n <= N={N}, |m| <= n")
        if (n, m) in seen:
            raise ConfigError(f"{name} mode ({n}, {m}) listed twice")
        seen.add((n, m))
        out.append((n, m, _complex(entry[2], name), _complex(entry[3], name)))
    return tuple(out)


def _parse_excitation(exc: dict, N: int):
    _reject_unknown(exc, _EXC_KEYS, "excitation")
    if "modes" in exc:
        if "d" in exc or "P" in exc:
            raise ConfigError("excitation takes either modes or a plane wave (d, P), not both")
        return None, None, _parse_modes(exc["modes"], N, "excitation.modes")
    d = exc.get("d", [math.pi / 2, math.pi / 2])
    if not isinstance(d, list) or len(d) not in (2, 3):
        raise ConfigError("excitation.d must be [theta, phi] or a Cartesian unit vector [x, y, z]")
    d = tuple(_real(v, "excitation.d") for v in d)
    if len(d) == 3 and abs(math.sqrt(sum(v * v for v in d)) - 1.0) > DIRECTION_TOL:
        raise ConfigError("excitation.d must have unit length (tolerance 1e-9)")
    P = exc.get("P", [1.0, 0.0, 0.0])
    if not isinstance(P, list) or len(P) != 3:
        raise ConfigError("excitation.P must be a 3-vector")
    P = tuple(_complex(v, "excitation.P") for v in P)
    dv = _direction(d)
    dot = abs(complex(np.dot(dv, np.array(P))))
    if dot > 1e-12:
        raise ConfigError(f"excitation.P must be orthogonal to d (|d.P| = {dot:.3g})")
    if all(p == 0 for p in P):
        raise ConfigError("excitation.P must be nonzero")
    return d, P, None


def _jsonable_complex(z: complex) -> Any:
    return z.real if z.imag == 0 else [z.real, z.imag]


def _config_dict(cfg: RunConfig) -> dict:
    rho: Any = list(cfg.rho) if isinstance(cfg.rho, tuple) else cfg.rho
    if isinstance(cfg.omega, OmegaGrid):
        omega: Any = {"start": cfg.omega.start, "stop": cfg.omega.stop, "step": cfg.omega.step}
    elif isinstance(cfg.omega, tuple):
        omega = list(cfg.omega)
    else:
        omega = cfg.omega
    if cfg.modes is not None:
        exc: dict = {"modes": [[n, m, _jsonable_complex(a), _jsonable_complex(b)] for n, m, a, b in cfg.modes]}
    else:
        exc = {"d": list(cfg.d), "P": [_jsonable_complex(p) for p in cfg.P]}
    out: dict = {"format": cfg.format}
    if cfg.out is not None:
        out["path"] = cfg.out
    doc = {
        "experiment": cfg.experiment,
        "scheme": cfg.scheme,
        "rho": rho,
        "tau": cfg.tau,
        "eps0": _jsonable_complex(cfg.eps0),
        "mu0": _jsonable_complex(cfg.mu0),
        "omega": omega,
        "N": cfg.N,
        "excitation": exc,
        "source": [[n, m, _jsonable_complex(p), _jsonable_complex(q)] for n, m, p, q in cfg.source],
        "degrees": None if cfg.degrees is None else list(cfg.degrees),
        "form": cfg.form,
        "busting": {"n": cfg.busting_n, "k": _jsonable_complex(cfg.busting_k)},
        "slice": {
            "axis": cfg.slice.axis, "value": cfg.slice.value, "npts": cfg.slice.npts,
            "half_width": cfg.slice.half_width, "free_space": cfg.slice.free_space,
        },
        "er_ceiling": cfg.er_ceiling,
        "output": out,
    }
    return doc


def serialize_config(cfg: RunConfig) -> str:
    """Canonical JSON text of a config; ``parse_config`` inverts it."""
    return json.dumps(_config_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical config, ignoring where the output goes."""
    doc = _config_dict(cfg)
    doc.pop("output")
    return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# running


@dataclass
class ResultTable:
    """Column names, rows of plain values and a metadata mapping."""

    columns: list[str]
    rows: list[list[Any]]
    metadata: dict[str, Any] = field(default_factory=dict)


def _flag(resonant: bool, capped: bool = False) -> str:
    parts = [p for p, on in (("resonant", resonant), ("capped", capped)) if on]
    return ";".join(parts) if parts else "ok"


def _map_fn(threads: int) -> tuple[Callable, ThreadPoolExecutor | None]:
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


def _rho_rows(cfg: RunConfig, scheme: str, source: bool, map_fn, label: str | None = None):
    omega = cfg.omega_list()[0]
    sc = cfg.scenario(cfg.rho_list()[0], omega, scheme)
    ex = cfg.excitation(omega, with_source=source)
    recs = rho_sweep(sc, ex, cfg.rho_list(), form=cfg.form, map_fn=map_fn)
    rows = []
    for r in recs:
        row = [r.value, r.Er, "" if r.rate is None else r.rate, _flag(r.resonant)]
        rows.append(([label] if label else []) + row)
    slope = tail_slope(recs) if len(recs) >= 3 else None
    return rows, slope


def run(cfg: RunConfig, threads: int = 1) -> ResultTable:
    """Execute the experiment described by ``cfg``.

    Raises
    ------
    NumericalFailure
        For non-sweep experiments hitting a resonance or an inadmissible
        parameter combination.
    """
    map_fn, pool = _map_fn(threads)
    try:
        return _run(cfg, map_fn)
    finally:
        if pool is not None:
            pool.shutdown()


def _run(cfg: RunConfig, map_fn) -> ResultTable:
    exp = cfg.experiment
    meta: dict[str, Any] = {}
    if exp == "rho-sweep":
        rows, slope = _rho_rows(cfg, cfg.scheme, True, map_fn)
        if slope is not None:
            meta["slope_3_smallest"] = slope
        return ResultTable(["rho", "Er", "rate", "flag"], rows, meta)

    if exp == "tables":
        rows = []
        src = replace(cfg, source=cfg.source or TABLE2_SOURCE)
        for label, c, scheme, with_src in (
            ("table1", cfg, "lossless", False),
            ("table2", src, "lossless", True),
            ("table3", cfg, "lossy", False),
        ):
            if scheme == "lossy" and max(c.rho_list()) >= 0.5:
                raise ConfigError("the lossy table needs every rho below 1/2")
            c = replace(c, form="stable" if scheme == "lossy" and c.form == "det" else c.form)
            part, slope = _rho_rows(c, scheme, with_src, map_fn, label)
            rows += part
            if slope is not None:
                meta[f"{label}_slope_3_smallest"] = slope
        return ResultTable(["table", "rho", "Er", "rate", "flag"], rows, meta)

    if exp == "omega-sweep":
        omegas = cfg.omega_list()
        sc = cfg.scenario(cfg.rho_list()[0], omegas[0])
        recs = omega_sweep(sc, cfg.excitation, omegas, degrees=cfg.degrees, form=cfg.form, map_fn=map_fn)
        rows = []
        for r in recs:
            er, capped = r.Er, False
            if cfg.er_ceiling is not None and er > cfg.er_ceiling:
                er, capped = cfg.er_ceiling, True
            rows.append([r.value, er, float(np.prod(r.detA_abs)), float(np.prod(r.detB_abs)), _flag(r.resonant, capped)])
        return ResultTable(["omega", "Er", "detA_abs", "detB_abs", "flag"], rows, meta)

    if exp == "busting":
        omega = cfg.omega_list()[0]
        rows = []
        for rho in cfg.rho_list():
            if rho >= 1.0:
                raise ConfigError("busting needs rho < 1")
            try:
                b = find_busting_mu0(cfg.busting_n, omega, cfg.busting_k, rho)
            except ValueError as exc:
                raise NumericalFailure(str(exc)) from None
            rows.append([rho, b.mu0.real, b.mu0.imag, b.eps0.real, b.eps0.imag, b.det_residual])
        meta.update(n=cfg.busting_n, omega=omega, k=repr(cfg.busting_k))
        return ResultTable(["rho", "mu0_re", "mu0_im", "eps0_re", "eps0_im", "det_residual"], rows, meta)

    omega = cfg.omega_list()[0]
    sc = cfg.scenario(cfg.rho_list()[0], omega)
    ex = cfg.excitation(omega)
    try:
        sol = solve(sc, ex) if not (exp == "field-slice" and cfg.slice.free_space) else None
    except ResonanceError as exc:
        raise NumericalFailure(str(exc)) from None
    if sol is not None and sol.resonant:
        bad = sorted({i + 1 for i in np.flatnonzero(sol.resonantA | sol.resonantB)})
        raise NumericalFailure(f"resonant degrees {bad} at omega={omega}, rho={sc.rho}")

    if exp == "solve":
        names = list(sol.coeffs)
        cols = ["n", "m"] + [f"{k}_{part}" for k in names for part in ("re", "im")] + ["detA_abs", "detB_abs", "flag"]
        rows = []
        for n in range(1, cfg.N + 1):
            for m in range(-n, n + 1):
                vals: list[Any] = [n, m]
                for k in names:
                    z = complex(sol.coeffs[k][n - 1, m + cfg.N])
                    vals += [z.real, z.imag]
                vals += [abs(sol.detA[n - 1]), abs(sol.detB[n - 1]), _flag(False)]
                rows.append(vals)
        er = boundary_error(sc, ex, form=cfg.form)
        meta["Er"] = er.value
        return ResultTable(cols, rows, meta)

    # field-slice
    pts = slice_points(cfg.slice.axis, cfg.slice.value, cfg.slice.npts, cfg.slice.half_width)
    E, valid = field_slice(sc, ex, pts, solution=sol, free_space=cfg.slice.free_space)
    cols = ["x", "y", "z"] + [f"E{i}_{part}" for i in (1, 2, 3) for part in ("re", "im")]
    rows = []
    for p, e in zip(pts, E):
        rows.append([float(p[0]), float(p[1]), float(p[2])] + [v for z in e for v in (float(z.real), float(z.imag))])
    meta["points_outside_domain"] = int(np.count_nonzero(~valid))
    return ResultTable(cols, rows, meta)


# ---------------------------------------------------------------------------
# output


def _cell(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(table: ResultTable, fmt: str, cfg: RunConfig, timestamp: str | None = None) -> str:
    """Serialize a result table with a metadata header.

    The data section depends only on the config; the ``timestamp`` is the
    only run-dependent field and sits in the header.
    """
    header = {
        "artifact_version": __version__,
        "config_sha256": config_hash(cfg),
        "experiment": cfg.experiment,
        **table.metadata,
        "timestamp": timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if fmt == "json":
        rows = [[None if (isinstance(v, float) and math.isnan(v)) else v for v in row] for row in table.rows]
        return json.dumps({"metadata": header, "columns": table.columns, "rows": rows}, indent=1) + "\n"
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}: {_cell(v)}\n")
    buf.write(",".join(table.columns) + "\n")
    for row in table.rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    return buf.getvalue()


def _default_threads() -> int:
    env = os.environ.get("REGCLOAK_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"REGCLOAK_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("REGCLOAK_THREADS must be at least 1")
        return n
    return os.cpu_count() or 1


def _error(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="regcloak", description="Regularized sphere cloak experiments")
    parser.add_argument("config", nargs="?", help="JSON config file; read from stdin when omitted or '-'")
    parser.add_argument("--experiment", choices=EXPERIMENTS, help="override the config's experiment")
    parser.add_argument("--out", help="output file (default: stdout)")
    parser.add_argument("--format", choices=("csv", "json"), help="output format (default: csv)")
    parser.add_argument("--threads", type=int, help="worker threads for sweeps (default: $REGCLOAK_THREADS or all cores)")
    parser.add_argument("--quiet", action="store_true", help="no progress messages on stderr")
    args = parser.parse_args(argv)

    try:
        if args.config in (None, "-"):
            text = sys.stdin.read()
        else:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        try:
            raw = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from None
        if args.experiment is not None:
            if not isinstance(raw, dict):
                raise ConfigError("config must be an object")
            raw = {**raw, "experiment": args.experiment}
        cfg = parse_config(raw)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        if args.format is not None:
            cfg = replace(cfg, format=args.format)
        threads = args.threads if args.threads is not None else _default_threads()
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        if not args.quiet:
            sys.stderr.write(f"regcloak {__version__}: running {cfg.experiment} with {threads} thread(s)\n")
        table = run(cfg, threads=threads)
    except ConfigError as exc:
        return _error("config", str(exc), 2)
    except (NumericalFailure, ResonanceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _error("numerical", str(exc), 3)

    text_out = format_table(table, cfg.format, cfg)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text_out)
        if not args.quiet:
            sys.stderr.write(f"wrote {len(table.rows)} rows to {cfg.out}\n")
    else:
        sys.stdout.write(text_out)
    return 0
