"""Experiment configuration: ``key = value`` text with ``[section]`` headers.

Field-valued keys accept named profiles evaluated on the grid nodes:

    const:c                      c
    linear:a,b[,c]               a + b x1 (+ c x2)
    sin[:amp]                    amp sin(pi x1) (times sin(pi x2) in 2D)
    bump:center...,width,height  height (1 - |x - center|^2 / width^2)_+^2
    planar[:offset[,alpha]]      alpha (<x, normal> - offset)_+, alpha defaults to lambda*
    file:path                    field file written by ``write_field``

Every error is reported as ``ConfigError`` with the line of the offending key.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .energy import BetaProfile, ProblemData
from .fbanalysis import lambda_star
from .grid import ContractError, ExponentField, Grid, ScalarField, read_field
from .solver import ContinuationSchedule, SolveConfig

MODES = ("sharp-continuation", "regularized")


class ConfigError(ValueError):
    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = f"{path}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path, self.line = path, line


@dataclass
class ExperimentConfig:
    path: str
    mode: str
    grid: Grid
    data: ProblemData
    boundary: ScalarField
    solver: SolveConfig
    schedule: Optional[ContinuationSchedule] = None
    extend: bool = True
    scan: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    out_dir: str = "out"
    field_path: Optional[str] = None
    workers: int = 1


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, for error messages."""
    lines, section = {}, None
    for k, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            lines[(section, None)] = k
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = k
    return lines


class _Reader:
    def __init__(self, path: str):
        self.path = path
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            self.cp.read_string(text, source=path)
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("key outside any [section]", path, exc.lineno) from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", path, exc.lineno) from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", path, exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError("malformed line (expected 'key = value')", path, lineno) from None
        self.lines = _key_lines(text)
        self.base = os.path.dirname(os.path.abspath(path))

    def line(self, section, key=None):
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def fail(self, section, key, message):
        raise ConfigError(message, self.path, self.line(section, key))

    def has(self, section, key) -> bool:
        return self.cp.has_option(section, key)

    def get(self, section, key, default=None, required=False) -> Optional[str]:
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        if required:
            where = self.line(section)
            raise ConfigError(f"missing key {key!r} in [{section}]", self.path, where)
        return default

    def number(self, section, key, default=None, kind=float, required=False):
        raw = self.get(section, key, None, required)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            self.fail(section, key, f"{key} must be {'an integer' if kind is int else 'a number'}, got {raw!r}")

    def numbers(self, section, key, default=None, kind=float):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return [kind(x) for x in re.split(r"[,\s]+", raw) if x]
        except ValueError:
            self.fail(section, key, f"{key} must be a list of numbers, got {raw!r}")

    def flag(self, section, key, default=False) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        v = raw.lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        self.fail(section, key, f"{key} must be true or false, got {raw!r}")

    def resolve(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base, p)


def _args(r: _Reader, section, key, name, raw, count=None):
    try:
        vals = [float(x) for x in raw.split(",")] if raw else []
    except ValueError:
        r.fail(section, key, f"profile {name!r} takes numeric arguments, got {raw!r}")
    if count is not None and len(vals) not in count:
        r.fail(section, key, f"profile {name!r} takes {' or '.join(map(str, count))} arguments, got {len(vals)}")
    return vals


def profile_values(r: _Reader, section: str, key: str, grid: Grid, planar_alpha=None, normal=None) -> np.ndarray:
    spec = r.get(section, key, required=True)
    name, _, raw = spec.partition(":")
    name, raw = name.strip().lower(), raw.strip()
    X = grid.coords()
    if name == "const":
        (c,) = _args(r, section, key, name, raw, (1,))
        return np.full(grid.n, c)
    if name == "linear":
        v = _args(r, section, key, name, raw, (2, 3))
        if len(v) == 3 and grid.dim == 1:
            r.fail(section, key, "linear:a,b,c needs a 2D grid")
        out = v[0] + v[1] * X[0]
        return out + v[2] * X[1] if len(v) == 3 else out
    if name == "sin":
        (amp,) = _args(r, section, key, name, raw, (1,)) if raw else (1.0,)
        out = amp * np.sin(np.pi * X[0])
        return out * np.sin(np.pi * X[1]) if grid.dim == 2 else out
    if name == "bump":
        v = _args(r, section, key, name, raw, (grid.dim + 2,))
        c, width, height = v[:grid.dim], v[-2], v[-1]
        if not width > 0:
            r.fail(section, key, "bump width must be positive")
        d2 = sum((x - ck) ** 2 for x, ck in zip(X, c)) / width ** 2
        return height * np.maximum(1.0 - d2, 0.0) ** 2
    if name == "planar":
        v = _args(r, section, key, name, raw, (0, 1, 2))
        offset = v[0] if v else 0.0
        alpha = v[1] if len(v) > 1 else planar_alpha
        if alpha is None:
            r.fail(section, key, "planar profile needs an explicit alpha when p or lambda is not constant")
        nu = np.asarray(normal if normal is not None else [1.0] + [0.0] * (grid.dim - 1), dtype=float)
        if nu.size != grid.dim or not np.linalg.norm(nu) > 0:
            r.fail(section, "normal", f"normal must be a nonzero vector with {grid.dim} components")
        nu = nu / np.linalg.norm(nu)
        return alpha * np.maximum(sum(n * x for n, x in zip(nu, X)) - offset, 0.0)
    if name == "file":
        path = r.resolve(raw)
        if not os.path.exists(path):
            r.fail(section, key, f"field file not found: {raw}")
        try:
            fld = read_field(path)
        except (ContractError, ValueError, IndexError) as exc:
            r.fail(section, key, f"unreadable field file {raw}: {exc}")
        if not fld.grid.same_as(grid):
            r.fail(section, key, f"field file {raw} lives on a different grid")
        return fld.values
    r.fail(section, key, f"unknown profile {spec!r} (const, linear, sin, bump, planar, file)")


def _beta(r: _Reader, M: float) -> BetaProfile:
    spec = r.get("problem", "beta", "quartic")
    name, _, raw = spec.partition(":")
    try:
        if name.strip().lower() == "file":
            path = r.resolve(raw.strip())
            if not os.path.exists(path):
                r.fail("problem", "beta", f"beta table not found: {raw.strip()}")
            table = np.loadtxt(path, delimiter=",", ndmin=2)
            return BetaProfile([tuple(row[:2]) for row in table], M)
        return BetaProfile(spec.strip().lower(), M)
    except (ContractError, ValueError) as exc:
        r.fail("problem", "beta", str(exc))


def _grid(r: _Reader) -> Grid:
    lo = r.numbers("grid", "lo")
    hi = r.numbers("grid", "hi")
    n = r.numbers("grid", "n", kind=int)
    for key, v in (("lo", lo), ("hi", hi), ("n", n)):
        if v is None:
            r.fail("grid", key, f"missing key {key!r} in [grid]")
    if not len(lo) == len(hi) == len(n):
        r.fail("grid", "n", "lo, hi and n must have the same number of entries")
    if any(b <= a for a, b in zip(lo, hi)):
        r.fail("grid", "hi", "hi must exceed lo on every axis")
    try:
        return Grid.uniform(lo, hi, n)
    except ContractError as exc:
        r.fail("grid", "n", str(exc))


def load_config(path: str, workers: Optional[int] = None, out_dir: Optional[str] = None) -> ExperimentConfig:
    r = _Reader(path)
    mode = r.get("problem", "mode", "sharp-continuation").lower()
    if mode not in MODES:
        r.fail("problem", "mode", f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    grid = _grid(r)

    try:
        p = ExponentField(ScalarField(grid, profile_values(r, "problem", "p", grid)))
    except ContractError as exc:
        r.fail("problem", "p", str(exc))
    f = ScalarField(grid, profile_values(r, "problem", "f", grid)) if r.has("problem", "f") \
        else ScalarField.constant(grid, 0.0)
    a = None
    if r.has("problem", "a"):
        a = ScalarField(grid, profile_values(r, "problem", "a", grid))
        if not a.values.min() > 0:
            r.fail("problem", "a", f"weight bound violated: a_0 = {a.values.min():g} must be > 0")

    # lambda = M on the regularized route; either key may be given
    if r.has("problem", "lambda") and r.has("problem", "m"):
        r.fail("problem", "lambda", "give either lambda or M, not both")
    key = "lambda" if r.has("problem", "lambda") else "m"
    M = r.number("problem", key, 1.0)
    if not M > 0:
        r.fail("problem", key, f"{'lambda bound violated: lambda_1' if key == 'lambda' else 'M'} = {M:g} must be > 0")
    beta = _beta(r, M)
    eps = None
    if mode == "regularized":
        eps = r.number("problem", "eps", required=True)
        if not eps > 0:
            r.fail("problem", "eps", "eps must be positive")
    try:
        data = ProblemData(p, f, beta=beta, eps=eps, a=a)
    except ContractError as exc:
        r.fail("problem", None, str(exc))

    alpha = float(lambda_star(p.p_min, M)) if p.is_constant() else None
    normal = r.numbers("boundary", "normal")
    try:
        boundary = ScalarField(grid, profile_values(r, "boundary", "u", grid, alpha, normal))
    except ContractError as exc:
        r.fail("boundary", "u", str(exc))
    if np.any(boundary.values[grid.boundary_mask()] < 0):
        r.fail("boundary", "u", "boundary data must be nonnegative")

    n_workers = workers if workers is not None else r.number("solver", "workers", os.cpu_count() or 1, int)
    if n_workers < 1:
        r.fail("solver", "workers", "workers must be >= 1")
    try:
        cfg = SolveConfig(
            tol_energy=r.number("solver", "tol_energy", 1e-15),
            tol_grad=r.number("solver", "tol_grad", 1e-7),
            max_iters=r.number("solver", "max_iters", 20000, int),
            refresh=r.number("solver", "refresh", 10, int),
            stall_patience=r.number("solver", "stall_patience", 50, int),
            precondition=r.flag("solver", "precondition", True),
            clamp_nonneg=r.flag("solver", "clamp_nonneg", False),
            workers=n_workers,
        )
    except ContractError as exc:
        r.fail("solver", None, str(exc))

    schedule = None
    if mode == "sharp-continuation":
        schedule = _schedule(r, grid, boundary)

    scan = {
        "radii_cells": r.numbers("scan", "radii_cells", [32, 16, 8, 4]),
        "density_cells": r.numbers("scan", "density_cells", [32, 16, 8]),
        "rho_cells": r.number("scan", "rho_cells", 32.0),
        "points": r.number("scan", "points", 32, int),
        "n_samples": r.number("scan", "n_samples", 4, int),
    }
    verify = {
        "slope_tol": r.number("verify", "slope_tol", 0.05),
        "growth_band": r.numbers("verify", "growth_band", [0.9, 1.1]),
        "nondegeneracy_min": r.number("verify", "nondegeneracy_min", 0.5),
        "density_band": r.numbers("verify", "density_band", [0.45, 0.55]),
        "blowup_tol": r.number("verify", "blowup_tol", 0.05),
        "blowup_residual": r.number("verify", "blowup_residual", 0.05),
        "residual_tol": r.number("verify", "residual_tol", cfg.tol_grad),
        "residual_threshold": r.number("verify", "residual_threshold", 0.0),
        "hats": r.number("verify", "hats", 100, int),
    }
    for k in ("growth_band", "density_band"):
        if len(verify[k]) != 2 or verify[k][0] > verify[k][1]:
            r.fail("verify", k, f"{k} must be 'low, high'")
    field_path = r.get("verify", "field")
    if field_path is not None:
        field_path = r.resolve(field_path)
        if not os.path.exists(field_path):
            r.fail("verify", "field", f"field file not found: {r.get('verify', 'field')}")

    out = out_dir if out_dir is not None else r.resolve(r.get("output", "dir", "out"))
    return ExperimentConfig(path, mode, grid, data, boundary, cfg, schedule, r.flag("continuation", "extend", True),
                            scan, verify, out, field_path, n_workers)


def _schedule(r: _Reader, grid: Grid, boundary: ScalarField) -> ContinuationSchedule:
    try:
        listed = r.numbers("continuation", "eps")
        if listed is not None:
            return ContinuationSchedule(listed, r.flag("continuation", "warm_start", True))
        ratio = r.number("continuation", "ratio", 0.5)
        h_min = min(grid.h)
        eps_final = _auto(r, "eps_final", 4.0 * h_min, h_min)
        eps0 = _auto(r, "eps0", max(0.5 * float(boundary.values.max()), eps_final), h_min)
        if eps0 < eps_final:
            r.fail("continuation", "eps0", "eps0 must not be below eps_final")
        return ContinuationSchedule.geometric(eps0, eps_final, ratio, r.flag("continuation", "warm_start", True))
    except ContractError as exc:
        r.fail("continuation", None, str(exc))


def _auto(r: _Reader, key: str, default: float, h: float) -> float:
    """``auto``, a number, or ``<k>h`` meaning k grid spacings."""
    raw = r.get("continuation", key, "auto")
    if raw.lower() == "auto":
        return default
    try:
        return float(raw[:-1]) * h if raw.endswith("h") else float(raw)
    except ValueError:
        r.fail("continuation", key, f"{key} must be a number, '<k>h' or 'auto', got {raw!r}")
