"""Free-boundary extraction and measurements on solved fields.

Every scan is a pure function of (u, x0, radii): no randomness, no caching.
Radii are given largest first, as in ``ScanWindow``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .energy import ProblemData, grad_energy_smooth
from .grid import (ContractError, ExponentField, Grid, ScalarField, ScanWindow, ball_values,
                   cell_gradients, fits_in_grid, level_crossings)


def lambda_star(p_val, lam_val):
    """Free-boundary slope (p/(p-1) lam)^(1/p); broadcasts over arrays."""
    p = np.asarray(p_val, dtype=float)
    lam = np.asarray(lam_val, dtype=float)
    if np.any(p <= 1.0):
        raise ContractError("lambda_star needs p > 1")
    if np.any(lam <= 0.0):
        raise ContractError("lambda_star needs lambda > 0")
    out = (p / (p - 1.0) * lam) ** (1.0 / p)
    return float(out) if out.ndim == 0 else out


def extract_fb(u: ScalarField, threshold: float = 0.0) -> np.ndarray:
    """Crossings of u = threshold on grid edges, shape (k, dim)."""
    if threshold < 0:
        raise ContractError("threshold must be >= 0")
    return level_crossings(u, threshold)


# ------------------------------------------------------------------ helpers

def _h(grid: Grid) -> float:
    return max(grid.h)


def interpolate(u: ScalarField, points) -> np.ndarray:
    """Multilinear interpolation of nodal values at ``points`` (k, dim)."""
    g = u.grid
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if g.dim == 1:
        return np.interp(pts[:, 0], g.axis(0), u.values)
    f = RegularGridInterpolator((g.axis(0), g.axis(1)), u.values, bounds_error=False, fill_value=None)
    return f(pts)


def _value_at(field_, x0) -> float:
    if isinstance(field_, ExponentField):
        field_ = field_.base
    return float(interpolate(field_, np.atleast_1d(x0)[None, :])[0])


def target_slope(data: ProblemData, x0) -> float:
    """lambda*(x0) from the interpolated p and lambda (M on the regularized route)."""
    return lambda_star(_value_at(data.p, x0), _value_at(data.sharp_lambda(), x0))


def _cells_near(u: ScalarField, x0, r: float):
    """Fully positive cells whose centers lie within r of x0: (centers, gradients)."""
    g = u.grid
    centers = np.stack([c.ravel() for c in g.cell_coords()], axis=-1)
    grads = cell_gradients(u).reshape(-1, g.dim)
    v = u.values
    if g.dim == 1:
        pos = (v[:-1] > 0) & (v[1:] > 0)
    else:
        pos = (v[:-1, :-1] > 0) & (v[1:, :-1] > 0) & (v[:-1, 1:] > 0) & (v[1:, 1:] > 0)
    pos = pos.ravel()
    near = np.sum((centers - np.atleast_1d(x0)) ** 2, axis=1) <= r * r
    keep = pos & near
    return centers[keep], grads[keep]


def inward_normal(u: ScalarField, x0, r: Optional[float] = None) -> np.ndarray:
    """Unit vector along the mean gradient of the positive phase near x0."""
    r = r if r is not None else 8.0 * _h(u.grid)
    _, grads = _cells_near(u, x0, r)
    if len(grads) == 0:
        raise ContractError("no positive phase near the free-boundary point")
    m = grads.mean(axis=0)
    n = float(np.linalg.norm(m))
    if n == 0.0:
        raise ContractError("positive phase has zero mean gradient; normal undefined")
    return m / n


def _cell_index(grid: Grid, q) -> Optional[tuple]:
    idx = []
    for k in range(grid.dim):
        t = (q[k] - grid.origin[k]) / grid.h[k]
        i = int(math.floor(t))
        if i < 0 or i >= grid.cell_shape[k]:
            return None
        idx.append(i)
    return tuple(idx)


# ------------------------------------------------------------------ slope at the free boundary

def fb_gradient_trace(u: ScalarField, fb_point, data: Optional[ProblemData] = None, n_samples: int = 4,
                      normal=None) -> float:
    """Slope at a free-boundary point by affine extrapolation of |grad u|.

    |grad u| is taken at the centers of the cells hit by the inward normal
    ray at distances 2h, 4h, ..., 2 n_samples h; the fitted line is
    evaluated at distance 0. ``data`` is accepted for symmetry with the
    other scans (the target slope is ``target_slope(data, x0)``).
    """
    g = u.grid
    x0 = np.atleast_1d(np.asarray(fb_point, dtype=float))
    h = _h(g)
    nu = inward_normal(u, x0, 2.0 * (n_samples + 1) * h) if normal is None else np.asarray(normal, float)
    grads = cell_gradients(u)
    v = u.values
    dists, mags, seen = [], [], set()
    for k in range(1, n_samples + 1):
        q = x0 + 2.0 * k * h * nu
        cell = _cell_index(g, q)
        if cell is None:
            raise ContractError("trace ray leaves the grid")
        corners = v[cell[0]:cell[0] + 2] if g.dim == 1 else v[cell[0]:cell[0] + 2, cell[1]:cell[1] + 2]
        if np.any(corners <= 0):
            raise ContractError("trace ray leaves the positive phase")
        if cell in seen:
            continue
        seen.add(cell)
        center = np.array([g.origin[i] + (cell[i] + 0.5) * g.h[i] for i in range(g.dim)])
        dists.append(float((center - x0) @ nu))
        mags.append(float(np.linalg.norm(grads[cell])))
    if len(mags) < 2:
        raise ContractError("not enough positive-phase samples for the trace")
    slope, intercept = np.polyfit(np.array(dists), np.array(mags), 1)
    return float(intercept)


# ------------------------------------------------------------------ scans

@dataclass
class Scan:
    """One radius ladder: the summary constant and the per-radius values."""

    constant: float
    values: list
    radii: list
    trimmed: bool = False
    extra: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.constant, self.values))

    def to_dict(self):
        d = {"constant": self.constant, "values": list(self.values), "radii": list(self.radii),
             "trimmed": self.trimmed}
        d.update({k: list(v) for k, v in self.extra.items()})
        return d


def _ladder(u: ScalarField, x0, radii):
    if isinstance(radii, ScanWindow):
        radii = radii.radii
    radii = [float(r) for r in radii]
    if not radii or any(r <= 0 for r in radii):
        raise ContractError("radii must be positive")
    kept = [r for r in radii if fits_in_grid(u.grid, x0, r)]
    if not kept:
        raise ContractError("no radius of the ladder fits in the grid")
    return kept, len(kept) < len(radii)


def _sup_ratios(u: ScalarField, x0, radii):
    out = []
    for r in radii:
        _, vals = ball_values(u, x0, r)
        out.append(max(float(vals.max()), 0.0) / r)
    return out


def growth_scan(u: ScalarField, x0, radii) -> Scan:
    """sup over B_r(x0) of u, divided by r; the constant is the max over the ladder."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii, trimmed = _ladder(u, x0, radii)
    ratios = _sup_ratios(u, x0, radii)
    return Scan(max(ratios), ratios, radii, trimmed)


def _sphere_mean(u: ScalarField, x0, r: float, n: int = 256) -> float:
    if u.grid.dim == 1:
        pts = np.array([[x0[0] - r], [x0[0] + r]])
    else:
        th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        pts = x0 + r * np.stack([np.cos(th), np.sin(th)], axis=-1)
    return float(np.mean(interpolate(u, pts)))


def nondegeneracy_scan(u: ScalarField, x0, radii) -> Scan:
    """sup-form ratios with the ball-mean and sphere-mean forms in ``extra``.

    The constant is the min of the sup form over the ladder. The mean forms
    report (average of u over B_r)/r and (average over the sphere)/r.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii, trimmed = _ladder(u, x0, radii)
    ratios = _sup_ratios(u, x0, radii)
    ball_mean = [float(np.mean(ball_values(u, x0, r)[1])) / r for r in radii]
    sphere_mean = [_sphere_mean(u, x0, r) / r for r in radii]
    return Scan(min(ratios), ratios, radii, trimmed, {"ball_mean": ball_mean, "sphere_mean": sphere_mean})


def density_scan(u: ScalarField, x0, radii, threshold: float = 0.0) -> Scan:
    """Fraction of ball nodes with u > threshold; the constant is 1 - max fraction."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    radii, trimmed = _ladder(u, x0, radii)
    fr = []
    for r in radii:
        _, vals = ball_values(u, x0, r)
        fr.append(float(np.count_nonzero(vals > threshold)) / len(vals))
    return Scan(1.0 - max(fr), fr, radii, trimmed)


# ------------------------------------------------------------------ blow-up

@dataclass
class BlowupFit:
    rho: float
    alpha: float
    normal: np.ndarray
    residual: float

    def to_dict(self):
        return {"rho": self.rho, "alpha": self.alpha, "normal": list(map(float, self.normal)),
                "residual": self.residual}


def blowup_fit(u: ScalarField, x0, rho: float, samples: int = 65) -> BlowupFit:
    """Fit u(x0 + rho y)/rho ~ alpha <y, nu>^+ on the unit ball.

    The rescaled field is resampled by multilinear interpolation on a
    ``samples``-per-axis lattice; the residual is the RMS misfit divided by
    alpha.
    """
    g = u.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not fits_in_grid(g, x0, rho):
        raise ContractError("blow-up ball leaves the grid")
    t = np.linspace(-1.0, 1.0, samples)
    if g.dim == 1:
        y = t[:, None]
    else:
        Y1, Y2 = np.meshgrid(t, t, indexing="ij")
        y = np.stack([Y1.ravel(), Y2.ravel()], axis=-1)
        y = y[np.sum(y * y, axis=1) <= 1.0 + 1e-12]
    u_rho = interpolate(u, x0 + rho * y) / rho
    _, grads = _cells_near(u, x0, rho)
    if len(grads) == 0:
        raise ContractError("positive phase is empty in the blow-up ball")
    m = grads.mean(axis=0)
    nu = m / np.linalg.norm(m)
    s = np.maximum(y @ nu, 0.0)
    ss = float(s @ s)
    alpha = max(float(u_rho @ s) / ss, 0.0)
    if alpha == 0.0:
        return BlowupFit(float(rho), 0.0, nu, float("inf"))
    res = float(np.sqrt(np.mean((u_rho - alpha * s) ** 2))) / alpha
    return BlowupFit(float(rho), alpha, nu, res)


# ------------------------------------------------------------------ tangent ball

@dataclass
class BallCondition:
    ell: float
    target: float
    radius: float
    conclusive: bool

    def __iter__(self):
        return iter((self.ell, self.target))


def _extrapolated_crossings(u: ScalarField, threshold: float) -> np.ndarray:
    """Edge crossings located by extending the positive-side secant to the level.

    A truncated field is flat at the level on the zero side, so plain
    interpolation puts the crossing on the last zero node; the secant through
    the two positive nodes behind the edge locates it inside the cell. Falls
    back to the zero node when that secant does not rise.
    """
    g = u.grid
    v = u.values - threshold
    out = []
    for ax in range(g.dim):
        h = g.h[ax]
        n = v.shape[ax]
        for sgn in (1, -1):
            # a: zero-side node, b = a + sgn, c = a + 2 sgn along ax
            a = np.arange(n)
            ok = (a + 2 * sgn >= 0) & (a + 2 * sgn < n)
            a = a[ok]
            va = np.take(v, a, axis=ax)
            vb = np.take(v, a + sgn, axis=ax)
            vc = np.take(v, a + 2 * sgn, axis=ax)
            hit = (va <= 0) & (vb > 0)
            rise = vc - vb
            t = np.where(rise > 0, 1.0 - vb / np.where(rise > 0, rise, 1.0), 0.0)
            t = np.clip(t, 0.0, 1.0)
            idx = np.argwhere(hit)
            if len(idx) == 0:
                continue
            tt = t[tuple(idx.T)]
            nodes = idx.astype(float)
            nodes[:, ax] = a[idx[:, ax]] + sgn * tt
            out.append(np.asarray(g.origin) + nodes * np.asarray(g.h))
    return np.concatenate(out) if out else np.zeros((0, g.dim))


def ball_condition_check(u: ScalarField, x0, data: ProblemData, threshold: float = 0.0,
                         search: Optional[float] = None, window: Optional[float] = None) -> BallCondition:
    """Largest empty ball touching x0 and the sup of u / dist(., ball) near x0.

    Ball centers are zero-set nodes; a node c carries the radius |c - x0|
    when no level crossing of u = threshold lies closer to c than that (up
    to h/20, the crossings being interpolated). The chosen ball is then
    grown to the secant-located boundary. Positive nodes within ``window``
    (8h) of x0 are sampled. Radius below 2h is reported as
    inconclusive with ell = nan.
    """
    g = u.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    h = _h(g)
    search = 32.0 * h if search is None else search
    window = 8.0 * h if window is None else window
    target = target_slope(data, x0)
    zero = u.values <= threshold
    idx = np.argwhere(zero)
    pos = np.asarray(g.origin) + idx * np.asarray(g.h)
    d0 = np.linalg.norm(pos - x0, axis=1)
    near = d0 <= search
    pos, d0 = pos[near], d0[near]
    cross = level_crossings(u, threshold)
    if len(pos) == 0 or len(cross) == 0:
        return BallCondition(float("nan"), target, 0.0, False)
    clear, _ = cKDTree(cross).query(pos)
    ok = clear >= d0 - 0.05 * h
    if not ok.any():
        return BallCondition(float("nan"), target, 0.0, False)
    best = int(np.argmax(np.where(ok, d0, -1.0)))
    c, R = pos[best], float(d0[best])
    if R < 2.0 * h:
        return BallCondition(float("nan"), target, R, False)
    # grow the ball to the secant-located boundary so dist(., B) is not biased by the node lattice
    ext = _extrapolated_crossings(u, threshold)
    if len(ext):
        R = max(R, float(cKDTree(ext).query(c)[0]))
    pts, vals = ball_values(u, x0, window)
    keep = vals > threshold
    dist = np.linalg.norm(pts[keep] - c, axis=1) - R
    good = dist > 0
    if not good.any():
        return BallCondition(float("nan"), target, R, False)
    ell = float(np.max(vals[keep][good] / dist[good]))
    return BallCondition(ell, target, R, True)


# ------------------------------------------------------------------ flat-boundary development

def halfplane_development_check(u: ScalarField, p: Optional[ExponentField] = None, tol: float = 1e-6,
                                levels: int = 5, at=None) -> float:
    """Slope alpha in u = alpha x_N + o(|x|) at the middle of the flat side x_N = origin.

    Ratios u/t at dyadic heights t = H/2^k (t >= 2h) are fitted by a line in
    t and evaluated at t = 0. With ``p`` given, the p-harmonic residual on
    {u > 0} is checked first (strong form, f = 0).
    """
    g = u.grid
    ax = g.dim - 1
    v = u.values
    if np.any(v < -1e-12):
        raise ContractError("field must be nonnegative")
    base = np.take(v, 0, axis=ax)
    if np.max(np.abs(base)) > 1e-12:
        raise ContractError("field must vanish on the flat side")
    if p is not None:
        from .energy import ProblemData as _PD
        data = _PD(p, ScalarField.constant(g, 0.0))
        r = grad_energy_smooth(u, data).values / g.cell_volume
        inner = (v > 0) & ~g.boundary_mask()
        if inner.any() and float(np.max(np.abs(r[inner]))) > tol:
            raise ContractError("field is not p-harmonic in its positive phase")
    lo = g.origin[ax]
    H = g.extent[ax]
    h = g.h[ax]
    if at is None:
        at = [g.origin[k] + 0.5 * g.extent[k] for k in range(ax)]
    heights = [H / 2 ** k for k in range(levels) if H / 2 ** k >= 2.0 * h - 1e-12]
    if len(heights) < 2:
        raise ContractError("grid too coarse for the dyadic heights")
    pts = np.array([list(at) + [lo + t] for t in heights])
    ratios = interpolate(u, pts) / np.array(heights)
    _, intercept = np.polyfit(np.array(heights), ratios, 1)
    return float(intercept)


# ------------------------------------------------------------------ report

@dataclass
class PointRecord:
    point: np.ndarray
    measured_slope: float
    target_lambda_star: float
    normal: np.ndarray
    fit_residual: float
    blowup_alpha: float

    def to_dict(self):
        return {"point": list(map(float, self.point)), "measured_slope": self.measured_slope,
                "target_lambda_star": self.target_lambda_star, "normal": list(map(float, self.normal)),
                "fit_residual": self.fit_residual, "blowup_alpha": self.blowup_alpha}


@dataclass
class FBReport:
    fb_points: np.ndarray
    per_point: list = field(default_factory=list)
    growth_constants: dict = field(default_factory=dict)
    scans: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "fb_points": [list(map(float, x)) for x in self.fb_points],
            "per_point": [r.to_dict() for r in self.per_point],
            "growth_constants": {k: {"value": v[0], "radii": list(v[1])}
                                 for k, v in self.growth_constants.items()},
            "scans": self.scans,
            "notes": list(self.notes),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_scan_csv(self, path) -> None:
        """One row per (point, scan, radius)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "scan", "radius", "value"])
            for k, s in enumerate(self.scans):
                for name in ("growth", "nondegeneracy", "density"):
                    for r, val in zip(s[name]["radii"], s[name]["values"]):
                        w.writerow([k, name, f"{r:.10g}", f"{val:.10g}"])


def select_points(u: ScalarField, pts: np.ndarray, r_max: float, limit: int = 32) -> np.ndarray:
    """Up to ``limit`` evenly spread FB points whose r_max-ball fits in the grid."""
    ok = np.array([fits_in_grid(u.grid, x, r_max) for x in pts], dtype=bool) if len(pts) else np.zeros(0, bool)
    cand = pts[ok]
    if len(cand) <= limit:
        return cand
    order = np.lexsort(cand.T[::-1])
    cand = cand[order]
    take = np.linspace(0, len(cand) - 1, limit).round().astype(int)
    return cand[take]


def build_report(u: ScalarField, data: ProblemData, radii_cells=(32, 16, 8, 4), density_cells=(32, 16, 8),
                 rho_cells: float = 32, limit: int = 32, n_samples: int = 4) -> FBReport:
    """Scans, slopes and blow-up fits at up to ``limit`` free-boundary points."""
    h = _h(u.grid)
    pts = extract_fb(u, 0.0)
    report = FBReport(pts)
    if len(pts) == 0:
        report.notes.append("no free boundary")
        return report
    radii = [c * h for c in radii_cells]
    dens = [c * h for c in density_cells]
    chosen = select_points(u, pts, max(radii[0], rho_cells * h), limit)
    if len(chosen) == 0:
        report.notes.append("no free-boundary point admits the full radius ladder")
        return report
    report.notes.append("constants certified on a finite dyadic ladder only")
    C, c, gap = [], [], []
    for x0 in chosen:
        gs = growth_scan(u, x0, radii)
        ns = nondegeneracy_scan(u, x0, radii)
        ds = density_scan(u, x0, dens)
        fit = blowup_fit(u, x0, rho_cells * h)
        try:
            slope = fb_gradient_trace(u, x0, data, n_samples, normal=fit.normal)
        except ContractError:
            slope = float("nan")
        report.per_point.append(PointRecord(x0, slope, target_slope(data, x0), fit.normal, fit.residual,
                                            fit.alpha))
        report.scans.append({"point": list(map(float, x0)), "growth": gs.to_dict(),
                             "nondegeneracy": ns.to_dict(), "density": ds.to_dict()})
        C.append(gs.constant)
        c.append(ns.constant)
        gap.append(ds.constant)
    report.growth_constants = {"C_max": (max(C), radii), "c_min": (min(c), radii),
                               "density_gap": (min(gap), dens)}
    return report
