"""Variable-exponent Lebesgue space numerics: modular, Luxemburg norm, duality.

Everything is discretized with the same cell-center rule as the energies:
nodal u and p are corner-averaged to cells and integrated by the midpoint rule.
"""

from __future__ import annotations

import numpy as np

from .grid import ContractError, ExponentField, ScalarField, cell_gradients, require_same_grid

_MAX_BISECT = 400


class NumericFailure(RuntimeError):
    pass


def _modular_cells(uc: np.ndarray, pc: np.ndarray, vol: float) -> float:
    a = np.abs(uc)
    with np.errstate(divide="ignore"):
        terms = np.where(a > 0, np.exp(pc * np.log(np.where(a > 0, a, 1.0))), 0.0)
    return float(np.sum(terms) * vol)


def modular(u: ScalarField, p: ExponentField) -> float:
    """Discrete modular: sum over cells of |u_c|^{p_c} times the cell volume."""
    grid = require_same_grid(u, p)
    return _modular_cells(u.cells(), p.cells(), grid.cell_volume)


def _luxemburg_cells(uc, pc, vol, tol=1e-12, measure=1.0) -> float:
    amax = float(np.max(np.abs(uc))) if uc.size else 0.0
    if amax == 0.0:
        return 0.0
    pmin = float(pc.min())

    def rho(s):
        return _modular_cells(uc / s, pc, vol)

    lo = np.finfo(float).eps * amax
    hi = max(1.0, amax * measure ** (1.0 / pmin) + 1.0)
    for _ in range(_MAX_BISECT):
        if rho(hi) <= 1.0:
            break
        hi *= 2.0
    else:
        raise NumericFailure("could not bracket the Luxemburg norm from above")
    for _ in range(_MAX_BISECT):
        if rho(lo) > 1.0:
            break
        lo *= 0.5
        if lo == 0.0:
            raise NumericFailure("could not bracket the Luxemburg norm from below")
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            return hi
    raise NumericFailure("Luxemburg bisection did not converge")


def luxemburg_norm(u: ScalarField, p: ExponentField, tol: float = 1e-12) -> float:
    """inf{s > 0 : modular(u/s) <= 1}, by bisection to relative width ``tol``."""
    if tol <= 0:
        raise ContractError("tol must be positive")
    grid = require_same_grid(u, p)
    return _luxemburg_cells(u.cells(), p.cells(), grid.cell_volume, tol, grid.measure)


def dual_exponent(p: ExponentField) -> ExponentField:
    q = p.values / (p.values - 1.0)
    return ExponentField(ScalarField(p.grid, q))


def check_norm_modular_sandwich(u: ScalarField, p: ExponentField, tol: float = 1e-12):
    """Return (lower, norm, upper) with lower/upper the min/max of rho^(1/p_min), rho^(1/p_max)."""
    rho = modular(u, p)
    a, b = rho ** (1.0 / p.p_min), rho ** (1.0 / p.p_max)
    return min(a, b), luxemburg_norm(u, p, tol), max(a, b)


def check_holder(f: ScalarField, g: ScalarField, p: ExponentField, tol: float = 1e-12):
    """Return (int |f||g|, 2 ||f||_p ||g||_p')."""
    grid = require_same_grid(f, g, p)
    lhs = float(np.sum(np.abs(f.cells() * g.cells())) * grid.cell_volume)
    rhs = 2.0 * luxemburg_norm(f, p, tol) * luxemburg_norm(g, dual_exponent(p), tol)
    return lhs, rhs


def gradient_magnitude_norm(u: ScalarField, p: ExponentField, tol: float = 1e-12) -> float:
    grid = require_same_grid(u, p)
    gm = np.linalg.norm(cell_gradients(u), axis=-1)
    return _luxemburg_cells(gm, p.cells(), grid.cell_volume, tol, grid.measure)


def check_poincare(u: ScalarField, p: ExponentField, tol: float = 1e-12):
    """Return (||u||_p, || |grad u| ||_p, ratio) for u vanishing on the boundary."""
    grid = require_same_grid(u, p)
    if np.any(u.values[grid.boundary_mask()] != 0.0):
        raise ContractError("Poincare check needs u = 0 on every boundary node")
    lhs = luxemburg_norm(u, p, tol)
    if lhs == 0.0:
        return 0.0, 0.0, 0.0
    rhs = gradient_magnitude_norm(u, p, tol)
    return lhs, rhs, lhs / rhs
