"""The sharp functional J, its regularization J_eps, and their discrete gradients.

Discretization: nodal fields, cell sums. In 2D the gradient term averages
|grad u|^p over the four one-sided corner gradients of each cell (exact on
affine fields, and for p = 2 it reduces to the 5-point Laplacian). Lower
order terms use corner-averaged cell-center values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from scipy import integrate

from . import kernels
from .grid import ContractError, ExponentField, Grid, ScalarField, require_same_grid

DEFAULT_DELTA = 1e-8


# ---------------------------------------------------------------- reaction term

def _quad_profile(s):
    return 6.0 * s * (1.0 - s)


def _quad_primitive(s):
    return s * s * (3.0 - 2.0 * s)


def _quartic_profile(s):
    return 30.0 * s * s * (1.0 - s) ** 2


def _quartic_primitive(s):
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


_SHAPES = {
    # unit-mass profiles on (0, 1) and their antiderivatives
    "quadratic": (_quad_profile, _quad_primitive),
    "quartic": (_quartic_profile, _quartic_primitive),
}


class BetaProfile:
    """Reaction profile beta, positive on (0, 1) and zero outside, with mass M.

    ``shape`` is ``"quartic"`` (30 s^2 (1 - s)^2, the default),
    ``"quadratic"`` (6 s (1 - s)), or a table of (s, value) pairs describing
    a piecewise-linear profile; tables are rescaled to mass M. The quartic
    profile vanishes to second order at both ends, so B_eps is C^2 and the
    descent solvers see a twice-differentiable energy.
    """

    def __init__(self, shape="quartic", M: float = 1.0):
        if not (M > 0 and np.isfinite(M)):
            raise ContractError(f"reaction mass must satisfy M > 0, got {M!r}")
        self.M = float(M)
        if isinstance(shape, str):
            if shape not in _SHAPES:
                raise ContractError(f"unknown beta profile {shape!r}")
            self.shape = shape
            self._b, self._B = _SHAPES[shape]
        else:
            self.shape = "tabulated"
            self._b, self._B = _tabulated(shape)
        self.lipschitz = self._estimate_lipschitz()
        mass, _ = integrate.quad(self.beta, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        if abs(mass - self.M) > 1e-10 * max(1.0, self.M):
            raise ContractError(f"profile mass {mass!r} differs from M = {self.M!r}")

    def _estimate_lipschitz(self) -> float:
        s = np.linspace(0.0, 1.0, 20001)
        return float(np.max(np.abs(np.diff(self.beta(s)) / np.diff(s))))

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 0.0) & (s < 1.0)
        return np.where(inside, self.M * self._b(np.clip(s, 0.0, 1.0)), 0.0)

    def primitive(self, s):
        """B(s) = int_0^s beta; equals M for s >= 1."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        return self.M * self._B(s)

    def __repr__(self):
        return f"BetaProfile({self.shape!r}, M={self.M:g})"


def _tabulated(table):
    s, v = (np.asarray(c, dtype=float) for c in zip(*table))
    if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
        raise ContractError("tabulated beta needs increasing abscissae from 0 to 1")
    v = v.copy()
    v[0] = v[-1] = 0.0
    if np.any(v[1:-1] <= 0):
        raise ContractError("tabulated beta must be positive on (0, 1)")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(s))])
    v, cum = v / cum[-1], cum / cum[-1]

    def b(x):
        return np.interp(x, s, v)

    def B(x):
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(s, x, side="right") - 1, 0, len(s) - 2)
        t = x - s[k]
        slope = (v[k + 1] - v[k]) / (s[k + 1] - s[k])
        return cum[k] + v[k] * t + 0.5 * slope * t * t

    return b, B


def beta_eps(s, eps: float, beta: BetaProfile):
    """(1/eps) beta(s/eps); zero for s <= 0 and s >= eps."""
    if not eps > 0:
        raise ContractError("eps must be positive")
    return beta.beta(np.asarray(s, dtype=float) / eps) / eps


def B_eps(s, eps: float, beta: BetaProfile):
    """Primitive of beta_eps from 0; equals M for s >= eps."""
    if not eps > 0:
        raise ContractError("eps must be positive")
    return beta.primitive(np.asarray(s, dtype=float) / eps)


# ---------------------------------------------------------------- problem data

@dataclass
class EnergyBreakdown:
    gradient_term: float
    interface_term: float
    forcing_term: float
    total: float

    @classmethod
    def of(cls, gradient_term, interface_term, forcing_term):
        return cls(gradient_term, interface_term, forcing_term,
                   math.fsum([gradient_term, interface_term, forcing_term]))

    def to_dict(self):
        return asdict(self)


@dataclass
class ProblemData:
    """Coefficients of J or J_eps on one grid.

    Sharp problems carry ``lam``; regularized ones carry ``beta`` and ``eps``.
    ``a`` is the optional diffusion weight (default 1).
    """

    p: ExponentField
    f: ScalarField
    lam: Optional[ScalarField] = None
    beta: Optional[BetaProfile] = None
    eps: Optional[float] = None
    a: Optional[ScalarField] = None

    def __post_init__(self):
        require_same_grid(self.p, self.f, self.lam, self.a)
        if self.lam is not None:
            self.lam_min = float(self.lam.values.min())
            self.lam_max = float(self.lam.values.max())
            if not self.lam_min > 0:
                raise ContractError(f"lambda bound violated: lambda_1 = {self.lam_min:g} must be > 0")
        if self.a is not None:
            self.a_min = float(self.a.values.min())
            self.a_max = float(self.a.values.max())
            if not self.a_min > 0:
                raise ContractError(f"weight bound violated: a_0 = {self.a_min:g} must be > 0")
        else:
            self.a_min = self.a_max = 1.0
        if self.eps is not None and not self.eps > 0:
            raise ContractError("eps must be positive")
        g = self.grid
        self.pc = np.ascontiguousarray(self.p.cells())
        self.fc = np.ascontiguousarray(self.f.cells())
        self.ac = np.ascontiguousarray(self.a.cells() if self.a is not None else np.ones(g.cell_shape))
        self.lamc = self.lam.cells() if self.lam is not None else None
        self.quadratic = bool(np.all(self.pc == 2.0))

    @property
    def grid(self) -> Grid:
        return self.p.grid

    def with_eps(self, eps: float) -> "ProblemData":
        return replace(self, eps=float(eps))

    def sharp_lambda(self) -> ScalarField:
        """lambda for the sharp problem; the regularized route uses M."""
        if self.lam is not None:
            return self.lam
        if self.beta is not None:
            return ScalarField.constant(self.grid, self.beta.M)
        raise ContractError("problem has neither lambda nor a reaction profile")

    def as_sharp(self) -> "ProblemData":
        return replace(self, lam=self.sharp_lambda())


def _cells(u, grid):
    return grid.to_cells(u)


def _smooth_parts(u: np.ndarray, data: ProblemData, workers=1):
    g = data.grid
    grad_term = kernels.smooth_energy(u, data.pc, data.ac, g.h, data.quadratic, workers)
    forcing = math.fsum((data.fc * _cells(u, g)).ravel()) * g.cell_volume
    return grad_term, forcing


def energy_J(u: ScalarField, data: ProblemData, threshold: float = 0.0, workers=1) -> EnergyBreakdown:
    if threshold < 0:
        raise ContractError("threshold must be >= 0")
    require_same_grid(u, data.p)
    sharp = data.as_sharp() if data.lam is None else data
    g = data.grid
    grad_term, forcing = _smooth_parts(u.values, data, workers)
    pos = u.cells() > threshold
    interface = math.fsum(np.where(pos, sharp.lamc, 0.0).ravel()) * g.cell_volume
    return EnergyBreakdown.of(grad_term, interface, forcing)


def _require_eps(data: ProblemData):
    if data.eps is None or data.beta is None:
        raise ContractError("J_eps needs a reaction profile and eps")


def energy_Jeps(u: ScalarField, data: ProblemData, workers=1) -> EnergyBreakdown:
    _require_eps(data)
    require_same_grid(u, data.p)
    g = data.grid
    grad_term, forcing = _smooth_parts(u.values, data, workers)
    interface = math.fsum(B_eps(u.cells(), data.eps, data.beta).ravel()) * g.cell_volume
    return EnergyBreakdown.of(grad_term, interface, forcing)


def flux_value(xi, p: float, a: float = 1.0, delta: float = 0.0) -> np.ndarray:
    """a (|xi|^2 + delta^2)^((p-2)/2) xi."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    s2 = float(xi @ xi) + delta * delta
    if s2 == 0.0:
        return np.zeros_like(xi)
    return a * s2 ** (0.5 * (p - 2.0)) * xi


def flux(cell, xi, data: ProblemData, delta: float = 0.0) -> np.ndarray:
    """The monotone flux A(x, xi) evaluated with the cell-center p and a of ``cell``."""
    if delta < 0:
        raise ContractError("delta must be >= 0")
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    return flux_value(xi, float(data.pc[cell]), float(data.ac[cell]), delta)


def check_monotonicity(xi, eta, p_val: float):
    """Both sides of the monotonicity inequality for the p-Laplacian flux.

    Returns (lhs, rhs) with rhs = (A(eta) - A(xi)) . (eta - xi) and lhs the
    p-dependent lower quantity; the inequality is lhs <= C rhs.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    d = eta - xi
    rhs = float((flux_value(eta, p_val) - flux_value(xi, p_val)) @ d)
    nd = float(np.linalg.norm(d))
    if p_val >= 2.0:
        lhs = nd ** p_val
    else:
        s = float(np.linalg.norm(eta) + np.linalg.norm(xi))
        lhs = 0.0 if nd == 0.0 else nd * nd * s ** (p_val - 2.0)
    return lhs, rhs


def monotonicity_scan(p_val: float, n_pairs: int, rng, dim: int = 2, scale: float = 3.0):
    """Random-pair scan: (min rhs over pairs, empirical C = max lhs/rhs)."""
    xs = rng.normal(scale=scale, size=(n_pairs, dim))
    ys = rng.normal(scale=scale, size=(n_pairs, dim))
    min_rhs, C = np.inf, 0.0
    for x, y in zip(xs, ys):
        lhs, rhs = check_monotonicity(x, y, p_val)
        min_rhs = min(min_rhs, rhs)
        if rhs > 0:
            C = max(C, lhs / rhs)
    return min_rhs, C


class DiscreteEnergy:
    """Array-level energy and gradient used by the solvers.

    ``kind`` is ``"smooth"`` (gradient + forcing terms, the Dirichlet
    problem) or ``"eps"`` (adds the B_eps term).
    """

    def __init__(self, data: ProblemData, kind: str = "eps", delta: float = DEFAULT_DELTA, workers: int = 1):
        if kind == "eps":
            _require_eps(data)
        elif kind != "smooth":
            raise ValueError(kind)
        self.data, self.kind, self.delta, self.workers = data, kind, delta, workers
        self.grid = data.grid

    def cell_energies_interface(self, u):
        return B_eps(_cells(u, self.grid), self.data.eps, self.data.beta)

    def parts(self, u: np.ndarray) -> EnergyBreakdown:
        grad_term, forcing = _smooth_parts(u, self.data, self.workers)
        interface = 0.0
        if self.kind == "eps":
            interface = math.fsum(self.cell_energies_interface(u).ravel()) * self.grid.cell_volume
        return EnergyBreakdown.of(grad_term, interface, forcing)

    def value(self, u: np.ndarray) -> float:
        return self.parts(u).total

    def cell_energy(self, u: np.ndarray) -> np.ndarray:
        """Total energy per cell (already multiplied by the cell volume)."""
        g = self.grid
        uc = _cells(u, g)
        e = kernels.energy_cells(u, self.data.pc, self.data.ac, g.h, self.data.quadratic, self.workers)
        extra = self.data.fc * uc
        if self.kind == "eps":
            extra = extra + B_eps(uc, self.data.eps, self.data.beta)
        return e + extra * g.cell_volume

    def gradient(self, u: np.ndarray) -> np.ndarray:
        src = self.data.fc
        if self.kind == "eps":
            src = src + beta_eps(_cells(u, self.grid), self.data.eps, self.data.beta)
        return kernels.smooth_gradient(u, self.data.pc, self.data.ac, src, self.grid.h,
                                       self.delta, self.data.quadratic, self.workers)


def grad_energy_Jeps(u: ScalarField, data: ProblemData, delta: float = DEFAULT_DELTA, workers=1) -> ScalarField:
    """Nodal gradient of the discrete J_eps; boundary nodes carry zero."""
    require_same_grid(u, data.p)
    g = DiscreteEnergy(data, "eps", delta, workers).gradient(u.values)
    g[data.grid.boundary_mask()] = 0.0
    return ScalarField(data.grid, g)


def grad_energy_smooth(u: ScalarField, data: ProblemData, delta: float = DEFAULT_DELTA, workers=1) -> ScalarField:
    """Nodal gradient of the gradient + forcing part (the Dirichlet energy)."""
    g = DiscreteEnergy(data, "smooth", delta, workers).gradient(u.values)
    g[data.grid.boundary_mask()] = 0.0
    return ScalarField(data.grid, g)
