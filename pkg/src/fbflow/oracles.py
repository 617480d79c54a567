"""Independent ground truth for the solvers.

* planar solutions alpha <x, nu>^+ with alpha = lambda*,
* the 1D profile of the regularized equation, built from its first integral
  by quadrature (no time stepping, no use of the PDE solver),
* exhaustive support enumeration for small 1D instances of the sharp problem,
  each support solved by its own tridiagonal Newton iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .energy import B_eps, BetaProfile, ProblemData
from .fbanalysis import lambda_star
from .grid import ContractError, Grid, ScalarField


# ------------------------------------------------------------------ planar

@dataclass(frozen=True)
class PlanarSolution:
    alpha: float
    normal: tuple
    offset: float

    def __call__(self, *coords):
        s = sum(n * c for n, c in zip(self.normal, coords)) - self.offset
        return self.alpha * np.maximum(s, 0.0)


def planar_solution(p0: float, lam0: float, normal=(1.0,), offset: float = 0.0) -> PlanarSolution:
    nu = np.atleast_1d(np.asarray(normal, dtype=float))
    nrm = float(np.linalg.norm(nu))
    if nrm == 0.0:
        raise ContractError("normal must be nonzero")
    return PlanarSolution(lambda_star(p0, lam0), tuple(nu / nrm), float(offset))


def planar_oracle(p0: float, lam0: float, normal, offset: float, grid: Grid) -> ScalarField:
    """lambda*(p0, lam0) <x, normal> - offset, positive part, sampled on the nodes."""
    sol = planar_solution(p0, lam0, normal, offset)
    if len(sol.normal) != grid.dim:
        raise ContractError("normal dimension does not match the grid")
    return ScalarField(grid, sol(*grid.coords()))


# ------------------------------------------------------------------ 1D regularized profile

class ODEProfile:
    """Monotone solution of (|u'|^(p-2) u')' = beta_eps(u) with u = u' = 0 at the free edge.

    Multiplying by u' gives (p-1)/p |u'|^p = B_eps(u), so u' = phi(u) with
    phi = ((p/(p-1)) B_eps)^(1/p). Above eps phi is the constant lambda*;
    below eps the position is recovered from G(u) = int_u^eps ds/phi(s).
    The profile is anchored so that u(right) = right_value.

    G is tabulated in tau = log(eps/s) with Gauss-Legendre panels, and
    evaluated between table nodes by one more panel; heights below 1e-60 eps
    are reported as 0 (B_eps would underflow).
    """

    _DTAU = 0.125
    _TAU_MAX = 60 * math.log(10.0)
    _GL = np.polynomial.legendre.leggauss(20)

    def __init__(self, p0: float, eps: float, beta: BetaProfile, left: float, right: float,
                 right_value: float):
        if not p0 > 1:
            raise ContractError("p must exceed 1")
        if not eps > 0:
            raise ContractError("eps must be positive")
        if not right_value > eps:
            raise ContractError("right_value must exceed eps so the profile saturates")
        self.p, self.eps, self.beta = float(p0), float(eps), beta
        self.left, self.right, self.right_value = float(left), float(right), float(right_value)
        self.slope = lambda_star(self.p, beta.M)
        self.x_eps = self.right - (self.right_value - self.eps) / self.slope
        self._tau = np.arange(0.0, self._TAU_MAX + 0.5 * self._DTAU, self._DTAU)
        panels = self._panel(self._tau[:-1], self._tau[1:])
        self._Gtab = np.concatenate([[0.0], np.cumsum(panels)])
        # B_eps ~ s^k near 0, so phi ~ s^(k/p): the tail reaches zero at finite
        # distance (a dead core) exactly when k < p
        eta = 1e-6
        order = math.log2(float(beta.primitive(2 * eta)) / float(beta.primitive(eta)))
        self.order = float(round(order)) if abs(order - round(order)) < 1e-4 else order
        if self.order < self.p * (1 - 1e-6):
            # below s_min, phi(s) = phi(s_min) (s/s_min)^(k/p) up to O(s_min/eps)
            s_min = self.eps * math.exp(-self._tau[-1])
            rest = s_min / float(self.phi(s_min)) / (1.0 - self.order / self.p)
            self.tail = float(self._Gtab[-1]) + rest
        else:
            self.tail = math.inf

    def phi(self, s):
        B = B_eps(np.asarray(s, dtype=float), self.eps, self.beta)
        return (self.p / (self.p - 1.0) * B) ** (1.0 / self.p)

    def _panel(self, a, b):
        """int_a^b s / phi(s) dtau with s = eps exp(-tau), one Gauss-Legendre panel per pair."""
        a, b = np.atleast_1d(a), np.atleast_1d(b)
        x, w = self._GL
        half = 0.5 * (b - a)
        t = (0.5 * (a + b))[:, None] + half[:, None] * x[None, :]
        s = self.eps * np.exp(-t)
        return half * np.sum(w[None, :] * s / self.phi(s), axis=1)

    def _G_tau(self, tau: float) -> float:
        k = min(int(tau / self._DTAU), len(self._tau) - 2)
        return float(self._Gtab[k] + self._panel(self._tau[k], tau)[0])

    def _G(self, u: float) -> float:
        """int_u^eps ds / phi(s)."""
        if u >= self.eps:
            return 0.0
        if u <= 0.0:
            return self.tail
        return self._G_tau(math.log(self.eps / u))

    def u_at(self, x: float) -> float:
        d = self.x_eps - x
        if d <= 0:
            return self.eps + self.slope * (-d)
        if d >= self.tail or d >= self._Gtab[-1]:
            return 0.0
        k = int(np.searchsorted(self._Gtab, d, side="right")) - 1
        lo, hi = self._tau[k], self._tau[k + 1]
        tau = brentq(lambda t: self._G_tau(t) - d, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        return self.eps * math.exp(-tau)

    def du_at(self, x: float) -> float:
        return float(self.phi(self.u_at(x)))

    def sample(self, grid: Grid) -> ScalarField:
        if grid.dim != 1:
            raise ContractError("the profile is one-dimensional")
        return ScalarField(grid, np.array([self.u_at(x) for x in grid.axis(0)]))

    @property
    def far_slope(self) -> float:
        """u' on the saturated side, evaluated through phi rather than the formula."""
        return float(self.phi(self.right_value))


def ode_profile_1d(p0: float, eps: float, beta: BetaProfile, domain: Grid, right_value: float) -> ScalarField:
    lo = domain.origin[0]
    return ODEProfile(p0, eps, beta, lo, lo + domain.extent[0], right_value).sample(domain)


class FirstIntegral1D:
    """E = (p-1)/p |u'|^p - B_eps(u); zero along profiles with a free edge."""

    def __init__(self, p0: float, eps: float, beta: BetaProfile):
        self.p, self.eps, self.beta = float(p0), float(eps), beta

    def evaluate(self, u, du):
        u = np.asarray(u, dtype=float)
        du = np.asarray(du, dtype=float)
        return (self.p - 1.0) / self.p * np.abs(du) ** self.p - B_eps(u, self.eps, self.beta)

    def value_at(self, profile: ODEProfile, x: float) -> float:
        u = profile.u_at(x)
        return float(self.evaluate(u, profile.phi(u)))

    def on_cells(self, u: ScalarField) -> np.ndarray:
        """E at cell midpoints of a discrete 1D field (difference quotient, midpoint value)."""
        g = u.grid
        if g.dim != 1:
            raise ContractError("first integral is defined in 1D")
        v = u.values
        return self.evaluate(0.5 * (v[1:] + v[:-1]), np.diff(v) / g.h[0])


# ------------------------------------------------------------------ brute force

MAX_NODES = 64


@dataclass
class BruteForceResult:
    u: ScalarField
    J: float
    support: list
    candidates: int
    scope: str = "single-interface optimal"

    def __iter__(self):
        return iter((self.u, self.J, self.support))


def _sharp_J(v, pc, ac, fc, lamc, h):
    g = np.diff(v) / h
    vc = 0.5 * (v[1:] + v[:-1])
    grad = ac / pc * np.abs(g) ** pc * h
    return math.fsum(grad) + math.fsum(fc * vc * h) + math.fsum(np.where(vc > 0, lamc, 0.0) * h)


def _smooth_E(v, pc, ac, fc, h):
    g = np.diff(v) / h
    return math.fsum(ac / pc * np.abs(g) ** pc * h) + math.fsum(fc * 0.5 * (v[1:] + v[:-1]) * h)


def _newton_dirichlet(v, free, pc, ac, fc, h, tol=1e-13, maxit=200):
    """Minimize the smooth 1D energy over the free nodes (contiguous block)."""
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return v
    lo, hi = idx[0], idx[-1]
    cells = slice(lo - 1, hi + 1)
    E = _smooth_E(v, pc, ac, fc, h)
    for _ in range(maxit):
        g = np.diff(v) / h
        ag = np.abs(g)
        flux = ac * np.sign(g) * ag ** (pc - 1.0)
        src = 0.5 * h * fc
        grad = np.zeros_like(v)
        grad[1:] += flux + src
        grad[:-1] += -flux + src
        r = grad[lo:hi + 1]
        if np.max(np.abs(r)) / h <= tol:
            break
        # second derivative of the cell energy, floored where the gradient vanishes
        k = ac * (pc - 1.0) * np.maximum(ag, 1e-12) ** (pc - 2.0) / h
        kc = k[cells]
        m = hi - lo + 1
        ab = np.zeros((3, m))
        ab[1] = kc[:-1] + kc[1:]
        ab[0, 1:] = -kc[1:-1]
        ab[2, :-1] = -kc[1:-1]
        step = solve_banded((1, 1), ab, -r)
        t = 1.0
        while t > 1e-12:
            w = v.copy()
            w[lo:hi + 1] += t * step
            Ew = _smooth_E(w, pc, ac, fc, h)
            if Ew <= E + 1e-4 * t * float(r @ step) or abs(Ew - E) <= 1e-15 * max(1.0, abs(E)):
                break
            t *= 0.5
        v, E = w, Ew
        if np.max(np.abs(t * step)) <= 1e-15 * max(1.0, np.max(np.abs(v))):
            break
    return v


def _supports(n: int, left_pos: bool, right_pos: bool):
    """Interior node sets (as lists of [start, stop) intervals) with at most one interface per end."""
    inner = range(1, n - 1)
    yield []
    yield [(1, n - 1)]
    for k in inner:
        yield [(k, n - 1)]      # attached to the right end
        yield [(1, k + 1)]      # attached to the left end
    if left_pos and right_pos:
        for a in range(1, n - 2):
            for b in range(a + 2, n - 1):
                yield [(1, a + 1), (b, n - 1)]


def brute_force_1d(data: ProblemData, boundary: ScalarField, n: int = None) -> BruteForceResult:
    """Exact discrete minimizer of J over supports with one interface per end (n <= 64 nodes)."""
    g = data.grid
    if g.dim != 1:
        raise ContractError("brute force is one-dimensional")
    n = g.n[0] if n is None else n
    if n != g.n[0]:
        raise ContractError("n must equal the number of grid nodes")
    if n > MAX_NODES:
        raise ContractError(f"brute force refuses n = {n} > {MAX_NODES}")
    b = boundary.values
    if b[0] < 0 or b[-1] < 0:
        raise ContractError("boundary values must be nonnegative")
    sharp = data.as_sharp()
    h = g.h[0]
    pc, ac, fc, lamc = sharp.pc, sharp.ac, sharp.fc, sharp.lamc
    best, best_J, best_sup, count = None, math.inf, None, 0
    seen = set()
    for sup in _supports(n, b[0] > 0, b[-1] > 0):
        key = tuple(sup)
        if key in seen:
            continue
        seen.add(key)
        count += 1
        v = np.zeros(n)
        v[0], v[-1] = b[0], b[-1]
        for s0, s1 in sup:
            # linear ramp between the adjacent fixed values plus a tent, so no cell starts flat
            x = np.linspace(0.0, 1.0, s1 - s0 + 2)[1:-1]
            tent = 1e-2 * (1.0 + max(b[0], b[-1])) * np.minimum(x, 1.0 - x)
            v[s0:s1] = v[s0 - 1] + (v[s1] - v[s0 - 1]) * x + tent
        # solve each interval separately (they do not interact through fixed zeros)
        for s0, s1 in sup:
            blk = np.zeros(n, dtype=bool)
            blk[s0:s1] = True
            v = _newton_dirichlet(v, blk, pc, ac, fc, h)
        J = _sharp_J(v, pc, ac, fc, lamc, h)
        if J < best_J:
            best, best_J, best_sup = v, J, sup
    return BruteForceResult(ScalarField(g, best), best_J, best_sup, count)
