"""Uniform Cartesian grids in one and two dimensions.

All fields are nodal. Values are stored as numpy arrays of shape ``grid.n``
with axis 0 running along x1; flattening is row-major (C order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

P_FLOOR = 1.05


class ContractError(ValueError):
    """Raised when an operation is called outside its precondition."""


@dataclass(frozen=True)
class Grid:
    origin: tuple
    extent: tuple
    n: tuple
    h: tuple = field(init=False)

    def __post_init__(self):
        origin = tuple(float(v) for v in np.atleast_1d(self.origin))
        extent = tuple(float(v) for v in np.atleast_1d(self.extent))
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        if not (len(origin) == len(extent) == len(n)) or len(n) not in (1, 2):
            raise ContractError("grid dimension must be 1 or 2 with matching origin/extent/n")
        if any(k < 2 for k in n):
            raise ContractError("need at least 2 nodes per axis")
        if any(not np.isfinite(e) or e <= 0 for e in extent):
            raise ContractError("extent must be positive")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "h", tuple(e / (k - 1) for e, k in zip(extent, n)))

    @classmethod
    def uniform(cls, lo, hi, n):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return cls(tuple(lo), tuple(hi - lo), tuple(np.atleast_1d(n)))

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple:
        return self.n

    @property
    def cell_shape(self) -> tuple:
        return tuple(k - 1 for k in self.n)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extent))

    def axis(self, k: int) -> np.ndarray:
        """Node coordinates along axis ``k`` (origin + i*h)."""
        return self.origin[k] + np.arange(self.n[k]) * self.h[k]

    def cell_axis(self, k: int) -> np.ndarray:
        x = self.axis(k)
        return 0.5 * (x[:-1] + x[1:])

    def node(self, index) -> np.ndarray:
        index = np.atleast_1d(index)
        return np.array([self.origin[k] + int(index[k]) * self.h[k] for k in range(self.dim)])

    def coords(self) -> list:
        """Nodal coordinate arrays, each of shape ``grid.n``."""
        return list(np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij"))

    def cell_coords(self) -> list:
        return list(np.meshgrid(*[self.cell_axis(k) for k in range(self.dim)], indexing="ij"))

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        if self.dim == 1:
            mask[[0, -1]] = True
        else:
            mask[[0, -1], :] = True
            mask[:, [0, -1]] = True
        return mask

    def to_cells(self, values: np.ndarray) -> np.ndarray:
        """Corner average of nodal values onto cell centers."""
        v = np.asarray(values, dtype=float)
        if self.dim == 1:
            return 0.5 * (v[:-1] + v[1:])
        return 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])

    def sample(self, func: Callable) -> "ScalarField":
        return ScalarField(self, func(*self.coords()))

    def translated(self, shift) -> "Grid":
        shift = np.atleast_1d(shift)
        return Grid(tuple(o + s for o, s in zip(self.origin, shift)), self.extent, self.n)

    def same_as(self, other: "Grid") -> bool:
        return self.n == other.n and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12) \
            and np.allclose(self.extent, other.extent, rtol=1e-12, atol=0)


class ScalarField:
    """Nodal values on a grid. The value array is read-only."""

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.size == grid.size and values.shape != grid.n:
            values = values.reshape(grid.n)
        if values.shape != grid.n:
            raise ContractError(f"values shape {values.shape} does not match grid {grid.n}")
        if not np.all(np.isfinite(values)):
            raise ContractError("field values must be finite")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.n, float(c)))

    def cells(self) -> np.ndarray:
        return self.grid.to_cells(self.values)

    def copy_values(self) -> np.ndarray:
        return np.array(self.values)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __repr__(self):
        return f"ScalarField(n={self.grid.n}, min={self.values.min():.4g}, max={self.values.max():.4g})"


class ExponentField:
    """Variable exponent p(x) with validated bounds and a Lipschitz estimate."""

    def __init__(self, base: ScalarField, floor: float = P_FLOOR):
        p = base.values
        self.base = base
        self.p_min = float(p.min())
        self.p_max = float(p.max())
        if self.p_min < floor:
            raise ContractError(f"exponent bound violated: p_min = {self.p_min:g} < {floor:g} "
                                "(assumption 1 < p_min <= p(x) <= p_max)")
        self.lipschitz_L = _lipschitz(base)

    @classmethod
    def constant(cls, grid: Grid, p: float) -> "ExponentField":
        return cls(ScalarField.constant(grid, p))

    @property
    def grid(self) -> Grid:
        return self.base.grid

    @property
    def values(self) -> np.ndarray:
        return self.base.values

    def cells(self) -> np.ndarray:
        return self.base.cells()

    def is_constant(self) -> bool:
        return self.p_min == self.p_max


def _lipschitz(f: ScalarField) -> float:
    v, g = f.values, f.grid
    L = 0.0
    for k in range(g.dim):
        d = np.abs(np.diff(v, axis=k)) / g.h[k]
        if d.size:
            L = max(L, float(d.max()))
    return L


@dataclass
class ScanWindow:
    center: np.ndarray
    radii: list

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=float))
        r = [float(x) for x in self.radii]
        if any(b >= a for a, b in zip(r, r[1:])):
            raise ContractError("radii must be strictly decreasing")
        self.radii = r

    @classmethod
    def dyadic(cls, center, r_max: float, count: int) -> "ScanWindow":
        return cls(center, [r_max / 2 ** k for k in range(count)])

    def fits(self, grid: Grid) -> bool:
        return fits_in_grid(grid, self.center, self.radii[0])


def fits_in_grid(grid: Grid, center, r: float) -> bool:
    c = np.atleast_1d(center)
    lo = np.asarray(grid.origin)
    hi = lo + np.asarray(grid.extent)
    tol = 1e-12 * max(grid.extent)
    return bool(np.all(c - r >= lo - tol) and np.all(c + r <= hi + tol))


def cell_gradient(u: ScalarField, cell) -> np.ndarray:
    g = u.grid
    cell = tuple(int(c) for c in np.atleast_1d(cell))
    if len(cell) != g.dim or any(c < 0 or c >= k for c, k in zip(cell, g.cell_shape)):
        raise IndexError(f"cell {cell} outside {g.cell_shape}")
    v = u.values
    if g.dim == 1:
        i, = cell
        return np.array([(v[i + 1] - v[i]) / g.h[0]])
    i, j = cell
    gx = 0.5 * ((v[i + 1, j] - v[i, j]) + (v[i + 1, j + 1] - v[i, j + 1])) / g.h[0]
    gy = 0.5 * ((v[i, j + 1] - v[i, j]) + (v[i + 1, j + 1] - v[i + 1, j])) / g.h[1]
    return np.array([gx, gy])


def cell_gradients(u: ScalarField) -> np.ndarray:
    """Edge-averaged gradients at every cell center, shape ``cell_shape + (dim,)``."""
    g, v = u.grid, u.values
    if g.dim == 1:
        return (np.diff(v) / g.h[0])[:, None]
    gx = 0.5 * ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / g.h[0]
    gy = 0.5 * ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / g.h[1]
    return np.stack([gx, gy], axis=-1)


def integrate_cells(g, grid: Grid) -> float:
    """Cell-center (midpoint) quadrature: sum of g over cells times cell volume.

    ``g`` is either an array of shape ``grid.cell_shape`` or a callable taking
    cell-center coordinate arrays.
    """
    if callable(g):
        vals = np.asarray(g(*grid.cell_coords()), dtype=float)
    else:
        vals = np.asarray(g, dtype=float)
    if vals.shape != grid.cell_shape:
        vals = np.broadcast_to(vals, grid.cell_shape)
    if not np.all(np.isfinite(vals)):
        raise ContractError("integrand must be finite on all cells")
    return float(np.sum(vals) * grid.cell_volume)


def ball_values(u: ScalarField, center, r: float):
    """Nodes with |x - center| <= r, as (positions, values).

    Positions have shape (k, dim); an empty intersection returns empty arrays.
    """
    g = u.grid
    c = np.atleast_1d(np.asarray(center, dtype=float))
    ranges = []
    for k in range(g.dim):
        lo = int(np.ceil((c[k] - r - g.origin[k]) / g.h[k] - 1e-9))
        hi = int(np.floor((c[k] + r - g.origin[k]) / g.h[k] + 1e-9))
        lo, hi = max(lo, 0), min(hi, g.n[k] - 1)
        if hi < lo:
            return np.empty((0, g.dim)), np.empty(0)
        ranges.append(np.arange(lo, hi + 1))
    idx = np.meshgrid(*ranges, indexing="ij")
    pos = np.stack([g.origin[k] + idx[k] * g.h[k] for k in range(g.dim)], axis=-1).reshape(-1, g.dim)
    vals = u.values[tuple(i.ravel() for i in idx)]
    d2 = np.sum((pos - c) ** 2, axis=1)
    keep = d2 <= r * r * (1 + 1e-12) + 1e-300
    return pos[keep], vals[keep]


def level_crossings(u: ScalarField, level: float) -> np.ndarray:
    """Points where u crosses ``level`` along grid edges, shape (k, dim).

    An edge contributes when one endpoint is above the level and the other at
    or below it; the point is placed by linear interpolation. Duplicates
    (crossings landing on a shared node) are removed.
    """
    g, v = u.grid, u.values
    pts = []
    for ax in range(g.dim):
        a = np.swapaxes(v, 0, ax)
        lo, hi = a[:-1], a[1:]
        mask = (lo > level) != (hi > level)
        if not mask.any():
            continue
        idx = np.argwhere(mask)
        va, vb = lo[mask], hi[mask]
        t = (level - va) / (vb - va)
        nodes = idx.astype(float)
        nodes[:, 0] += t
        if ax:
            nodes[:, [0, ax]] = nodes[:, [ax, 0]]
        pts.append(np.asarray(g.origin) + nodes * np.asarray(g.h))
    if not pts:
        return np.empty((0, g.dim))
    pts = np.concatenate(pts)
    key = np.round(pts / np.asarray(g.h) * 1e9).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(first)]


def write_field(path, u: ScalarField) -> None:
    g = u.grid
    lines = [
        " ".join([str(g.dim)] + [str(k) for k in g.n]),
        " ".join(f"{v:.17g}" for v in g.origin),
        " ".join(f"{v:.17g}" for v in g.extent),
    ]
    lines.extend(f"{v:.17g}" for v in u.values.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    with open(path) as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    dim = int(head[0])
    n = tuple(int(x) for x in head[1:1 + dim])
    origin = tuple(float(x) for x in lines[1].split())
    extent = tuple(float(x) for x in lines[2].split())
    grid = Grid(origin, extent, n)
    body = [float(x) for x in lines[3:] if x.strip()]
    if len(body) != grid.size:
        raise ContractError(f"{path}: expected {grid.size} values, found {len(body)}")
    return ScalarField(grid, np.array(body).reshape(n))


def as_grid(obj) -> Grid:
    return obj if isinstance(obj, Grid) else obj.grid


def require_same_grid(*fields: Sequence) -> Grid:
    grids = [as_grid(f) for f in fields if f is not None]
    for other in grids[1:]:
        if not grids[0].same_as(other):
            raise ContractError("fields live on different grids")
    return grids[0]
