import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbflow.grid import (ContractError, ExponentField, Grid, ScalarField, ScanWindow, ball_values,
                         cell_gradient, cell_gradients, fits_in_grid, integrate_cells, level_crossings,
                         read_field, require_same_grid, write_field)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def unit_square(n=11):
    return Grid((0.0, 0.0), (1.0, 1.0), (n, n))


def test_grid_spacing_and_shapes():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (257, 129))
    assert g.h == (2.0 / 256, 1.0 / 128)
    assert g.cell_shape == (256, 128)
    assert g.boundary_mask().sum() == 2 * 257 + 2 * 127


@pytest.mark.parametrize("args", [((0.0,), (1.0,), (1,)), ((0.0,), (0.0,), (5,)), ((0, 0, 0), (1, 1, 1), (3, 3, 3))])
def test_grid_rejects_bad_shapes(args):
    with pytest.raises(ContractError):
        Grid(*args)


def test_field_is_read_only_and_validated():
    g = Grid((0.0,), (1.0,), (5,))
    u = ScalarField(g, np.arange(5.0))
    with pytest.raises(ValueError):
        u.values[0] = 1.0
    with pytest.raises(ContractError):
        ScalarField(g, np.arange(4.0))
    with pytest.raises(ContractError):
        ScalarField(g, [0, 1, np.nan, 3, 4])


def test_exponent_floor_names_the_assumption():
    g = Grid((0.0,), (1.0,), (5,))
    with pytest.raises(ContractError, match="p_min"):
        ExponentField.constant(g, 0.9)
    p = ExponentField(ScalarField(g, 2.0 + g.axis(0)))
    assert p.p_min == 2.0 and p.p_max == 3.0
    assert p.lipschitz_L == pytest.approx(1.0)


def test_cell_gradient_examples():
    g1 = Grid((0.0,), (1.0,), (11,))
    x = ScalarField(g1, g1.axis(0))
    for c in range(10):
        assert cell_gradient(x, c)[0] == pytest.approx(1.0, rel=1e-13)
    g = unit_square()
    assert np.array_equal(cell_gradient(ScalarField.constant(g, 7.0), (3, 4)), [0.0, 0.0])
    X, Y = g.coords()
    u = ScalarField(g, 2 * X + 3 * Y)
    assert np.allclose(cell_gradients(u), [2.0, 3.0], rtol=1e-13, atol=0)
    with pytest.raises(IndexError):
        cell_gradient(u, (10, 0))


@given(a=finite, b=finite, c=finite, lo=st.floats(-5, 5), w=st.floats(0.1, 10),
       n=st.integers(2, 30), m=st.integers(2, 30))
def test_cell_gradient_affine_exact(a, b, c, lo, w, n, m):
    g = Grid((lo, -lo), (w, 2 * w), (n, m))
    X, Y = g.coords()
    G = cell_gradients(ScalarField(g, a + b * X + c * Y))
    scale = abs(a) + (abs(b) + abs(c)) * (abs(lo) + 2 * w) + 1.0
    tol = 1e-13 * scale / min(g.h)
    assert np.allclose(G[..., 0], b, rtol=0, atol=tol)
    assert np.allclose(G[..., 1], c, rtol=0, atol=tol)


def test_integrate_cells_examples():
    g = unit_square()
    assert integrate_cells(np.ones(g.cell_shape), g) == pytest.approx(1.0, abs=1e-14 * 100)
    assert integrate_cells(np.zeros(g.cell_shape), g) == 0.0
    g1 = Grid((0.0,), (1.0,), (101,))
    assert abs(integrate_cells(lambda x: x, g1) - 0.5) < 1e-12


@given(s=st.floats(-10, 10), alpha=st.floats(-3, 3), n=st.integers(2, 20))
def test_integrate_cells_linear_and_translation_invariant(s, alpha, n):
    g = Grid((0.0, 0.0), (1.0, 2.0), (n, n + 1))
    rng = np.random.default_rng(n)
    a = rng.standard_normal(g.cell_shape)
    b = rng.standard_normal(g.cell_shape)
    lhs = integrate_cells(a + alpha * b, g)
    rhs = integrate_cells(a, g) + alpha * integrate_cells(b, g)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + np.abs(a).sum() + abs(alpha) * np.abs(b).sum()))
    assert integrate_cells(a, g.translated((s, -s))) == integrate_cells(a, g)


def test_ball_values_examples():
    g = Grid((0.0, 0.0), (1.0, 1.0), (101, 101))
    u = ScalarField(g, np.arange(g.size, dtype=float))
    pos, vals = ball_values(u, g.node((30, 40)), 0.004)
    assert len(vals) == 1 and vals[0] == u.values[30, 40]
    assert len(ball_values(u, (0.5, 0.5), 2.0)[1]) == g.size
    r = 0.25
    count = len(ball_values(u, (0.5, 0.5), r)[1])
    assert abs(count / (np.pi * r * r / g.cell_volume) - 1) < 0.02
    pos, vals = ball_values(u, (5.0, 5.0), 0.1)
    assert pos.shape == (0, 2) and vals.size == 0


@given(cx=st.floats(0, 1), cy=st.floats(0, 1), r1=st.floats(0, 0.7), r2=st.floats(0, 0.7))
def test_ball_values_nested(cx, cy, r1, r2):
    r1, r2 = sorted((r1, r2))
    g = Grid((0.0, 0.0), (1.0, 1.0), (21, 21))
    u = ScalarField(g, np.arange(g.size, dtype=float))
    small = set(ball_values(u, (cx, cy), r1)[1])
    big = set(ball_values(u, (cx, cy), r2)[1])
    assert small <= big


def test_fits_in_grid_and_scan_window():
    g = unit_square()
    assert fits_in_grid(g, (0.5, 0.5), 0.5)
    assert not fits_in_grid(g, (0.5, 0.5), 0.51)
    w = ScanWindow.dyadic((0.5, 0.5), 0.4, 3)
    assert w.radii == [0.4, 0.2, 0.1] and w.fits(g)
    with pytest.raises(ContractError):
        ScanWindow((0.5, 0.5), [0.1, 0.2])


def test_level_crossings_planar():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (41, 11))
    X, _ = g.coords()
    pts = level_crossings(ScalarField(g, np.maximum(X - 0.013, 0.0)), 0.0)
    assert len(pts) == 11
    assert np.allclose(pts[:, 0], 0.0)  # the last node at or below zero
    pts = level_crossings(ScalarField(g, X - 0.013), 0.0)
    assert np.allclose(pts[:, 0], 0.013)
    assert level_crossings(ScalarField.constant(g, 1.0), 0.0).shape == (0, 2)


@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=6, max_size=6),
       st.floats(-1e6, 1e6), st.floats(1e-6, 1e6))
def test_field_roundtrip_bit_identical(tmp_path_factory, vals, lo, w):
    g = Grid((lo, lo / 3), (w, w * np.pi), (2, 3))
    u = ScalarField(g, vals)
    path = tmp_path_factory.mktemp("f") / "u.txt"
    write_field(path, u)
    back = read_field(path)
    assert back.grid.n == g.n and back.grid.origin == g.origin and back.grid.extent == g.extent
    assert np.array_equal(back.values, u.values)


def test_read_field_rejects_short_file(tmp_path):
    g = Grid((0.0,), (1.0,), (4,))
    path = tmp_path / "u.txt"
    write_field(path, ScalarField(g, [0, 1, 2, 3]))
    text = path.read_text().splitlines()[:-1]
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ContractError):
        read_field(path)


def test_require_same_grid():
    a = Grid((0.0,), (1.0,), (5,))
    b = Grid((0.0,), (1.0,), (6,))
    with pytest.raises(ContractError):
        require_same_grid(ScalarField.constant(a, 0), ScalarField.constant(b, 0))
