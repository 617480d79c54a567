import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fbflow.energy import ProblemData
from fbflow.fbanalysis import (ball_condition_check, blowup_fit, build_report, density_scan, extract_fb,
                               fb_gradient_trace, growth_scan, halfplane_development_check, lambda_star,
                               nondegeneracy_scan)
from fbflow.grid import ContractError, ExponentField, Grid, ScalarField
from fbflow.oracles import planar_oracle


def _data(g, p=2.0, lam=0.5):
    return ProblemData(ExponentField.constant(g, p), ScalarField.constant(g, 0.0),
                       lam=ScalarField.constant(g, lam))


@pytest.fixture(scope="module")
def planar():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (257, 129))
    return g, planar_oracle(2.0, 0.5, (1.0, 0.0), 0.0, g)


# ------------------------------------------------------------------ lambda*

@pytest.mark.parametrize("p,lam,expected", [(2.0, 0.5, 1.0), (2.0, 2.0, 2.0), (3.0, 0.5, 0.75 ** (1 / 3))])
def test_lambda_star_examples(p, lam, expected):
    assert lambda_star(p, lam) == pytest.approx(expected, rel=1e-14)
    if p == 3.0:
        assert lambda_star(p, lam) == pytest.approx(0.9085603, rel=1e-6)


def test_lambda_star_identity_random(rng):
    p = rng.uniform(1.05, 6.0, 1000)
    lam = 10.0 ** rng.uniform(-3, 3, 1000)
    a = lambda_star(p, lam)
    assert np.max(np.abs((p - 1) / p * a ** p - lam) / lam) <= 1e-12


def test_lambda_star_rejects_bad_input():
    with pytest.raises(ContractError):
        lambda_star(1.0, 1.0)
    with pytest.raises(ContractError):
        lambda_star(2.0, 0.0)


# ------------------------------------------------------------------ extraction and trace

def test_extract_fb_planar(planar):
    g, u = planar
    pts = extract_fb(u)
    assert len(pts) == g.n[1]
    assert np.max(np.abs(pts[:, 0])) <= 1e-12


def test_extract_fb_positive_field_is_empty(planar):
    g, _ = planar
    assert len(extract_fb(ScalarField.constant(g, 1.0))) == 0


def test_extract_fb_circle():
    g = Grid((-0.5, -0.5), (1.0, 1.0), (129, 129))
    X, Y = g.coords()
    u = ScalarField(g, np.maximum(0.3 - np.hypot(X, Y), 0.0))
    pts = extract_fb(u)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert len(pts) > 100
    assert np.max(np.abs(r - 0.3)) <= g.h[0]


def test_gradient_trace_exact_on_planar(planar):
    g, u = planar
    data = _data(g)
    for x0 in extract_fb(u)[40:90:10]:
        assert fb_gradient_trace(u, x0, data) == pytest.approx(1.0, abs=1e-10)


# ------------------------------------------------------------------ scans

def _radii(h):
    return [c * h for c in (32, 16, 8, 4)]


def test_scans_on_planar(planar):
    g, u = planar
    h = g.h[0]
    x0 = np.array([0.0, 0.5])
    gs = growth_scan(u, x0, _radii(h))
    assert gs.constant == pytest.approx(1.0, abs=1e-12)
    ns = nondegeneracy_scan(u, x0, _radii(h))
    assert ns.constant == pytest.approx(1.0, abs=1e-12)
    # mean of x1^+ over B_r is 2r/(3 pi); over the circle it is r/pi
    err = np.abs(np.array(ns.extra["ball_mean"]) * 3 * math.pi / 2 - 1.0)
    assert np.all(np.diff(err) > 0) and err[2] <= 0.02
    assert np.allclose(ns.extra["sphere_mean"], 1 / math.pi, rtol=1e-3)
    ds = density_scan(u, x0, [c * h for c in (32, 16, 8)])
    assert np.allclose(ds.values, 0.5, atol=0.05)
    assert ns.constant <= gs.constant


def test_scans_on_zero_field(planar):
    g, _ = planar
    z = ScalarField.constant(g, 0.0)
    x0 = np.array([0.0, 0.5])
    assert growth_scan(z, x0, _radii(g.h[0])).constant == 0.0
    assert nondegeneracy_scan(z, x0, _radii(g.h[0])).constant == 0.0
    assert density_scan(z, x0, _radii(g.h[0])).constant == 1.0


def test_scans_trim_radii_near_the_edge(planar):
    g, u = planar
    s = growth_scan(u, np.array([0.0, 0.1]), [0.2, 0.05])
    assert s.trimmed and s.radii == [0.05]
    with pytest.raises(ContractError):
        growth_scan(u, np.array([0.0, 0.01]), [0.2, 0.05])


def test_scans_are_deterministic(planar):
    g, u = planar
    x0 = np.array([0.0, 0.5])
    a = nondegeneracy_scan(u, x0, _radii(g.h[0])).to_dict()
    b = nondegeneracy_scan(u, x0, _radii(g.h[0])).to_dict()
    assert json.dumps(a) == json.dumps(b)


@given(st.integers(8, 24), st.floats(0.25, 4.0))
def test_growth_scan_scales_with_slope(j, c):
    g = Grid((-1.0, 0.0), (2.0, 1.0), (65, 33))
    u = ScalarField(g, c * np.maximum(g.coords()[0], 0.0))
    r = [4 * g.h[0], 2 * g.h[0]]
    s = growth_scan(u, np.array([0.0, j * g.h[1]]), r)
    assert s.constant == pytest.approx(c, rel=1e-12)


# ------------------------------------------------------------------ blow-up

def test_blowup_fit_exact(planar):
    g, u = planar
    fit = blowup_fit(u, np.array([0.0, 0.5]), 32 * g.h[0])
    assert fit.alpha == pytest.approx(1.0, abs=1e-10)
    assert fit.residual <= 1e-10
    assert np.allclose(fit.normal, [1.0, 0.0], atol=1e-12)


def test_blowup_fit_rotated_normal():
    g = Grid((-1.0, -1.0), (2.0, 2.0), (257, 257))
    th = math.radians(30.0)
    u = planar_oracle(2.0, 0.5, (math.cos(th), math.sin(th)), 0.0, g)
    fit = blowup_fit(u, np.array([0.0, 0.0]), 32 * g.h[0])
    ang = math.degrees(math.atan2(fit.normal[1], fit.normal[0]))
    assert abs(ang - 30.0) <= 1.0
    assert fit.alpha == pytest.approx(1.0, rel=1e-3)


def test_blowup_fit_invariant_under_rho_halving(planar):
    g, u = planar
    x0 = np.array([0.0, 0.5])
    a = blowup_fit(u, x0, 32 * g.h[0])
    b = blowup_fit(u, x0, 16 * g.h[0])
    assert a.alpha == pytest.approx(b.alpha, abs=1e-10)


# ------------------------------------------------------------------ tangent ball

def test_ball_condition_planar():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (513, 257))
    u = planar_oracle(2.0, 0.5, (1.0, 0.0), 0.0, g)
    bc = ball_condition_check(u, np.array([0.0, 0.5]), _data(g))
    assert bc.conclusive
    assert bc.target == pytest.approx(1.0)
    assert abs(bc.ell - bc.target) <= 0.03 * bc.target


def test_ball_condition_cone():
    g = Grid((-0.5, -0.5), (1.0, 1.0), (257, 257))
    X, Y = g.coords()
    u = ScalarField(g, np.maximum(0.3 - np.hypot(X, Y), 0.0))
    checks = [ball_condition_check(u, x0, _data(g)) for x0 in extract_fb(u)[::7]]
    ok = [bc for bc in checks if bc.conclusive]
    # staircase corners of the discrete circle admit no ball of radius 2h
    assert len(ok) >= len(checks) // 2
    assert max(abs(bc.ell - 1.0) for bc in ok) <= 0.05


# ------------------------------------------------------------------ flat-boundary development

def test_halfplane_linear_is_recovered():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (65, 33))
    y = g.coords()[1]
    for alpha in (0.3, 1.0, 2.5):
        u = ScalarField(g, alpha * y)
        got = halfplane_development_check(u, ExponentField.constant(g, 3.0))
        assert got == pytest.approx(alpha, abs=1e-12)


def test_halfplane_quadratic_correction():
    vals = []
    for n in (33, 65, 129):
        g = Grid((-1.0, 0.0), (2.0, 1.0), (2 * n - 1, n))
        y = g.coords()[1]
        vals.append(abs(halfplane_development_check(ScalarField(g, y + y * y)) - 1.0))
    h = 1.0 / 128
    assert vals[-1] <= 4 * h


def test_halfplane_zero_and_contracts():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (65, 33))
    assert halfplane_development_check(ScalarField.constant(g, 0.0)) == 0.0
    with pytest.raises(ContractError):
        halfplane_development_check(ScalarField.constant(g, 1.0))
    y = g.coords()[1]
    with pytest.raises(ContractError):
        halfplane_development_check(ScalarField(g, y * y), ExponentField.constant(g, 2.0))


# ------------------------------------------------------------------ report

def test_build_report_round_trip(planar, tmp_path):
    g, u = planar
    rep = build_report(u, _data(g), limit=8)
    assert len(rep.per_point) == 8
    for rec in rep.per_point:
        assert rec.measured_slope == pytest.approx(rec.target_lambda_star, abs=1e-10)
        assert rec.fit_residual <= 1e-10
    assert rep.growth_constants["c_min"][0] <= rep.growth_constants["C_max"][0]
    d = json.loads(rep.to_json(tmp_path / "r.json"))
    assert json.loads((tmp_path / "r.json").read_text()) == d
    assert set(d) == {"fb_points", "per_point", "growth_constants", "scans", "notes"}
    rep.write_scan_csv(tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 * (4 + 4 + 3)
    assert build_report(u, _data(g), limit=8).to_json() == rep.to_json()


def test_build_report_without_free_boundary(planar):
    g, _ = planar
    rep = build_report(ScalarField.constant(g, 1.0), _data(g))
    assert len(rep.fb_points) == 0 and rep.notes == ["no free boundary"]
