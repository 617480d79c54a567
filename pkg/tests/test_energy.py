import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from fbflow import kernels
from fbflow.energy import (B_eps, BetaProfile, DiscreteEnergy, ProblemData, beta_eps, check_monotonicity,
                           energy_J, energy_Jeps, flux, flux_value, grad_energy_Jeps, grad_energy_smooth,
                           monotonicity_scan)
from fbflow.grid import ContractError, ExponentField, Grid, ScalarField
from fbflow.oracles import ODEProfile


def problem(g, p=2.0, lam=None, beta=None, eps=None, f=0.0, a=None):
    return ProblemData(ExponentField.constant(g, p) if np.isscalar(p) else ExponentField(ScalarField(g, p)),
                       ScalarField.constant(g, f) if np.isscalar(f) else ScalarField(g, f),
                       lam=None if lam is None else ScalarField.constant(g, lam),
                       beta=beta, eps=eps, a=a)


@pytest.mark.parametrize("shape", ["quartic", "quadratic"])
def test_beta_profile_mass_and_support(shape):
    b = BetaProfile(shape, 2.5)
    assert quad(b.beta, 0, 1)[0] == pytest.approx(2.5, rel=1e-12)
    assert b.beta(-1.0) == 0.0 and b.beta(1.5) == 0.0
    s = np.linspace(0.01, 0.99, 99)
    assert np.all(b.beta(s) > 0)
    assert np.all(np.diff(b.primitive(s)) > 0)
    assert b.primitive(2.0) == pytest.approx(2.5)


def test_beta_profile_tabulated_and_validation():
    b = BetaProfile([(0, 0), (0.25, 1), (0.5, 3), (1, 0)], 1.5)
    assert quad(b.beta, 0, 1, points=[0.25, 0.5])[0] == pytest.approx(1.5, rel=1e-10)
    assert b.primitive(1.0) == pytest.approx(1.5, rel=1e-12)
    with pytest.raises(ContractError):
        BetaProfile("quartic", 0.0)
    with pytest.raises(ContractError):
        BetaProfile("cubic")
    with pytest.raises(ContractError):
        BetaProfile([(0, 0), (0.5, -1), (1, 0)])


def test_beta_eps_and_B_eps_examples():
    b = BetaProfile()
    for eps in (0.5, 0.1, 1e-3):
        assert beta_eps(-1.0, eps, b) == 0.0
        assert B_eps(-0.3, eps, b) == 0.0
        assert B_eps(eps, eps, b) == pytest.approx(b.M)
        assert B_eps(3 * eps, eps, b) == pytest.approx(b.M)
        assert B_eps(eps / 2, eps, b) == pytest.approx(b.M / 2, rel=1e-14)
        assert quad(lambda s: beta_eps(s, eps, b), 0, eps)[0] == pytest.approx(b.M, rel=1e-10)
    with pytest.raises(ContractError):
        beta_eps(0.1, 0.0, b)
    with pytest.raises(ContractError):
        B_eps(0.1, -1.0, b)


def test_B_eps_converges_to_indicator():
    b = BetaProfile("quadratic", 1.3)
    for s in (1e-3, 0.02, 0.5):
        vals = [float(B_eps(s, 0.1 / 2 ** k, b)) for k in range(12)]
        assert np.all(np.diff(vals) >= 0)
        assert vals[-1] == pytest.approx(1.3)
    assert all(B_eps(-1e-3, 0.1 / 2 ** k, b) == 0 for k in range(12))


def test_energy_J_examples():
    g = Grid((-1.0, 0.0), (2.0, 1.0), (129, 65))
    data = problem(g, 2.0, lam=0.5)
    e = energy_J(ScalarField.constant(g, 0.0), data)
    assert (e.gradient_term, e.interface_term, e.forcing_term, e.total) == (0, 0, 0, 0)
    X, _ = g.coords()
    e = energy_J(ScalarField(g, np.maximum(X, 0)), data)
    assert e.gradient_term == pytest.approx(0.5, rel=1e-13)
    assert e.interface_term == pytest.approx(0.5, rel=1e-13)
    assert e.total == pytest.approx(1.0, rel=1e-13)
    with pytest.raises(ContractError):
        energy_J(ScalarField(g, X), data, threshold=-1)


def test_energy_Jeps_examples():
    g = Grid((0.0, 0.0), (1.0, 2.0), (9, 17))
    b = BetaProfile("quartic", 0.7)
    data = problem(g, 1.5, beta=b, eps=0.1)
    assert energy_Jeps(ScalarField.constant(g, 0.0), data).total == 0.0
    X, Y = g.coords()
    e = energy_Jeps(ScalarField(g, 0.2 + X * Y), data)
    assert e.interface_term == pytest.approx(0.7 * g.measure, rel=1e-14)
    with pytest.raises(ContractError):
        energy_Jeps(ScalarField.constant(g, 0.0), problem(g, 2.0, lam=1.0))


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_energy_Jeps_of_ode_profile(p):
    """Sampled oracle profile vs the exact energy from the first integral.

    Along the profile |u'|^p / p = B_eps(u) / (p - 1), so the energy density is
    p/(p-1) B_eps(u); below eps, dx = ds / phi(s) down to the height at x = 0.
    """
    eps, b = 0.1, BetaProfile()
    prof = ODEProfile(p, eps, b, 0.0, 1.0, 1.0)
    g = Grid((0.0,), (1.0,), (2049,))
    u = prof.sample(g)
    data = problem(g, p, beta=b, eps=eps)
    c = p / (p - 1)
    tail = quad(lambda s: float(B_eps(s, eps, b)) / float(prof.phi(s)), u.values[0], eps, limit=200,
                epsabs=1e-14)[0]
    exact = c * (b.M * (1.0 - prof.x_eps) + tail)
    assert energy_Jeps(u, data).total == pytest.approx(exact, abs=1e-6)


def test_energy_translation_invariance(rng):
    g = Grid((0.0, 0.0), (1.0, 1.0), (9, 9))
    v = rng.random(g.n)
    for shift in ((3.0, -2.0), (0.25, 0.5)):
        gs = g.translated(shift)
        for make in (lambda G: problem(G, 2.5, lam=0.8, f=0.3), lambda G: problem(G, 1.7, beta=BetaProfile(), eps=0.2, f=-1.0)):
            d0, d1 = make(g), make(gs)
            if d0.eps is None:
                assert energy_J(ScalarField(g, v), d0).total == energy_J(ScalarField(gs, v), d1).total
            else:
                assert energy_Jeps(ScalarField(g, v), d0).total == energy_Jeps(ScalarField(gs, v), d1).total


@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.01, 100))
def test_interface_terms_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    g = Grid((0.0, 0.0), (1.0, 0.5), (7, 5))
    lam = ScalarField(g, 0.1 + rng.random(g.n))
    data = ProblemData(ExponentField.constant(g, 2.0), ScalarField.constant(g, 0.0), lam=lam,
                       beta=BetaProfile("quadratic", 0.9), eps=0.05)
    u = ScalarField(g, scale * rng.standard_normal(g.n))
    assert energy_Jeps(u, data).interface_term <= 0.9 * g.measure * (1 + 1e-14)
    assert energy_J(u, data).interface_term <= lam.values.max() * g.measure * (1 + 1e-14)


def test_flux_examples():
    assert np.array_equal(flux_value([1.5, -2.0], 2.0, 3.0), [4.5, -6.0])
    assert np.array_equal(flux_value([0.0, 0.0], 1.5), [0.0, 0.0])
    assert np.allclose(flux_value([2.0, 0.0], 3.0), [4.0, 0.0])
    g = Grid((0.0,), (1.0,), (3,))
    data = problem(g, np.array([2.0, 3.0, 4.0]), lam=1.0)
    assert np.allclose(flux(1, [2.0], data), [2.0 ** 2.5])  # cell p = 3.5
    with pytest.raises(ContractError):
        flux(0, [1.0], data, delta=-1)


def test_check_monotonicity_examples():
    lhs, rhs = check_monotonicity([1.0, 2.0], [-0.5, 3.0], 2.0)
    assert lhs == pytest.approx(rhs, rel=1e-15)
    assert check_monotonicity([1.0, 2.0], [1.0, 2.0], 3.0) == (0.0, 0.0)
    assert check_monotonicity([1.0, 2.0], [1.0, 2.0], 1.5) == (0.0, 0.0)


@pytest.mark.parametrize("p", [1.3, 1.7, 2.5, 4.0])
def test_monotonicity_scan(p, rng):
    min_rhs, C = monotonicity_scan(p, 10_000, rng)
    assert min_rhs > 0
    assert np.isfinite(C) and 0 < C < 1e3


@given(x=st.lists(st.floats(-50, 50), min_size=2, max_size=2), y=st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       p=st.floats(1.05, 6.0))
def test_monotonicity_strict(x, y, p):
    lhs, rhs = check_monotonicity(x, y, p)
    if np.linalg.norm(np.subtract(x, y)) > 1e-6:
        assert rhs > 0
    else:
        assert rhs >= 0


def test_gradient_p2_is_five_point_laplacian(rng):
    g = Grid((0.0, 0.0), (1.0, 1.0), (9, 9))
    u = rng.random(g.n)
    data = problem(g, 2.0, lam=1.0)
    G = grad_energy_smooth(ScalarField(g, u), data).values
    hx, hy = g.h
    lap = np.zeros_like(u)
    lap[1:-1, 1:-1] = ((2 * u[1:-1, 1:-1] - u[2:, 1:-1] - u[:-2, 1:-1]) / hx ** 2
                       + (2 * u[1:-1, 1:-1] - u[1:-1, 2:] - u[1:-1, :-2]) / hy ** 2)
    assert np.allclose(G, lap * g.cell_volume, rtol=0, atol=1e-12)


def _fd_check(data, u, rng, directions=20):
    G = grad_energy_Jeps(u, data).values
    interior = ~data.grid.boundary_mask()
    worst = 0.0
    for _ in range(directions):
        d = rng.standard_normal(data.grid.n) * interior
        t = 1e-6
        ep = energy_Jeps(ScalarField(data.grid, u.values + t * d), data).total
        em = energy_Jeps(ScalarField(data.grid, u.values - t * d), data).total
        fd = (ep - em) / (2 * t)
        an = float(np.sum(G * d))
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-30))
    return worst


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("dim", [1, 2])
def test_gradient_matches_finite_differences(p, dim, rng):
    g = Grid((0.0,), (1.0,), (33,)) if dim == 1 else Grid((0.0, 0.0), (1.0, 1.0), (17, 17))
    u = ScalarField(g, 0.3 * rng.random(g.n))
    X = g.coords()[0]
    data = problem(g, p + 0.2 * X, beta=BetaProfile(), eps=0.2, f=np.cos(X))
    assert _fd_check(data, u, rng) <= 1e-4


def test_discrete_energy_kinds():
    g = Grid((0.0,), (1.0,), (5,))
    with pytest.raises(ContractError):
        DiscreteEnergy(problem(g, 2.0, lam=1.0), "eps")
    with pytest.raises(ValueError):
        DiscreteEnergy(problem(g, 2.0, lam=1.0), "sharp")


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled extension not built")
@pytest.mark.parametrize("p", ["rand", 1.5, 2.0, 3.0, 4.25])
@pytest.mark.parametrize("dim", [1, 2])
def test_backends_agree(p, dim, rng):
    g = Grid((0.0,), (1.0,), (200,)) if dim == 1 else Grid((0.0, 0.0), (1.0, 1.0), (40, 33))
    u = rng.standard_normal(g.n)
    pc = 1.1 + 3 * rng.random(g.cell_shape) if p == "rand" else np.full(g.cell_shape, p)
    ac = 0.5 + rng.random(g.cell_shape)
    src = rng.standard_normal(g.cell_shape)
    out = {}
    for name in ("numpy", "compiled"):
        kernels.use_backend(name)
        try:
            out[name] = (kernels.energy_cells(u, pc, ac, g.h, p == 2.0),
                         kernels.smooth_gradient(u, pc, ac, src, g.h, 1e-8, p == 2.0))
        finally:
            kernels.use_backend("compiled")
    for a, b in zip(out["numpy"], out["compiled"]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())


def test_problem_data_validation():
    g = Grid((0.0,), (1.0,), (5,))
    with pytest.raises(ContractError, match="lambda"):
        problem(g, 2.0, lam=0.0)
    with pytest.raises(ContractError, match="weight"):
        problem(g, 2.0, lam=1.0, a=ScalarField.constant(g, 0.0))
    d = problem(g, 2.0, beta=BetaProfile("quartic", 3.0))
    assert np.all(d.sharp_lambda().values == 3.0)
    with pytest.raises(ContractError):
        problem(g, 2.0).sharp_lambda()
