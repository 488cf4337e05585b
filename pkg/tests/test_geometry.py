import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from bertrand import geometry as geo
from bertrand.errors import DomainError, InvalidFamily

F = geo.BertrandFamily


def prof(family):
    return geo.make_profile(family)


# -- family validation ---------------------------------------------------------------

@pytest.mark.parametrize("n,m", [(2, 2), (4, 6), (0, 1), (1, 0), (-1, 1)])
def test_rejects_non_coprime_or_nonpositive(n, m):
    with pytest.raises(InvalidFamily):
        F.type_i(n, m, 0.0)


def test_minus_branch_nowhere_positive_rejected():
    with pytest.raises(InvalidFamily):
        F.type_ii(2, 3, -0.3, 0.1, branch=geo.MINUS)


def test_type_i_forces_plus_branch_and_zero_D():
    assert F.type_i(1, 1, 0.0).branch == geo.PLUS
    with pytest.raises(InvalidFamily):
        F(geo.TYPE_I, 1, 1, 0.0, D=0.5)


def test_apsidal_ratio_and_kind():
    fam = F.type_ii(3, 2, 0.1, -0.2)
    assert fam.apsidal_ratio == pytest.approx(2 / 3)
    assert fam.potential_kind == geo.OSCILLATOR
    assert F.type_i(1, 2, 0.0).potential_kind == geo.KEPLER


# -- h(r) and V(r) oracles --------------------------------------------------------------

def test_h_examples():
    assert geo.h_of_r(prof(F.type_i(1, 1, 0.0)), 2.0) == pytest.approx(1.0, abs=1e-15)
    assert geo.h_of_r(prof(F.flat_oscillator()), 1.0) == pytest.approx(1.0, abs=1e-15)
    assert float(geo.darboux_h(1.0, 0.0)) == 1.0
    assert geo.h_of_r(geo.darboux_profile(1.0), math.sqrt(2.0)) == pytest.approx(2.0 / 3.0, rel=1e-14)


def test_darboux_h_matches_generic_type_ii():
    r = np.linspace(0.05, 4.0, 40)
    for lam in (0.1, 1.0, 3.0):
        generic = geo.h_of_r(geo.darboux_profile(lam), r)
        assert np.max(np.abs(generic - geo.darboux_h(lam, r))) < 1e-14


def test_perlick_examples():
    assert geo.perlick_potential(prof(F.type_i(1, 1, 0.0)), 2.0) == pytest.approx(0.5)
    assert geo.perlick_potential(prof(F.type_i(1, 1, 3.0, G=1.0)), 1.0) == pytest.approx(3.0)
    assert geo.perlick_potential(prof(F.flat_oscillator()), 1.0) == pytest.approx(-0.5)


def test_domain_errors():
    p = geo.darboux_profile(-0.25)
    lo, hi = p.domain[0]
    assert hi == pytest.approx(1.0, rel=1e-12)  # 1 + 4 lam r^2 > 0
    with pytest.raises(DomainError):
        geo.h_of_r(p, 1.5)


def test_curvature_at_origin():
    assert geo.darboux_curvature_origin(0.7, 3) == pytest.approx(-12 * 0.7)
    assert geo.darboux_curvature_origin(0.0, 3) == 0.0
    assert geo.darboux_curvature_origin(-0.2, 3) == pytest.approx(12 * 0.2)


def test_large_radius_no_cancellation():
    # D^2 = K makes disc linear in r^2; the naive a^2 - K r^4 loses everything at r ~ 1e9
    fam = F.darboux(0.2)
    r = np.array([1e3, 1e6, 1e9])
    assert np.max(np.abs(geo._h(fam, r) - geo.darboux_h(0.2, r))) < 1e-14


# -- Green function ---------------------------------------------------------------------

def test_green_euclidean_anchor_infinity():
    assert geo.green_u(prof(F.type_i(1, 1, 0.0)), 2.0, a=math.inf) == pytest.approx(-0.5, rel=1e-13)


@pytest.mark.parametrize("lam", [0.3, 1.0])
def test_green_darboux_closed_form(lam):
    p = geo.darboux_profile(lam)
    a = 0.7
    for r in (0.2, 1.0, 3.0):
        expected = float(geo.darboux_green(lam, r) - geo.darboux_green(lam, a))
        assert geo.green_u(p, r, a) == pytest.approx(expected, abs=1e-12)
    assert float(geo.darboux_green(1.0, 1.0)) == pytest.approx(-(1 + math.sqrt(5)) / 2)


def test_green_flat_limit_of_constant_curvature():
    p = prof(F.curved_kepler(0.3))
    r = 1e-3
    u = geo.green_u(p, r, a=1.0) + float(geo._green_closed(p.family, 1.0))
    assert u == pytest.approx(-1.0 / r, rel=1e-6)


def test_green_matches_independent_quadrature():
    fam = F.type_ii(3, 2, 0.1, -0.2)
    p = prof(fam)
    val = geo.green_u(p, 2.0, a=0.5)
    ref = quad(lambda t: float(np.sqrt(geo._h2(fam, t))) / t**2, 0.5, 2.0, epsabs=1e-14, epsrel=1e-13)[0]
    assert val == pytest.approx(ref, rel=1e-12)


# -- intrinsic potentials ---------------------------------------------------------------

def test_intrinsic_kepler_euclidean():
    spec = geo.IntrinsicPotentialSpec(geo.KEPLER, A=-1.0, B=0.0, a=math.inf)
    p = prof(F.euclidean_kepler())
    for r in (0.5, 2.0, 7.0):
        assert geo.intrinsic_potential(p, spec, r) == pytest.approx(1.0 / r, rel=1e-12)


@pytest.mark.parametrize("kappa", [0.3, -0.3])
def test_intrinsic_constant_curvature(kappa):
    p = prof(F.curved_kepler(kappa))
    rs = np.linspace(0.2, 0.9 * (p.domain[0][1] if math.isfinite(p.domain[0][1]) else 2.0), 7)
    a = geo.default_anchor(p)
    u = np.array([geo.green_u(p, r, a) for r in rs])
    target_k = np.sqrt(rs**-2.0 - kappa)
    # u = -sqrt(r^-2 - kappa) + const: Kepler with A = -1, B = u(anchor) offset
    B = float(-u[0] - target_k[0])
    assert np.max(np.abs(-(u + B) - target_k)) < 1e-10
    osc = 1.0 / (rs**-2.0 - kappa)
    assert np.max(np.abs(1.0 / (u + B) ** 2 - osc)) < 1e-10


@pytest.mark.parametrize("family", [
    F.euclidean_kepler(), F.curved_kepler(0.3), F.curved_kepler(-0.3),
    F.curved_oscillator(0.3), F.curved_oscillator(-0.3), F.darboux(0.5), F.darboux(-0.2),
    F.type_i(2, 1, 0.2), F.type_ii(3, 2, 0.1, -0.2),
])
def test_intrinsic_fit(family):
    report = geo.verify_intrinsic_potential(family)
    assert report.max_residual <= 1e-9


# -- properties ---------------------------------------------------------------------------

coprime = st.tuples(st.integers(1, 5), st.integers(1, 5)).filter(lambda t: math.gcd(*t) == 1)


@settings(max_examples=40, deadline=None)
@given(nm=coprime, K=st.floats(-0.5, 0.5), D=st.floats(-0.5, 0.5))
def test_type_ii_h_positive_on_domain(nm, K, D):
    try:
        fam = F.type_ii(nm[0], nm[1], K, D)
    except InvalidFamily:
        return
    p = prof(fam)
    for lo, hi in p.domain:
        top = hi if math.isfinite(hi) else lo + 10.0
        r = np.linspace(lo, top, 23)[1:-1]
        assert np.all(geo.h_of_r(p, r) > 0)
        u = r * r
        assert np.all((1 - D * u) ** 2 - K * u * u > -1e-12)


def test_disc_roots_exact_for_tiny_k():
    # the expanded quadratic would lose K = 1e-20 against D^2
    fam = F.type_ii(1, 1, 1e-20, 0.25)
    (u1, s1), (u2, s2) = geo.disc_root_slopes(fam)
    assert u1 == pytest.approx(1 / (0.25 + 1e-10), rel=1e-15)
    assert u2 == pytest.approx(1 / (0.25 - 1e-10), rel=1e-15)
    assert (s1, s2) == pytest.approx((-2e-10, 2e-10), rel=1e-6)
    assert geo.disc_roots(F.type_ii(1, 1, 0.0, 0.25)) == [4.0]
    assert geo.disc_roots(F.type_ii(1, 1, -0.01, 0.25)) == []
