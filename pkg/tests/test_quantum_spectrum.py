import math

import mpmath
import numpy as np
import pytest

from bertrand import quantum_spectrum as qs
from bertrand.errors import GridTooCoarse, RegimeError

P = qs.QuantumParams


def exact_level(N, hbar, lam, omega, n, dps=50):
    with mpmath.workdps(dps):
        x = mpmath.mpf(n) + mpmath.mpf(N) / 2
        hb, lm, w = mpmath.mpf(hbar), mpmath.mpf(lam), mpmath.mpf(omega)
        return -hb**2 * lm * x**2 + hb * x * mpmath.sqrt(hb**2 * lm**2 * x**2 + w**2)


# -- analytic levels -------------------------------------------------------------------------

def test_ground_level_example():
    assert qs.analytic_level(P(3, 1.0, 0.5, 1.0), 0) == pytest.approx(0.75, rel=1e-15)


def test_small_lambda_limit():
    lam = 1e-8
    for n in range(11):
        x = n + 1.5
        got = qs.analytic_level(P(3, 1.0, lam, 1.0), n)
        # leading correction is -lam x^2, which passes 1e-6 once x^2 > 100
        assert abs(got - x + lam * x * x) <= 1e-12
        if x * x * lam <= 0.9e-6:
            assert abs(got - x) <= 1e-6
    for n in range(11):
        assert abs(qs.analytic_level(P(3, 1.0, 1e-10, 1.0), n) - (n + 1.5)) <= 1e-6


@pytest.mark.parametrize("params", [P(3, 1.0, 0.5, 1.0), P(2, 0.7, 2.0, 0.5), P(4, 1.3, 0.1, 2.0)])
def test_quadratic_identity(params):
    for n in range(51):
        assert qs.verify_quadratic_identity(params, n) <= 1e-12


@pytest.mark.parametrize("n", [0, 7, 1000, 10**5, 10**6])
def test_two_forms_agree_with_high_precision(n):
    params = P(3, 1.0, 0.5, 1.0)
    ref = float(exact_level(3, 1.0, 0.5, 1.0, n))
    assert qs.analytic_level(params, n) == pytest.approx(ref, rel=1e-14)
    assert qs.analytic_level_expm1(params, n) == pytest.approx(ref, rel=1e-12)


def test_naive_form_cancels_at_large_n():
    params = P(3, 1.0, 0.5, 1.0)
    assert qs.analytic_level_direct(params, 3) == pytest.approx(qs.analytic_level(params, 3), rel=1e-13)
    ref = float(exact_level(3, 1.0, 0.5, 1.0, 10**5))
    assert abs(qs.analytic_level_direct(params, 10**5) - ref) > 1e-11 * ref


def test_monotone_and_below_continuum():
    params = P(3, 1.0, 0.5, 1.0)
    E = np.array([qs.analytic_level(params, n) for n in range(10**4 + 1)])
    assert np.all(np.diff(E) > 0)
    assert np.all(E < qs.continuum_bottom(params))
    assert np.all(np.diff(np.diff(E[:200])) < 0)  # spacing shrinks


def test_continuum_bottom_examples():
    assert qs.continuum_bottom(P(3, 1.0, 0.5, 1.0)) == 1.0
    assert qs.continuum_bottom(P(3, 1.0, 1.0, 2.0)) == 2.0
    with pytest.raises(RegimeError):
        qs.continuum_bottom(P(3, 1.0, 0.0, 1.0))
    with pytest.raises(RegimeError):
        qs.analytic_level(P(3, 1.0, -1.0, 1.0), 0)


# -- degeneracy ---------------------------------------------------------------------------------

def test_degeneracy_examples():
    assert qs.degeneracy(3, 0) == 1
    assert qs.degeneracy(3, 2) == 6
    assert qs.degeneracy(2, 3) == 4


@pytest.mark.parametrize("N", [1, 2, 3, 4, 5, 6])
def test_degeneracy_by_counting(N):
    for n in range(15):
        assert qs.degeneracy_by_counting(N, n) == qs.degeneracy(N, n)


# -- finite differences ----------------------------------------------------------------------------

def test_radial_flat_oscillator():
    params = P(3, 1.0, 0.0, 1.0)
    E = qs.radial_solve(params, qs.default_grid(params, 0))[0]
    assert abs(E - 1.5) <= 1e-6


def test_radial_ground_state_oracle():
    params = P(3, 1.0, 0.5, 1.0)
    E = qs.radial_solve(params, qs.default_grid(params, 0))[0]
    assert abs(E - 0.75) <= 1e-6


def test_radial_quantum_numbers_match_principal_level():
    params = P(3, 1.0, 0.5, 1.0)
    grid = qs.default_grid(params, 6)
    sols = qs.radial_solve_many(params, grid, {0: 3, 1: 3, 2: 3})
    for l, sol in sols.items():
        for k, E in enumerate(sol.values):
            assert abs(E - qs.analytic_level(params, 2 * k + l)) <= 1e-6


def test_two_dimensional_s_wave():
    # the attractive -1/(4 rho^2) case of the reduced equation
    params = P(2, 1.0, 0.5, 1.0)
    E = qs.radial_solve(params, qs.default_grid(params, 2), count=2)
    assert abs(E[0] - qs.analytic_level(params, 0)) <= 1e-6
    assert abs(E[1] - qs.analytic_level(params, 2)) <= 1e-6


def test_coarse_grid_is_flagged():
    params = P(3, 1.0, 0.5, 1.0)
    with pytest.raises(GridTooCoarse):
        qs.radial_solve(params, qs.RadialGrid(40.0, 200, 0), count=6)


def test_multisection_matches_dense_solver():
    params = P(3, 1.0, 0.5, 1.0)
    grid = qs.RadialGrid(12.0, 300, 1)
    A, B = qs.operator_matrix(params, qs.RadialGrid(12.0, 300, 1))
    from scipy.linalg import eigh
    ref = eigh(A, B, eigvals_only=True)[:5]
    diag, off, weight = qs.discretize(params, grid)
    d, e = qs._symmetrized(diag, off, weight)
    got = qs.multisection(d[:, None].repeat(5, axis=1), e, np.arange(5))
    assert np.max(np.abs(got - ref)) <= 1e-10


# -- assembly -----------------------------------------------------------------------------------

def test_assemble_example():
    res = qs.assemble_spectrum(P(3, 1.0, 0.5, 1.0), 4)
    assert [lv.degeneracy_found for lv in res.levels] == [1, 3, 6, 10, 15]
    assert res.max_level_error <= 1e-6
    assert res.levels[0].E_numeric == pytest.approx(0.75, abs=1e-6)
    assert res.boundary_amplitude <= 1e-8
    E = [lv.E_numeric for lv in res.levels]
    assert all(b - a > d - c for a, b, c, d in zip(E, E[1:], E[1:], E[2:]))


def test_assemble_flat_limit():
    res = qs.assemble_spectrum(P(3, 1.0, 0.0, 1.0), 3)
    for lv in res.levels:
        assert abs(lv.E_numeric - (lv.n + 1.5)) <= 1e-6
    assert res.continuum_bottom is None


def test_assemble_rejects_negative_lambda():
    with pytest.raises(RegimeError):
        qs.assemble_spectrum(P(3, 1.0, -1.0, 1.0), 2)


# -- self-adjointness -----------------------------------------------------------------------------

@pytest.mark.parametrize("params", [P(3, 1.0, 0.5, 1.0), P(2, 0.5, 2.0, 0.7), P(4, 1.0, 0.0, 1.0)])
def test_symmetry(params):
    grid = qs.RadialGrid(10.0, 400, 2)
    assert qs.symmetry_check(params, grid) <= 1e-12
    assert qs.weighted_form_check(params, grid, np.random.default_rng(3)) <= 1e-10


def test_weight_at_zero_lambda_is_plain_measure():
    grid = qs.RadialGrid(10.0, 400, 0)
    _, B0 = qs.operator_matrix(P(3, 1.0, 0.0, 1.0), grid)
    _, B1 = qs.operator_matrix(P(3, 1.0, 0.5, 1.0), grid)
    rho = grid.centres()
    assert np.allclose(np.diag(B1) / np.diag(B0), 1.0 + 0.5 * rho**2, rtol=1e-14)
