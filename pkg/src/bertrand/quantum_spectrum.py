"""Quantum Darboux III oscillator: analytic spectrum and a finite-difference check.

The Schrodinger problem ``(-hbar^2 Lap + omega^2 q^2) psi = 2 E (1 + lam q^2) psi``
separates in hyperspherical coordinates. With ``psi = R(rho) Y_l`` the
radial equation in self-adjoint form is

    -hbar^2 (rho^(N-1) R')' + rho^(N-1) [hbar^2 l(l+N-2)/rho^2 + omega^2 rho^2] R
        = E 2 (1 + lam rho^2) rho^(N-1) R.

It is discretized on cell centres ``rho_i = (i - 1/2) h`` with the flux
weight ``rho^(N-1)`` taken on cell faces, which yields a symmetric
tridiagonal matrix ``A`` and a positive diagonal weight ``B``. This form
needs no special treatment of ``N = 2, l = 0``, where the reduced
equation for ``u = rho^((N-1)/2) R`` has an attractive ``-1/(4 rho^2)`` term.

Levels are ``E_n`` with ``x = n + N/2`` satisfying ``E^2 = hbar^2 (omega^2 - 2 lam E) x^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConvergenceError, DegeneracyMismatch, GridTooCoarse, LevelMismatch, RegimeError

STURM_TOL = 1e-12
CLUSTER_RTOL = 1e-8
LEVEL_RTOL = 1e-6
RICHARDSON_RTOL = 1e-7
BOUNDARY_TOL = 1e-8
MIN_POINTS = 200


@dataclass(frozen=True)
class QuantumParams:
    N: int = 3
    hbar: float = 1.0
    lam: float = 0.5
    omega: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")
        if not self.omega > 0:
            raise ValueError("omega must be positive")
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")


def _require_bound_regime(params):
    if not params.lam > 0:
        raise RegimeError(f"the discrete spectrum is solved for lambda > 0 only (got {params.lam})")


def analytic_level(params: QuantumParams, n: int) -> float:
    """``E_n``, in the rationalized form that avoids cancellation at large ``n``."""
    _require_bound_regime(params)
    if n < 0:
        raise ValueError("n must be nonnegative")
    hb, lam, w = params.hbar, params.lam, params.omega
    x = n + params.N / 2.0
    return w * w * hb * x / (hb * lam * x + math.hypot(hb * lam * x, w))


def analytic_level_direct(params: QuantumParams, n: int) -> float:
    """``-hbar^2 lam x^2 + hbar x sqrt(hbar^2 lam^2 x^2 + omega^2)``, as displayed; cancels for large ``n``."""
    _require_bound_regime(params)
    hb, lam, w = params.hbar, params.lam, params.omega
    x = n + params.N / 2.0
    return -hb * hb * lam * x * x + hb * x * math.sqrt(hb * hb * lam * lam * x * x + w * w)


def analytic_level_expm1(params: QuantumParams, n: int) -> float:
    """``hbar^2 lam x^2 (sqrt(1 + y) - 1)`` with ``y = omega^2 / (hbar lam x)^2``, via ``expm1``/``log1p``."""
    _require_bound_regime(params)
    hb, lam, w = params.hbar, params.lam, params.omega
    x = n + params.N / 2.0
    y = (w / (hb * lam * x)) ** 2
    return hb * hb * lam * x * x * math.expm1(0.5 * math.log1p(y))


def flat_level(params: QuantumParams, n: int) -> float:
    return params.hbar * params.omega * (n + params.N / 2.0)


def reference_level(params: QuantumParams, n: int) -> float:
    """Analytic level for ``lam > 0``, the isotropic oscillator for ``lam = 0``."""
    if params.lam == 0:
        return flat_level(params, n)
    return analytic_level(params, n)


def verify_quadratic_identity(params: QuantumParams, n: int) -> float:
    E = analytic_level(params, n)
    x = n + params.N / 2.0
    hb = params.hbar
    resid = E * E - hb * hb * (params.omega**2 - 2.0 * params.lam * E) * x * x
    return abs(resid) / max(E * E, 1.0)


def continuum_bottom(params: QuantumParams) -> float:
    _require_bound_regime(params)
    return params.omega**2 / (2.0 * params.lam)


def harmonic_dimension(l: int, N: int) -> int:
    """Dimension of degree-``l`` spherical harmonics in ``N`` variables."""
    if l < 0:
        return 0
    if N == 1:
        return 1 if l <= 1 else 0
    return math.comb(l + N - 1, N - 1) - (math.comb(l + N - 3, N - 1) if l >= 2 else 0)


def degeneracy(N: int, n: int) -> int:
    if n < 0 or N < 1:
        raise ValueError("need n >= 0 and N >= 1")
    return math.comb(n + N - 1, N - 1)


def degeneracy_by_counting(N: int, n: int) -> int:
    """Sum of harmonic dimensions over ``2k + l = n``."""
    return sum(harmonic_dimension(l, N) for l in range(n % 2, n + 1, 2))


# -- radial discretization -------------------------------------------------------------------

@dataclass(frozen=True)
class RadialGrid:
    rho_max: float
    points: int
    l: int = 0

    def __post_init__(self):
        if not self.rho_max > 0:
            raise ValueError("rho_max must be positive")
        if self.points < MIN_POINTS:
            raise ValueError(f"points must be >= {MIN_POINTS}")
        if self.l < 0:
            raise ValueError("l must be nonnegative")

    @property
    def h(self):
        # Dirichlet ghost cell centred exactly on rho_max
        return self.rho_max / (self.points + 0.5)

    def centres(self):
        return self.h * (np.arange(1, self.points + 1) - 0.5)

    def with_points(self, points):
        return RadialGrid(self.rho_max, points, self.l)


def discretize(params: QuantumParams, grid: RadialGrid, l: int | None = None):
    """``(diag, offdiag, weight)`` of the pencil ``A R = E B R``; ``A`` symmetric tridiagonal."""
    if params.N < 2:
        raise ValueError("the radial problem needs N >= 2")
    l = grid.l if l is None else l
    N, hb, lam, w = params.N, params.hbar, params.lam, params.omega
    h = grid.h
    r = grid.centres()
    faces = h * np.arange(1, grid.points + 1)
    pr = faces ** (N - 1)
    pl = np.concatenate(([0.0], pr[:-1]))
    vol = r ** (N - 1)
    c = l * (l + N - 2)
    diag = hb * hb * (pl + pr) / (h * h) + vol * (hb * hb * c / (r * r) + w * w * r * r)
    off = -hb * hb * pr[:-1] / (h * h)
    weight = 2.0 * (1.0 + lam * r * r) * vol
    if np.any(weight <= 0):
        raise RegimeError("weight 1 + lam rho^2 is not positive on the grid")
    return diag, off, weight


def _symmetrized(diag, off, weight):
    s = 1.0 / np.sqrt(weight)
    return diag * s * s, off * s[:-1] * s[1:]


def sturm_count(d, e, shift, pivmin=None):
    """Number of eigenvalues of the symmetric tridiagonal ``(d, e)`` below ``shift``."""
    d = np.asarray(d, dtype=float)[:, None]
    counts = _sturm_counts(d, np.asarray(e, dtype=float) ** 2, np.atleast_2d(shift), pivmin)
    return counts.reshape(np.shape(shift))


def _sturm_counts(D, e2, shifts, pivmin=None):
    # D: (M, T) diagonals per target; shifts: (T, S)
    if pivmin is None:
        pivmin = np.finfo(float).tiny * max(1.0, float(np.max(e2, initial=1.0)))
    q = D[0][:, None] - shifts
    q = np.where(np.abs(q) < pivmin, -pivmin, q)
    count = (q < 0).astype(np.int64)
    for i in range(1, D.shape[0]):
        q = (D[i][:, None] - shifts) - e2[i - 1] / q
        q = np.where(np.abs(q) < pivmin, -pivmin, q)
        count += q < 0
    return count


def multisection(D, e, index, tol=STURM_TOL, sections=64, max_sweeps=200):
    """Eigenvalue ``index[t]`` (0-based) of the tridiagonal ``(D[:, t], e)`` for each target ``t``.

    All targets are refined together: each sweep evaluates ``sections``
    Sturm counts per target in one vectorized recurrence.
    """
    D = np.asarray(D, dtype=float)
    e = np.asarray(e, dtype=float)
    index = np.asarray(index)
    T = index.size
    e2 = e * e
    ae = np.abs(e)
    rad = np.concatenate(([0.0], ae)) + np.concatenate((ae, [0.0]))
    lo = np.min(D - rad[:, None], axis=0)
    hi = np.max(D + rad[:, None], axis=0)
    lo = np.minimum(lo, 0.0) - 1.0
    hi = hi + 1.0
    # first sweep on a logarithmic scale above the (positive) lower bound, then linear
    frac = np.arange(1, sections + 1) / (sections + 1)
    base = np.maximum(lo, 0.0) + 1e-12
    shifts = base[:, None] * (hi / base)[:, None] ** frac[None, :]
    for sweep in range(max_sweeps):
        counts = _sturm_counts(D, e2, shifts)
        below = counts <= index[:, None]
        new_lo = np.where(below, shifts, -np.inf).max(axis=1)
        new_hi = np.where(~below, shifts, np.inf).min(axis=1)
        lo = np.maximum(lo, new_lo)
        hi = np.minimum(hi, new_hi)
        if np.all(hi - lo <= tol):
            return 0.5 * (lo + hi)
        shifts = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
    raise ConvergenceError(f"multisection did not reach {tol} in {max_sweeps} sweeps")


def _solve_grid(params, grid, ls, counts):
    """Lowest ``counts[i]`` eigenvalues for each ``ls[i]`` on one grid."""
    cols, index, owner = [], [], []
    off_sym = None
    for l, k in zip(ls, counts):
        diag, off, weight = discretize(params, grid, l)
        d, o = _symmetrized(diag, off, weight)
        off_sym = o
        for j in range(k):
            cols.append(d)
            index.append(j)
            owner.append(l)
    D = np.stack(cols, axis=1)
    vals = multisection(D, off_sym, np.array(index))
    out = {l: [] for l in ls}
    for l, v in zip(owner, vals):
        out[l].append(float(v))
    return out


def boundary_amplitude(params: QuantumParams, grid: RadialGrid, E: float, l: int | None = None) -> float:
    """``|R(last cell)| / max |R|`` of the eigenvector near ``E`` by inverse iteration."""
    diag, off, weight = discretize(params, grid, l)
    d, o = _symmetrized(diag, off, weight)
    M = d.size
    sigma = E * (1.0 - 1e-10) - 1e-14
    ab = np.zeros((3, M))
    ab[0, 1:] = o
    ab[1] = d - sigma
    ab[2, :-1] = o
    v = np.ones(M) / math.sqrt(M)
    for _ in range(4):
        v = solve_banded((1, 1), ab, v)
        v /= np.linalg.norm(v)
    R = v / np.sqrt(weight)  # back to the unsymmetrized radial function
    return float(abs(R[-1]) / np.max(np.abs(R)))


def richardson(values, hs):
    """Second-order Richardson extrapolation for each consecutive pair of grids."""
    out = []
    for (E1, h1), (E2, h2) in zip(zip(values, hs), zip(values[1:], hs[1:])):
        r2 = (h1 / h2) ** 2
        out.append((r2 * np.asarray(E2) - np.asarray(E1)) / (r2 - 1.0))
    return out


@dataclass
class RadialSolution:
    l: int
    values: list                 # extrapolated eigenvalues, lowest first
    raw: list = field(default_factory=list)
    richardson_gap: float = 0.0


def radial_solve(params: QuantumParams, grid: RadialGrid, count: int = 1, check: bool = True) -> list:
    """Lowest ``count`` eigenvalues for angular momentum ``grid.l``.

    Solves on ``points``, ``2 points`` and ``4 points`` cells and returns
    the finest Richardson extrapolation. ``GridTooCoarse`` is raised when the
    two extrapolations disagree by more than ``RICHARDSON_RTOL``.
    """
    return radial_solve_many(params, grid, {grid.l: count}, check=check)[grid.l].values


def radial_solve_many(params: QuantumParams, grid: RadialGrid, wanted: dict, check: bool = True) -> dict:
    """Like :func:`radial_solve` for several ``l`` at once (``wanted`` maps ``l`` to a count)."""
    if params.lam < 0:
        raise RegimeError("quantum regimes with lambda < 0 are not solved")
    ls = sorted(l for l, k in wanted.items() if k > 0)
    ks = [wanted[l] for l in ls]
    grids = [grid.with_points(grid.points * f) for f in (1, 2, 4)]
    raw = [_solve_grid(params, g, ls, ks) for g in grids]
    hs = [g.h for g in grids]
    out = {}
    for l in ls:
        seq = [np.array(r[l]) for r in raw]
        R1, R2 = richardson(seq, hs)
        gap = float(np.max(np.abs(R2 - R1) / np.maximum(np.abs(R2), 1e-300)))
        if check and gap > RICHARDSON_RTOL:
            raise GridTooCoarse(f"l={l}: Richardson estimates differ by {gap:.2e} relative")
        out[l] = RadialSolution(l, [float(v) for v in R2], [list(map(float, s)) for s in seq], gap)
    return out


def default_grid(params: QuantumParams, n_max: int, points: int | None = None, l: int = 0) -> RadialGrid:
    """Box large enough for level ``n_max`` to decay below ``BOUNDARY_TOL`` at the wall.

    Beyond the classical turning point the radial function falls like
    ``exp(-Omega rho^2 / (2 hbar))`` with ``Omega^2 = omega^2 - 2 lam E``. The
    top level energy is estimated numerically on coarse grids and the box
    is grown until its estimate settles.
    """
    hb, w = params.hbar, params.omega
    x = n_max + params.N / 2.0
    Omega = w
    rho_max = math.sqrt((2.0 * hb * x + 60.0 * hb) / Omega)
    l_top = n_max % 2
    k_top = (n_max - l_top) // 2 + 1
    for _ in range(30):
        coarse = RadialGrid(rho_max, 400, l_top)
        E_top = _solve_grid(params, coarse, [l_top], [k_top])[l_top][-1]
        arg = w * w - 2.0 * params.lam * E_top
        Omega_new = math.sqrt(arg) if arg > 0 else 1e-3 * w
        rho_new = math.sqrt((2.0 * hb * x + 60.0 * hb) / Omega_new)
        if abs(rho_new - rho_max) <= 0.02 * rho_max:
            rho_max = max(rho_max, rho_new)
            break
        rho_max = rho_new
    else:
        raise ConvergenceError("box size iteration did not settle")
    if points is None:
        # keep h small against the shortest local wavelength of the top level
        points = int(max(1000, math.ceil(rho_max * 40.0 * math.sqrt(max(E_top, 1.0) / hb))))
    return RadialGrid(rho_max, points, l)


# -- assembly --------------------------------------------------------------------------------

@dataclass
class Level:
    n: int
    E_analytic: float
    E_numeric: float
    degeneracy_expected: int
    degeneracy_found: int


@dataclass
class SpectrumResult:
    params: QuantumParams
    levels: list
    continuum_bottom: float | None
    grid: RadialGrid | None = None
    boundary_amplitude: float | None = None
    max_level_error: float = 0.0

    def as_rows(self):
        return [(lv.n, lv.E_analytic, lv.E_numeric, lv.degeneracy_expected, lv.degeneracy_found)
                for lv in self.levels]


def cluster(values, multiplicities, rtol=CLUSTER_RTOL):
    """Group sorted ``values`` whose consecutive relative gap is within ``rtol``.

    Returns ``(mean value, total multiplicity, members)`` per cluster.
    """
    order = np.argsort(values)
    groups = []
    for i in order:
        v, m = values[i], multiplicities[i]
        if groups and abs(v - groups[-1][2][-1]) <= rtol * max(abs(v), 1e-300):
            groups[-1][2].append(v)
            groups[-1][1] += m
        else:
            groups.append([None, m, [v]])
    return [(float(np.mean(g[2])), g[1], g[2]) for g in groups]


def assemble_spectrum(params: QuantumParams, n_max: int, grid: RadialGrid | None = None,
                      check: bool = True, raise_on_mismatch: bool = True) -> SpectrumResult:
    """Numeric levels ``n = 0..n_max`` over ``l = 0..n_max``, clustered and checked.

    ``LevelMismatch`` and ``DegeneracyMismatch`` carry the full result.
    """
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    if params.lam < 0:
        raise RegimeError("quantum regimes with lambda < 0 are not solved")
    grid = grid or default_grid(params, n_max)
    wanted = {l: (n_max - l) // 2 + 1 for l in range(n_max + 1)}
    sols = radial_solve_many(params, grid, wanted, check=check)
    values, mult = [], []
    for l, sol in sols.items():
        for v in sol.values:
            values.append(v)
            mult.append(harmonic_dimension(l, params.N))
    groups = cluster(np.array(values), mult)
    levels = []
    worst = 0.0
    for n in range(n_max + 1):
        ref = reference_level(params, n)
        if n < len(groups):
            E_num, found, _ = groups[n]
        else:
            E_num, found = float("nan"), 0
        levels.append(Level(n, ref, E_num, degeneracy(params.N, n), found))
        worst = max(worst, abs(E_num - ref) / abs(ref)) if math.isfinite(E_num) else math.inf
    top_l = n_max % 2
    amp = boundary_amplitude(params, grid.with_points(4 * grid.points), sols[top_l].values[-1], top_l)
    cb = continuum_bottom(params) if params.lam > 0 else None
    result = SpectrumResult(params, levels, cb, grid, amp, worst)
    if raise_on_mismatch:
        if amp > BOUNDARY_TOL:
            raise GridTooCoarse(f"boundary amplitude {amp:.2e} exceeds {BOUNDARY_TOL}")
        if worst > LEVEL_RTOL:
            raise LevelMismatch(f"numeric levels deviate by {worst:.2e} relative", result)
        bad = [lv.n for lv in levels if lv.degeneracy_found != lv.degeneracy_expected]
        if bad:
            raise DegeneracyMismatch(f"cluster multiplicities differ at n={bad}", result)
    return result


# -- self-adjointness -----------------------------------------------------------------------------

def operator_matrix(params: QuantumParams, grid: RadialGrid):
    """Dense ``(A, B)`` with ``A`` the weighted operator and ``B`` the diagonal weight."""
    diag, off, weight = discretize(params, grid)
    A = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    return A, np.diag(weight)


def symmetry_check(params: QuantumParams, grid: RadialGrid) -> float:
    """Max asymmetry of the weighted operator matrix."""
    A, _ = operator_matrix(params, grid)
    return float(np.max(np.abs(A - A.T)))


def weighted_form_check(params: QuantumParams, grid: RadialGrid, rng: np.random.Generator | None = None,
                        trials: int = 5) -> float:
    """Worst relative ``|<u, Hv> - <Hu, v>|`` in the inner product with density ``(1 + lam rho^2)``.

    ``H = B^-1 A`` is applied matrix-free.
    """
    rng = rng or np.random.default_rng(0)
    diag, off, weight = discretize(params, grid)

    def apply_H(u):
        Au = diag * u
        Au[:-1] += off * u[1:]
        Au[1:] += off * u[:-1]
        return Au / weight

    def inner(u, v):
        return grid.h * float(np.sum(weight * u * v))

    worst = 0.0
    for _ in range(trials):
        u = rng.normal(size=grid.points)
        v = rng.normal(size=grid.points)
        lhs, rhs = inner(u, apply_H(v)), inner(apply_H(u), v)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst
