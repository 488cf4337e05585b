"""Bertrand radial profiles, Perlick potentials and intrinsic Green functions.

A spherically symmetric metric is written ``h(r)^2 dr^2 + r^2 dOmega^2``.
The two Bertrand families fix ``h`` and the potential ``V`` in terms of
coprime integers ``n, m`` and real constants ``K, D, G``:

Type I::

    h = m / (n sqrt(1 + K r^2)),          V = sqrt(r^-2 + K) + G

Type II (``s = 1 - D r^2 +/- sqrt(disc)``, ``disc = (1 - D r^2)^2 - K r^4``)::

    h^2 = 2 m^2 s / (n^2 disc),           V = G -/+ r^2 / s

The radial Green function ``u(r) = int^r h(t) / t^2 dt`` generates the
intrinsic Kepler potential ``A (u + B)`` and the intrinsic oscillator
``A (u + B)^-2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, FitError, InvalidFamily, QuadratureError, SingularityError

TYPE_I = "I"
TYPE_II = "II"
PLUS = 1
MINUS = -1

KEPLER = "kepler"
OSCILLATOR = "oscillator"

QUAD_TOL = 1e-13
CLOSED_FORM_TOL = 1e-10


@dataclass(frozen=True)
class BertrandFamily:
    """Parameters of one Type I or Type II Bertrand system.

    ``branch`` selects the sign inside ``h`` for Type II (the potential
    takes the opposite sign); it is forced to ``PLUS`` for Type I.
    """

    kind: str
    n: int
    m: int
    K: float
    D: float = 0.0
    G: float = 0.0
    branch: int = PLUS
    label: str = ""

    def __post_init__(self):
        if self.kind not in (TYPE_I, TYPE_II):
            raise InvalidFamily(f"kind must be 'I' or 'II', got {self.kind!r}")
        if int(self.n) != self.n or int(self.m) != self.m:
            raise InvalidFamily("n and m must be integers")
        if self.n < 1 or self.m < 1:
            raise InvalidFamily(f"n and m must be positive, got n={self.n}, m={self.m}")
        if math.gcd(int(self.n), int(self.m)) != 1:
            raise InvalidFamily(f"n={self.n} and m={self.m} are not coprime")
        if self.branch not in (PLUS, MINUS):
            raise InvalidFamily("branch must be +1 or -1")
        for name in ("K", "D", "G"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidFamily(f"{name} must be finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        if self.kind == TYPE_I:
            if self.D != 0.0:
                raise InvalidFamily("D is a Type II parameter; Type I requires D = 0")
            object.__setattr__(self, "branch", PLUS)
        if not validity_domain(self):
            raise InvalidFamily(f"h^2 is nowhere positive for {self}")

    @classmethod
    def type_i(cls, n, m, K, G=0.0, label="type-I"):
        return cls(TYPE_I, n, m, K, 0.0, G, PLUS, label)

    @classmethod
    def type_ii(cls, n, m, K, D, G=0.0, branch=PLUS, label="type-II"):
        return cls(TYPE_II, n, m, K, D, G, branch, label)

    @classmethod
    def euclidean_kepler(cls):
        return cls.type_i(1, 1, 0.0, label="euclidean-kepler")

    @classmethod
    def curved_kepler(cls, kappa):
        """Kepler system on the space of constant curvature ``kappa``."""
        return cls.type_i(1, 1, -kappa, label="curved-kepler")

    @classmethod
    def flat_oscillator(cls):
        return cls.type_ii(2, 1, 0.0, 0.0, label="flat-oscillator")

    @classmethod
    def curved_oscillator(cls, kappa):
        return cls.type_ii(2, 1, 0.0, kappa, label="curved-oscillator")

    @classmethod
    def darboux(cls, lam):
        return cls.type_ii(2, 1, 4.0 * lam * lam, -2.0 * lam, label="darboux")

    @property
    def beta(self) -> float:
        return self.n / self.m

    @property
    def apsidal_ratio(self) -> float:
        """Apsidal angle in units of pi (``m/n``)."""
        return self.m / self.n

    @property
    def potential_kind(self) -> str:
        return KEPLER if self.kind == TYPE_I else OSCILLATOR


# -- raw vectorized formulas (no domain checks) ------------------------------

def _disc_factors(fam):
    """``(c1, c2)`` with ``disc = (1 - c1 u)(1 - c2 u)`` when ``K >= 0``, else ``None``.

    ``disc = (1 - D u)^2 - K u^2``; ``c = D -/+ sqrt(K)``, snapped to 0 at rounding level.
    """
    if fam.K < 0:
        return None
    sk = math.sqrt(fam.K)
    tiny = 8 * np.finfo(float).eps * (abs(fam.D) + sk)
    return tuple(0.0 if abs(c) <= tiny else c for c in (fam.D + sk, fam.D - sk))


def disc_coefficients(fam):
    """``disc = q2 u^2 + q1 u + 1`` in ``u = r^2``."""
    f = _disc_factors(fam)
    q2 = fam.D * fam.D - fam.K if f is None else f[0] * f[1]
    return q2, -2.0 * fam.D


def _s_from(fam, a, disc, u):
    """``a +/- sqrt(disc)`` with the cancelling sign rewritten via ``a^2 - disc = K u^2``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.sqrt(np.where(disc > 0, disc, np.nan))
        Ku2 = fam.K * u * u
        if fam.branch == PLUS:
            return np.where(a >= 0, a + root, Ku2 / (a - root))
        return np.where(a <= 0, a - root, Ku2 / (a + root))


def _type_ii_parts(fam, r):
    r = np.asarray(r, dtype=float)
    u = r * r
    a = 1.0 - fam.D * u
    f = _disc_factors(fam)
    # both forms are free of cancellation away from true roots
    disc = a * a - fam.K * u * u if f is None else (1.0 - f[0] * u) * (1.0 - f[1] * u)
    return disc, _s_from(fam, a, disc, u)


def _h2(fam, r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.kind == TYPE_I:
            base = 1.0 + fam.K * r * r
            return np.where(base > 0, fam.m**2 / (fam.n**2 * base), np.nan)
        disc, s = _type_ii_parts(fam, r)
        return 2.0 * fam.m**2 * s / (fam.n**2 * disc)


def _h(fam, r):
    with np.errstate(invalid="ignore"):
        return np.sqrt(_h2(fam, r))


def _perlick(fam, r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.kind == TYPE_I:
            return np.sqrt(r**-2 + fam.K) + fam.G
        _, s = _type_ii_parts(fam, r)
        return fam.G - fam.branch * r * r / s


def _green_closed(fam, r):
    """Antiderivative of h/r^2 with the integration constant set to zero."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if fam.kind == TYPE_I:
            return -(fam.m / fam.n) * np.sqrt(r**-2 + fam.K)
        _, s = _type_ii_parts(fam, r)
        return -fam.branch * (fam.m * math.sqrt(2.0) / fam.n) * np.sqrt(s) / r


def _valid(fam, r):
    h2 = _h2(fam, r)
    ok = np.isfinite(h2) & (h2 > 0)
    if fam.kind == TYPE_I:
        ok &= (1.0 + fam.K * np.asarray(r) ** 2) > 0
    return ok


def disc_root_slopes(fam) -> list:
    """``(u, d disc/du)`` at the positive roots ``u = r^2`` of disc, a double root once."""
    f = _disc_factors(fam)
    if f is None:
        return []
    c1, c2 = f
    out = {}
    # at u = 1/c1 the slope is -(c1 - c2), at u = 1/c2 it is -(c2 - c1)
    for c, other in ((c1, c2), (c2, c1)):
        if c > 0:
            out.setdefault(1.0 / c, other - c)
    return sorted(out.items())


def disc_roots(fam) -> list:
    """Positive roots ``u = r^2`` of ``disc``; a double root is listed once."""
    return [u for u, _ in disc_root_slopes(fam)]


def _breakpoints(fam):
    """Radii where validity can change: disc roots and the zero of ``1 - D r^2``."""
    if fam.kind == TYPE_I:
        return [1.0 / math.sqrt(-fam.K)] if fam.K < 0 else []
    us = disc_roots(fam)
    if fam.D > 0:
        us.append(1.0 / fam.D)
    return sorted({math.sqrt(u) for u in us})


def validity_domain(fam: BertrandFamily) -> tuple:
    """Open intervals of ``r`` on which ``h^2 > 0`` and ``V`` is real.

    The edges are exact: roots of disc (or of ``1 + K r^2`` for Type I) and
    the zero of ``1 - D r^2``; each gap between them is classified at an
    interior point.
    """
    edges = [0.0] + _breakpoints(fam) + [math.inf]
    intervals = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        probe = 2.0 * lo + 1.0 if math.isinf(hi) else (0.5 * hi if lo == 0.0 else math.sqrt(lo * hi))
        with np.errstate(over="ignore", invalid="ignore"):
            # past a breakpoint near 1/sqrt(tiny D) u^2 overflows; non-finite reads as invalid
            ok, joins = bool(_valid(fam, probe)), bool(_valid(fam, lo))
        if not ok:
            continue
        if intervals and intervals[-1][1] == lo and joins:
            intervals[-1] = (intervals[-1][0], hi)  # the breakpoint is not an edge
        else:
            intervals.append((lo, hi))
    return tuple((float(a), float(b)) for a, b in intervals)


@dataclass(frozen=True)
class RadialProfile:
    family: BertrandFamily
    domain: tuple

    @classmethod
    def from_family(cls, family: BertrandFamily) -> "RadialProfile":
        return cls(family, validity_domain(family))

    def interval_of(self, r: float):
        for lo, hi in self.domain:
            if lo < r < hi:
                return lo, hi
        return None

    def contains(self, r) -> bool:
        r = np.atleast_1d(np.asarray(r, dtype=float))
        return all(self.interval_of(float(x)) is not None for x in r)

    def h(self, r):
        return h_of_r(self, r)

    def potential(self, r):
        return perlick_potential(self, r)


def make_profile(family: BertrandFamily) -> RadialProfile:
    return RadialProfile.from_family(family)


def _checked(profile, r, values, what):
    r_arr = np.asarray(r, dtype=float)
    if not profile.contains(r_arr):
        raise DomainError(f"r={r} outside the validity domain {profile.domain}")
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{what} is not finite at r={r}")
    return float(values) if np.ndim(values) == 0 else values


def h_of_r(profile: RadialProfile, r):
    """Metric profile ``h(r) > 0``; raises DomainError outside the domain."""
    val = _h(profile.family, r)
    out = _checked(profile, r, val, "h")
    if np.any(np.asarray(out) <= 0):
        raise DomainError(f"h is not positive at r={r}")
    return out


def perlick_potential(profile: RadialProfile, r):
    return _checked(profile, r, _perlick(profile.family, r), "V")


def green_closed_form(profile: RadialProfile, r):
    """Closed-form Green function, integration constant zero."""
    return _checked(profile, r, _green_closed(profile.family, r), "u")


def default_anchor(profile: RadialProfile) -> float:
    """Lower quadrature limit: 1 when admissible, else inside the first interval."""
    lo, hi = profile.domain[0]
    if lo < 1.0 < hi:
        return 1.0
    if math.isfinite(hi):
        return 0.5 * (lo + hi)
    return 2.0 * lo


def _closed_at_infinity(fam):
    if fam.kind == TYPE_I and fam.K >= 0:
        return -(fam.m / fam.n) * math.sqrt(fam.K)
    return None


def green_u(profile: RadialProfile, r: float, a: float | None = None, check: bool = True) -> float:
    """``int_a^r h(t)/t^2 dt`` by adaptive Gauss-Kronrod quadrature.

    ``a`` defaults to :func:`default_anchor`; ``a = inf`` is accepted on
    domains unbounded above. When ``check`` is set the result is compared
    with the closed-form antiderivative and a QuadratureError raised if they
    disagree by more than 1e-10.
    """
    fam = profile.family
    if a is None:
        a = default_anchor(profile)
    r = float(r)
    interval = profile.interval_of(r)
    if interval is None:
        raise DomainError(f"r={r} outside the validity domain {profile.domain}")
    if math.isinf(a):
        if not math.isinf(interval[1]):
            raise DomainError("anchor at infinity needs a domain unbounded above")
    elif not (interval[0] < a < interval[1]):
        raise DomainError(f"anchor a={a} not in the same domain interval as r={r}")

    def integrand(t):
        return float(_h(fam, t)) / (t * t)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if math.isinf(a):
            val, err = integrate.quad(integrand, r, math.inf, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400)
            val = -val
        else:
            val, err = integrate.quad(integrand, a, r, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400)
    if not math.isfinite(val) or err > CLOSED_FORM_TOL:
        raise QuadratureError(f"Green quadrature error estimate {err:.3g} too large at r={r}")

    if check:
        ref_a = _closed_at_infinity(fam) if math.isinf(a) else float(_green_closed(fam, a))
        if ref_a is not None:
            ref = float(_green_closed(fam, r)) - ref_a
            if abs(ref - val) > CLOSED_FORM_TOL * max(1.0, abs(ref)):
                raise QuadratureError(
                    f"quadrature {val!r} disagrees with closed form {ref!r} at r={r}"
                )
    return val


@dataclass(frozen=True)
class IntrinsicPotentialSpec:
    kind: str
    A: float
    B: float = 0.0
    a: float | None = None

    def __post_init__(self):
        if self.kind not in (KEPLER, OSCILLATOR):
            raise ValueError(f"kind must be {KEPLER!r} or {OSCILLATOR!r}")


def intrinsic_potential(profile: RadialProfile, spec: IntrinsicPotentialSpec, r: float) -> float:
    u = green_u(profile, r, spec.a)
    if spec.kind == KEPLER:
        return spec.A * (u + spec.B)
    den = u + spec.B
    if abs(den) <= 1e-14 * max(1.0, abs(u)):
        raise SingularityError(f"oscillator potential has a pole at r={r}")
    return spec.A / (den * den)


@dataclass(frozen=True)
class IntrinsicFitReport:
    kind: str
    spec: IntrinsicPotentialSpec
    offset: float
    grid: tuple
    max_residual: float


def _default_grid(profile, points=9):
    lo, hi = profile.domain[0]
    if math.isfinite(hi):
        return tuple(np.geomspace(max(lo, 0.05 * hi), 0.9 * hi, points))
    start = max(0.2, 4.0 * lo)
    return tuple(np.geomspace(start, 25.0 * start, points))


def verify_intrinsic_potential(family: BertrandFamily, grid: Sequence[float] | None = None,
                               a: float | None = None) -> IntrinsicFitReport:
    """Fit the intrinsic potential to the Perlick potential and report the residual.

    Type I is matched to the Kepler form ``A (u + B)``, which absorbs ``G``.
    Type II is matched to ``G + A (u + B)^-2``; the sign of ``A`` is free.
    ``(A, B)`` come from the two extreme grid points.
    """
    profile = make_profile(family)
    grid = tuple(float(r) for r in (grid if grid is not None else _default_grid(profile)))
    if len(grid) < 2:
        raise FitError("need at least two grid points")
    a = default_anchor(profile) if a is None else a
    V = np.array([perlick_potential(profile, r) for r in grid])
    u = np.array([green_u(profile, r, a) for r in grid])
    i, j = 0, len(grid) - 1

    if family.potential_kind == KEPLER:
        offset = 0.0
        du = u[j] - u[i]
        if abs(du) < 1e-14:
            raise FitError("two-point Kepler system is singular")
        A = (V[j] - V[i]) / du
        if A == 0:
            raise FitError("fitted amplitude vanishes")
        candidates = [IntrinsicPotentialSpec(KEPLER, float(A), float(V[i] / A - u[i]), a)]
    else:
        offset = family.G
        target = V - offset
        ratio = target[i] / target[j]
        if not math.isfinite(ratio) or ratio <= 0:
            raise FitError("two-point oscillator system has no real solution")
        candidates = []
        for t in (math.sqrt(ratio), -math.sqrt(ratio)):
            if abs(t - 1.0) < 1e-14:
                continue
            B = (u[j] - t * u[i]) / (t - 1.0)
            candidates.append(IntrinsicPotentialSpec(OSCILLATOR, float(target[i] * (u[i] + B) ** 2), float(B), a))
        if not candidates:
            raise FitError("two-point oscillator system is singular")

    best = None
    for spec in candidates:
        model = spec.A * (u + spec.B) if spec.kind == KEPLER else spec.A / (u + spec.B) ** 2
        res = float(np.max(np.abs(V - offset - model)))
        if best is None or res < best[1]:
            best = (spec, res)
    return IntrinsicFitReport(family.potential_kind, best[0], offset, grid, best[1])


def darboux_profile(lam: float) -> RadialProfile:
    """Darboux III space: Type II, ``+`` branch, n=2, m=1, K=D^2, D=-2 lam."""
    return make_profile(BertrandFamily.darboux(lam))


def darboux_h(lam, r):
    w = np.sqrt(1.0 + 4.0 * lam * np.asarray(r, dtype=float) ** 2)
    return (1.0 + w) / (2.0 * w)


def darboux_green(lam, r):
    r = np.asarray(r, dtype=float)
    return -(1.0 + np.sqrt(1.0 + 4.0 * lam * r * r)) / (2.0 * r)


def darboux_curvature_origin(lam: float, N: int) -> float:
    """Scalar curvature of the N-dimensional Darboux III space at the origin."""
    if N < 2:
        raise ValueError("N must be at least 2")
    return -2.0 * lam * N * (N - 1)
