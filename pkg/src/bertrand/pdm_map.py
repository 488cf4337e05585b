"""Conformal coordinate maps and position-dependent-mass (PDM) Hamiltonians.

Writing the Bertrand metric as ``f(rho)^2 dq^2`` with ``rho = |q|`` gives

    r = rho f(rho),   f drho = h dr,   drho / rho = h dr / r

and the Hamiltonian takes the PDM form ``p^2 / (2 M(rho)) + V(rho)`` with
``M = m0 f^2 = m0 r^2 / rho^2``.

Type I maps are closed form. Type II maps are built by quadrature of
``ln rho = int h / r dr``; the additive constant is fixed so that
``rho ~ r^c`` at the origin when ``h(0+) = c > 0`` and ``rho(r0) = 1``
at a reference radius otherwise.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize

from . import geometry as geo
from .errors import DomainError, InvalidFamily, QuadratureError

CLOSED_FORM = "closed_form"
QUADRATURE = "quadrature"


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


class CoordinateMap:
    """Monotone correspondence between the Bertrand radius ``r`` and ``rho = |q|``."""

    kind = CLOSED_FORM
    #: open interval of rho where the conformal chart is defined
    rho_domain = (0.0, math.inf)

    def __init__(self, family: geo.BertrandFamily | None):
        self.family = family
        self.profile = geo.make_profile(family) if family is not None else None

    @property
    def r_domain(self):
        """Interval of ``r`` covered monotonically by :meth:`rho_of_r`."""
        return self.profile.domain[0]

    def h(self, r):
        return geo._h(self.family, r)

    def rho_of_r(self, r):
        raise NotImplementedError

    def r_of_rho(self, rho):
        raise NotImplementedError

    def mass_factor(self, rho):
        """``r(rho)^2 / rho^2``."""
        rho = np.asarray(rho, dtype=float)
        r = self.r_of_rho(rho)
        return r * r / (rho * rho)

    def dmass_factor(self, rho):
        # d/drho (r^2/rho^2) with dr/drho = r / (rho h)
        rho = np.asarray(rho, dtype=float)
        r = np.asarray(self.r_of_rho(rho))
        return 2.0 * r * r / rho**3 * (1.0 / self.h(r) - 1.0)

    def _check_rho(self, rho):
        lo, hi = self.rho_domain
        rho_arr = np.asarray(rho, dtype=float)
        if np.any(~((rho_arr > lo) & (rho_arr < hi))):
            raise DomainError(f"rho={rho} outside ({lo}, {hi})")

    def _check_r(self, r):
        lo, hi = self.r_domain
        r_arr = np.asarray(r, dtype=float)
        if np.any(~((r_arr > lo) & (r_arr < hi))):
            raise DomainError(f"r={r} outside ({lo}, {hi})")


class PowerMap(CoordinateMap):
    """``rho = (r / (1 + sqrt(1 + K r^2)))^(1/beta)``, ``r = 2 / (rho^-beta - K rho^beta)``.

    The Type I map. With ``beta = 1`` and ``K = -kappa`` it is also the
    Poincare chart of the constant-curvature spaces.
    """

    def __init__(self, family, beta=None, K=None):
        super().__init__(family)
        self.beta = family.beta if beta is None else beta
        self.K = family.K if K is None else K
        if self.K > 0:
            self.rho_domain = (0.0, self.K ** (-0.5 / self.beta))

    def rho_of_r(self, r):
        self._check_r(r)
        r = np.asarray(r, dtype=float)
        out = (r / (1.0 + np.sqrt(1.0 + self.K * r * r))) ** (1.0 / self.beta)
        return _scalar_or_array(out)

    def _den(self, rho):
        rho = np.asarray(rho, dtype=float)
        return rho ** (-self.beta) - self.K * rho**self.beta

    def r_of_rho(self, rho):
        den = self._den(rho)
        if np.any(den <= 0):
            raise DomainError(f"rho={rho} beyond the chart: rho^-b - K rho^b <= 0")
        return _scalar_or_array(2.0 / den)

    def mass_factor(self, rho):
        rho = np.asarray(rho, dtype=float)
        return _scalar_or_array(4.0 / (self._den(rho) ** 2 * rho * rho))

    def dmass_factor(self, rho):
        rho = np.asarray(rho, dtype=float)
        b, K = self.beta, self.K
        den = self._den(rho)
        dden = -b * rho ** (-b - 1.0) - K * b * rho ** (b - 1.0)
        return _scalar_or_array(self.mass_factor(rho) * (-2.0 * dden / den - 2.0 / rho))


class DarbouxMap(CoordinateMap):
    """``r = rho sqrt(1 + lam rho^2)``, ``M = 1 + lam rho^2``."""

    def __init__(self, lam):
        super().__init__(geo.BertrandFamily.darboux(lam))
        self.lam = lam
        if lam < 0:
            self.rho_domain = (0.0, 1.0 / math.sqrt(-lam))

    def h(self, r):
        return geo.darboux_h(self.lam, r)

    def rho_of_r(self, r):
        self._check_r(r)
        r = np.asarray(r, dtype=float)
        w = np.sqrt(1.0 + 4.0 * self.lam * r * r)
        # sqrt((w - 1)/(2 lam)) rewritten without cancellation
        return _scalar_or_array(r * np.sqrt(2.0 / (1.0 + w)))

    def r_of_rho(self, rho):
        self._check_rho(rho)
        rho = np.asarray(rho, dtype=float)
        return _scalar_or_array(rho * np.sqrt(1.0 + self.lam * rho * rho))

    def mass_factor(self, rho):
        rho = np.asarray(rho, dtype=float)
        return _scalar_or_array(1.0 + self.lam * rho * rho)

    def dmass_factor(self, rho):
        return _scalar_or_array(2.0 * self.lam * np.asarray(rho, dtype=float))


class DarbouxExteriorMap(CoordinateMap):
    """Exterior Darboux regime (``lam < 0``, ``rho > 1/sqrt|lam|``), metric sign reversed."""

    def __init__(self, lam):
        if lam >= 0:
            raise ValueError("the exterior regime needs lam < 0")
        super().__init__(None)
        self.lam = lam
        self.rho_domain = (1.0 / math.sqrt(-lam), math.inf)

    @property
    def r_domain(self):
        return (0.0, math.inf)

    def h(self, r):
        r = np.asarray(r, dtype=float)
        mu = -self.lam
        # from drho/rho = h dr/r with r^2 = rho^2 (mu rho^2 - 1)
        w = np.sqrt(1.0 + 4.0 * mu * r * r)
        return 2.0 * mu * r * r / (w * (w + 1.0))  # (w - 1)/(2w) without cancellation

    def rho_of_r(self, r):
        self._check_r(r)
        r = np.asarray(r, dtype=float)
        mu = -self.lam
        return _scalar_or_array(np.sqrt((1.0 + np.sqrt(1.0 + 4.0 * mu * r * r)) / (2.0 * mu)))

    def r_of_rho(self, rho):
        self._check_rho(rho)
        rho = np.asarray(rho, dtype=float)
        return _scalar_or_array(rho * np.sqrt(-self.lam * rho * rho - 1.0))

    def mass_factor(self, rho):
        rho = np.asarray(rho, dtype=float)
        return _scalar_or_array(-self.lam * rho * rho - 1.0)

    def dmass_factor(self, rho):
        return _scalar_or_array(-2.0 * self.lam * np.asarray(rho, dtype=float))


class IdentityMap(CoordinateMap):
    """Euclidean chart, ``r = rho``."""

    def __init__(self):
        super().__init__(None)

    @property
    def r_domain(self):
        return (0.0, math.inf)

    def h(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def rho_of_r(self, r):
        return _scalar_or_array(np.asarray(r, dtype=float))

    def r_of_rho(self, rho):
        return _scalar_or_array(np.asarray(rho, dtype=float))

    def mass_factor(self, rho):
        return _scalar_or_array(np.ones_like(np.asarray(rho, dtype=float)))

    def dmass_factor(self, rho):
        return _scalar_or_array(np.zeros_like(np.asarray(rho, dtype=float)))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_PANEL_TOL = 2e-16
_MAX_DEPTH = 40
H_FLOOR = 1e-5
NEAR_DOUBLE_ROOT = 1e-8
R_EDGE_MAX = 1e12


class _Region:
    """Piece of the r-domain in a variable ``x`` where ``h(t)/t dt`` is smooth.

    ``t = lo + x^2`` near a finite lower edge, ``t = hi - x^2`` (``x <= 0``)
    near a finite upper edge and ``t = e^x`` elsewhere.
    """

    def __init__(self, kind, edge, x0, x1, expansion=None):
        self.kind, self.edge, self.x0, self.x1 = kind, edge, x0, x1
        self.expansion = expansion  # (P1, q2) of disc about a root at the edge
        self.a_edge = None

    def t(self, x):
        if self.kind == "log":
            return np.exp(x)
        if self.kind == "lower":
            return self.edge + x * x
        return self.edge - x * x

    def dt(self, x):
        if self.kind == "log":
            return np.exp(x)
        return 2.0 * np.abs(x)

    def x(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "log":
            return np.log(t)
        if self.kind == "lower":
            return np.sqrt(np.maximum(t - self.edge, 0.0))
        return -np.sqrt(np.maximum(self.edge - t, 0.0))


class QuadratureMap(CoordinateMap):
    """Type II map from ``ln rho = int h(r)/r dr``.

    The integral is tabulated once on adaptively refined Gauss-Legendre
    panels; evaluation adds one panel fraction, inversion is Newton from an
    interpolated guess. Near finite domain edges ``h`` blows up like an
    inverse square root, which the substitution in :class:`_Region` removes.
    """

    kind = QUADRATURE

    def __init__(self, family):
        if family.kind != geo.TYPE_II:
            raise ValueError("quadrature maps are for Type II families")
        super().__init__(family)
        lo, hi = self.r_domain
        self.c = 2.0 * family.m / family.n if family.branch == geo.PLUS else 0.0
        self.r_ref = None if (lo == 0.0 and self.c > 0) else geo.default_anchor(self.profile)
        self._check_resolvable(lo, hi)
        self._build_table()
        self._offset = 0.0 if self.r_ref is None else -self._F(self.r_ref)
        self.rho_domain = (self._rho_at_lower_end(), self._rho_upper())

    def _check_resolvable(self, lo, hi):
        fam = self.family
        if math.isfinite(hi) and hi > R_EDGE_MAX:
            raise InvalidFamily(f"domain edge r={hi:.3g} is beyond the tabulation range {R_EDGE_MAX:g}")
        if fam.K < 0 < fam.D and -fam.K < NEAR_DOUBLE_ROOT * fam.D**2:
            # disc dips to ~|K|/D^2 at r = 1/sqrt(D): h spikes over a layer of that relative width
            raise InvalidFamily(f"near-double root of disc at r={1 / math.sqrt(fam.D):.6g} is too narrow to resolve")
        # inverting rho(r) amplifies rounding by ~1/h
        a = lo if lo > 0 else min(1e-3, 1e-3 * hi)
        b = hi if math.isfinite(hi) else max(1e3, 1e3 * a)
        t = np.geomspace(a, b, 66)[1:-1]
        with np.errstate(invalid="ignore"):
            peak = np.nanmax(np.abs(geo._h(fam, t)), initial=0.0)
        if peak < H_FLOOR:
            raise InvalidFamily(f"h stays below {H_FLOOR} on the domain; the map r -> rho is flat to rounding")

    # -- table ---------------------------------------------------------------------

    def _g(self, t):
        # integrand with the c/t singularity removed: ln rho = c ln t + int (h - c)/t
        return (geo._h(self.family, t) - self.c) / t

    def _integrand(self, reg, x):
        t = reg.t(x)
        if reg.expansion is None:
            return self._g(t) * reg.dt(x)
        # disc = delta (P1 + q2 delta) with delta = u - u_e = (t - e)(t + e) = -/+ x^2 (t + e):
        # h |x| stays finite and is evaluated without cancellation
        fam, e = self.family, reg.edge
        P1, q2 = reg.expansion
        sgn = -1.0 if reg.kind == "upper" else 1.0
        delta = sgn * x * x * (t + e)
        disc_over_x2 = sgn * (t + e) * (P1 + q2 * delta)
        s = geo._s_from(fam, reg.a_edge - fam.D * delta, x * x * disc_over_x2, t * t)
        with np.errstate(invalid="ignore"):
            h_abs_x = np.sqrt(2.0 * fam.m**2 * s / (fam.n**2 * disc_over_x2))
        return (2.0 * h_abs_x - self.c * reg.dt(x)) / t

    def _panel(self, reg, a, b):
        x = 0.5 * (b - a) * _GL_X + 0.5 * (b + a)
        return 0.5 * (b - a) * float(np.dot(self._integrand(reg, x), _GL_W))

    def _edge_expansion(self, edge):
        """``(e, (P1, q2))`` if ``edge`` is a root of disc, else ``(edge, None)``."""
        q2, q1 = geo.disc_coefficients(self.family)
        for u_e, P1 in geo.disc_root_slopes(self.family):
            if abs(math.sqrt(u_e) - edge) <= 1e-8 * edge:
                if abs(P1) <= 1e-12 * (abs(q1) + abs(q2 * u_e)):
                    P1 = 0.0  # double root
                return math.sqrt(u_e), (P1, q2)
        return edge, None

    def _refine(self, reg):
        xs, stack = [], [(reg.x0, reg.x1, self._panel(reg, reg.x0, reg.x1), 0)]
        ints = []
        while stack:
            a, b, whole, depth = stack.pop()
            m = 0.5 * (a + b)
            left, right = self._panel(reg, a, m), self._panel(reg, m, b)
            if not np.isfinite(whole + left + right):
                raise QuadratureError(f"non-finite map integrand on [{reg.t(a)}, {reg.t(b)}]")
            if abs(left + right - whole) <= _PANEL_TOL * max(1.0, abs(whole)) or depth >= _MAX_DEPTH:
                if depth >= _MAX_DEPTH:
                    raise QuadratureError(f"map panels did not converge near r={reg.t(a)}")
                xs.append(a)
                ints.append(left + right)
            else:
                stack.append((m, b, right, depth + 1))
                stack.append((a, m, left, depth + 1))
        xs.append(reg.x1)
        return np.array(xs), np.concatenate([[0.0], np.cumsum(ints)])

    def _build_table(self):
        lo, hi = self.r_domain
        self._t_min = 1e-9 * min(1.0, hi) if lo == 0.0 else lo
        self._t_max = hi if math.isfinite(hi) else 1e9 * max(1.0, lo)
        w = 0.25 * (min(hi, lo + max(lo, 1.0)) - lo) if lo > 0 else 0.0
        a = lo + w if lo > 0 else self._t_min
        b = hi - 0.25 * (hi - a) if math.isfinite(hi) else self._t_max
        regions = []
        if lo > 0:
            e, ex = self._edge_expansion(lo)
            regions.append(_Region("lower", e, 0.0, math.sqrt(a - e), ex))
        regions.append(_Region("log", None, math.log(a), math.log(b)))
        if math.isfinite(hi):
            e, ex = self._edge_expansion(hi)
            regions.append(_Region("upper", e, -math.sqrt(e - b), 0.0, ex))
        for reg in regions:
            if reg.expansion is not None:
                a_e = 1.0 - self.family.D * reg.edge**2
                # a double root of disc sits on a zero of a
                reg.a_edge = 0.0 if reg.expansion[0] == 0.0 or abs(a_e) <= 1e-13 else a_e
        if math.isfinite(hi):
            self._t_max = regions[-1].edge
        base = 0.0
        if lo == 0.0:
            # (h - c)/t = O(t) at the origin, so the missing piece is tiny
            base = 0.5 * float(self._g(self._t_min)) * self._t_min
        self._regions = []
        for reg in regions:
            xs, F = self._refine(reg)
            self._regions.append((reg, xs, base + F))
            base += F[-1]
        # monotone (t, ln rho) nodes for the initial guess of the inverse
        ts = np.concatenate([reg.t(xs) for reg, xs, _ in self._regions])
        Fs = np.concatenate([F for _, _, F in self._regions])
        keep = np.concatenate([[True], np.diff(ts) > 0])
        self._nodes_t = ts[keep]
        self._nodes_L = self.c * np.log(ts[keep]) + Fs[keep]
        # dense monotone samples for the Newton starting point
        dense = []
        for reg, xs, _ in self._regions:
            for u, v in zip(xs[:-1], xs[1:]):
                dense.append(reg.t(np.linspace(u, v, 9)[:-1]))
        dense.append([self._nodes_t[-1]])
        td = np.unique(np.concatenate(dense))
        td = td[td > 0]
        Ld = self.c * np.log(td) + self._F(td)
        keep = np.concatenate([[True], np.diff(Ld) > 0])
        self._guess = interpolate.PchipInterpolator(Ld[keep], np.log(td[keep]), extrapolate=False)
        self._memo = {}

    def _F(self, t):
        """``int_0^t (h - c)/s ds`` (``c = 0``: from the lower edge), elementwise."""
        t = np.asarray(t, dtype=float)
        if math.isfinite(self.r_domain[1]):
            t = np.minimum(t, self._t_max)  # exp(log r) may overshoot the edge by an ulp
        out = np.empty_like(t)
        low, high = t < self._t_min, t > self._t_max
        out[low] = 0.5 * self._g(t[low]) * t[low]
        for i in np.flatnonzero(high):
            out.flat[i] = self._regions[-1][2][-1] + self._tail(self._t_max, float(t.flat[i]))
        todo = ~(low | high)
        for k, (reg, xs, F) in enumerate(self._regions):
            last = k == len(self._regions) - 1
            here = todo & ((t <= reg.t(reg.x1)) | last)
            if not here.any():
                continue
            todo &= ~here
            x = reg.x(t[here])
            j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
            xj = xs[j]
            half = 0.5 * (x - xj)
            nodes = half[:, None] * _GL_X + (0.5 * (x + xj))[:, None]
            out[here] = F[j] + half * (self._integrand(reg, nodes) @ _GL_W)
        return out

    def _tail(self, a, b):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(lambda t: float(self._g(t)), a, b, epsabs=1e-14, epsrel=1e-13, limit=400)
        if not math.isfinite(val) or err > 1e-11:
            raise QuadratureError(f"map quadrature error {err:.3g} on [{a}, {b}]")
        return val

    # -- public ----------------------------------------------------------------------

    def log_rho(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, -np.inf if self.c > 0 else self._offset)  # value at r = 0
        pos = r > 0
        out[pos] = self.c * np.log(r[pos]) + self._F(r[pos]) + self._offset
        return _scalar_or_array(out)

    def _rho_at_lower_end(self):
        return 0.0 if self.r_ref is None else math.exp(self.log_rho(self.r_domain[0]))

    def _rho_upper(self):
        fam = self.family
        hi = self.r_domain[1]
        if math.isfinite(hi):
            return math.exp(self.log_rho(hi))
        if abs(fam.K - fam.D * fam.D) <= 1e-14 * max(1.0, fam.D * fam.D):
            return math.inf  # h tends to a constant, so ln rho grows like ln r
        # h ~ 1/r: rho converges
        return math.exp(self.log_rho(self._t_max) + self._tail(self._t_max, math.inf))

    def rho_of_r(self, r):
        self._check_r(r)
        return _scalar_or_array(np.exp(self.log_rho(r)))

    def r_of_rho(self, rho):
        self._check_rho(rho)
        rho = np.asarray(rho, dtype=float)
        # M, dM, V and dV of one state all invert the same rho
        key = rho.tobytes() + bytes(str(rho.shape), "ascii")
        hit = self._memo.get(key)
        if hit is None:
            hit = self._invert(np.log(rho).ravel()).reshape(rho.shape)
            if len(self._memo) >= 16:
                self._memo.pop(next(iter(self._memo)))
            self._memo[key] = hit
        return _scalar_or_array(hit.copy())

    def _invert(self, target):
        """Solve ``log_rho(r) = target`` elementwise by safeguarded Newton in ``y = ln r``."""
        T, Lr = self._nodes_t, self._nodes_L + self._offset
        lo, hi = self.r_domain
        out = np.full(target.shape, np.nan)
        # below the table on a c > 0 map: rho = e^offset r^c to double precision
        tiny = target <= Lr[0]
        if lo == 0.0 and self.c > 0:
            out[tiny] = np.exp((target[tiny] - self._offset) / self.c)
            tiny[:] = False
        above = target >= Lr[-1]
        if math.isfinite(hi):
            out[above] = min(hi, T[-1])
            above[:] = False
        j = np.clip(np.searchsorted(Lr, target) - 1, 0, len(T) - 2)
        a, b = T[j].copy(), T[j + 1].copy()
        a[tiny], b[tiny] = max(lo, T[0] * 1e-300), T[0]
        for i in np.flatnonzero(above):
            # beyond the table on an unbounded domain
            aa = T[-1]
            while self.log_rho(2.0 * aa) < target[i]:
                aa *= 2.0
            a[i], b[i] = aa, 2.0 * aa
        todo = np.isnan(out)
        ya, yb, tg = np.log(a[todo]), np.log(b[todo]), target[todo]
        fa = self.log_rho(np.exp(ya)) - tg
        fb = self.log_rho(np.exp(yb)) - tg
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.where(fb != fa, ya - fa * (yb - ya) / (fb - fa), 0.5 * (ya + yb))
        guess = self._guess(tg - self._offset)
        y = np.where(np.isfinite(guess), guess, y)
        y = np.where(np.isfinite(y) & (ya < y) & (y < yb), y, 0.5 * (ya + yb))
        result = np.full(y.shape, np.nan)
        active = np.ones(y.shape, dtype=bool)
        for _ in range(100):
            r = np.exp(y[active])
            f = self.log_rho(r) - tg[active]
            yb[active] = np.where(f > 0, y[active], yb[active])
            ya[active] = np.where(f <= 0, y[active], ya[active])
            with np.errstate(invalid="ignore", divide="ignore"):
                y_new = y[active] - f / geo._h(self.family, r)
            bad = ~((ya[active] < y_new) & (y_new < yb[active]))
            y_new[bad] = 0.5 * (ya[active][bad] + yb[active][bad])
            scale = np.maximum(1.0, np.abs(y[active]))
            done = (f == 0) | (np.abs(y_new - y[active]) <= 2e-16 * scale) \
                | (yb[active] - ya[active] <= 4e-16 * scale)
            y_new = np.where(f == 0, y[active], y_new)
            idx = np.flatnonzero(active)
            result[idx[done]] = np.exp(y_new[done])
            y[idx] = y_new
            active[idx[done]] = False
            if not active.any():
                out[todo] = np.clip(result, lo, hi)
                return out
        raise QuadratureError("map inversion did not converge")


@functools.lru_cache(maxsize=64)
def _quadrature_map(family):
    return QuadratureMap(family)


# -- named map operations ----------------------------------------------------

def typeI_rho_of_r(family: geo.BertrandFamily, r):
    return PowerMap(family).rho_of_r(r)


def typeI_r_of_rho(family: geo.BertrandFamily, rho):
    return PowerMap(family).r_of_rho(rho)


def typeII_rho_of_r(family: geo.BertrandFamily, r):
    return _quadrature_map(family).rho_of_r(r)


def typeII_r_of_rho(family: geo.BertrandFamily, rho):
    return _quadrature_map(family).r_of_rho(rho)


def coordinate_map(family: geo.BertrandFamily) -> CoordinateMap:
    """Closed-form map for Type I, quadrature map for Type II."""
    if family.kind == geo.TYPE_I:
        return PowerMap(family)
    return _quadrature_map(family)


def _deriv5(f, x, step):
    return (f(x - 2 * step) - 8 * f(x - step) + 8 * f(x + step) - f(x + 2 * step)) / (12 * step)


def check_relations(cmap: CoordinateMap, r: float):
    """Residuals of ``r = rho f``, ``f drho/dr = h`` and ``rho'/rho = h/r``.

    ``f`` is taken as ``r_of_rho(rho)/rho``, so the first residual is the
    inverse-pair error. Each residual is divided by ``max(1, |exact side|)``:
    relative for steep maps, absolute where ``h`` is tiny and a stencil
    cannot resolve it relatively. Derivatives use a five-point stencil.
    """
    lo, hi = cmap.r_domain
    step = 1e-3 * r
    if math.isfinite(hi):
        step = min(step, 0.01 * (hi - r))
    step = min(step, 0.01 * (r - lo)) if lo > 0 else step
    rho = cmap.rho_of_r(r)
    f = cmap.r_of_rho(rho) / rho
    drho = _deriv5(lambda x: cmap.rho_of_r(x), r, step)
    dlog = _deriv5(lambda x: math.log(cmap.rho_of_r(x)), r, step)
    h = float(cmap.h(r))
    return (abs(r - rho * f) / max(1.0, r), abs(f * drho - h) / max(1.0, h),
            abs(dlog - h / r) / max(1.0, h / r))


# -- mass function and PDM system -------------------------------------------

@dataclass(frozen=True)
class MassFunction:
    map: CoordinateMap
    m0: float = 1.0

    def __post_init__(self):
        if not self.m0 > 0:
            raise ValueError("m0 must be positive")

    def __call__(self, rho):
        return _scalar_or_array(self.m0 * np.asarray(self.map.mass_factor(rho)))

    def derivative(self, rho):
        return _scalar_or_array(self.m0 * np.asarray(self.map.dmass_factor(rho)))


@dataclass(frozen=True)
class RadialChart:
    """The system seen in the Bertrand radius: ``h(r)``, ``V(r)``, ``V'(r)``."""

    h: Callable
    V: Callable
    dV: Callable
    domain: tuple
    rho_of_r: Callable
    r_of_rho: Callable


def _fd2(f, x):
    x = np.asarray(x, dtype=float)
    step = 1e-5 * np.maximum(np.abs(x), 1e-8)
    return (f(x + step) - f(x - step)) / (2.0 * step)


@dataclass(frozen=True, eq=False)
class PDMSystem:
    """``H = p^2 / (2 M(|q|)) + V(|q|)`` in ``dimension`` Cartesian degrees of freedom.

    ``potential_rho`` and ``dpotential_rho`` take ``rho`` arrays. Second
    derivatives are optional and only feed the Newton matrix of the
    implicit integrators; central differences are used when absent.
    """

    mass: MassFunction
    potential_rho: Callable
    dpotential_rho: Callable
    dimension: int
    params: dict = field(default_factory=dict)
    name: str = "pdm"
    chart: RadialChart | None = None
    apsidal_ratio: float | None = None
    euclidean: bool = False
    d2mass_rho: Callable | None = None
    d2potential_rho: Callable | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    @property
    def rho_domain(self):
        return self.mass.map.rho_domain

    def in_domain(self, rho):
        lo, hi = self.rho_domain
        rho = np.asarray(rho)
        return (rho > lo) & (rho < hi)

    def M(self, rho):
        return self.mass(rho)

    def dM(self, rho):
        return self.mass.derivative(rho)

    def d2M(self, rho):
        if self.d2mass_rho is not None:
            return self.d2mass_rho(rho)
        return _fd2(self.mass.derivative, rho)

    def V(self, rho):
        return self.potential_rho(rho)

    def dV(self, rho):
        return self.dpotential_rho(rho)

    def d2V(self, rho):
        if self.d2potential_rho is not None:
            return self.d2potential_rho(rho)
        return _fd2(self.dpotential_rho, rho)

    def energy(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        rho = np.linalg.norm(q, axis=-1)
        return np.sum(p * p, axis=-1) / (2.0 * self.M(rho)) + self.V(rho)


def mass_of_rho(system: PDMSystem, rho):
    lo, hi = system.rho_domain
    if np.any(~system.in_domain(rho)):
        raise DomainError(f"rho={rho} outside ({lo}, {hi})")
    return system.M(rho)


def pdm_hamiltonian(system: PDMSystem, q, p):
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape[-1] != system.dimension or p.shape != q.shape:
        raise ValueError(f"q and p must have trailing dimension {system.dimension}")
    rho = np.linalg.norm(q, axis=-1)
    if np.any(~system.in_domain(rho)):
        raise DomainError(f"|q|={rho} outside {system.rho_domain}")
    return _scalar_or_array(system.energy(q, p))


# -- presets -----------------------------------------------------------------

def _type_i_chart(family, cmap, A1):
    K = family.K

    def V(r):
        return A1 * np.sqrt(np.asarray(r, dtype=float) ** -2 + K)

    def dV(r):
        r = np.asarray(r, dtype=float)
        return -A1 * r**-3 / np.sqrt(r**-2 + K)

    return RadialChart(cmap.h, V, dV, cmap.r_domain, cmap.rho_of_r, cmap.r_of_rho)


def _type_ii_chart(family, cmap, A2, h=None):
    h = cmap.h if h is None else h

    def V(r):
        u = geo._green_closed(family, r)
        return A2 / (u * u)

    def dV(r):
        r = np.asarray(r, dtype=float)
        u = geo._green_closed(family, r)
        return -2.0 * A2 * h(r) / (r * r * u**3)

    return RadialChart(h, V, dV, cmap.r_domain, cmap.rho_of_r, cmap.r_of_rho)


def type_i_system(family: geo.BertrandFamily, A1: float = -1.0, N: int = 3, m0: float = 1.0) -> PDMSystem:
    """Bertrand-Kepler PDM system; ``A1 < 0`` is attractive.

    ``V = A1 sqrt(K + r^-2) = A1 (rho^-b + K rho^b) / 2`` with ``b = n/m``.
    """
    if family.kind != geo.TYPE_I:
        raise ValueError("type_i_system needs a Type I family")
    cmap = PowerMap(family)
    b, K = family.beta, family.K

    def V(rho):
        rho = np.asarray(rho, dtype=float)
        return A1 * (rho**-b + K * rho**b) / 2.0

    def dV(rho):
        rho = np.asarray(rho, dtype=float)
        return A1 * (-b * rho ** (-b - 1.0) + K * b * rho ** (b - 1.0)) / 2.0

    def d2V(rho):
        rho = np.asarray(rho, dtype=float)
        return A1 * (b * (b + 1.0) * rho ** (-b - 2.0) + K * b * (b - 1.0) * rho ** (b - 2.0)) / 2.0

    return PDMSystem(
        MassFunction(cmap, m0), V, dV, N,
        params={"type": "I", "n": family.n, "m": family.m, "K": K, "A1": A1},
        name=family.label or "type-I",
        chart=_type_i_chart(family, cmap, A1),
        apsidal_ratio=family.apsidal_ratio,
        d2potential_rho=d2V,
    )


def curved_kepler_system(kappa: float, A1: float = -1.0, N: int = 3) -> PDMSystem:
    """Kepler system on constant curvature in Poincare coordinates, ``M = 4/(1 + kappa rho^2)^2``."""
    system = type_i_system(geo.BertrandFamily.curved_kepler(kappa), A1, N)
    return _renamed(system, "curved-kepler", {"kappa": kappa, "A1": A1})


def type_ii_system(family: geo.BertrandFamily, A2: float = 0.5, N: int = 3, m0: float = 1.0) -> PDMSystem:
    """Bertrand-oscillator PDM system with ``V = A2 u(r)^-2`` on a quadrature map."""
    if family.kind != geo.TYPE_II:
        raise ValueError("type_ii_system needs a Type II family")
    cmap = _quadrature_map(family)
    chart = _type_ii_chart(family, cmap, A2)

    def V(rho):
        return chart.V(cmap.r_of_rho(rho))

    def dV(rho):
        rho = np.asarray(rho, dtype=float)
        r = np.asarray(cmap.r_of_rho(rho))
        return chart.dV(r) * r / (rho * cmap.h(r))

    return PDMSystem(
        MassFunction(cmap, m0), V, dV, N,
        params={"type": "II", "n": family.n, "m": family.m, "K": family.K, "D": family.D,
                "branch": family.branch, "A2": A2},
        name=family.label or "type-II",
        chart=chart,
        apsidal_ratio=family.apsidal_ratio,
    )


def curved_oscillator_system(kappa: float, A2: float = 0.5, N: int = 3) -> PDMSystem:
    """Oscillator on constant curvature in Poincare coordinates.

    ``H = (1 + kappa q^2)^2 p^2 / 8 + A2 2 q^2 / (1 - kappa q^2)^2``.
    """
    family = geo.BertrandFamily.curved_oscillator(kappa)
    cmap = PowerMap(family, beta=1.0, K=-kappa)
    if kappa != 0:
        cmap.rho_domain = (0.0, 1.0 / math.sqrt(abs(kappa)))

    def V(rho):
        rho = np.asarray(rho, dtype=float)
        return 2.0 * A2 * rho * rho / (1.0 - kappa * rho * rho) ** 2

    def dV(rho):
        rho = np.asarray(rho, dtype=float)
        return 4.0 * A2 * rho * (1.0 + kappa * rho * rho) / (1.0 - kappa * rho * rho) ** 3

    def chart_V(r):
        r = np.asarray(r, dtype=float)
        return 0.5 * A2 * r * r / (1.0 - kappa * r * r)

    def chart_dV(r):
        r = np.asarray(r, dtype=float)
        return A2 * r / (1.0 - kappa * r * r) ** 2

    chart = RadialChart(cmap.h, chart_V, chart_dV, cmap.r_domain, cmap.rho_of_r, cmap.r_of_rho)
    return PDMSystem(
        MassFunction(cmap), V, dV, N,
        params={"kappa": kappa, "A2": A2},
        name="curved-oscillator",
        chart=chart,
        apsidal_ratio=0.5,
    )


def darboux_system(lam: float, omega: float = 1.0, N: int = 3) -> PDMSystem:
    """Darboux III oscillator ``H = (p^2 + omega^2 q^2) / (2 (1 + lam q^2))``.

    For ``lam < 0`` this is the interior system on the ball ``|q| < 1/sqrt|lam|``.
    """
    cmap = DarbouxMap(lam)
    w2 = omega * omega

    def V(rho):
        rho = np.asarray(rho, dtype=float)
        return w2 * rho * rho / (2.0 * (1.0 + lam * rho * rho))

    def dV(rho):
        rho = np.asarray(rho, dtype=float)
        return w2 * rho / (1.0 + lam * rho * rho) ** 2

    def d2V(rho):
        rho = np.asarray(rho, dtype=float)
        return w2 * (1.0 - 3.0 * lam * rho * rho) / (1.0 + lam * rho * rho) ** 3

    def d2M(rho):
        return np.full_like(np.asarray(rho, dtype=float), 2.0 * lam)

    chart = _type_ii_chart(cmap.family, cmap, 0.5 * w2, h=cmap.h)
    return PDMSystem(
        MassFunction(cmap), V, dV, N,
        params={"lambda": lam, "omega": omega},
        name="darboux",
        chart=chart,
        apsidal_ratio=0.5,
        euclidean=(lam == 0),
        d2mass_rho=d2M,
        d2potential_rho=d2V,
    )


def darboux_exterior_system(lam: float, omega: float = 1.0, N: int = 3) -> PDMSystem:
    """Exterior Darboux regime with the metric and Hamiltonian sign reversed.

    ``M = |lam| q^2 - 1``, ``V = omega^2 q^2 / (2 (|lam| q^2 - 1))`` on ``|q| > 1/sqrt|lam|``.
    """
    cmap = DarbouxExteriorMap(lam)
    mu = -lam
    w2 = omega * omega

    def V(rho):
        rho = np.asarray(rho, dtype=float)
        return w2 * rho * rho / (2.0 * (mu * rho * rho - 1.0))

    def dV(rho):
        rho = np.asarray(rho, dtype=float)
        return -w2 * rho / (mu * rho * rho - 1.0) ** 2

    return PDMSystem(
        MassFunction(cmap), V, dV, N,
        params={"lambda": lam, "omega": omega, "regime": "exterior"},
        name="darboux-exterior",
        d2mass_rho=lambda rho: np.full_like(np.asarray(rho, dtype=float), 2.0 * mu),
    )


def euclidean_system(V, dV, N=3, name="euclidean", d2V=None, apsidal_ratio=None, params=None):
    """Unit-mass radial system ``p^2/2 + V(|q|)``; the r-chart is the identity."""
    cmap = IdentityMap()
    chart = RadialChart(cmap.h, V, dV, cmap.r_domain, cmap.rho_of_r, cmap.r_of_rho)
    return PDMSystem(
        MassFunction(cmap), V, dV, N,
        params=dict(params or {}), name=name, chart=chart,
        apsidal_ratio=apsidal_ratio, euclidean=True,
        d2mass_rho=lambda rho: np.zeros_like(np.asarray(rho, dtype=float)),
        d2potential_rho=d2V,
    )


def flat_kepler_system(k: float = 1.0, N: int = 3) -> PDMSystem:
    """``p^2/2 - k/|q|``."""
    return euclidean_system(
        lambda r: -k / np.asarray(r, dtype=float),
        lambda r: k / np.asarray(r, dtype=float) ** 2,
        N, "flat-kepler",
        d2V=lambda r: -2.0 * k / np.asarray(r, dtype=float) ** 3,
        apsidal_ratio=1.0, params={"k": k},
    )


def flat_oscillator_system(omega: float = 1.0, N: int = 3) -> PDMSystem:
    w2 = omega * omega
    return euclidean_system(
        lambda r: 0.5 * w2 * np.asarray(r, dtype=float) ** 2,
        lambda r: w2 * np.asarray(r, dtype=float),
        N, "flat-oscillator",
        d2V=lambda r: np.full_like(np.asarray(r, dtype=float), w2),
        apsidal_ratio=0.5, params={"omega": omega},
    )


def _renamed(system, name, params):
    return PDMSystem(
        system.mass, system.potential_rho, system.dpotential_rho, system.dimension,
        params=params, name=name, chart=system.chart, apsidal_ratio=system.apsidal_ratio,
        euclidean=system.euclidean, d2mass_rho=system.d2mass_rho,
        d2potential_rho=system.d2potential_rho,
    )
