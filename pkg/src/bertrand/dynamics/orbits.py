"""Radial orbit analysis: circular orbits, turning points, periods, apsidal angles.

Two equivalent one-dimensional views of a central orbit with angular
momentum ``L`` are available. In the Bertrand radius (``chart="r"``)

    E = h(r)^2 rdot^2 / 2 + L^2 / (2 r^2) + V(r),

and in the conformal radius (``chart="rho"``)

    E = M rhodot^2 / 2 + L^2 / (2 M rho^2) + V(rho).

Both give ``dphi/dx = L sqrt(k(x)) / (s(x) sqrt(2 (E - U)))`` with kinetic
weight ``k`` (``h^2`` or ``M``) and areal factor ``s`` (``r^2`` or ``M rho^2``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.integrate import IntegrationWarning, quad

from ..errors import DegenerateOrbit, NoCircularOrbit, NoTurningPoints, QuadratureError
from ..pdm_map import PDMSystem
from .integrators import IntegratorConfig, gauss_step, integrate

QUAD_TOL = 1e-13
_EDGE = 1e-9


@dataclass(frozen=True)
class RadialView:
    chart: str
    lo: float
    hi: float
    L: float
    U: object
    dU: object
    k: object
    s: object
    to_rho: object


def radial_view(system: PDMSystem, L: float, chart: str = "r") -> RadialView:
    L = float(L)
    if chart == "r":
        c = system.chart
        if c is None:
            raise ValueError(f"{system.name} has no Bertrand-radius chart; use chart='rho'")
        lo, hi = c.domain
        return RadialView(
            "r", lo, hi, L,
            U=lambda r: L * L / (2.0 * r * r) + c.V(r),
            dU=lambda r: -L * L / r**3 + c.dV(r),
            k=lambda r: c.h(r) ** 2,
            s=lambda r: r * r,
            to_rho=c.rho_of_r,
        )
    if chart == "rho":
        lo, hi = system.rho_domain

        def U(x):
            return L * L / (2.0 * system.M(x) * x * x) + system.V(x)

        def dU(x):
            M, dM = system.M(x), system.dM(x)
            return -L * L * (dM * x * x + 2.0 * M * x) / (2.0 * (M * x * x) ** 2) + system.dV(x)

        return RadialView("rho", lo, hi, L, U, dU, k=system.M, s=lambda x: system.M(x) * x * x,
                          to_rho=lambda x: x)
    raise ValueError(f"unknown chart {chart!r}")


def _scan_grid(view, count=4001):
    lo = view.lo if view.lo > 0 else 1e-6
    hi = view.hi if math.isfinite(view.hi) else 1e6
    lo, hi = lo * (1 + _EDGE), hi * (1 - _EDGE)
    if lo <= 0:
        lo = 1e-6
    return np.geomspace(lo, hi, count)


@dataclass(frozen=True)
class CircularOrbit:
    r_c: float
    stable: bool
    rho_c: float
    chart: str = "r"


def circular_orbit(system: PDMSystem, L: float, chart: str = "r") -> CircularOrbit:
    """Root of ``U'(x) = 0`` by a logarithmic scan plus Brent; minima preferred."""
    if not L > 0:
        raise ValueError("L must be positive")
    if chart == "r" and system.chart is None:
        chart = "rho"
    view = radial_view(system, L, chart)
    x = _scan_grid(view)
    with np.errstate(all="ignore"):
        d = np.asarray(view.dU(x), dtype=float)
    roots = []
    for i in np.flatnonzero(np.isfinite(d[:-1]) & np.isfinite(d[1:]) & (np.sign(d[:-1]) != np.sign(d[1:]))):
        if d[i] == 0.0:
            xc = x[i]
        else:
            xc = optimize.brentq(lambda t: float(view.dU(t)), x[i], x[i + 1], xtol=1e-300, rtol=1e-15)
        roots.append((xc, bool(d[i] < 0 < d[i + 1] or (d[i] == 0 and d[i + 1] > 0))))
    if not roots:
        raise NoCircularOrbit(f"U'(x) has no root for L={L} in ({view.lo}, {view.hi})")
    stable = [r for r in roots if r[1]]
    xc, is_stable = (stable or roots)[0]
    return CircularOrbit(float(xc), is_stable, float(view.to_rho(xc)), chart)


def _second_derivative(view, x):
    step = 1e-4 * x
    return (view.dU(x + step) - view.dU(x - step)) / (2.0 * step)


def turning_points(system: PDMSystem, E: float, L: float, chart: str = "r"):
    """``(x_min, x_max)`` bracketing the bounded orbit through the stable circular radius."""
    if chart == "r" and system.chart is None:
        chart = "rho"
    view = radial_view(system, L, chart)
    xc = circular_orbit(system, L, chart).r_c
    Uc = float(view.U(xc))
    if E < Uc - 1e-12 * max(1.0, abs(Uc)):
        raise NoTurningPoints(f"E={E} below the effective-potential minimum {Uc}")
    if E <= Uc:
        return xc, xc

    def f(x):
        return E - float(view.U(x))

    grid = _scan_grid(view)
    inner = grid[grid < xc][::-1]
    outer = grid[grid > xc]
    a = _bracket_root(f, xc, inner)
    b = _bracket_root(f, xc, outer)
    if a is None or b is None:
        raise NoTurningPoints(f"orbit with E={E}, L={L} is not bounded inside the domain")
    return a, b


def _bracket_root(f, start, candidates):
    prev = start
    with np.errstate(all="ignore"):
        for x in candidates:
            try:
                fx = f(x)
            except (ValueError, ArithmeticError):
                return None
            if not math.isfinite(fx) or fx < 0:
                if not math.isfinite(fx):
                    # step toward the singular side until f is finite
                    lo, hi = prev, x
                    for _ in range(200):
                        mid = 0.5 * (lo + hi)
                        fm = f(mid)
                        if math.isfinite(fm) and fm < 0:
                            x = mid
                            break
                        if math.isfinite(fm):
                            lo = mid
                        else:
                            hi = mid
                    else:
                        return None
                a, b = (prev, x) if prev < x else (x, prev)
                return optimize.brentq(f, a, b, xtol=1e-300, rtol=1e-15, maxiter=500)
            prev = x
    return None


def _sin2_quad(func, a, b, theta0=0.0, theta1=math.pi / 2):
    """``int_a^b func(x) / sqrt(E - U)`` style integrals with ``x = a + (b-a) sin^2``."""
    w = b - a

    def g(th):
        sn, cs = math.sin(th), math.cos(th)
        return func(a + w * sn * sn, 2.0 * w * sn * cs)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, err = quad(g, theta0, theta1, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=500)
    if not math.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise QuadratureError(f"orbit quadrature error estimate {err:.3g}")
    return val


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def _panel_nodes(lo, hi, poles):
    """Gauss nodes and weights on panels kept at least two half-widths from every pole."""
    stack, done = [(lo, hi)], []
    while stack:
        l, h = stack.pop()
        c, half = 0.5 * (l + h), 0.5 * (h - l)
        if half <= 0.5 * min(abs(c - s) for s in poles) or half <= 1e-15 * abs(c):
            done.append((l, half))
        else:
            stack += [(l, c), (c, h)]
    if not done:
        return np.empty(0), np.empty(0)
    l, half = np.array(done).T
    x = (l + half)[:, None] + half[:, None] * _GL_X
    return x.ravel(), (half[:, None] * _GL_W).ravel()


def _gap_function(view, E, a, b):
    """``E - U(x)`` on ``[a, b]`` without cancellation for near-circular orbits.

    ``U(a) - U(x)`` and ``U(b) - U(x)`` are integrals of ``U'``; blending them
    linearly makes the result vanish exactly at both turning points.
    """
    w = b - a
    poles = [0.0] + ([view.lo] if view.lo > 0 else []) + ([view.hi] if math.isfinite(view.hi) else [])

    def integral(lo, hi):
        if hi <= lo:
            return 0.0
        x, wt = _panel_nodes(lo, hi, poles)
        return float(np.dot(wt, view.dU(x)))

    def gap(x):
        ga = -integral(a, x)
        gb = integral(x, b)
        return max(((b - x) * ga + (x - a) * gb) / w, 0.0)

    return gap


def apsidal_angle(system: PDMSystem, E: float, L: float, chart: str = "r") -> float:
    """Angle swept between pericenter and apocenter."""
    if chart == "r" and system.chart is None:
        chart = "rho"
    view = radial_view(system, L, chart)
    a, b = turning_points(system, E, L, chart)
    if b - a <= 1e-10 * b:
        return _circular_limit_angle(view, a)
    gap_of = _gap_function(view, E, a, b)

    def integrand(x, jac):
        gap = gap_of(x)
        if gap == 0.0:
            return _endpoint_value(view, E, x, a, b, L)
        return L * math.sqrt(float(view.k(x))) / (float(view.s(x)) * math.sqrt(2.0 * gap)) * jac

    return _sin2_quad(integrand, a, b)


def angle_from_pericenter(system: PDMSystem, E: float, L: float, x: float, chart: str = "rho",
                          p_x: float | None = None) -> float:
    """Unsigned angle swept from pericenter to radius ``x`` on the orbit ``(E, L)``.

    Within 1e-10 of a turning point, ``x`` no longer resolves the
    substitution angle; if the radial momentum ``p_x`` is supplied it is
    used there instead.
    """
    view = radial_view(system, L, chart)
    a, b = turning_points(system, E, L, chart)
    if b - a <= 1e-12 * b:
        raise DegenerateOrbit("circular orbit: no pericenter")
    w = b - a
    t = min(max((x - a) / w, 0.0), 1.0)
    theta_x = math.asin(math.sqrt(t))
    if p_x is not None and min(t, 1.0 - t) < 1e-10:
        # gap = (x-a)(b-x) Q with Q -> |U'| / (b-a) at the turning point
        end = a if t < 0.5 else b
        Q = abs(float(view.dU(end))) / w
        gap = p_x * p_x / (2.0 * float(view.k(x)))
        half = 0.5 * math.asin(min(2.0 * math.sqrt(gap / Q) / w, 1.0))
        theta_x = half if t < 0.5 else math.pi / 2 - half
    if theta_x == 0.0:
        return 0.0
    gap_of = _gap_function(view, E, a, b)

    def integrand(y, jac):
        gap = gap_of(y)
        if gap == 0.0:
            return _endpoint_value(view, E, y, a, b, L)
        return L * math.sqrt(float(view.k(y))) / (float(view.s(y)) * math.sqrt(2.0 * gap)) * jac

    return _sin2_quad(integrand, a, b, 0.0, theta_x)


def _endpoint_value(view, E, x, a, b, L):
    # sin^2 substitution limit at a turning point: jac / sqrt(gap) -> 2 sqrt((b-a)/|U'(x)|)
    dU = abs(float(view.dU(x)))
    if dU == 0.0:
        return 0.0
    return L * math.sqrt(float(view.k(x))) / float(view.s(x)) * 2.0 * math.sqrt((b - a) / (2.0 * dU))


def _circular_limit_angle(view, xc):
    # small oscillations: pi * angular rate / radial rate
    U2 = float(_second_derivative(view, xc))
    if U2 <= 0:
        raise DegenerateOrbit("circular orbit is not stable")
    return math.pi * view.L * math.sqrt(float(view.k(xc))) / (float(view.s(xc)) * math.sqrt(U2))


def radial_period(system: PDMSystem, E: float, L: float, chart: str = "rho") -> float:
    """Time from pericenter back to pericenter; the small-oscillation value for circular orbits."""
    if chart == "r" and system.chart is None:
        chart = "rho"
    view = radial_view(system, L, chart)
    a, b = turning_points(system, E, L, chart)
    if b - a <= 1e-10 * b:
        U2 = float(_second_derivative(view, a))
        return 2.0 * math.pi * math.sqrt(float(view.k(a)) / U2)
    gap_of = _gap_function(view, E, a, b)

    def integrand(x, jac):
        gap = gap_of(x)
        if gap == 0.0:
            dU = abs(float(view.dU(x)))
            return math.sqrt(float(view.k(x))) * 2.0 * math.sqrt((b - a) / (2.0 * dU))
        return math.sqrt(float(view.k(x)) / (2.0 * gap)) * jac

    return 2.0 * _sin2_quad(integrand, a, b)


def angular_momentum(q, p):
    """``|q ^ p|`` over the trailing axis."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    qq = np.sum(q * q, axis=-1)
    pp = np.sum(p * p, axis=-1)
    qp = np.sum(q * p, axis=-1)
    return np.sqrt(np.maximum(qq * pp - qp * qp, 0.0))


def energy_and_L(system, q, p):
    return float(system.energy(q, p)), float(angular_momentum(q, p))


def orbit_from_excitation(system: PDMSystem, L: float, excitation: float, chart: str = "r"):
    """``(E, L)`` of the orbit whose pericenter is ``(1 - excitation)`` times the circular radius."""
    if not 0 <= excitation < 1:
        raise ValueError("excitation must lie in [0, 1)")
    if chart == "r" and system.chart is None:
        chart = "rho"
    view = radial_view(system, L, chart)
    xc = circular_orbit(system, L, chart).r_c
    E = float(view.U(xc * (1.0 - excitation)))
    turning_points(system, E, L, chart)  # raises NoTurningPoints if unbounded
    return E, float(L)


def state_at_pericenter(system: PDMSystem, E: float, L: float, N: int | None = None):
    """Cartesian ``(q, p)`` at pericenter in the plane of the first two axes."""
    N = N or system.dimension
    rho_min, _ = turning_points(system, E, L, chart="rho")
    q = np.zeros(N)
    p = np.zeros(N)
    q[0] = rho_min
    p[1] = L / rho_min
    return q, p


# -- trajectory-measured apsidal angle ----------------------------------------------------

@dataclass
class MeasuredApsides:
    angles: list
    times: list
    mean: float
    spread: float
    stats: dict = field(default_factory=dict)


def _plane_angle(u, v):
    cross = math.sqrt(max(np.dot(u, u) * np.dot(v, v) - np.dot(u, v) ** 2, 0.0))
    return math.atan2(cross, float(np.dot(u, v)))


def measured_apsidal_angle(system: PDMSystem, q0, p0, half_periods: int = 6,
                           config: IntegratorConfig | None = None) -> MeasuredApsides:
    """Integrate and measure the swept angle between successive radial turning points.

    Turning points are sign changes of ``q . p`` refined by Brent's method
    over a partial Gauss step. The swept angle is accumulated sample by
    sample so that it may exceed ``pi``.
    """
    config = config or IntegratorConfig()
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    E, L = energy_and_L(system, q0, p0)
    T = radial_period(system, E, L, chart="rho")
    t_end = T * (half_periods + 1) / 2.0
    traj = integrate(system, (q0, p0), t_end, config)
    qp = np.sum(traj.q * traj.p, axis=1)
    events = []  # (time, q at event, index of the sample just before)
    if abs(qp[0]) < 1e-14 * max(1.0, np.linalg.norm(q0) * np.linalg.norm(p0)):
        events.append((0.0, traj.q[0], 0))
    stages = config.stages
    for k in np.flatnonzero(np.sign(qp[:-1]) * np.sign(qp[1:]) < 0):
        hk = traj.t[k + 1] - traj.t[k]

        def g(s, k=k):
            q, p = gauss_step(system, traj.q[k], traj.p[k], s, stages)
            return float(np.dot(q, p))

        s = optimize.brentq(g, 0.0, hk, xtol=1e-15 * max(1.0, traj.t[k]), rtol=1e-15)
        qe, _ = gauss_step(system, traj.q[k], traj.p[k], s, stages)
        events.append((traj.t[k] + s, qe, k))
    if len(events) < 2:
        raise DegenerateOrbit("fewer than two radial turning points were found")
    angles, times = [], []
    for (t0, qa, ka), (t1, qb, kb) in zip(events, events[1:]):
        if kb == ka:
            total = _plane_angle(qa, qb)
        else:
            total = _plane_angle(qa, traj.q[ka + 1])
            steps = traj.q[ka + 1:kb + 1]
            total += sum(_plane_angle(u, v) for u, v in zip(steps[:-1], steps[1:]))
            total += _plane_angle(traj.q[kb], qb)
        angles.append(total)
        times.append(t1 - t0)
    arr = np.asarray(angles)
    return MeasuredApsides(angles, times, float(arr.mean()), float(arr.max() - arr.min()), traj.stats)


# -- summary -------------------------------------------------------------------

@dataclass
class OrbitAnalysis:
    r_min: float
    r_max: float
    apsidal_angle: float
    radial_period: float
    drift: dict = field(default_factory=dict)
    expected: float | None = None

    def __post_init__(self):
        if self.r_min > self.r_max:
            raise ValueError("r_min > r_max")


def analyze_orbit(system: PDMSystem, E: float, L: float, chart: str = "r") -> OrbitAnalysis:
    if chart == "r" and system.chart is None:
        chart = "rho"
    a, b = turning_points(system, E, L, chart)
    expected = None if system.apsidal_ratio is None else math.pi * system.apsidal_ratio
    return OrbitAnalysis(a, b, apsidal_angle(system, E, L, chart), radial_period(system, E, L), {}, expected)


def random_bounded_states(system: PDMSystem, rng: np.random.Generator, count: int,
                          box: float = 1.0, momentum: float = 1.0, max_tries: int = 10000,
                          energy_cap: float | None = None):
    """Rejection sampler: uniform ``q`` in a box, Gaussian ``p``, bounded orbits only.

    States within 1e-3 of a domain edge or the origin, and nearly radial
    orbits, are rejected. ``energy_cap`` also rejects ``E >= energy_cap``;
    orbits grazing a continuum have very long periods and sharp pericentres.
    """
    N = system.dimension
    lo, hi = system.rho_domain
    qs, ps = [], []
    for _ in range(max_tries):
        q = rng.uniform(-box, box, N)
        p = rng.normal(0.0, momentum, N)
        rho = float(np.linalg.norm(q))
        if not (rho > max(lo, 0.0) + 1e-3 and rho < hi - 1e-3):
            continue
        L = float(angular_momentum(q, p))
        if L < 0.05 * rho * np.linalg.norm(p):
            continue
        try:
            E = float(system.energy(q, p))
            if energy_cap is not None and E >= energy_cap:
                continue
            turning_points(system, E, L, chart="rho")
        except (NoTurningPoints, NoCircularOrbit, ValueError):
            continue
        qs.append(q)
        ps.append(p)
        if len(qs) == count:
            return np.array(qs), np.array(ps)
    raise RuntimeError(f"only {len(qs)} of {count} bounded states found")
