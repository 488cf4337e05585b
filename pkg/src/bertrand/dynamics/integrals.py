"""Conserved quantities, Poisson brackets and functional independence.

Each integral is an :class:`Integral` carrying its value and analytic
gradient, both vectorized over leading axes of ``(q, p)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import DegenerateOrbit, DegeneratePoint, DomainError
from ..pdm_map import PDMSystem
from .integrators import _gradient
from .orbits import angle_from_pericenter, angular_momentum


@dataclass(frozen=True)
class Integral:
    name: str
    value: Callable   # (q, p) -> (...)
    grad: Callable    # (q, p) -> (dq, dp), each (..., N)

    def __call__(self, q, p):
        return self.value(np.asarray(q, dtype=float), np.asarray(p, dtype=float))


def _as_arrays(q, p):
    return np.asarray(q, dtype=float), np.asarray(p, dtype=float)


def _state(state, p):
    """Accept ``(PhaseState)``, ``((q, p))`` or ``(q, p)``."""
    if p is not None:
        return _as_arrays(state, p)
    if hasattr(state, "q"):
        return _as_arrays(state.q, state.p)
    q, p = state
    return _as_arrays(q, p)


# -- angular momentum ------------------------------------------------------------------

def _block(N, m, upper):
    if not 2 <= m <= N:
        raise IndexError(f"m={m} outside 2..{N}")
    return range(m) if upper else range(N - m, N)


def _angular_value(q, p, idx):
    idx = list(idx)
    qs, ps = q[..., idx], p[..., idx]
    Lmat = qs[..., :, None] * ps[..., None, :] - ps[..., :, None] * qs[..., None, :]
    return 0.5 * np.sum(Lmat * Lmat, axis=(-1, -2))


def angular_integrals(state, m: int, p=None):
    """``(C^(m), C_(m))``: squared angular momenta of the leading and trailing ``m`` axes."""
    q, p = _state(state, p)
    N = q.shape[-1]
    up = _angular_value(q, p, _block(N, m, True))
    low = _angular_value(q, p, _block(N, m, False))
    return up, low


def _angular_grad(q, p, idx):
    # d/dq_k sum_{i<j} L_ij^2 = 2 sum_j L_kj p_j, d/dp_k = -2 sum_j L_kj q_j  (restricted to block)
    idx = list(idx)
    dq = np.zeros(np.broadcast(q, p).shape)
    dp = np.zeros_like(dq)
    qs, ps = q[..., idx], p[..., idx]
    Lmat = qs[..., :, None] * ps[..., None, :] - ps[..., :, None] * qs[..., None, :]
    dq[..., idx] = 2.0 * np.einsum("...kj,...j->...k", Lmat, ps)
    dp[..., idx] = -2.0 * np.einsum("...kj,...j->...k", Lmat, qs)
    return dq, dp


def angular_integral(N: int, m: int, upper: bool = True) -> Integral:
    idx = _block(N, m, upper)
    name = f"C^({m})" if upper else f"C_({m})"
    return Integral(name, lambda q, p: _angular_value(q, p, idx), lambda q, p: _angular_grad(q, p, idx))


# -- Hamiltonian ----------------------------------------------------------------------

def hamiltonian_integral(system: PDMSystem) -> Integral:
    return Integral("H", lambda q, p: system.energy(q, p), lambda q, p: _gradient(system, q, p))


# -- Darboux (curved Fradkin) -------------------------------------------------------------

def _darboux_H(lam, omega, q, p):
    qq = np.sum(q * q, axis=-1)
    den = 1.0 + lam * qq
    if np.any(den <= 0):
        raise DomainError("1 + lam q^2 <= 0: outside the Darboux domain")
    return (np.sum(p * p, axis=-1) + omega * omega * qq) / (2.0 * den)


def fradkin_tensor(lam: float, omega: float, state, p=None):
    """``C_ij = p_i p_j - (2 lam H - omega^2) q_i q_j`` over the trailing axis."""
    q, p = _state(state, p)
    H = _darboux_H(lam, omega, q, p)
    k = 2.0 * lam * H - omega * omega
    return p[..., :, None] * p[..., None, :] - k[..., None, None] * (q[..., :, None] * q[..., None, :])


def _darboux_grad_H(lam, omega, q, p):
    den = 1.0 + lam * np.sum(q * q, axis=-1)
    H = _darboux_H(lam, omega, q, p)
    return ((omega * omega - 2.0 * lam * H) / den)[..., None] * q, p / den[..., None]


def fradkin_component(lam: float, omega: float, i: int, j: int) -> Integral:
    def value(q, p):
        H = _darboux_H(lam, omega, q, p)
        return p[..., i] * p[..., j] - (2.0 * lam * H - omega * omega) * q[..., i] * q[..., j]

    def grad(q, p):
        H = _darboux_H(lam, omega, q, p)
        k = 2.0 * lam * H - omega * omega
        Hq, Hp = _darboux_grad_H(lam, omega, q, p)
        qiqj = (q[..., i] * q[..., j])[..., None]
        dq = -2.0 * lam * Hq * qiqj
        dp = -2.0 * lam * Hp * qiqj
        dq[..., i] -= k * q[..., j]
        dq[..., j] -= k * q[..., i]
        dp[..., i] += p[..., j]
        dp[..., j] += p[..., i]
        return dq, dp

    return Integral(f"C_{i + 1}{j + 1}", value, grad)


def darboux_integrals(lam: float, omega: float, N: int) -> dict:
    """All named integrals of the Darboux III oscillator in ``N`` dimensions."""
    H = Integral("H", lambda q, p: _darboux_H(lam, omega, q, p),
                 lambda q, p: _darboux_grad_H(lam, omega, q, p))
    out = {"H": H}
    for m in range(2, N + 1):
        out[f"C^({m})"] = angular_integral(N, m, True)
        out[f"C_({m})"] = angular_integral(N, m, False)
    for i in range(N):
        for j in range(i, N):
            c = fradkin_component(lam, omega, i, j)
            out[c.name] = c
    return out


def involutive_sets(lam: float, omega: float, N: int) -> list:
    """The three families of mutually commuting integrals."""
    ints = darboux_integrals(lam, omega, N)
    upper = [ints["H"]] + [ints[f"C^({m})"] for m in range(2, N + 1)]
    lower = [ints["H"]] + [ints[f"C_({m})"] for m in range(2, N + 1)]
    diagonal = [ints[f"C_{i}{i}"] for i in range(1, N + 1)]
    return [upper, lower, diagonal]


def independence_set(lam: float, omega: float, N: int, i: int = 1) -> list:
    """``{H, C^(m), C_(m), C_ii}`` for ``m = 2..N``, expected rank ``2N - 1``."""
    ints = darboux_integrals(lam, omega, N)
    chosen = [ints["H"]]
    for m in range(2, N + 1):
        chosen.append(ints[f"C^({m})"])
        chosen.append(ints[f"C_({m})"])
    chosen.append(ints[f"C_{i}{i}"])
    return chosen


# -- brackets and rank ----------------------------------------------------------------------

def poisson_bracket(fa, fb, state, p=None):
    """``sum_i (da/dq_i db/dp_i - da/dp_i db/dq_i)``; ``fa``, ``fb`` are :class:`Integral` objects."""
    q, p = _state(state, p)
    aq, ap = fa.grad(q, p)
    bq, bp = fb.grad(q, p)
    return np.sum(aq * bp - ap * bq, axis=-1)


def independence_rank(integrals, state, p=None, rtol: float = 1e-9) -> int:
    """Numerical rank of the stacked phase-space gradients at one point."""
    if not integrals:
        raise ValueError("need at least one integral")
    q, p = _state(state, p)
    rows = []
    for f in integrals:
        dq, dp = f.grad(q, p)
        row = np.concatenate([dq, dp])
        if not np.any(row != 0):
            raise DegeneratePoint(f"gradient of {f.name} vanishes")
        rows.append(row)
    sv = np.linalg.svd(np.array(rows), compute_uv=False)
    return int(np.sum(sv > rtol * sv[0]))


# -- flat-space unit vectors ------------------------------------------------------------------

def runge_lenz(q, p, k: float = 1.0):
    """``p x (q x p) - k q/|q|`` in any dimension (the N=3 formula written with dot products)."""
    q, p = _as_arrays(q, p)
    qq = np.sum(q * q, axis=-1)[..., None]
    qp = np.sum(q * p, axis=-1)[..., None]
    pp = np.sum(p * p, axis=-1)[..., None]
    # p x (q x p) = q (p.p) - p (q.p)
    return q * pp - p * qp - k * q / np.sqrt(qq)


def pericenter_angle(system: PDMSystem, q, p) -> float:
    """Signed angle from the nearest pericenter, from radial quadrature of the state."""
    if not system.euclidean:
        raise ValueError("the unit vector field needs a Euclidean kinetic term")
    q, p = _as_arrays(q, p)
    r = float(np.linalg.norm(q))
    J = float(angular_momentum(q, p))
    if J <= 1e-14 * max(r * np.linalg.norm(p), 1e-300):
        raise DegenerateOrbit("J = 0: the angle from pericenter is undefined")
    E = float(system.energy(q, p))
    phi = angle_from_pericenter(system, E, J, r, chart="rho", p_x=float(np.dot(q, p)) / r)
    return phi if float(np.dot(q, p)) >= 0 else -phi


def fradkin_unit_vector(system: PDMSystem, state, p=None):
    """``a = cos(phi) q/r + sin(phi)/(r J) q x (q x p)``, ``phi`` measured from pericenter."""
    q, p = _state(state, p)
    r = float(np.linalg.norm(q))
    J = float(angular_momentum(q, p))
    phi = pericenter_angle(system, q, p)
    qxqxp = q * float(np.dot(q, p)) - p * r * r
    return math.cos(phi) / r * q + math.sin(phi) / (r * J) * qxqxp


# -- monitoring ----------------------------------------------------------------------------

def conserved_set(system: PDMSystem, q, p, darboux=None) -> dict:
    """Named conserved quantities along arrays of states.

    ``darboux=(lam, omega)`` adds the Fradkin components.
    """
    q, p = _as_arrays(q, p)
    N = q.shape[-1]
    out = {"H": np.asarray(system.energy(q, p), dtype=float)}
    for m in range(2, N + 1):
        up, low = angular_integrals(q, m, p)
        out[f"C^({m})"] = up
        out[f"C_({m})"] = low
    if darboux is not None:
        C = fradkin_tensor(darboux[0], darboux[1], q, p)
        for i in range(N):
            for j in range(i, N):
                out[f"C_{i + 1}{j + 1}"] = C[..., i, j]
    return out


def conservation_report(system: PDMSystem, trajectory, conserved=None, darboux=None) -> dict:
    """Max relative drift per quantity.

    Scalars are normalized by ``|value(0)|`` (absolute drift if that is zero).
    Tensor components ``C_ij`` share one scale, the largest ``|C_ij(0)|``, so
    a component that starts at zero is not blown up.
    """
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    if conserved is None:
        conserved = conserved_set(system, trajectory.q, trajectory.p, darboux)
    series = {k: np.asarray(v, dtype=float) for k, v in conserved.items()}
    tensor = [k for k in series if re.fullmatch(r"C_\d+", k)]
    tensor_scale = max((abs(series[k][0]) for k in tensor), default=0.0)
    report = {}
    for name, vals in series.items():
        ref = vals[0]
        scale = tensor_scale if name in tensor else abs(ref)
        report[name] = float(np.max(np.abs(vals - ref)) / (scale if scale > 0 else 1.0))
    return report


def darboux_params(system: PDMSystem):
    """``(lam, omega)`` if the system is an interior Darboux III oscillator, else ``None``."""
    if system.name == "darboux":
        return system.params["lambda"], system.params["omega"]
    return None
