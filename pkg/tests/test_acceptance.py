"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary."""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from bertrand import dynamics as dyn
from bertrand import geometry as geo
from bertrand import pdm_map as pm
from bertrand import quantum_spectrum as qs
from bertrand.errors import InvalidFamily

F = geo.BertrandFamily
SEED = 12345


def test_criterion_1_darboux_superintegrability(verdict):
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    for lam in (0.1, 0.5):
        s = pm.darboux_system(lam, 1.0, 3)
        # stay below 0.8 of the continuum bottom omega^2/(2 lam)
        q0, p0 = dyn.random_bounded_states(s, np.random.default_rng(SEED), 5, energy_cap=0.4 / lam)
        periods = [dyn.radial_period(s, float(s.energy(q, p)), float(dyn.angular_momentum(q, p)))
                   for q, p in zip(q0, p0)]
        trajs = dyn.integrate_batch(s, q0, p0, 100.0 * np.array(periods), dyn.IntegratorConfig(sample_every=64))
        for traj in trajs:
            rep = dyn.conservation_report(s, traj, darboux=(lam, 1.0))
            name = max(rep, key=rep.get)
            if rep[name] > worst:
                worst, worst_name = rep[name], f"{name} at lam={lam}"
    elapsed = time.perf_counter() - t0
    verdict["detail"] = f"max relative drift {worst:.2e} ({worst_name}), 10 trajectories x 100 periods, {elapsed:.0f}s"
    assert worst <= 1e-8
    assert elapsed <= 120.0


def test_criterion_2_involution_and_independence(verdict):
    t0 = time.perf_counter()
    N = 3
    worst, hits = 0.0, 0
    for lam in (0.1, 0.5):
        s = pm.darboux_system(lam, 1.0, N)
        qs_, ps_ = dyn.random_bounded_states(s, np.random.default_rng(SEED + 1), 100)
        for group in dyn.involutive_sets(lam, 1.0, N):
            for i, f in enumerate(group):
                for g in group[i + 1:]:
                    worst = max(worst, float(np.max(np.abs(dyn.poisson_bracket(f, g, qs_, ps_)))))
        chosen = dyn.independence_set(lam, 1.0, N)
        rank_hits = sum(dyn.independence_rank(chosen, q, p) == 2 * N - 1 for q, p in zip(qs_, ps_))
        hits = rank_hits if lam == 0.1 else min(hits, rank_hits)
    elapsed = time.perf_counter() - t0
    verdict["detail"] = f"max bracket {worst:.1e}, rank 5 at >= {hits}/100 points per lambda, {elapsed:.1f}s"
    assert worst <= 1e-10
    assert hits >= 90


def _closure_systems():
    out = []
    for n, m in ((1, 1), (2, 1), (1, 2)):
        for K in (-0.2, 0.0, 0.2):
            out.append((f"I({n},{m},K={K})", pm.type_i_system(F.type_i(n, m, K))))
    out.append(("flat oscillator", pm.type_ii_system(F.flat_oscillator())))
    for lam in (0.1, 0.5):
        out.append((f"Darboux lam={lam}", pm.darboux_system(lam)))
    return out


def test_criterion_3_orbit_closure(verdict):
    t0 = time.perf_counter()
    worst_q = worst_m = 0.0
    where_q = where_m = ""
    count = 0
    for label, s in _closure_systems():
        expected = math.pi * s.apsidal_ratio
        for exc in (0.01, 0.15, 0.3):
            E, L = dyn.orbit_from_excitation(s, 1.0, exc)
            dq = abs(dyn.apsidal_angle(s, E, L) - expected)
            q0, p0 = dyn.state_at_pericenter(s, E, L)
            dm = abs(dyn.measured_apsidal_angle(s, q0, p0, half_periods=4).mean - expected)
            if dq >= worst_q:
                worst_q, where_q = dq, f"{label} exc={exc}"
            if dm >= worst_m:
                worst_m, where_m = dm, f"{label} exc={exc}"
            count += 1
    elapsed = time.perf_counter() - t0
    verdict["detail"] = (f"{count} orbits; quadrature dev {worst_q:.1e} ({where_q}), "
                         f"measured dev {worst_m:.1e} ({where_m}), {elapsed:.0f}s")
    assert worst_q <= 1e-6
    assert worst_m <= 1e-4
    assert elapsed <= 300.0


def test_criterion_4_intrinsic_potentials(verdict):
    presets = {
        "Euclidean": F.euclidean_kepler(), "oscillator": F.flat_oscillator(),
        "Kepler k=+0.3": F.curved_kepler(0.3), "Kepler k=-0.3": F.curved_kepler(-0.3),
        "oscillator k=+0.3": F.curved_oscillator(0.3), "oscillator k=-0.3": F.curved_oscillator(-0.3),
        "Darboux lam=0.5": F.darboux(0.5), "Darboux lam=-0.2": F.darboux(-0.2),
    }
    res = {k: geo.verify_intrinsic_potential(f).max_residual for k, f in presets.items()}
    name = max(res, key=res.get)
    verdict["detail"] = f"max fit residual {res[name]:.1e} ({name}) over {len(res)} presets"
    assert res[name] <= 1e-9


def test_criterion_5_quantum_spectrum(verdict):
    t0 = time.perf_counter()
    worst, bad_deg, above = 0.0, [], []
    for N in (2, 3):
        for lam in (0.1, 0.5, 2.0):
            for omega in (0.5, 1.0):
                p = qs.QuantumParams(N, 1.0, lam, omega)
                res = qs.assemble_spectrum(p, 9, raise_on_mismatch=False)
                for lv in res.levels:
                    worst = max(worst, abs(lv.E_numeric - lv.E_analytic) / lv.E_analytic)
                    if lv.n <= 4 and lv.degeneracy_found != math.comb(lv.n + N - 1, N - 1):
                        bad_deg.append((N, lam, omega, lv.n))
                    if not lv.E_numeric < qs.continuum_bottom(p):
                        above.append((N, lam, omega, lv.n))
    E0 = qs.assemble_spectrum(qs.QuantumParams(3, 1.0, 0.5, 1.0), 0).levels[0].E_numeric
    elapsed = time.perf_counter() - t0
    verdict["detail"] = (f"12 parameter sets x 10 levels, max rel error {worst:.1e}, "
                         f"degeneracy misses {len(bad_deg)}, E0={E0:.10f}, {elapsed:.0f}s")
    assert worst <= 1e-6
    assert not bad_deg and not above
    assert abs(E0 - 0.75) <= 1e-6
    assert elapsed <= 180.0


def test_criterion_6_flat_limits(verdict):
    notes = []
    # flat Kepler: the unit vector field tracks the Runge-Lenz direction
    s = pm.flat_kepler_system(1.0)
    E, L = dyn.orbit_from_excitation(s, 1.0, 0.3, chart="rho")
    q0, p0 = dyn.state_at_pericenter(s, E, L)
    traj = dyn.integrate(s, (q0, p0), 5 * dyn.radial_period(s, E, L), dyn.IntegratorConfig(sample_every=16))
    A = dyn.runge_lenz(q0, p0)
    A /= np.linalg.norm(A)
    a_dev = max(float(np.max(np.abs(dyn.fradkin_unit_vector(s, q, p) - A))) for q, p in zip(traj.q, traj.p))
    notes.append(f"Kepler a-vector {a_dev:.1e}")
    # kappa -> 0: Runge-Lenz direction of the mass-4 Kepler problem
    s = pm.curved_kepler_system(1e-10)
    E, L = dyn.orbit_from_excitation(s, 1.0, 0.3, chart="rho")
    q0, p0 = dyn.state_at_pericenter(s, E, L)
    traj = dyn.integrate(s, (q0, p0), 5 * dyn.radial_period(s, E, L), dyn.IntegratorConfig(sample_every=16))
    # H = p^2/8 - 1/(2 rho): Runge-Lenz with m k = 4 * 1/2
    R = dyn.runge_lenz(traj.q, traj.p, 2.0)
    R /= np.linalg.norm(R, axis=1)[:, None]
    k_dev = float(np.max(np.abs(R - R[0])))
    notes.append(f"kappa->0 Runge-Lenz {k_dev:.1e}")
    # lambda -> 0: oscillator a (x) a and the flat Fradkin tensor
    s = pm.flat_oscillator_system(1.0)
    E, L = dyn.orbit_from_excitation(s, 1.0, 0.3, chart="rho")
    q0, p0 = dyn.state_at_pericenter(s, E, L)
    traj = dyn.integrate(s, (q0, p0), 2 * dyn.radial_period(s, E, L), dyn.IntegratorConfig(sample_every=16))
    a0 = dyn.fradkin_unit_vector(s, q0, p0)
    aa_dev = max(float(np.max(np.abs(np.outer(a, a) - np.outer(a0, a0))))
                 for a in (dyn.fradkin_unit_vector(s, q, p) for q, p in zip(traj.q[1:], traj.p[1:])))
    notes.append(f"oscillator a(x)a {aa_dev:.1e}")
    d = pm.darboux_system(1e-10)
    rng = np.random.default_rng(SEED)
    qq, pp = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    f_dev = float(np.max(np.abs(dyn.fradkin_tensor(1e-10, 1.0, qq, pp)
                                - (pp[:, :, None] * pp[:, None, :] + qq[:, :, None] * qq[:, None, :]))))
    h_dev = float(np.max(np.abs(d.energy(qq, pp) - pm.flat_oscillator_system(1.0).energy(qq, pp))))
    notes.append(f"Darboux lam=1e-10 vs flat: Fradkin {f_dev:.1e}, H {h_dev:.1e}")
    # spectrum
    sp_an = max(abs(qs.analytic_level(qs.QuantumParams(3, 1.0, 1e-10, 1.0), n) - (n + 1.5)) for n in range(11))
    flat = qs.assemble_spectrum(qs.QuantumParams(3, 1.0, 0.0, 1.0), 4)
    sp_num = max(abs(lv.E_numeric - (lv.n + 1.5)) for lv in flat.levels)
    notes.append(f"spectrum analytic {sp_an:.1e}, numeric lam=0 {sp_num:.1e}")
    verdict["detail"] = "; ".join(notes)
    assert max(a_dev, k_dev, aa_dev) <= 1e-8
    assert max(f_dev, h_dev) <= 1e-8
    assert max(sp_an, sp_num) <= 1e-6


def _interior(cmap, count=20):
    lo, hi = cmap.r_domain
    if math.isfinite(hi):
        return np.linspace(lo, hi, count + 2)[1:-1]
    return np.geomspace(max(lo * 1.01, 1e-2), max(lo, 1.0) * 30.0, count)


def _random_families(count, rng):
    out = []
    while len(out) < count:
        n, m = (int(x) for x in rng.integers(1, 5, 2))
        if math.gcd(n, m) != 1:
            continue
        K, D = (float(x) for x in rng.uniform(-0.4, 0.4, 2))
        try:
            if rng.random() < 0.5:
                fam = F.type_i(n, m, K)
            else:
                fam = F.type_ii(n, m, K, D, branch=int(rng.choice([1, -1])))
        except InvalidFamily:
            continue
        out.append(fam)
    return out


def test_criterion_7_coordinate_maps(verdict):
    maps = {
        "kepler": pm.PowerMap(F.euclidean_kepler()),
        "curved-kepler+": pm.PowerMap(F.curved_kepler(0.3)),
        "curved-kepler-": pm.PowerMap(F.curved_kepler(-0.3)),
        "curved-oscillator+": pm.QuadratureMap(F.curved_oscillator(0.3)),
        "curved-oscillator-": pm.QuadratureMap(F.curved_oscillator(-0.3)),
        "oscillator": pm.QuadratureMap(F.flat_oscillator()),
        "darboux": pm.DarbouxMap(0.5),
        "darboux-": pm.DarbouxMap(-0.2),
        "darboux-exterior": pm.DarbouxExteriorMap(-0.2),
        "flat": pm.IdentityMap(),
    }
    for i, fam in enumerate(_random_families(20, np.random.default_rng(SEED))):
        maps[f"random{i:02d} {fam.kind}({fam.n},{fam.m},K={fam.K:.3f},D={fam.D:.3f},{fam.branch:+d})"] = \
            pm.coordinate_map(fam)
    worst_rt = worst_d = 0.0
    where = ""
    for name, cmap in maps.items():
        for r in _interior(cmap):
            rt, d1, d2 = pm.check_relations(cmap, float(r))
            worst_rt = max(worst_rt, rt)
            if max(d1, d2) > worst_d:
                worst_d, where = max(d1, d2), name
    verdict["detail"] = (f"{len(maps)} maps x 20 radii: roundtrip {worst_rt:.1e}, "
                         f"derivative identities {worst_d:.1e} ({where})")
    assert worst_rt <= 1e-10
    assert worst_d <= 1e-7


@pytest.mark.parametrize("argv", [
    ["simulate", "--preset", "darboux", "--lambda", "0.5", "--periods", "3"],
    ["integrals", "--preset", "darboux", "--lambda", "0.1"],
    ["spectrum", "--lambda", "0.5", "--n-max", "2"],
])
def test_criterion_8_determinism(argv, verdict):
    cmd = [sys.executable, "-m", "bertrand", *argv, "--seed", "99"]
    runs = [subprocess.run(cmd, capture_output=True, check=False) for _ in range(2)]
    codes = [r.returncode for r in runs]
    same = runs[0].stdout == runs[1].stdout
    seed = json.loads(runs[0].stdout)["seed"] if codes[0] == 0 else None
    verdict["detail"] = f"`{' '.join(argv[:1])}` twice with --seed 99: exit {codes}, identical={same}, seed recorded={seed}"
    assert codes == [0, 0]
    assert same and seed == 99
