"""Acceptance gates for the package.

One test per release criterion, in order. Each prints a single
PASS/FAIL line with the measured numbers (visible under pytest -s) and
then asserts, so the plain pytest report carries the same verdicts.
Tolerances are fixed by the design targets; they are not tuned to fit.

The slow gates (3 and 10) run full 10^4-trajectory ensembles and
dominate the runtime; the whole file takes about six minutes on one
core.
"""

from __future__ import annotations

import math
import pathlib
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import i0, modstruve

from fuzzwatch.dynamics import AtomState, MeasurementConfig, evolve
from fuzzwatch.ensemble import (
    class_probabilities,
    mean_final_p2,
    regime_scan,
    run_ensemble,
)
from fuzzwatch.events import (
    EventParams,
    cross_check,
    deflection_factors,
    deflection_update,
    no_deflection_factors,
    no_deflection_update,
)
from fuzzwatch.io import load_setup
from fuzzwatch.readout import ReadoutClass, ReadoutProcess, sample_readout
from fuzzwatch.scattering import (
    born_ratio,
    derived_dipoles,
    differential_cross_section,
    scattered_flux,
    total_cross_section_approx,
    total_cross_section_exact,
)

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"


def report(name: str, ok: bool, detail: str):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def intermediate_run():
    # default config sits at fuzziness ratio 5/3, between the regimes
    return run_ensemble(MeasurementConfig(), n=10_000, master_seed=2026)


def test_01_pi_pulse_exact_without_monitoring():
    t0 = time.time()
    config = replace(MeasurementConfig(), kappa=0.0)
    result = run_ensemble(config, n=256, master_seed=9)
    wall = time.time() - t0
    p2_err = float(np.max(np.abs(result.final_p2 - 1.0)))
    w_err = float(np.max(np.abs(result.weights - 1.0)))
    report("01 pi-pulse exactness",
           p2_err <= 1e-9 and w_err <= 1e-9 and wall < 1.0,
           f"max |P2 - 1| = {p2_err:.3g}, max |w - 1| = {w_err:.3g}, "
           f"{wall:.2f} s")


def test_02_norms_never_increase():
    t0 = time.time()
    config = MeasurementConfig()
    process = ReadoutProcess.from_levels(config.e1, config.e2,
                                         config.pulse_duration)
    rng = np.random.default_rng(2)
    times = config.grid()
    worst = -math.inf
    for _ in range(1000):
        traj = evolve(config, sample_readout(process, times, rng))
        worst = max(worst, float(np.max(np.diff(traj.log_norms))))
    wall = time.time() - t0
    report("02 norm monotonicity",
           worst <= 1e-9 and wall < 30.0,
           f"largest per-step log-norm increase = {worst:.3g} "
           f"over 1000 readouts, {wall:.1f} s")


def test_03_regime_taxonomy():
    t0 = time.time()
    ratios = list(np.logspace(-1.0, 2.0, 5))
    rows = regime_scan(MeasurementConfig(), ratios, n=10_000, master_seed=0)
    wall = time.time() - t0
    means = [r["mean_final_p2"] for r in rows]
    ses = [r["se"] for r in rows]
    frozen = all(m + 3.0 * max(ses[i], ses[i + 1]) >= means[i]
                 for i, m in enumerate(means[1:]))
    ok = means[0] < 0.1 and means[-1] > 0.9 and frozen and wall < 600.0
    report("03 regime taxonomy", ok,
           f"P2(ratio 0.1) = {means[0]:.4f} < 0.1, "
           f"P2(ratio 100) = {means[-1]:.4f} > 0.9, "
           f"monotone within 3 SE = {frozen}, {wall:.0f} s")


def test_04_intermediate_class_pattern(intermediate_run):
    probs = class_probabilities(intermediate_run)
    p = {cls.value: pr for cls, (pr, _) in probs.items()}
    early = p["E11"] + p["E12"]
    late = p["E21"] + p["E22"]
    balance = p["E11"] / p["E12"]
    proc = intermediate_run.process
    ok = early > 0.85 and late < 0.15 and 0.2 <= balance <= 5.0
    report("04 intermediate-regime pattern", ok,
           f"P(E11)+P(E12) = {early:.3f}, P(E21)+P(E22) = {late:.3f}, "
           f"P(E11)/P(E12) = {balance:.2f}; prior mean {proc.mean:g}, "
           f"stddev {proc.stddev:g}, tau {proc.correlation_time:g}, "
           f"bounds {proc.bounds[0]:g}..{proc.bounds[1]:g}")


def test_05_readout_is_reliable(intermediate_run):
    up, _ = mean_final_p2(intermediate_run, ReadoutClass.E12)
    stay, _ = mean_final_p2(intermediate_run, ReadoutClass.E11)
    gap = up - stay
    report("05 readout reliability", gap >= 0.3,
           f"E[P2 | E12] - E[P2 | E11] = {up:.3f} - {stay:.3f} "
           f"= {gap:.3f} >= 0.3")


def test_06_cross_section_identity():
    t0 = time.time()
    worst_quad = 0.0
    worst_series = 0.0
    for gamma in (0.01, 0.1, 1.0, 2.0, 10.0):
        exact = total_cross_section_exact(1.0, gamma)
        angular, _ = quad(differential_cross_section, -math.pi, math.pi,
                          args=(1.0, gamma), points=[0.0],
                          epsabs=0.0, epsrel=1e-12, limit=200)
        closed = 2.0 * math.pi * (i0(gamma) - modstruve(0, gamma))
        worst_quad = max(worst_quad, abs(angular / exact - 1.0))
        worst_series = max(worst_series, abs(closed / exact - 1.0))
    grid = np.linspace(0.0, 100.0, 201)
    ratios = np.array([total_cross_section_approx(1.0, g)
                       / total_cross_section_exact(1.0, g) for g in grid])
    wall = time.time() - t0
    ok = (worst_quad < 1e-8 and worst_series < 1e-8
          and ratios.min() >= 0.8 and ratios.max() <= 1.05 and wall < 1.0)
    report("06 cross-section identity", ok,
           f"max rel err vs angular quadrature = {worst_quad:.2g}, "
           f"vs Bessel-Struve form = {worst_series:.2g}, approx/exact in "
           f"[{ratios.min():.3f}, {ratios.max():.3f}], {wall:.2f} s")


def test_07a_reference_cross_section_scale():
    setup = load_setup(CONFIGS / "reference_point.cfg")
    sigma0_m = derived_dipoles(setup).sigma0 / 100.0
    target = 1e-7
    factor = sigma0_m / target
    report("07a reference sigma0 scale",
           1.0 / 3.0 <= factor <= 3.0,
           f"sigma0 = {sigma0_m:.6g} m vs quoted {target:g} m, "
           f"factor {factor:.2f} (required within 3)")


def test_07b_reference_born_ratio():
    setup = load_setup(CONFIGS / "reference_point.cfg")
    ratio = born_ratio(setup, derived_dipoles(setup))
    report("07b reference Born ratio", 0.1 <= ratio <= 10.0,
           f"e d / (hbar l v) = {ratio:.3f}, required in [0.1, 10]")


def test_07c_reference_deflection_flux():
    setup = load_setup(CONFIGS / "reference_point.cfg")
    flux = scattered_flux(setup).deflection_rate
    lo, hi = 1e6, 1e7
    factor = flux / hi if flux > hi else (lo / flux if flux < lo else 1.0)
    report("07c reference deflection flux", factor <= 100.0,
           f"F = {flux:.4g} 1/s vs quoted {lo:g}..{hi:g} 1/s, "
           f"discrepancy factor {factor:.1f} (two orders allowed)")


def test_08_update_operator_algebra():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((4, 100_000))
    c1 = z[0] + 1j * z[1]
    c2 = z[2] + 1j * z[3]
    nrm = np.sqrt(np.abs(c1) ** 2 + np.abs(c2) ** 2)
    c1, c2 = c1 / nrm, c2 / nrm
    p2 = np.abs(c2) ** 2
    f1, f2 = deflection_factors(1.0, 0.2, p2)
    norm_defect = float(np.max(np.abs(np.abs(c1 * f1) ** 2
                                      + np.abs(c2 * f2) ** 2 - 1.0)))

    eps = np.logspace(-4.0, -1.0, 10)
    defect = np.empty_like(eps)
    for i, e in enumerate(eps):
        g1, g2 = no_deflection_factors(1.0, 0.05, e, 1.0, 0.7)
        defect[i] = abs((g1**2 * 0.3 + g2**2 * 0.7) / (1.0 - e) - 1.0)
    slope = float(np.polyfit(np.log10(eps), np.log10(defect), 1)[0])
    ok = norm_defect < 1e-12 and 1.9 <= slope <= 2.1
    report("08 update-operator algebra", ok,
           f"deflection norm defect = {norm_defect:.2g} over 1e5 states, "
           f"no-deflection defect slope = {slope:.3f}")


def test_09_single_arrival_martingale():
    p2 = 0.37
    state = AtomState(math.sqrt(1.0 - p2), math.sqrt(p2))
    eps = np.logspace(-4.0, -1.0, 13)
    defect = np.empty_like(eps)
    for i, e in enumerate(eps):
        pars = EventParams(d0=1.0, delta_d=0.05, sigma0=e, beam_width=1.0,
                           arrival_rate=1.0)
        p_defl = pars.sigma(p2)
        up = deflection_update(state, pars)
        down = no_deflection_update(state, pars, p_defl, 1.0)
        defect[i] = abs(p_defl * up.p2 + (1.0 - p_defl) * down.p2 - p2)
    slope = float(np.polyfit(np.log10(eps), np.log10(defect), 1)[0])
    report("09 single-arrival martingale", 1.9 <= slope <= 2.1,
           f"population-expectation defect slope = {slope:.3f} "
           f"over eps = 1e-4..1e-1")


def test_10_event_and_curve_models_agree():
    t0 = time.time()
    result = cross_check(MeasurementConfig(), n=10_000, master_seed=123)
    wall = time.time() - t0
    ok = result.rms_gap < 0.05 and result.ks_final < 0.1 and wall < 900.0
    report("10 event vs curve correspondence", ok,
           f"mean-P2 RMS gap = {result.rms_gap:.4f} < 0.05, final-P2 KS "
           f"= {result.ks_final:.4f} < 0.1, n = 10^4 each, {wall:.0f} s")
