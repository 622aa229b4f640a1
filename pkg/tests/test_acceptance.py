"""Acceptance criteria 1-10.

Each test prints one ``CRITERION k: PASS|FAIL ...`` line (visible even
without ``-s``) and then asserts. Run on its own with

    pytest tests/test_acceptance.py -v

The Monte Carlo criteria (6-9) take a few minutes on one core; set
COOPSYNC_THREADS to use more processes.
"""

import dataclasses
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from coopsync.fisher import crb_listening
from coopsync.model import ChannelResponse
from coopsync.montecarlo import gamma_sweep, point_bounds, run_cooperation, run_listening
from coopsync.relay_policy import compute_k, eta, flat_delta_opt, flat_q, optimize_gamma
from coopsync.scenario import Scenario
from coopsync.sequences import SearchCriterion, exhaustive_search, sylvester_sequence

pytestmark = pytest.mark.slow

# Cooperation scenario for the estimator criteria: relay-destination SNR equal to
# source-destination, source-relay 10 dB higher, unit relay gain, correlation
# estimate at the relay.
COOP = Scenario(relay_estimator="corr", snr_sr_offset_db=10.0, gamma_policy="fixed", gamma=1.0, trials=2000)


def db(x):
    return 10 * np.log10(x)


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail, started):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} {detail} ({time.perf_counter() - started:.1f} s)")
        assert ok, detail
    return _report


@pytest.fixture(scope="module")
def coop_curve():
    # criteria 6 and 8 share one run; every estimator sees the same trials
    t0 = time.perf_counter()
    curve = run_cooperation(dataclasses.replace(COOP, values=(-30.0, -25.0, 15.0, 20.0, 25.0, 30.0)))
    return curve, time.perf_counter() - t0


def test_criterion_1_flat_closed_form(report):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (4, 8, 16, 64):
        for snr in (0.1, 1.0, 10.0, 1e3):
            got = crb_listening(np.ones(n), ChannelResponse.flat(snr), 1.0, math.inf).crb_fsd
            worst = max(worst, abs(got * eta(n) * snr - 1.0))
    report(1, worst <= 1e-9, f"max relative error {worst:.2e} (tol 1e-9)", t0)


def test_criterion_2_gamma_limits(report):
    t0 = time.perf_counter()
    n, snr = 16, 1.0
    q, delta = flat_q(n, snr), flat_delta_opt(n, n, snr, snr, snr)
    ref = 1.0 / (eta(n) * snr)
    g_wide = optimize_gamma(q, compute_k(1.0, 1e4 * ref), 1e4 * ref, delta)
    g_tight = optimize_gamma(q, compute_k(1.0, 1e-4 * ref), 1e-4 * ref, delta)
    ok = 0.95 <= g_wide <= 1.0 and 0.48 <= g_tight <= 0.52
    report(2, ok, f"gamma(diffuse prior)={g_wide:.4f} in [0.95,1], gamma(tight prior)={g_tight:.4f} in [0.48,0.52]", t0)


def test_criterion_3_unit_gain_penalty(report):
    t0 = time.perf_counter()
    grid = tuple(float(v) for v in np.arange(-70.0, -9.0, 2.0))
    worst = -math.inf
    for sr_db in (-10.0, 0.0, 10.0):
        s = Scenario(snr_sd_db=0.0, snr_sr_offset_db=sr_db, param="sigma_f_sq_db", values=grid)
        worst = max(worst, max(p.penalty_db for p in gamma_sweep(s)))
    report(3, worst <= 0.3, f"max penalty {worst:.3f} dB (limit 0.3 dB)", t0)


def test_criterion_4_sequence_gap(report):
    t0 = time.perf_counter()
    gaps = {}
    for n in (4, 8, 16, 32, 64, 128):
        worst = 0.0
        for sd_db in range(-20, 31, 5):
            s = Scenario(n_listen=n, n_coop=n, snr_sd_db=float(sd_db), snr_sr_offset_db=10.0)
            wc = point_bounds(s)["worstcase"].total
            opt = point_bounds(dataclasses.replace(s, gamma_policy="optimal"))["optimal"].total
            worst = max(worst, db(wc / opt))
        gaps[n] = worst
    ok = abs(gaps[4] - 0.6) <= 0.15 and all(gaps[n] <= 0.35 for n in gaps if n > 4)
    detail = ", ".join(f"N={n}: {g:.3f} dB" for n, g in gaps.items())
    report(4, ok, f"max gap over S_sd: {detail}", t0)


def test_criterion_5_exhaustive_agreement(report):
    t0 = time.perf_counter()
    crit = SearchCriterion()
    rel = {}
    for n in (4, 8, 16):
        best, syl = crit(exhaustive_search(n, crit)), crit(sylvester_sequence(n))
        rel[n] = abs(best - syl) / syl
    ok = all(r <= 1e-9 for r in rel.values())
    report(5, ok, "relative difference " + ", ".join(f"N={n}: {r:.1e}" for n, r in rel.items()), t0)


def test_criterion_6_efficiency(report, coop_curve):
    t0 = time.perf_counter()
    curve, elapsed = coop_curve
    worst = {}
    for name in ("map2d", "ml1d", "corr"):
        pts = [p for p in curve.estimator(name) if p.sweep_value >= 15]
        worst[name] = max(db(p.mse_total / p.crb_total) for p in pts)
    ok = all(v <= 1.5 for v in worst.values())
    detail = ", ".join(f"{k} {v:+.2f} dB" for k, v in worst.items())
    report(6, ok, f"max MSE/CRB at S_sd>=15 dB: {detail} (limit 1.5 dB; sim {elapsed:.0f} s)", t0)


def test_criterion_7_adaptive_gain(report):
    t0 = time.perf_counter()
    s = dataclasses.replace(COOP, estimators=("corr", "corr-nonadaptive"), values=(0.0, 5.0, 10.0, 20.0, 30.0))
    curve = run_cooperation(s)
    ada, raw = curve.totals("corr"), curve.totals("corr-nonadaptive")
    gain = db(raw[:3] / ada[:3])
    # floor: over the last decade of SNR the non-adaptive MSE falls by less than 3 dB
    # while the adaptive MSE keeps falling by at least 6 dB
    raw_drop, ada_drop = db(raw[3] / raw[4]), db(ada[3] / ada[4])
    ok = bool(np.all(gain >= 2.5)) and raw_drop < 3.0 and ada_drop >= 6.0
    detail = (f"gain at 0/5/10 dB: {', '.join(f'{g:.2f}' for g in gain)} dB (need >= 2.5); "
              f"20->30 dB drop: non-adaptive {raw_drop:.2f} dB, adaptive {ada_drop:.2f} dB")
    report(7, ok, detail, t0)


def test_criterion_8_prior_floor(report, coop_curve):
    t0 = time.perf_counter()
    curve, _ = coop_curve
    vals = {(p.estimator, p.sweep_value): db(p.mse_total) for p in curve.points if p.sweep_value <= -25}
    ok = all(abs(v + 34.0) <= 1.0 for v in vals.values())
    detail = ", ".join(f"{k[0]}@{k[1]:g}: {v:.2f}" for k, v in sorted(vals.items()))
    report(8, ok, f"total MSE dB ({detail}); target -34 +/- 1", t0)


def test_criterion_9_relay_estimate(report):
    t0 = time.perf_counter()
    s = Scenario(snr_sd_db=20.0, snr_sr_offset_db=0.0, relay_estimator="map", trials=10_000, values=(20.0,))
    p = run_listening(s).estimator("map")[0]
    q, k = flat_q(s.n_listen, 100.0), compute_k(1.0, s.sigma_f_sq)
    target = 2 * k * s.sigma_f_sq / (q + k)
    var = p.mse_fsd - p.bias_fsd ** 2
    se = math.sqrt(var / p.trials)
    ok = abs(p.bias_fsd) < 3 * se and abs(var / target - 1) <= 0.10
    detail = (f"mean {p.bias_fsd:.2e} (3 SE = {3 * se:.2e}), var/target {var / target:.4f} "
              f"(target {target:.3e}, tol 10%)")
    report(9, ok, detail, t0)


PROPERTY_TESTS = [
    "tests/test_fisher.py::TestInverseOrdering",
    "tests/test_fisher.py::TestCharFn::test_quadrature_oracle",
    "tests/test_model.py::TestToeplitz::test_matches_truncated_convolution",
    "tests/test_model.py::TestPhaseRamp",
    "tests/test_montecarlo.py::TestSimulation::test_worker_count_does_not_change_results",
    "tests/test_cli.py::TestDeterminism",
]


def test_criterion_10_property_suites(report):
    t0 = time.perf_counter()
    root = Path(__file__).resolve().parent.parent
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=root, capture_output=True, text=True)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    report(10, proc.returncode == 0, f"property suites: {summary}", t0)
