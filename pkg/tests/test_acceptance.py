"""Acceptance checks for the whole toolkit.

Each test prints one ``PASS``/``FAIL`` line naming its criterion, even
when output capture is on, and then asserts the criterion.
"""
import json
import time

import numpy as np
import pytest

from harmonic import HarmonicBasis, moving_well_voltages, random_piecewise_linear_transport
from oracles import displaced_thermal_oracle, filter_ode_oracle
import pipeline
from shuttlelab.cli import run
from shuttlelab.constants import AMU
from shuttlelab.dynamics import (coherent_displacement, ground_state_extent,
                                 harmonic_residual_quanta, integrate_ion)
from shuttlelab.filtering import (ContinuousSignal, FilterSpec, filter_channel,
                                  filtered_well_trajectory, magnitude_response)
from shuttlelab.motional import (MotionalParams, displaced_thermal_populations, fit_flop,
                                 simulate_sideband_scan)
from shuttlelab.probe import TrajectoryFit, speed_metrics


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return report


def test_criterion_1_mean_speed(verdict):
    start = time.perf_counter()
    fit = TrajectoryFit(**pipeline.TRUTH)
    m = speed_metrics(fit, pipeline.DISPLACEMENT, 0.008)
    elapsed = time.perf_counter() - start
    verdict(1, 80.0 <= m.v_mean <= 85.0 and elapsed < 1.0,
            f"v_mean = {m.v_mean:.2f} m/s (want 80..85) in {elapsed * 1e3:.1f} ms (want < 1 s)")


def test_criterion_2_ground_state_extent(verdict):
    x = ground_state_extent(2.2e6, 40 * AMU) * 1e3
    verdict(2, abs(x - 7.6) <= 0.1, f"x_zpf = {x:.3f} nm (want 7.6 +- 0.1)")


def test_criterion_3_round_trip(verdict):
    start = time.perf_counter()
    fits = [pipeline.round_trip(seed) for seed in range(50)]
    elapsed = time.perf_counter() - start
    dv = np.array([f.v_max - pipeline.V_MAX for f in fits])
    sig = np.array([f.errors["v_max"] for f in fits])
    median = float(np.median(np.abs(dv)))
    coverage = float(np.mean(np.abs(dv) <= sig))
    ok = median < 10.0 and 0.60 <= coverage <= 0.75 and elapsed < 60.0
    verdict(3, ok, f"median |dv| = {median:.2f} m/s (want < 10), 1-sigma coverage "
                   f"{coverage:.0%} (want 60..75 %), {elapsed:.1f} s for 50 seeds (want < 60)")


def test_criterion_4_thermometry(verdict):
    thermal = MotionalParams(1.0, 0.0, 0.002)
    t = np.arange(0.0, 200.0 + 1e-9, 2.0)
    fit, _ = fit_flop(simulate_sideband_scan(thermal, t, 100, [0, 2]),
                      MotionalParams(0.5, 0.0, 0.001), model="thermal")
    coherent = MotionalParams(1.0, np.sqrt(61.7), 0.002)
    t2 = np.arange(0.0, 100.0 + 1e-9, 0.5)
    fit2, _ = fit_flop(simulate_sideband_scan(coherent, t2, 100, [0, 2]),
                       MotionalParams(1.0, 5.0, 0.001), fixed=("omega0",))
    rel = abs(fit2.n_coh - 61.7) / 61.7
    ok = abs(fit.n_th - 1.0) <= 0.15 and rel <= 0.02
    verdict(4, ok, f"thermal n_th = {fit.n_th:.3f} (want 1 +- 0.15), coherent |alpha|^2 = "
                   f"{fit2.n_coh:.2f} ({rel:.2%} off, want <= 2 %)")


def test_criterion_5_displaced_thermal_oracle(verdict):
    worst = 0.0
    for n_bar in (0.1, 1.0, 5.0):
        for a2 in (0.0, 1.0, 10.0, 70.0):
            got = displaced_thermal_populations(n_bar, np.sqrt(a2), 256)
            want = displaced_thermal_oracle(n_bar, np.sqrt(a2), 256)
            worst = max(worst, float(np.max(np.abs(got - want))))
    verdict(5, worst < 1e-10, f"max population error {worst:.2e} (want < 1e-10)")


def test_criterion_6_energy_equivalence(verdict):
    rng = np.random.default_rng(2024)
    basis = HarmonicBasis()
    worst = 0.0
    for _ in range(20):
        t, z, f = random_piecewise_linear_transport(rng)
        sig = ContinuousSignal(moving_well_voltages(z, f), t[1] - t[0])
        traj = integrate_ion(basis, sig, initial=(z[0], 0.0))
        alpha2 = abs(coherent_displacement(t, z, f)) ** 2
        quanta = harmonic_residual_quanta(traj, z[-1], f)
        worst = max(worst, abs(quanta - alpha2) / alpha2)
    verdict(6, worst < 1e-4, f"worst relative energy mismatch {worst:.2e} over 20 transports "
                             "(want < 1e-4)")


def test_criterion_7_compensation(verdict, tmp_path):
    code = run(["optimize", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "optimize_report.json").read_text()) if code == 0 else {}
    m = report.get("metrics", {})
    before, after = m.get("n_coh_before", float("nan")), m.get("n_coh_after", float("nan"))
    ok = code == 0 and before > 10 and after < 1
    verdict(7, ok, f"exit {code}, n_coh {before:.3g} -> {after:.3g} quanta (want > 10 -> < 1), "
                   f"route {m.get('route')}, {m.get('evaluations')} evaluations")


def test_criterion_8_filter(verdict):
    spec = FilterSpec()
    values = np.random.default_rng(8).uniform(-3.0, 3.0, 25)
    exact = filter_channel(values, spec, 0.04, dt=1e-3).samples
    oracle, _ = filter_ode_oracle(values, 0.04, spec.omega0, spec.quality_factor, n_fine=40)
    err = float(np.max(np.abs(exact - oracle)) / np.max(np.abs(values)))
    gain = float(magnitude_response(spec, 2.2e6))
    ok = err < 1e-8 and abs(gain - 0.076) <= 0.001
    verdict(8, ok, f"closed form vs ODE {err:.1e} (want < 1e-8), |H(2.2 MHz)| = {gain:.4f} "
                   "(want 0.076 +- 0.001)")


def test_criterion_9_filtered_transport(verdict, basis, fast_waveform, filtered_fast):
    t, z, _, _ = filtered_fast
    td, zd, _, _ = filtered_well_trajectory(basis, fast_waveform, FilterSpec(np.inf))
    peak = float(np.max(np.abs(np.gradient(z, t))))
    crossing = float(t[np.argmax(z >= 0.0)])
    designed = float(td[np.argmax(zd >= 0.0)])
    ok = peak > 100.0 and crossing > designed
    verdict(9, ok, f"peak well speed {peak:.1f} m/s (want > 100), midpoint crossed at "
                   f"{crossing:.3f} us vs designed {designed:.3f} us (want later)")
