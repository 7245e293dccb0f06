import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import filter_ode_oracle
from shuttlelab.filtering import (BUTTERWORTH_Q, ContinuousSignal, FilterSpec, filter_channel,
                                  filter_waveform, filtered_well_trajectory,
                                  magnitude_response, zoh_upsample)
from shuttlelab.potential import make_transport_waveform


def test_constant_input_gives_constant_output():
    y = filter_channel(np.full(20, 3.25), FilterSpec(), 0.04).samples
    assert np.max(np.abs(y - 3.25)) < 1e-12


def test_output_grid_shape():
    sig = filter_channel(np.zeros(5), FilterSpec(), 0.04, dt=1e-3, t0=-0.08)
    assert len(sig.samples) == 5 * 40 + 1
    assert sig.times[0] == -0.08
    assert sig.times[-1] == pytest.approx(-0.08 + 0.2)


def test_infinite_corner_is_identity_on_the_hold_grid():
    values = np.random.default_rng(0).normal(size=12)
    y = filter_channel(values, FilterSpec(np.inf), 0.04, dt=1e-3).samples
    u = zoh_upsample(values, 0.04, 1e-3)
    # the output at the end of each fine step equals the input held over it
    assert np.max(np.abs(y[1:] - u)) < 1e-9


def test_very_high_corner_approaches_identity():
    values = np.random.default_rng(1).normal(size=12)
    fast = filter_channel(values, FilterSpec(1e12), 0.04, dt=1e-3).samples
    ideal = filter_channel(values, FilterSpec(np.inf), 0.04, dt=1e-3).samples
    assert np.max(np.abs(fast - ideal)) < 1e-9


def test_magnitude_at_motional_frequency():
    h = magnitude_response(FilterSpec(608e3), 2.2e6)
    assert h == pytest.approx(1.0 / np.sqrt(1.0 + (2.2e6 / 608e3) ** 4), rel=1e-12)
    assert h == pytest.approx(0.076, abs=1e-3)
    assert magnitude_response(FilterSpec(608e3), 608e3) == pytest.approx(2 ** -0.5)


def test_step_response_asymptote_and_butterworth_overshoot():
    values = np.concatenate([np.zeros(1), np.ones(200)])
    y = filter_channel(values, FilterSpec(), 0.04, dt=1e-3).samples
    assert y[-1] == pytest.approx(1.0, abs=1e-9)
    # second-order Butterworth overshoot exp(-pi / sqrt(4 Q^2 - 1)) = 4.3 %
    expected = np.exp(-np.pi / np.sqrt(4 * BUTTERWORTH_Q**2 - 1))
    assert y.max() - 1.0 == pytest.approx(expected, rel=1e-3)


@pytest.mark.parametrize("q", [0.5, 0.3, 0.1])
def test_step_response_monotone_without_ringing(q):
    values = np.concatenate([np.zeros(1), np.ones(200)])
    y = filter_channel(values, FilterSpec(608e3, q), 0.04, dt=1e-3).samples
    assert np.all(np.diff(y) >= -1e-12)
    assert y.max() <= 1.0 + 1e-9


@pytest.mark.parametrize("q", [BUTTERWORTH_Q, 0.5, 2.0])
def test_closed_form_matches_oversampled_ode(q):
    spec = FilterSpec(608e3, q)
    values = np.random.default_rng(2).uniform(-3, 3, 25)
    exact = filter_channel(values, spec, 0.04, dt=1e-3).samples
    oracle, _ = filter_ode_oracle(values, 0.04, spec.omega0, q, n_fine=40, oversample=100)
    scale = np.max(np.abs(values))
    assert np.max(np.abs(exact - oracle)) < 1e-8 * scale


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 15))
    spec = FilterSpec()

    def f(v):
        return filter_channel(v, spec, 0.04, dt=2e-3).samples

    lhs = f(a * x + b * y)
    rhs = a * f(x) + b * f(y)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + abs(a) + abs(b)) * 10


def test_multichannel_matches_single_channel(fast_waveform):
    sig = filter_waveform(fast_waveform, FilterSpec())
    k = 4
    single = filter_channel(fast_waveform.voltages[:, k], FilterSpec(),
                            fast_waveform.sample_interval).samples
    assert np.array_equal(sig.samples[:, k], single)
    per = filter_waveform(fast_waveform, [FilterSpec()] * 11)
    assert np.allclose(per.samples, sig.samples, rtol=0, atol=1e-13)
    with pytest.raises(ValueError):
        filter_waveform(fast_waveform, [FilterSpec()] * 3)


def test_spec_and_grid_validation():
    with pytest.raises(ValueError):
        FilterSpec(0.0)
    with pytest.raises(ValueError):
        FilterSpec(608e3, -1.0)
    with pytest.raises(ValueError):
        filter_channel(np.zeros(3), FilterSpec(), 0.04, dt=0.003)
    with pytest.raises(ValueError):
        ContinuousSignal(np.zeros(3), 0.0)


def test_adiabatic_well_follows_design(basis):
    wf = make_transport_waveform(basis, -60.0, 60.0, 40.0, 0.4, 2.2e6, hold_after=20)
    t, z, f, _ = filtered_well_trajectory(basis, wf, FilterSpec(), dt=0.01)
    designed = np.interp(t, wf.times + wf.sample_interval, wf.centers)
    assert np.max(np.abs(z - designed)) < 0.01 * 120.0


def test_fast_transport_is_delayed_and_faster_than_nominal(filtered_fast, fast_waveform):
    t, z, f, _ = filtered_fast
    speed = np.gradient(z, t)
    assert speed.max() > 100.0
    # the filtered well crosses the midpoint later than the designed ramp
    designed = np.interp(t, fast_waveform.times, fast_waveform.centers)
    assert t[np.argmax(z >= 0.0)] > t[np.argmax(designed >= 0.0)]
    # and starts moving more gently
    assert np.abs(speed[t < 0.05]).max() < speed.max() / 5
