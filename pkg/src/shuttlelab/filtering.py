"""Second-order low-pass electrode filters driven by zero-order-hold DACs.

Each channel sees ``H(s) = g * w0^2 / (s^2 + (w0/Q) s + w0^2)``. Because the
DAC output is piecewise constant, the continuous response is propagated
exactly with the ZOH-discretised state-space model on a fine grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .constants import CA40_MASS, HZ_TO_RAD_PER_US
from .potential import ElectrodeBasis, Waveform, find_wells

__all__ = [
    "FilterSpec",
    "ContinuousSignal",
    "filter_channel",
    "filter_waveform",
    "filtered_well_trajectory",
    "magnitude_response",
    "zoh_upsample",
]

BUTTERWORTH_Q = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class FilterSpec:
    corner_frequency: float = 608e3
    quality_factor: float = BUTTERWORTH_Q
    dc_gain: float = 1.0

    def __post_init__(self):
        if not self.corner_frequency > 0:
            raise ValueError("corner_frequency must be positive")
        if not self.quality_factor > 0:
            raise ValueError("quality_factor must be positive")

    @property
    def omega0(self) -> float:
        """Natural frequency in rad/us."""
        return self.corner_frequency * HZ_TO_RAD_PER_US

    def state_space(self):
        w0, q = self.omega0, self.quality_factor
        a = np.array([[0.0, 1.0], [-w0 * w0, -w0 / q]])
        b = np.array([[0.0], [self.dc_gain * w0 * w0]])
        return a, b, np.array([[1.0, 0.0]]), np.array([[0.0]])


@dataclass(frozen=True)
class ContinuousSignal:
    """Uniformly sampled signal; ``samples[j]`` is the value at ``t0 + j*dt``."""

    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.samples))


def magnitude_response(spec: FilterSpec, frequency_hz):
    """``|H(i 2 pi f)|``."""
    x = np.asarray(frequency_hz, dtype=float) / spec.corner_frequency
    return spec.dc_gain / np.sqrt((1 - x * x) ** 2 + (x / spec.quality_factor) ** 2)


def _fine_ratio(sample_interval, dt):
    ratio = sample_interval / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-6:
        raise ValueError("dt must divide the waveform sample interval")
    return n


def zoh_upsample(values, sample_interval, dt):
    """Repeat each DAC sample onto the fine grid (one value per fine step)."""
    n = _fine_ratio(sample_interval, dt)
    return np.repeat(np.asarray(values, dtype=float), n, axis=0)


def filter_channel(values, spec: FilterSpec, sample_interval, dt=1e-3, t0=0.0) -> ContinuousSignal:
    """Exact filter response to a zero-order-hold input.

    ``values`` is ``(n_samples,)`` or ``(n_samples, n_channels)`` with all
    channels sharing ``spec``. The filter starts in steady state at the
    first sample. The output has ``n_samples * ratio + 1`` points, the last
    one at the end of the final hold segment.
    """
    u = zoh_upsample(values, sample_interval, dt)
    u = np.concatenate([u, u[-1:]], axis=0)
    if np.isinf(spec.corner_frequency):
        y = np.concatenate([u[:1], u[:-1]], axis=0) * spec.dc_gain
        return ContinuousSignal(y, dt, t0)
    a, b, c, d = spec.state_space()
    phi, gam, *_ = signal.cont2discrete((a, b, c, d), dt, method="zoh")
    # one-step state recursion x[j+1] = phi x[j] + gam u[j]; y[j] = x[j, 0]
    num = np.array([0.0, gam[0, 0], phi[0, 1] * gam[1, 0] - phi[1, 1] * gam[0, 0]])
    den = np.array([1.0, -np.trace(phi), np.linalg.det(phi)])
    # remove the ~1e-11 rounding in the discrete DC gain
    num *= spec.dc_gain * den.sum() / num.sum()
    # steady-state delay-line state of the transposed direct form for output g*u
    g = spec.dc_gain
    z1 = num[2] - den[2] * g
    zi = np.array([num[1] - den[1] * g + z1, z1])
    shape = (len(zi),) + (1,) * (u.ndim - 1)
    y, _ = signal.lfilter(num, den, u, axis=0, zi=zi.reshape(shape) * u[:1])
    return ContinuousSignal(y, dt, t0)


def filter_waveform(waveform: Waveform, specs, dt=1e-3) -> ContinuousSignal:
    """Filter every electrode channel; ``specs`` is one spec or one per electrode."""
    v = waveform.voltages
    if isinstance(specs, FilterSpec):
        return filter_channel(v, specs, waveform.sample_interval, dt, waveform.t0)
    specs = list(specs)
    if len(specs) != v.shape[1]:
        raise ValueError("need one FilterSpec per electrode")
    cols = [filter_channel(v[:, k], s, waveform.sample_interval, dt, waveform.t0).samples
            for k, s in enumerate(specs)]
    return ContinuousSignal(np.column_stack(cols), dt, waveform.t0)


def filtered_well_trajectory(basis: ElectrodeBasis, waveform: Waveform, specs, dt=1e-3,
                             mass=CA40_MASS):
    """Instantaneous well centre and frequency under filtered voltages.

    Returns ``(times_us, positions_um, frequencies_hz, signal)``.
    """
    sig = filter_waveform(waveform, specs, dt)
    times = sig.times
    if waveform.centers is not None:
        # the filtered design trajectory is a close warm start for Newton
        first = specs if isinstance(specs, FilterSpec) else list(specs)[0]
        guess = filter_channel(waveform.centers, first, waveform.sample_interval, dt,
                               waveform.t0).samples
    else:
        guess = np.mean(basis.axial_range)
    z, f = find_wells(basis, sig.samples, guess, mass=mass, times=times)
    return times, z, f, sig
