"""Classical ion motion, coherent displacement and compensation pulses.

Units follow the rest of the package: um, us, m/s, volts, Hz.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .constants import CA40_MASS, ELEMENTARY_CHARGE, HBAR, HZ_TO_RAD_PER_US
from .filtering import ContinuousSignal, filter_waveform, filtered_well_trajectory
from .numerics import integrate_ode
from .potential import ElectrodeBasis, Waveform, find_wells, locate_minimum

__all__ = [
    "IonSpec",
    "IonTrajectory",
    "CompensationPulse",
    "CompensationResult",
    "IonLostError",
    "ground_state_extent",
    "integrate_ion",
    "integrate_in_moving_well",
    "coherent_displacement",
    "residual_quanta",
    "harmonic_residual_quanta",
    "add_compensation",
    "displacement_of_waveform",
    "classical_displacement",
    "classical_amplitude",
    "transport_displacement",
    "optimize_compensation",
    "simulate_heating",
]

DEFAULT_HEATING_RATE = 210.0  # quanta / s


class IonLostError(RuntimeError):
    def __init__(self, time):
        super().__init__(f"ion left the axial range at t={time:.4f} us")
        self.time = time


@dataclass(frozen=True)
class IonSpec:
    mass: float = CA40_MASS
    charge: float = ELEMENTARY_CHARGE

    def __post_init__(self):
        if not self.mass > 0 or not self.charge > 0:
            raise ValueError("mass and charge must be positive")

    @property
    def charge_to_mass(self) -> float:
        # with V in volts and z in um, a [um/us^2] = -(q/m) dV/dz [V/um]
        return self.charge / self.mass


@dataclass(frozen=True)
class IonTrajectory:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if len(self.positions) != n or len(self.velocities) != n:
            raise ValueError("times, positions and velocities must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def position_at(self, t):
        return np.interp(t, self.times, self.positions)


@dataclass(frozen=True)
class CompensationPulse:
    amplitude: float
    frequency: float
    phase: float
    electrode_set: tuple
    window: tuple

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")
        if self.window[1] < self.window[0]:
            raise ValueError("window end precedes its start")
        object.__setattr__(self, "electrode_set", tuple(int(k) for k in self.electrode_set))


def ground_state_extent(frequency_hz, mass=CA40_MASS):
    """Zero-point spread ``sqrt(hbar / 2 m w)`` in um."""
    omega = 2.0 * np.pi * frequency_hz
    return np.sqrt(HBAR / (2.0 * mass * omega)) * 1e6


def integrate_ion(basis: ElectrodeBasis, voltages: ContinuousSignal, ion: IonSpec = IonSpec(),
                  initial=(None, 0.0)) -> IonTrajectory:
    """RK4 integration of ``m z'' = -q dV/dz`` in sampled electrode voltages.

    The step is twice the voltage sampling interval so that RK4 midpoints
    fall on samples; no interpolation of the voltages is needed. If the
    initial position is ``None`` the ion starts at the first well minimum.
    """
    v = np.asarray(voltages.samples, dtype=float)
    n_steps = (len(v) - 1) // 2
    if n_steps < 1:
        raise ValueError("need at least three voltage samples")
    z_start, v_start = initial
    if z_start is None:
        z_start = locate_minimum(basis, v[0])
    lo, hi = basis.axial_range
    qm = ion.charge_to_mass
    h = 2.0 * voltages.dt
    t0 = voltages.t0

    def deriv(t, y):
        j = int(round((t - t0) / voltages.dt))
        z = y[0]
        if not lo <= z <= hi:
            raise IonLostError(t)
        return np.array([y[1], -qm * basis.moments(z, 1) @ v[j]])

    times, states = integrate_ode(deriv, [z_start, v_start], (t0, t0 + n_steps * h), h)
    return IonTrajectory(times, states[:, 0], states[:, 1])


def integrate_in_moving_well(times, well_positions, frequency_hz, initial=None,
                             substeps: int = 1) -> IonTrajectory:
    """Ion in a rigid harmonic well whose centre follows ``well_positions``.

    The centre is linearly interpolated between samples, matching the
    quadrature used by :func:`coherent_displacement`.
    """
    times = np.asarray(times, dtype=float)
    z0 = np.asarray(well_positions, dtype=float)
    w2 = (frequency_hz * HZ_TO_RAD_PER_US) ** 2
    if initial is None:
        initial = (z0[0], 0.0)

    def deriv(t, y):
        return np.array([y[1], -w2 * (y[0] - np.interp(t, times, z0))])

    out_t = [times[0]]
    out_y = [np.asarray(initial, dtype=float)]
    y = out_y[0]
    for a, b in zip(times[:-1], times[1:]):
        _, states = integrate_ode(deriv, y, (a, b), (b - a) / substeps)
        y = states[-1]
        out_t.append(b)
        out_y.append(y)
    out_y = np.array(out_y)
    return IonTrajectory(np.array(out_t), out_y[:, 0], out_y[:, 1])


def coherent_displacement(times, well_positions, frequency_hz, ion: IonSpec = IonSpec()):
    """Final coherent amplitude ``alpha(T)`` imparted by a moving harmonic well.

    ``alpha = -i sqrt(m w / 2 hbar) * int_0^T z0'(t) exp(i w (t - T)) dt``.
    The well path is taken as piecewise linear between samples, for which
    the integral is evaluated exactly. A frequency array is replaced by its
    time average.
    """
    t = np.asarray(times, dtype=float)
    z0 = np.asarray(well_positions, dtype=float)
    f = float(np.mean(frequency_hz))
    w = f * HZ_TO_RAD_PER_US
    big_t = t[-1]
    dt = np.diff(t)
    slope = np.diff(z0) / dt
    phase_hi = np.exp(1j * w * (t[1:] - big_t))
    phase_lo = np.exp(1j * w * (t[:-1] - big_t))
    integral = np.sum(slope * (phase_hi - phase_lo)) / (1j * w)  # um
    return -1j * integral / (2.0 * ground_state_extent(f, ion.mass))


def harmonic_residual_quanta(trajectory: IonTrajectory, well_center, frequency_hz,
                             mass=CA40_MASS):
    """Oscillation energy about a static harmonic well, in quanta."""
    w = frequency_hz * HZ_TO_RAD_PER_US  # rad/us
    u = trajectory.positions[-1] - well_center
    vel = trajectory.velocities[-1]
    # (1/2) m (v^2 + w^2 u^2) with um/us = m/s
    energy = 0.5 * mass * (vel**2 + (w * u) ** 2)
    return energy / (HBAR * 2.0 * np.pi * frequency_hz)


def residual_quanta(basis: ElectrodeBasis, final_voltages, trajectory: IonTrajectory,
                    ion: IonSpec = IonSpec()):
    """Classical oscillation energy left in the final static potential, in quanta.

    Uses the full potential (not its harmonic approximation) for the
    potential-energy term; the quantum is ``hbar w`` of the final well.
    """
    z_min, f = find_wells(basis, np.asarray(final_voltages)[None, :], [trajectory.positions[-1]],
                          mass=ion.mass, charge=ion.charge)
    pot = basis.moments(np.array([trajectory.positions[-1], z_min[0]])) @ final_voltages
    energy = 0.5 * ion.mass * trajectory.velocities[-1] ** 2 + ion.charge * (pot[0] - pot[1])
    return energy / (HBAR * 2.0 * np.pi * f[0])


def add_compensation(waveform: Waveform, pulse: CompensationPulse) -> Waveform:
    """Superimpose ``A sin(2 pi f (t - t_w) + phi)`` on the listed electrodes.

    Only samples whose start time lies inside the window are modified; the
    input waveform is left untouched.
    """
    n_el = waveform.voltages.shape[1]
    if any(k < 0 or k >= n_el for k in pulse.electrode_set):
        raise ValueError(f"electrode index outside 0..{n_el - 1}")
    t = waveform.times
    t_w, t_end = pulse.window
    inside = (t >= t_w) & (t < t_end)
    wave = pulse.amplitude * np.sin(2 * np.pi * pulse.frequency * 1e-6 * (t - t_w) + pulse.phase)
    wave = np.where(inside, wave, 0.0)
    v = waveform.voltages.copy()
    v[:, list(pulse.electrode_set)] += wave[:, None]
    return waveform.replace(voltages=v)


def displacement_of_waveform(basis, waveform, specs, ion: IonSpec = IonSpec(), dt=1e-3):
    """``(alpha, mean frequency, relative frequency spread)`` of a filtered waveform."""
    times, z, f, _ = filtered_well_trajectory(basis, waveform, specs, dt, mass=ion.mass)
    f_mean = float(np.mean(f))
    spread = float((f.max() - f.min()) / f_mean)
    return coherent_displacement(times, z, f_mean, ion), f_mean, spread


def classical_displacement(basis, waveform, specs, ion: IonSpec = IonSpec(), dt=1e-3):
    """Complex amplitude of the classical residual motion after the waveform.

    Integrates the ion through the filtered potential and expresses the
    final offset ``u`` and velocity ``v`` about the final well as
    ``(i w u - v) / (2 w x_zpf)``, which coincides with
    :func:`coherent_displacement` for a rigid harmonic well.
    Returns ``(alpha, trajectory)``.
    """
    sig = filter_waveform(waveform, specs, dt)
    trajectory = integrate_ion(basis, sig, ion)
    final = waveform.voltages[-1]
    z_min, f = find_wells(basis, final[None, :], [trajectory.positions[-1]],
                          mass=ion.mass, charge=ion.charge)
    return classical_amplitude(trajectory, z_min[0], f[0], ion.mass), trajectory


def classical_amplitude(trajectory: IonTrajectory, well_center, frequency_hz, mass=CA40_MASS):
    w = frequency_hz * HZ_TO_RAD_PER_US
    u = trajectory.positions[-1] - well_center
    v = trajectory.velocities[-1]
    return (1j * w * u - v) / (2.0 * w * ground_state_extent(frequency_hz, mass))


FREQUENCY_SPREAD_LIMIT = 0.05


def transport_displacement(basis, waveform, specs, ion: IonSpec = IonSpec(), dt=1e-3,
                           route="auto"):
    """Final coherent amplitude of a filtered transport.

    ``route`` is ``"harmonic"`` (moving rigid well at the mean frequency),
    ``"classical"`` (full integration) or ``"auto"``, which uses the
    harmonic model only while the well frequency stays within 5 %.
    Returns ``(alpha, route_used)``.
    """
    if route not in ("auto", "harmonic", "classical"):
        raise ValueError(f"unknown route {route!r}")
    if route != "classical":
        alpha, _, spread = displacement_of_waveform(basis, waveform, specs, ion, dt)
        if route == "harmonic" or spread < FREQUENCY_SPREAD_LIMIT:
            return alpha, "harmonic"
    return classical_displacement(basis, waveform, specs, ion, dt)[0], "classical"


@dataclass(frozen=True)
class CompensationResult:
    pulse: CompensationPulse
    n_coh_before: float
    n_coh_after: float
    converged: bool
    evaluations: int
    route: str = "harmonic"
    message: str = ""


def optimize_compensation(waveform: Waveform, basis: ElectrodeBasis, specs,
                          ion: IonSpec = IonSpec(), electrode_set=(6, 7, 8, 9),
                          window: Optional[Sequence[float]] = None,
                          amplitude_range=(0.0, 2.0), frequency_range=(1.8e6, 2.6e6),
                          dt=1e-3, route="auto", max_evaluations=600, restarts=3,
                          target=1e-3, xtol=1e-7, ftol=1e-8) -> CompensationResult:
    """Nelder-Mead search over (amplitude, frequency, phase) minimising ``|alpha|^2``.

    The start point comes from linearising ``alpha`` in the pulse at the
    centre of the frequency range (two extra evaluations). The simplex is
    restarted from the best point while it keeps improving, and the search
    stops once ``|alpha|^2`` drops below ``target``. Parameters
    outside the search box and lost wells are penalised, not raised.
    """
    if window is None:
        window = (0.0, waveform.t0 + waveform.duration)
    window = tuple(float(x) for x in window)
    electrode_set = tuple(electrode_set)
    f_lo, f_hi = frequency_range
    a_lo, a_hi = amplitude_range
    if not f_lo < f_hi or not 0 <= a_lo < a_hi:
        raise ValueError("empty search range")
    alpha0, route = transport_displacement(basis, waveform, specs, ion, dt, route)
    evaluations = 1
    n_before = float(abs(alpha0) ** 2)
    if n_before < target:
        pulse = CompensationPulse(0.0, 0.5 * (f_lo + f_hi), 0.0, electrode_set, window)
        return CompensationResult(pulse, n_before, n_before, True, evaluations, route,
                                  "excitation already below target")

    def alpha_of(a, f, ph):
        nonlocal evaluations
        evaluations += 1
        wf = add_compensation(waveform, CompensationPulse(abs(a), f, ph, electrode_set, window))
        return transport_displacement(basis, wf, specs, ion, dt, route)[0]

    f_mid = 0.5 * (f_lo + f_hi)
    probe = 0.025 * (a_hi - a_lo)
    start = np.array([a_lo, f_mid, 0.0])
    try:
        # alpha ~ alpha0 + A (g_s cos(phi) + g_c sin(phi)) for small A
        g_s = (alpha_of(probe, f_mid, 0.0) - alpha0) / probe
        g_c = (alpha_of(probe, f_mid, np.pi / 2) - alpha0) / probe
        m = np.array([[g_s.real, g_c.real], [g_s.imag, g_c.imag]])
        x, y = np.linalg.solve(m, [-alpha0.real, -alpha0.imag])
        start = np.array([np.clip(np.hypot(x, y), a_lo, a_hi), f_mid, np.arctan2(y, x)])
    except (np.linalg.LinAlgError, RuntimeError, ValueError):
        pass

    scale = np.array([a_hi - a_lo, f_hi - f_lo, 2 * np.pi])
    penalty = 10.0 * n_before + 1.0

    def objective(u):
        a, f, ph = start + u * scale
        if not (a_lo <= a <= a_hi and f_lo <= f <= f_hi):
            return penalty
        try:
            return float(abs(alpha_of(a, f, ph)) ** 2)
        except (RuntimeError, ValueError):
            return penalty

    x0 = np.zeros(3)
    best_fun = objective(x0)
    success = False
    message = ""

    def stop_at_target(intermediate_result):
        if intermediate_result.fun < target:
            raise StopIteration

    for _ in range(max(1, restarts)):
        if best_fun < target:
            success, message = True, "target reached"
            break
        simplex = np.vstack([x0, x0 + np.diag([0.02, 0.02, 0.02])])
        res = optimize.minimize(
            objective, x0, method="Nelder-Mead", callback=stop_at_target,
            options=dict(initial_simplex=simplex, xatol=xtol, fatol=ftol,
                         maxfev=max_evaluations),
        )
        improved = res.fun < best_fun * (1 - 1e-3)
        if res.fun <= best_fun:
            x0, best_fun = res.x, float(res.fun)
        success = bool(res.success or res.fun < target)
        message = "target reached" if res.fun < target else str(res.message)
        if not improved or res.fun < target:
            break
    a, f, ph = start + x0 * scale
    ph = float(np.mod(ph + np.pi, 2 * np.pi) - np.pi)
    best = CompensationPulse(float(abs(a)), float(f), ph, electrode_set, window)
    return CompensationResult(best, n_before, best_fun, success, evaluations, route, message)


def simulate_heating(n_initial, dwell, rate=DEFAULT_HEATING_RATE):
    """Linear anomalous heating; ``dwell`` in seconds, ``rate`` in quanta/s."""
    if dwell < 0:
        raise ValueError("dwell must be non-negative")
    return n_initial + rate * dwell
