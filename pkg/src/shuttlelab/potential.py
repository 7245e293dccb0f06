"""Axial trapping potentials built from per-electrode basis functions.

The potential seen by the ion is ``q * sum_k V_k * phi_k(z)`` where
``phi_k`` is the dimensionless potential of electrode ``k`` at unit
voltage. Positions are in um, times in us.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .constants import CA40_MASS, ELEMENTARY_CHARGE, HZ_TO_RAD_PER_US

__all__ = [
    "WellLostError",
    "ConstraintError",
    "ElectrodeBasis",
    "StripElectrodeBasis",
    "TabulatedBasis",
    "WellSpec",
    "Waveform",
    "potential_at",
    "find_well",
    "find_wells",
    "locate_minimum",
    "solve_voltages",
    "make_transport_waveform",
    "curvature_for_frequency",
    "default_basis",
    "tabulate",
    "frequency_for_curvature",
]


class WellLostError(RuntimeError):
    """No confining minimum near the expected position."""

    def __init__(self, message, time=None, position=None):
        if time is not None:
            message = f"{message} at t={time:.4f} us"
        super().__init__(message)
        self.time = time
        self.position = position


class ConstraintError(ValueError):
    pass


def curvature_for_frequency(frequency_hz, mass=CA40_MASS, charge=ELEMENTARY_CHARGE):
    """Potential curvature (V/um^2) giving the requested axial frequency."""
    omega = frequency_hz * HZ_TO_RAD_PER_US  # rad/us
    return omega**2 * mass / charge


def frequency_for_curvature(curvature, mass=CA40_MASS, charge=ELEMENTARY_CHARGE):
    """Inverse of :func:`curvature_for_frequency`; returns Hz."""
    return np.sqrt(curvature * charge / mass) / HZ_TO_RAD_PER_US


class ElectrodeBasis:
    """Collection of electrode moment functions on an axial interval.

    Subclasses implement :meth:`moments`, returning the ``order``-th
    z-derivative of every electrode's unit-voltage potential.
    """

    centers: np.ndarray
    axial_range: tuple

    @property
    def n_electrodes(self) -> int:
        return len(self.centers)

    def moments(self, z, order: int = 0) -> np.ndarray:
        raise NotImplementedError

    def check_range(self, z):
        z = np.asarray(z, dtype=float)
        lo, hi = self.axial_range
        if np.any(z < lo) or np.any(z > hi) or np.any(~np.isfinite(z)):
            raise ValueError(f"position outside axial range [{lo}, {hi}] um")


class StripElectrodeBasis(ElectrodeBasis):
    """Analytic basis of infinitely long strips in a grounded plane.

    Each electrode spans ``[c - w/2, c + w/2]`` along the axis and the ion
    sits ``height`` above the surface, giving the closed-form moment
    ``(1/pi) * [atan((z - a)/h) - atan((z - b)/h)]``, a smooth bump of
    width ~ ``width``.
    """

    def __init__(self, centers, width=60.0, height=60.0, axial_range=None):
        self.centers = np.asarray(centers, dtype=float)
        if self.centers.ndim != 1 or self.centers.size < 3:
            raise ValueError("need at least three electrodes")
        if width <= 0 or height <= 0:
            raise ValueError("width and height must be positive")
        self.width = float(width)
        self.height = float(height)
        if axial_range is None:
            axial_range = (self.centers.min() - 2 * width, self.centers.max() + 2 * width)
        self.axial_range = (float(axial_range[0]), float(axial_range[1]))

    @classmethod
    def uniform(cls, n_electrodes=11, pitch=60.0, height=60.0, origin=0.0):
        """Equally pitched electrodes centred on ``origin``."""
        offsets = (np.arange(n_electrodes) - 0.5 * (n_electrodes - 1)) * pitch
        return cls(origin + offsets, width=pitch, height=height)

    def moments(self, z, order=0):
        z = np.asarray(z, dtype=float)[..., None]
        h = self.height
        a = self.centers - 0.5 * self.width
        b = self.centers + 0.5 * self.width
        return (self._edge(z - a, h, order) - self._edge(z - b, h, order)) / np.pi

    @staticmethod
    def _edge(u, h, order):
        # derivatives of atan(u/h) with respect to u
        s = h * h + u * u
        if order == 0:
            return np.arctan2(u, h)
        if order == 1:
            return h / s
        if order == 2:
            return -2.0 * h * u / s**2
        if order == 3:
            return -2.0 * h * (h * h - 3.0 * u * u) / s**3
        raise ValueError("derivative order must be 0..3")


class TabulatedBasis(ElectrodeBasis):
    """Basis interpolated with cubic splines from a uniform table."""

    def __init__(self, z_um, table, centers=None):
        z_um = np.asarray(z_um, dtype=float)
        table = np.asarray(table, dtype=float)
        if table.ndim != 2 or table.shape[0] != z_um.size:
            raise ValueError("table must have one row per grid point")
        if np.any(np.diff(z_um) <= 0):
            raise ValueError("grid must be strictly increasing")
        steps = np.diff(z_um)
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
            raise ValueError("grid must be uniform")
        if table.shape[1] < 3:
            raise ValueError("need at least three electrodes")
        self._spline = CubicSpline(z_um, table, axis=0)
        self.axial_range = (float(z_um[0]), float(z_um[-1]))
        if centers is None:
            centers = z_um[np.argmax(np.abs(table), axis=0)]
        self.centers = np.asarray(centers, dtype=float)

    @classmethod
    def from_csv(cls, path):
        """Read ``z_um, phi_electrode_1, ..., phi_electrode_N``."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty basis table")
        header, body = rows[0], rows[1:]
        if header[0].strip() != "z_um" or len(header) < 2:
            raise ValueError(f"{path}: first column must be 'z_um'")
        if len(body) < 4 or any(len(r) != len(header) for r in body):
            raise ValueError(f"{path}: need at least four rows of {len(header)} columns")
        try:
            data = np.array([[float(v) for v in r] for r in body])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from exc
        return cls(data[:, 0], data[:, 1:])

    def to_csv(self, path, z_um):
        table = self.moments(z_um)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["z_um"] + [f"phi_electrode_{k + 1}" for k in range(table.shape[1])])
            for z, row in zip(z_um, table):
                w.writerow([repr(float(z))] + [repr(float(v)) for v in row])

    def moments(self, z, order=0):
        if order > 3:
            raise ValueError("derivative order must be 0..3")
        return self._spline(np.asarray(z, dtype=float), nu=order)


def tabulate(basis: ElectrodeBasis, z_um) -> TabulatedBasis:
    """Sample any basis onto a grid, e.g. to export it as CSV."""
    z_um = np.asarray(z_um, dtype=float)
    return TabulatedBasis(z_um, basis.moments(z_um), centers=basis.centers)


@dataclass(frozen=True)
class WellSpec:
    center: float
    axial_frequency: float

    def __post_init__(self):
        if not self.axial_frequency > 0:
            raise ValueError("axial_frequency must be positive")


@dataclass(frozen=True)
class Waveform:
    """Per-electrode DAC samples on a uniform time grid.

    ``voltages[m, k]`` is held on electrode ``k`` during
    ``[t0 + m*dt, t0 + (m+1)*dt)``. ``centers`` records the designed
    well position of each sample when known.
    """

    sample_interval: float
    voltages: np.ndarray
    t0: float = 0.0
    centers: Optional[np.ndarray] = None
    ramp_samples: int = 0
    dac_range: tuple = (-10.0, 10.0)

    def __post_init__(self):
        v = np.array(self.voltages, dtype=float)
        if v.ndim != 2:
            raise ValueError("voltages must be (n_samples, n_electrodes)")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        lo, hi = self.dac_range
        if np.any(v < lo) or np.any(v > hi):
            raise ValueError(f"voltage outside DAC range [{lo}, {hi}] V")
        v.setflags(write=False)
        object.__setattr__(self, "voltages", v)

    @property
    def channels(self) -> np.ndarray:
        return self.voltages.T

    @property
    def n_samples(self) -> int:
        return self.voltages.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.sample_interval * np.arange(self.n_samples)

    @property
    def duration(self) -> float:
        return self.sample_interval * self.n_samples

    def replace(self, **changes) -> "Waveform":
        fields = dict(
            sample_interval=self.sample_interval,
            voltages=self.voltages,
            t0=self.t0,
            centers=self.centers,
            ramp_samples=self.ramp_samples,
            dac_range=self.dac_range,
        )
        fields.update(changes)
        return Waveform(**fields)

    def to_csv(self, path):
        """Columns ``t_us, center_um, V1 .. VN``; ``t_us`` is each sample's start."""
        n = self.voltages.shape[1]
        centers = self.centers if self.centers is not None else np.full(self.n_samples, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_us", "center_um"] + [f"V{k + 1}" for k in range(n)])
            for t, c, row in zip(self.times, centers, self.voltages):
                w.writerow([repr(float(t)), repr(float(c))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, dac_range=(-10.0, 10.0)) -> "Waveform":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty waveform file")
        names = [h.strip() for h in rows[0]]
        if len(names) < 3 or names[0] != "t_us" or names[1] != "center_um":
            raise ValueError(f"{path}: expected header 't_us, center_um, V1 .. VN'")
        if any(len(r) != len(names) for r in rows[1:]):
            raise ValueError(f"{path}: every row needs {len(names)} columns")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(names))
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from exc
        t = data[:, 0]
        if t.size < 2:
            raise ValueError(f"{path}: waveform needs at least two samples")
        dt = np.diff(t)
        if np.any(np.abs(dt - dt[0]) > 1e-9 * max(1.0, abs(dt[0]))) or not dt[0] > 0:
            raise ValueError(f"{path}: samples must be uniformly spaced in time")
        volts = data[:, 2:]
        centers = data[:, 1]
        return cls(float(dt[0]), volts, float(t[0]),
                   None if np.all(np.isnan(centers)) else centers, 0, dac_range)


def _check_voltages(basis, voltages):
    voltages = np.asarray(voltages, dtype=float)
    if voltages.shape[-1] != basis.n_electrodes:
        raise ValueError(
            f"expected {basis.n_electrodes} voltages, got {voltages.shape[-1]}"
        )
    return voltages


def potential_at(basis: ElectrodeBasis, voltages, z, charge=ELEMENTARY_CHARGE):
    """Potential energy (J) of the ion at ``z``."""
    voltages = _check_voltages(basis, voltages)
    basis.check_range(z)
    return charge * basis.moments(z) @ voltages


def find_wells(basis, voltages, guess, mass=CA40_MASS, charge=ELEMENTARY_CHARGE,
               tol=1e-7, max_iter=50, times=None):
    """Vectorised Newton search for the potential minimum.

    ``voltages`` is ``(n, n_electrodes)`` and ``guess`` broadcastable to
    ``(n,)``. Returns ``(centers_um, frequencies_hz)``.
    """
    voltages = np.atleast_2d(_check_voltages(basis, voltages))
    z = np.broadcast_to(np.asarray(guess, dtype=float), voltages.shape[:1]).copy()
    lo, hi = basis.axial_range
    max_step = 0.25 * (hi - lo)
    for _ in range(max_iter):
        grad = np.einsum("ij,ij->i", basis.moments(z, 1), voltages)
        curv = np.einsum("ij,ij->i", basis.moments(z, 2), voltages)
        bad = ~(curv > 0)
        if np.any(bad):
            _raise_lost(bad, z, times)
        step = np.clip(-grad / curv, -max_step, max_step)
        z = np.clip(z + step, lo, hi)
        if np.all(np.abs(step) < tol):
            break
    curv = np.einsum("ij,ij->i", basis.moments(z, 2), voltages)
    bad = ~(curv > 0) | (z <= lo) | (z >= hi)
    if np.any(bad):
        _raise_lost(bad, z, times)
    return z, frequency_for_curvature(curv, mass, charge)


def _raise_lost(bad, z, times):
    i = int(np.flatnonzero(bad)[0])
    t = None if times is None else float(np.asarray(times)[i])
    raise WellLostError("well lost", time=t, position=float(z[i]))


def locate_minimum(basis, voltages, n_grid=2001):
    """Global minimum of the potential on a grid, refined by Newton."""
    voltages = _check_voltages(basis, voltages)
    grid = np.linspace(*basis.axial_range, n_grid)
    z0 = grid[np.argmin(basis.moments(grid) @ voltages)]
    z, _ = find_wells(basis, voltages[None, :], [z0])
    return float(z[0])


def find_well(basis, voltages, guess, mass=CA40_MASS, charge=ELEMENTARY_CHARGE) -> WellSpec:
    """Refine the potential minimum near ``guess`` and read off its frequency."""
    z, f = find_wells(basis, np.asarray(voltages)[None, :], [guess], mass, charge)
    return WellSpec(float(z[0]), float(f[0]))


_CONSTRAINTS = ("value", "gradient", "curvature")


def solve_voltages(basis: ElectrodeBasis, spec: WellSpec, regularization: float = 0.0,
                   value: float = 0.0, mass=CA40_MASS, charge=ELEMENTARY_CHARGE):
    """Minimum-norm voltages placing a harmonic well at ``spec.center``.

    Constrains the potential value, a zero gradient and the curvature that
    yields ``spec.axial_frequency``. Constraint rows are normalised before
    the Tikhonov-regularised solve, so ``regularization`` is dimensionless.
    """
    basis.check_range(spec.center)
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    a = np.vstack([basis.moments(spec.center, order) for order in range(3)])
    b = np.array([value, 0.0, curvature_for_frequency(spec.axial_frequency, mass, charge)])
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms == 0):
        names = [n for n, r in zip(_CONSTRAINTS, norms) if r == 0]
        raise ConstraintError(f"rank-deficient constraints: {', '.join(names)}")
    a_n = a / norms[:, None]
    b_n = b / norms
    u, s, vt = np.linalg.svd(a_n, full_matrices=False)
    if s[-1] < 1e-10 * s[0]:
        weights = np.abs(u[:, -1])
        names = [n for n, w in zip(_CONSTRAINTS, weights) if w > 0.1]
        raise ConstraintError(f"rank-deficient constraints: {', '.join(names)}")
    # V = A^T (A A^T + lam I)^-1 b, the minimiser of |AV-b|^2 + lam |V|^2
    gain = s / (s**2 + regularization)
    return vt.T @ (gain * (u.T @ b_n))


def make_transport_waveform(basis, z_i, z_f, duration, sample_interval, spec_frequency,
                            hold_before=2, hold_after=75, regularization=0.0,
                            dac_range=(-10.0, 10.0), mass=CA40_MASS):
    """Linear-in-time interpolation of the well centre from ``z_i`` to ``z_f``.

    ``duration / sample_interval`` ramp samples are placed at
    ``z_i + (z_f - z_i) * m / (M - 1)``; endpoint samples are repeated
    ``hold_before`` / ``hold_after`` times so that filters settle. The first
    ramp sample starts at ``t = 0``.
    """
    ratio = duration / sample_interval
    n_ramp = int(round(ratio))
    if n_ramp < 2 or abs(ratio - n_ramp) > 1e-9 * max(1.0, ratio):
        raise ValueError("duration must be an integer multiple (>= 2) of sample_interval")
    ramp = z_i + (z_f - z_i) * np.arange(n_ramp) / (n_ramp - 1)
    centers = np.concatenate([np.full(hold_before, z_i), ramp, np.full(hold_after, z_f)])
    cache = {}
    rows = []
    for z in centers:
        if z not in cache:
            cache[z] = solve_voltages(basis, WellSpec(z, spec_frequency), regularization, mass=mass)
        rows.append(cache[z])
    return Waveform(
        sample_interval=sample_interval,
        voltages=np.array(rows),
        t0=-hold_before * sample_interval,
        centers=centers,
        ramp_samples=n_ramp,
        dac_range=dac_range,
    )


def default_basis() -> StripElectrodeBasis:
    """Eleven 60 um strips at 60 um height centred on the origin."""
    return StripElectrodeBasis.uniform(11, pitch=60.0, height=60.0)
