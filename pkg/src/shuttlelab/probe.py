"""Position-dependent deshelving probe: scans, calibration and trajectory fits.

Positions are in um, times in us and speeds in m/s. Delay scans carry
their abscissa in ns, as recorded by the sequencer.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .dynamics import IonTrajectory, ground_state_extent
from .numerics import FitResult, lm_fit, make_rng, spawn_seeds, wilson_bounds

__all__ = [
    "BeamProfile",
    "DeshelveScan",
    "CalibrationCurve",
    "CalibrationError",
    "OutOfRangeError",
    "ReconstructedTrajectory",
    "TrajectoryFit",
    "SpeedMetrics",
    "deshelve_probability",
    "deshelve_probability_moving",
    "simulate_scan",
    "fit_calibration",
    "invert_calibration",
    "reconstruct_trajectory",
    "erf_position",
    "erf_velocity",
    "fit_erf_trajectory",
    "speed_metrics",
    "DeshelvingCalibration",
    "ErfTrajectoryRegressor",
    "DEFAULT_CUTOFF",
]

DEFAULT_CUTOFF = float(ground_state_extent(2.2e6))  # um


class CalibrationError(ValueError):
    pass


class OutOfRangeError(ValueError):
    def __init__(self, message, boundary=None):
        super().__init__(message)
        self.boundary = boundary


@dataclass(frozen=True)
class BeamProfile:
    """Gaussian deshelving beam; ``peak_rate`` in 1/us, lengths in um."""

    center: float = 80.0
    waist: float = 100.0
    peak_rate: float = 8.0
    pulse_duration: float = 0.2

    def __post_init__(self):
        if not self.waist > 0:
            raise ValueError("waist must be positive")
        if self.peak_rate < 0:
            raise ValueError("peak_rate must be non-negative")
        if not self.pulse_duration > 0:
            raise ValueError("pulse_duration must be positive")

    def rate(self, z):
        z = np.asarray(z, dtype=float)
        return self.peak_rate * np.exp(-2.0 * (z - self.center) ** 2 / self.waist**2)


def deshelve_probability(beam: BeamProfile, z):
    """``1 - exp(-rate(z) * pulse_duration)`` for a stationary ion."""
    return -np.expm1(-beam.rate(z) * beam.pulse_duration)


def _as_position_function(trajectory) -> tuple:
    if isinstance(trajectory, IonTrajectory):
        return trajectory.position_at, (trajectory.times[0], trajectory.times[-1])
    if callable(trajectory):
        return trajectory, (-np.inf, np.inf)
    raise TypeError("trajectory must be an IonTrajectory or a callable z(t)")


def deshelve_probability_moving(beam: BeamProfile, trajectory, pulse_start, n_nodes=201):
    """Deshelving probability for a pulse fired while the ion moves.

    Integrates the local rate along ``z(t)`` over the pulse window with
    Simpson's rule; ``pulse_start`` may be an array.
    """
    z_of, (t_lo, t_hi) = _as_position_function(trajectory)
    starts = np.atleast_1d(np.asarray(pulse_start, dtype=float))
    if np.any(starts < t_lo) or np.any(starts + beam.pulse_duration > t_hi):
        raise ValueError("pulse window outside the trajectory time span")
    u = np.linspace(0.0, beam.pulse_duration, n_nodes)
    t = starts[:, None] + u[None, :]
    dose = integrate.simpson(beam.rate(z_of(t)), x=u, axis=-1)
    p = -np.expm1(-dose)
    return p if np.ndim(pulse_start) else float(p[0])


@dataclass(frozen=True)
class DeshelveScan:
    """Counts of deshelved (bright) outcomes per abscissa point.

    ``kind`` is ``"calibration"`` (abscissa = position in um) or
    ``"delay"`` (abscissa = pulse delay in ns).
    """

    abscissa: np.ndarray
    deshelved: np.ndarray
    trials: np.ndarray
    kind: str = "calibration"

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float)
        k = np.asarray(self.deshelved, dtype=int)
        n = np.broadcast_to(np.asarray(self.trials, dtype=int), x.shape).copy()
        if x.ndim != 1 or k.shape != x.shape:
            raise ValueError("abscissa and counts must be 1-D and equally long")
        if x.size == 0:
            raise ValueError("scan is empty")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if np.any(n < 1) or np.any(k < 0) or np.any(k > n):
            raise ValueError("need 0 <= deshelved <= trials and trials >= 1")
        if self.kind not in ("calibration", "delay"):
            raise ValueError(f"unknown scan kind {self.kind!r}")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "deshelved", k)
        object.__setattr__(self, "trials", n)

    @property
    def fraction(self) -> np.ndarray:
        return self.deshelved / self.trials

    def interval(self, level=0.68):
        return wilson_bounds(self.deshelved, self.trials, level)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["abscissa", "deshelved", "trials"])
            for row in zip(self.abscissa, self.deshelved, self.trials):
                w.writerow([repr(float(row[0])), int(row[1]), int(row[2])])

    @classmethod
    def from_csv(cls, path, kind="calibration"):
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty scan file")
        header = [h.strip() for h in rows[0]]
        if header != ["abscissa", "deshelved", "trials"]:
            raise ValueError(f"{path}: expected header 'abscissa, deshelved, trials'")
        body = rows[1:]
        if not body:
            raise ValueError(f"{path}: scan has no data rows")
        try:
            x = [float(r[0]) for r in body]
            k = [int(r[1]) for r in body]
            n = [int(r[2]) for r in body]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from exc
        return cls(np.array(x), np.array(k), np.array(n), kind)


def simulate_scan(beam: BeamProfile, abscissa, trials, seed, trajectory=None,
                  integrate_pulse=False) -> DeshelveScan:
    """Binomial synthetic scan.

    Without ``trajectory`` this is a calibration scan with a stationary ion
    at each abscissa (um). With a trajectory it is a delay scan: abscissa
    are pulse delays in ns and the ion position is sampled at the pulse
    midpoint, or integrated over the pulse when ``integrate_pulse``.
    """
    x = np.asarray(abscissa, dtype=float)
    if trajectory is None:
        p = deshelve_probability(beam, x)
        kind = "calibration"
    else:
        starts = x * 1e-3
        if integrate_pulse:
            p = deshelve_probability_moving(beam, trajectory, starts)
        else:
            z_of, _ = _as_position_function(trajectory)
            p = deshelve_probability(beam, z_of(starts + 0.5 * beam.pulse_duration))
        kind = "delay"
    n = np.broadcast_to(np.asarray(trials, dtype=int), x.shape)
    if np.any(n < 1):
        raise ValueError("trials must be at least 1")
    p = np.clip(p, 0.0, 1.0)
    # one derived stream per point keeps draws independent of evaluation order
    k = np.array([make_rng(child).binomial(int(ni), pi)
                  for child, ni, pi in zip(spawn_seeds(seed, x.size), n, p)], dtype=int)
    return DeshelveScan(x, k, n, kind)


@dataclass(frozen=True)
class CalibrationCurve:
    """Polynomial ``P_d(z)`` in the scaled variable ``s = (z - offset) / scale``.

    ``coefficients`` are in increasing power order; ``covariance`` refers
    to them.
    """

    coefficients: np.ndarray
    offset: float
    scale: float
    valid_range: tuple
    direction: str
    covariance: Optional[np.ndarray] = None
    reduced_chi2: float = float("nan")

    def __call__(self, z):
        s = (np.asarray(z, dtype=float) - self.offset) / self.scale
        return np.polynomial.polynomial.polyval(s, self.coefficients)

    def variance(self, z):
        """Variance of the fitted probability at ``z`` from the coefficient covariance."""
        if self.covariance is None:
            return np.zeros_like(np.asarray(z, dtype=float))
        s = (np.asarray(z, dtype=float) - self.offset) / self.scale
        v = np.polynomial.polynomial.polyvander(s, len(self.coefficients) - 1)
        return np.einsum("...i,ij,...j->...", v, self.covariance, v)

    def derivative(self, z):
        s = (np.asarray(z, dtype=float) - self.offset) / self.scale
        d = np.polynomial.polynomial.polyder(self.coefficients)
        return np.polynomial.polynomial.polyval(s, d) / self.scale

    @property
    def probability_range(self):
        ends = self(np.array(self.valid_range))
        return float(ends.min()), float(ends.max())

    def to_dict(self):
        return {
            "coefficients": [float(c) for c in self.coefficients],
            "offset": float(self.offset),
            "scale": float(self.scale),
            "valid_range": [float(v) for v in self.valid_range],
            "direction": self.direction,
            "covariance": None if self.covariance is None else self.covariance.tolist(),
            "reduced_chi2": float(self.reduced_chi2),
        }

    @classmethod
    def from_dict(cls, d):
        cov = d.get("covariance")
        return cls(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            offset=float(d["offset"]),
            scale=float(d["scale"]),
            valid_range=tuple(d["valid_range"]),
            direction=d["direction"],
            covariance=None if cov is None else np.asarray(cov, dtype=float),
            reduced_chi2=float(d.get("reduced_chi2", float("nan"))),
        )


def _monotone_interval(curve_deriv, lo, hi, anchor, n_grid=4001):
    grid = np.linspace(lo, hi, n_grid)
    sign = np.sign(curve_deriv(grid))
    i = int(np.clip(np.searchsorted(grid, anchor), 0, n_grid - 1))
    s0 = sign[i]
    if s0 == 0:
        return None
    left = i
    while left > 0 and sign[left - 1] == s0:
        left -= 1
    right = i
    while right < n_grid - 1 and sign[right + 1] == s0:
        right += 1
    return grid[left], grid[right], ("increasing" if s0 > 0 else "decreasing")


def fit_calibration(scan: DeshelveScan, degree: int = 5, level: float = 0.68,
                    min_coverage: float = 0.6) -> CalibrationCurve:
    """Weighted polynomial fit of deshelving probability versus position.

    Weights come from the Wilson interval half-widths. The valid range is
    the monotone stretch of the fitted polynomial that contains the median
    scan position; if it covers less than ``min_coverage`` of the scanned
    span the calibration cannot be inverted.
    """
    if scan.kind != "calibration":
        raise ValueError("fit_calibration needs a calibration scan")
    if degree < 2:
        raise ValueError("degree must be at least 2")
    z = scan.abscissa
    if z.size <= degree:
        raise ValueError("not enough scan points for the polynomial degree")
    lo, hi = wilson_bounds(scan.deshelved, scan.trials, level)
    sigma = 0.5 * (hi - lo)
    offset = 0.5 * (z[0] + z[-1])
    scale = 0.5 * (z[-1] - z[0])
    s = (z - offset) / scale
    a = np.polynomial.polynomial.polyvander(s, degree) / sigma[:, None]
    b = scan.fraction / sigma
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    cov = np.linalg.pinv(a.T @ a)
    resid = a @ coef - b
    dof = z.size - (degree + 1)
    rchi2 = float(resid @ resid / dof) if dof > 0 else float("nan")
    trial = CalibrationCurve(coef, offset, scale, (z[0], z[-1]), "increasing", cov, rchi2)
    found = _monotone_interval(trial.derivative, z[0], z[-1], np.median(z))
    span = z[-1] - z[0]
    if found is None or (found[1] - found[0]) < min_coverage * span:
        raise CalibrationError("calibration not invertible: no monotone interval covers "
                               f"{min_coverage:.0%} of the scanned span")
    return CalibrationCurve(coef, offset, scale, (float(found[0]), float(found[1])),
                            found[2], cov, rchi2)


def invert_calibration(curve: CalibrationCurve, p, tol: float = 1e-3, clip: bool = False):
    """Position(s) at which the calibration curve equals ``p``.

    Bisection on the monotone valid range to ``tol`` um (default 1 nm).
    Values outside the attainable range raise :class:`OutOfRangeError`
    naming the boundary, unless ``clip`` is set.
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    z_lo, z_hi = curve.valid_range
    p_lo_end, p_hi_end = float(curve(z_lo)), float(curve(z_hi))
    p_min, p_max = min(p_lo_end, p_hi_end), max(p_lo_end, p_hi_end)
    slack = 1e-12
    if not clip:
        below = p_arr < p_min - slack
        above = p_arr > p_max + slack
        if np.any(below) or np.any(above):
            if np.any(below):
                bound = z_lo if p_lo_end == p_min else z_hi
                which = f"minimum {p_min:.4g} at z={bound:.3f} um"
            else:
                bound = z_hi if p_hi_end == p_max else z_lo
                which = f"maximum {p_max:.4g} at z={bound:.3f} um"
            raise OutOfRangeError(f"probability outside calibration range; clamped to {which}",
                                  boundary=bound)
    target = np.clip(p_arr, p_min, p_max)
    sign = 1.0 if curve.direction == "increasing" else -1.0
    a = np.full(target.shape, z_lo)
    b = np.full(target.shape, z_hi)
    n_iter = int(np.ceil(np.log2(max((z_hi - z_lo) / tol, 2.0)))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        go_right = sign * (curve(mid) - target) < 0
        a = np.where(go_right, mid, a)
        b = np.where(go_right, b, mid)
    z = 0.5 * (a + b)
    return z if np.ndim(p) else float(z[0])


@dataclass(frozen=True)
class ReconstructedTrajectory:
    times: np.ndarray
    positions: np.ndarray
    sigma: np.ndarray
    low: np.ndarray
    high: np.ndarray
    in_range: np.ndarray

    @property
    def n_out_of_range(self) -> int:
        return int(np.count_nonzero(~self.in_range))


def reconstruct_trajectory(curve: CalibrationCurve, delay_scan: DeshelveScan,
                           pulse_duration: float = 0.2, level: float = 0.68,
                           include_calibration: bool = True):
    """Invert each delay point through the calibration.

    Times are pulse midpoints in us. Position uncertainties come from
    inverting the Wilson interval endpoints; points whose measured fraction
    falls outside the calibration range are flagged (``in_range`` False)
    and carry clamped positions. With ``include_calibration`` the curve's
    own uncertainty, mapped through the local slope, is added in quadrature.
    """
    if delay_scan.kind != "delay":
        raise ValueError("reconstruct_trajectory needs a delay scan")
    times = delay_scan.abscissa * 1e-3 + 0.5 * pulse_duration
    p = delay_scan.fraction
    p_min, p_max = curve.probability_range
    in_range = (p >= p_min) & (p <= p_max)
    if not np.any(in_range):
        raise OutOfRangeError("every delay point lies outside the calibration range")
    lo, hi = delay_scan.interval(level)
    z = invert_calibration(curve, p, clip=True)
    z_a = invert_calibration(curve, lo, clip=True)
    z_b = invert_calibration(curve, hi, clip=True)
    z_low, z_high = np.minimum(z_a, z_b), np.maximum(z_a, z_b)
    sigma = 0.5 * (z_high - z_low)
    if include_calibration:
        slope = np.abs(curve.derivative(z))
        with np.errstate(divide="ignore"):
            extra = np.where(slope > 0, curve.variance(z) / slope**2, 0.0)
        sigma = np.sqrt(sigma**2 + extra)
    return ReconstructedTrajectory(times, z, sigma, z_low, z_high, in_range)


def erf_position(t, z_i, v_max, t_sigma, t_c, t_0):
    """Position for a Gaussian speed profile (erf-shaped trajectory)."""
    t = np.asarray(t, dtype=float)
    amp = 0.5 * np.sqrt(np.pi) * v_max * t_sigma
    return z_i + amp * (special.erf((t - t_c) / t_sigma) - special.erf((t_0 - t_c) / t_sigma))


def erf_velocity(t, v_max, t_sigma, t_c):
    t = np.asarray(t, dtype=float)
    return v_max * np.exp(-(((t - t_c) / t_sigma) ** 2))


PARAMETER_NAMES = ("z_i", "v_max", "t_sigma", "t_c", "t_0")


@dataclass(frozen=True)
class TrajectoryFit:
    z_i: float
    v_max: float
    t_sigma: float
    t_c: float
    t_0: float
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((5, 5)))
    result: Optional[FitResult] = None

    def __post_init__(self):
        if not self.v_max > 0 or not self.t_sigma > 0:
            raise ValueError("v_max and t_sigma must be positive")

    @property
    def parameters(self) -> np.ndarray:
        return np.array([self.z_i, self.v_max, self.t_sigma, self.t_c, self.t_0])

    @property
    def errors(self) -> dict:
        err = np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))
        return dict(zip(PARAMETER_NAMES, err))

    @property
    def amplitude(self) -> float:
        return 0.5 * np.sqrt(np.pi) * self.v_max * self.t_sigma

    @property
    def displacement(self) -> float:
        return 2.0 * self.amplitude

    @property
    def asymptotes(self):
        start = self.z_i - self.amplitude * (1.0 + special.erf((self.t_0 - self.t_c) / self.t_sigma))
        return start, start + self.displacement

    def position(self, t):
        return erf_position(t, *self.parameters)

    def velocity(self, t):
        return erf_velocity(t, self.v_max, self.t_sigma, self.t_c)

    def shifted(self, dt) -> "TrajectoryFit":
        return TrajectoryFit(self.z_i, self.v_max, self.t_sigma, self.t_c + dt, self.t_0 + dt,
                             self.covariance, self.result)


def _initial_guess(t, z, t_0):
    n_edge = max(2, len(t) // 10)
    z_start = float(np.median(z[:n_edge]))
    z_end = float(np.median(z[-n_edge:]))
    kernel = np.ones(5) / 5.0
    zs = np.convolve(z, kernel, mode="same") if len(z) >= 10 else z
    slope = np.gradient(zs, t)
    inner = slice(2, len(t) - 2) if len(t) >= 10 else slice(None)
    direction = np.sign(z_end - z_start) or 1.0
    idx = np.arange(len(t))[inner][np.argmax(direction * slope[inner])]
    v_max = max(abs(slope[idx]), 1e-9)
    t_sigma = abs(z_end - z_start) / (np.sqrt(np.pi) * v_max)
    if not t_sigma > 0:
        t_sigma = 0.25 * (t[-1] - t[0])
    t_c = float(t[idx])
    # z_i is the position at t_0 of the curve through the plateaus
    z_i = z_start + (z_end - z_start) * 0.5 * (1 + special.erf((t_0 - t_c) / t_sigma))
    return np.array([z_i, direction * v_max, t_sigma, t_c, t_0])


def fit_erf_trajectory(t, z, sigma=None, t_0: float = 0.0, initial=None) -> TrajectoryFit:
    """Weighted LM fit of the erf trajectory model.

    ``z_i`` and ``t_0`` enter the model only through one combination, so
    ``t_0`` is held at the supplied reference time (the waveform start by
    default) and the remaining four parameters are fitted.
    """
    t = column_or_1d(np.asarray(t, dtype=float))
    z = column_or_1d(np.asarray(z, dtype=float))
    if t.size < 6:
        raise ValueError("need at least six points to fit the trajectory")
    sigma = np.ones_like(z) if sigma is None else column_or_1d(np.asarray(sigma, dtype=float))
    order = np.argsort(t)
    t, z, sigma = t[order], z[order], sigma[order]
    p0 = _initial_guess(t, z, t_0) if initial is None else np.asarray(initial, dtype=float)
    p0[4] = t_0
    if p0[1] < 0:
        raise ValueError("trajectory must move towards increasing z")
    lower = [-np.inf, 0.0, 1e-9, -np.inf, t_0]
    upper = [np.inf, np.inf, np.inf, np.inf, t_0]

    def model(x, p):
        return erf_position(x, *p)

    res = lm_fit(model, p0, t, z, sigma, bounds=(lower, upper))
    p = res.parameters
    return TrajectoryFit(float(p[0]), float(p[1]), float(p[2]), float(p[3]), float(p[4]),
                         res.covariance, res)


@dataclass(frozen=True)
class SpeedMetrics:
    v_mean: float
    v_max: float
    t_start: float
    t_end: float
    cutoff: float
    displacement: float

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in
                ("v_mean", "v_max", "t_start", "t_end", "cutoff", "displacement")}


def speed_metrics(fit: TrajectoryFit, displacement: Optional[float] = None,
                  cutoff: float = DEFAULT_CUTOFF) -> SpeedMetrics:
    """Mean speed between the times the ion is ``cutoff`` from its asymptotes.

    ``displacement`` defaults to the fitted asymptote separation; times
    follow in closed form from the inverse complementary error function.
    """
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    if displacement is None:
        displacement = fit.displacement
    if cutoff >= fit.amplitude or cutoff > 0.5 * displacement:
        raise ValueError("cutoff larger than half the displacement")
    x = special.erfcinv(cutoff / fit.amplitude)
    t_start = fit.t_c - fit.t_sigma * x
    t_end = fit.t_c + fit.t_sigma * x
    return SpeedMetrics(displacement / (t_end - t_start), fit.v_max, float(t_start),
                        float(t_end), float(cutoff), float(displacement))


class DeshelvingCalibration(BaseEstimator):
    """Estimator wrapper for the polynomial ``P_d(z)`` calibration.

    ``fit(X, y, trials)`` takes positions and deshelved counts;
    ``predict`` evaluates the curve and ``inverse_transform`` maps
    probabilities back to positions.
    """

    def __init__(self, degree=5, level=0.68, min_coverage=0.6):
        self.degree = degree
        self.level = level
        self.min_coverage = min_coverage

    def fit(self, X, y, trials=None):
        z = column_or_1d(np.asarray(X, dtype=float))
        k = column_or_1d(np.asarray(y))
        if trials is None:
            raise ValueError("trials are required to weight the calibration")
        scan = DeshelveScan(z, k, trials, "calibration")
        self.curve_ = fit_calibration(scan, self.degree, self.level, self.min_coverage)
        self.valid_range_ = self.curve_.valid_range
        return self

    def predict(self, X):
        check_is_fitted(self, "curve_")
        return self.curve_(column_or_1d(np.asarray(X, dtype=float)))

    def inverse_transform(self, p):
        check_is_fitted(self, "curve_")
        return invert_calibration(self.curve_, np.asarray(p, dtype=float))


class ErfTrajectoryRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_erf_trajectory`."""

    def __init__(self, t_0=0.0, cutoff=DEFAULT_CUTOFF):
        self.t_0 = t_0
        self.cutoff = cutoff

    def fit(self, X, y, sigma=None):
        self.fit_ = fit_erf_trajectory(X, y, sigma, t_0=self.t_0)
        self.params_ = dict(zip(PARAMETER_NAMES, self.fit_.parameters))
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.position(column_or_1d(np.asarray(X, dtype=float)))

    def speed_metrics(self, displacement=None):
        check_is_fitted(self, "fit_")
        return speed_metrics(self.fit_, displacement, self.cutoff)
