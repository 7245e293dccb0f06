"""Fock-state distributions, sideband forward models and thermometry fits.

Times are in us, rates and Rabi frequencies in rad/us (or 1/us for the
decoherence rate), detunings in rad/us.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from .numerics import FitResult, laguerre_sequence, lm_fit, make_rng, spawn_seeds, wilson_bounds

__all__ = [
    "TruncationError",
    "FockDistribution",
    "MotionalParams",
    "SidebandScan",
    "SidebandPeak",
    "auto_n_max",
    "thermal_distribution",
    "coherent_distribution",
    "displaced_thermal_distribution",
    "displaced_thermal_populations",
    "bsb_rabi_frequency",
    "bsb_flop",
    "sideband_lineshape",
    "simulate_sideband_scan",
    "fit_flop",
    "fit_sideband_peak",
    "fit_sideband_ratio",
    "SidebandRatio",
    "ratio_thermometry",
    "ratio_thermometry_sigma",
    "condition_number",
    "SidebandFlopRegressor",
]

TAIL_TOLERANCE = 1e-6
N_MAX_CAP = 1024
FLOP_PARAMETERS = ("n_th", "alpha", "gamma", "omega0")


class TruncationError(ValueError):
    """Fock truncation too small to hold all but 1e-6 of the population."""


@dataclass(frozen=True)
class FockDistribution:
    populations: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("populations must be a non-empty 1-D array")
        if np.any(p < -1e-15) or not np.all(np.isfinite(p)):
            raise ValueError("populations must be finite and non-negative")
        total = p.sum()
        if total < 1.0 - TAIL_TOLERANCE:
            raise TruncationError(
                f"truncated population sums to {total:.9f}; increase n_max above {p.size - 1}")
        if total > 1.0 + 1e-9:
            raise ValueError(f"populations sum to {total:.12f} > 1")
        object.__setattr__(self, "populations", np.clip(p, 0.0, None))

    @property
    def n_max(self) -> int:
        return self.populations.size - 1

    @property
    def mean(self) -> float:
        return float(np.arange(self.populations.size) @ self.populations)

    @property
    def variance(self) -> float:
        n = np.arange(self.populations.size)
        return float((n * n) @ self.populations - self.mean**2)


@dataclass(frozen=True)
class MotionalParams:
    """Motional state and probe parameters.

    ``gamma`` in 1/us and ``omega0`` (carrier Rabi frequency) in rad/us.
    """

    n_th: float = 0.0
    alpha: complex = 0.0
    gamma: float = 0.0
    eta: float = 0.1
    omega0: float = 2 * np.pi * 0.05

    def __post_init__(self):
        if self.n_th < 0:
            raise ValueError("n_th must be non-negative")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")

    @property
    def n_coh(self) -> float:
        return float(abs(self.alpha) ** 2)

    def distribution(self, n_max: Optional[int] = None) -> FockDistribution:
        return displaced_thermal_distribution(self.n_th, self.alpha, n_max)

    def to_dict(self):
        return {"n_th": float(self.n_th), "alpha": [float(np.real(self.alpha)),
                                                    float(np.imag(self.alpha))],
                "n_coh": self.n_coh, "gamma": float(self.gamma), "eta": float(self.eta),
                "omega0": float(self.omega0)}


def auto_n_max(mean: float, variance: float) -> int:
    """Starting truncation ``mean + 8 * sqrt(variance)``, capped at 1024."""
    return int(min(np.ceil(mean + 8.0 * np.sqrt(max(variance, 0.0))), N_MAX_CAP))


def _truncate(log_pop, mean, variance, n_max):
    """Evaluate ``log_pop(n_max)`` and enforce the tail bound.

    With ``n_max`` None the auto value is grown until the bound holds.
    """
    if n_max is not None:
        if n_max < 0:
            raise ValueError("n_max must be non-negative")
        p = np.exp(log_pop(int(n_max)))
        if p.sum() < 1.0 - TAIL_TOLERANCE:
            raise TruncationError(
                f"n_max={n_max} leaves {1.0 - p.sum():.2e} of the population in the tail; "
                f"use n_max >= {_required(log_pop, mean, variance)}")
        return FockDistribution(p)
    n = max(auto_n_max(mean, variance), 1)
    while True:
        p = np.exp(log_pop(n))
        if p.sum() >= 1.0 - TAIL_TOLERANCE:
            return FockDistribution(p)
        if n >= N_MAX_CAP:
            raise TruncationError(f"distribution needs more than {N_MAX_CAP} Fock levels")
        n = min(int(np.ceil(1.5 * n)), N_MAX_CAP)


def _required(log_pop, mean, variance):
    try:
        return _truncate(log_pop, mean, variance, None).n_max
    except TruncationError:
        return f"more than {N_MAX_CAP}"


def _log_thermal(n_bar):
    def log_pop(n_max):
        n = np.arange(n_max + 1)
        if n_bar == 0:
            out = np.full(n.size, -np.inf)
            out[0] = 0.0
            return out
        return n * np.log(n_bar) - (n + 1) * np.log1p(n_bar)
    return log_pop


def _log_poisson(mean):
    def log_pop(n_max):
        return stats.poisson.logpmf(np.arange(n_max + 1), mean)
    return log_pop


def thermal_distribution(n_bar: float, n_max: Optional[int] = None) -> FockDistribution:
    """Geometric populations ``n_bar^n / (1+n_bar)^(n+1)``."""
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    return _truncate(_log_thermal(float(n_bar)), n_bar, n_bar * (n_bar + 1), n_max)


def coherent_distribution(alpha: complex, n_max: Optional[int] = None) -> FockDistribution:
    """Poisson populations with mean ``|alpha|^2``."""
    a2 = float(abs(alpha) ** 2)
    return _truncate(_log_poisson(a2), a2, a2, n_max)


def _log_laguerre_negative(n_max, x):
    """``log L_n(-x)`` for n = 0..n_max, x >= 0.

    Every term of ``L_n(-x)`` is positive, so the three-term recurrence is
    run on successive ratios to stay finite for large arguments.
    """
    out = np.zeros(n_max + 1)
    if n_max == 0:
        return out
    ratio = 1.0 + x
    out[1] = np.log(ratio)
    for k in range(1, n_max):
        ratio = ((2 * k + 1 + x) - k / ratio) / (k + 1)
        out[k + 1] = out[k] + np.log(ratio)
    return out


def _log_displaced_thermal(n_bar, a2):
    if a2 == 0.0:
        return _log_thermal(n_bar)
    if n_bar < 1e-15:
        return _log_poisson(a2)
    x = a2 / (n_bar * (1.0 + n_bar))

    def log_pop(m):
        n = np.arange(m + 1)
        return (n * np.log(n_bar) - (n + 1) * np.log1p(n_bar) - a2 / (1.0 + n_bar)
                + _log_laguerre_negative(m, x))
    return log_pop


def displaced_thermal_populations(n_bar: float, alpha: complex, n_max: int) -> np.ndarray:
    """Raw populations ``p_0 .. p_{n_max}`` of a displaced thermal state.

    No truncation bound is applied; use :func:`displaced_thermal_distribution`
    for a validated distribution.
    """
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    return np.exp(_log_displaced_thermal(float(n_bar), float(abs(alpha) ** 2))(int(n_max)))


def displaced_thermal_distribution(n_bar: float, alpha: complex,
                                   n_max: Optional[int] = None) -> FockDistribution:
    """Populations of a displaced thermal state.

    Closed form with a Laguerre polynomial of negative argument, evaluated
    in log space. ``n_bar -> 0`` falls back to the coherent limit and
    ``alpha = 0`` to the thermal one.
    """
    if n_bar < 0:
        raise ValueError("n_bar must be non-negative")
    a2 = float(abs(alpha) ** 2)
    mean = n_bar + a2
    var = n_bar * (n_bar + 1) + a2 * (2 * n_bar + 1)
    return _truncate(_log_displaced_thermal(float(n_bar), a2), mean, var, n_max)


def bsb_rabi_frequency(n, eta: float, omega0: float):
    """Blue-sideband Rabi frequency between levels n and n+1 (signed)."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("n must be non-negative")
    lag = laguerre_sequence(int(np.max(n_arr)), 1.0, eta * eta)
    out = eta * omega0 * np.exp(-0.5 * eta * eta) * lag[n_arr] / np.sqrt(n_arr + 1.0)
    return out if out.ndim else float(out)


def _rates(dist: FockDistribution, params: MotionalParams):
    return np.abs(bsb_rabi_frequency(np.arange(dist.n_max + 1), params.eta, params.omega0))


def bsb_flop(t, params: MotionalParams, dist: Optional[FockDistribution] = None):
    """Bright (S-state) probability after a blue-sideband pulse of length ``t``.

    Uses ``|Omega_{n,n+1}|``; the sign of the Laguerre factor drops out of
    the cosine.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("pulse times must be non-negative")
    dist = params.distribution() if dist is None else dist
    w = _rates(dist, params)
    s = np.cos(2.0 * np.multiply.outer(t, w)) @ dist.populations
    return 0.5 * (1.0 + np.exp(-params.gamma * t) * s)


def sideband_lineshape(detuning, duration: float, params: MotionalParams,
                       dist: Optional[FockDistribution] = None, sideband: str = "blue"):
    """Excitation probability versus detuning for a pulse of fixed length.

    Each Fock level follows the generalized Rabi formula with rate
    ``2|Omega|`` so that zero detuning reproduces :func:`bsb_flop`.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    dist = params.distribution() if dist is None else dist
    p = dist.populations
    if sideband == "blue":
        w = _rates(dist, params)
    elif sideband == "red":
        w = np.zeros(p.size)
        if p.size > 1:
            w[1:] = np.abs(bsb_rabi_frequency(np.arange(p.size - 1), params.eta, params.omega0))
    else:
        raise ValueError("sideband must be 'red' or 'blue'")
    d = np.asarray(detuning, dtype=float)
    rate = 2.0 * w
    gen2 = np.add.outer(d * d, rate * rate)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(gen2 > 0, rate * rate / gen2, 0.0)
    exc = frac * np.sin(0.5 * np.sqrt(gen2) * duration) ** 2
    return exc @ p


@dataclass(frozen=True)
class SidebandScan:
    """Measured bright fraction versus pulse time or detuning.

    ``kind`` is ``bsb_flop`` (abscissa in us), or ``rsb_line`` /
    ``bsb_line`` (abscissa: detuning in rad/us, pulse length ``duration``).
    ``shots`` per point is optional; when known, fits reweight with the
    model probabilities.
    """

    abscissa: np.ndarray
    bright_fraction: np.ndarray
    uncertainties: np.ndarray
    kind: str = "bsb_flop"
    duration: Optional[float] = None
    shots: Optional[int] = None

    def __post_init__(self):
        x = np.asarray(self.abscissa, dtype=float)
        y = np.asarray(self.bright_fraction, dtype=float)
        s = np.broadcast_to(np.asarray(self.uncertainties, dtype=float), x.shape).copy()
        if x.ndim != 1 or y.shape != x.shape:
            raise ValueError("abscissa and bright_fraction must be 1-D and equally long")
        if x.size == 0:
            raise ValueError("scan is empty")
        if np.any(np.diff(x) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if np.any((y < 0) | (y > 1)):
            raise ValueError("bright fractions must lie in [0, 1]")
        if np.any(~(s > 0)):
            raise ValueError("uncertainties must be positive")
        if self.kind not in ("bsb_flop", "rsb_line", "bsb_line"):
            raise ValueError(f"unknown scan kind {self.kind!r}")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be at least 1")
        if self.kind != "bsb_flop" and not (self.duration and self.duration > 0):
            raise ValueError("lineshape scans need a positive pulse duration")
        object.__setattr__(self, "abscissa", x)
        object.__setattr__(self, "bright_fraction", y)
        object.__setattr__(self, "uncertainties", s)

    @property
    def excitation(self) -> np.ndarray:
        return 1.0 - self.bright_fraction

    def to_csv(self, path):
        """Write ``abscissa, bright_fraction, sigma`` plus ``shots`` when known."""
        header = ["abscissa", "bright_fraction", "sigma"]
        if self.shots is not None:
            header.append("shots")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in zip(self.abscissa, self.bright_fraction, self.uncertainties):
                values = [repr(float(v)) for v in row]
                if self.shots is not None:
                    values.append(str(int(self.shots)))
                w.writerow(values)

    @classmethod
    def from_csv(cls, path, kind="bsb_flop", duration=None):
        """Read a scan; an optional fourth ``shots`` column enables reweighting."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
        if not rows:
            raise ValueError(f"{path}: empty scan file")
        header = [h.strip() for h in rows[0]]
        if header not in (["abscissa", "bright_fraction", "sigma"],
                          ["abscissa", "bright_fraction", "sigma", "shots"]):
            raise ValueError(f"{path}: expected header 'abscissa, bright_fraction, sigma"
                             "[, shots]'")
        if len(rows) < 2:
            raise ValueError(f"{path}: scan has no data rows")
        ncol = len(header)
        if any(len(r) != ncol for r in rows[1:]):
            raise ValueError(f"{path}: every row needs {ncol} columns")
        try:
            data = np.array([[float(v) for v in r] for r in rows[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: malformed row ({exc})") from exc
        shots = None
        if ncol == 4:
            counts = data[:, 3]
            if np.any(counts != counts[0]) or counts[0] != int(counts[0]):
                raise ValueError(f"{path}: shots must be one integer shared by all rows")
            shots = int(counts[0])
        return cls(data[:, 0], data[:, 1], data[:, 2], kind, duration, shots)


def simulate_sideband_scan(params: MotionalParams, abscissa, shots: int, seed,
                           kind: str = "bsb_flop", duration: Optional[float] = None,
                           level: float = 0.68) -> SidebandScan:
    """Seeded binomial synthetic scan; uncertainties are Wilson half-widths."""
    x = np.asarray(abscissa, dtype=float)
    dist = params.distribution()
    if kind == "bsb_flop":
        p = bsb_flop(x, params, dist)
    elif kind in ("rsb_line", "bsb_line"):
        side = "red" if kind == "rsb_line" else "blue"
        p = 1.0 - sideband_lineshape(x, duration, params, dist, side)
    else:
        raise ValueError(f"unknown scan kind {kind!r}")
    p = np.clip(p, 0.0, 1.0)
    k = np.array([make_rng(child).binomial(shots, pi)
                  for child, pi in zip(spawn_seeds(seed, x.size), p)])
    lo, hi = wilson_bounds(k, shots, level)
    return SidebandScan(x, k / shots, 0.5 * (hi - lo), kind, duration, shots)


def _flop_model(eta):
    def model(t, p):
        n_th, amp, gamma, omega0 = p
        params = MotionalParams(max(n_th, 0.0), max(amp, 0.0), max(gamma, 0.0), eta,
                                max(omega0, 1e-12))
        try:
            dist = params.distribution()
        except TruncationError:
            return np.full(t.shape, np.nan)
        return bsb_flop(t, params, dist)
    return model


def _binomial_sigma(p, shots):
    p = np.clip(p, 0.5 / shots, 1.0 - 0.5 / shots)
    return np.sqrt(p * (1.0 - p) / shots)


def fit_flop(scan: SidebandScan, initial: Optional[MotionalParams] = None,
             model: str = "displaced_thermal", fixed: Sequence[str] = (),
             prescan: bool = True, reweight: bool = True):
    """Weighted LM fit of a blue-sideband flop.

    Free parameters are ``(n_th, |alpha|, gamma, omega0)``; ``eta`` stays at
    its value in ``initial``. The ``thermal`` model pins ``|alpha|`` at zero,
    the ``coherent`` model pins ``n_th`` at zero, and names listed in
    ``fixed`` are held at their initial values.

    The flop of a large coherent state has many local minima in ``|alpha|``,
    so with ``prescan`` the start value of ``|alpha|`` is taken from a
    chi-square scan on a grid. When the scan records its shot number and
    ``reweight`` is set, a second pass uses binomial errors of the first-pass
    model instead of the data-dependent ones.

    Returns ``(MotionalParams, FitResult)``.
    """
    if scan.kind != "bsb_flop":
        raise ValueError("fit_flop needs a bsb_flop scan")
    initial = MotionalParams() if initial is None else initial
    p0 = np.array([initial.n_th, abs(initial.alpha), initial.gamma, initial.omega0])
    fixed = tuple(fixed)
    if model == "thermal":
        p0[1] = 0.0
        fixed += ("alpha",)
    elif model == "coherent":
        p0[0] = 0.0
        fixed += ("n_th",)
    elif model != "displaced_thermal":
        raise ValueError(f"unknown model {model!r}")
    unknown = set(fixed) - set(FLOP_PARAMETERS)
    if unknown:
        raise ValueError(f"cannot fix unknown parameter(s) {sorted(unknown)}")
    lower = np.array([0.0, 0.0, 0.0, 1e-9])
    upper = np.full(4, np.inf)
    for name in fixed:
        i = FLOP_PARAMETERS.index(name)
        lower[i] = upper[i] = p0[i]
    flop = _flop_model(initial.eta)
    t, y, sigma = scan.abscissa, scan.bright_fraction, scan.uncertainties
    if prescan and "alpha" not in fixed:
        grid = np.linspace(0.0, 20.0, 201)
        chi2 = []
        for a in grid:
            r = (flop(t, np.array([p0[0], a, p0[2], p0[3]])) - y) / sigma
            chi2.append(r @ r if np.all(np.isfinite(r)) else np.inf)
        p0[1] = grid[int(np.argmin(chi2))]
    res = lm_fit(flop, p0, t, y, sigma, bounds=(lower, upper))
    if reweight and scan.shots is not None and np.all(np.isfinite(res.parameters)):
        sigma = _binomial_sigma(flop(t, res.parameters), scan.shots)
        res = lm_fit(flop, res.parameters, t, y, sigma, bounds=(lower, upper))
    n_th, amp, gamma, omega0 = res.parameters
    return MotionalParams(n_th, amp, gamma, initial.eta, omega0), res


def condition_number(result: FitResult) -> float:
    """Condition number of the free-parameter covariance block."""
    free = np.flatnonzero(np.any(result.covariance != 0, axis=0))
    if free.size == 0:
        return 1.0
    sv = np.linalg.svd(result.covariance[np.ix_(free, free)], compute_uv=False)
    return float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")


@dataclass(frozen=True)
class SidebandPeak:
    excitation: float
    sigma: float
    center: float
    result: FitResult = field(repr=False)


def _rabi_line(duration):
    def model(d, p):
        amp, center, rate = p
        delta = d - center
        gen2 = rate * rate + delta * delta
        return amp * rate * rate / gen2 * np.sin(0.5 * np.sqrt(gen2) * duration) ** 2
    return model


def fit_sideband_peak(scan: SidebandScan) -> SidebandPeak:
    """Resonant excitation of a sideband line from a single-Rabi lineshape fit.

    Fits amplitude, centre and effective rate; the peak and its standard
    error follow from the fitted curve at its centre.
    """
    if scan.kind not in ("rsb_line", "bsb_line"):
        raise ValueError("fit_sideband_peak needs a lineshape scan")
    d, y, s, t = scan.abscissa, scan.excitation, scan.uncertainties, scan.duration
    i = int(np.argmax(y))
    # the effective rate is bounded below the first full cycle so the fit
    # stays on the main lobe
    rate0 = min(2.0 * np.arcsin(np.sqrt(np.clip(y[i], 1e-4, 0.98))) / t, 0.9 * np.pi / t)
    p0 = [1.0, d[i], rate0]
    model = _rabi_line(t)
    bounds = ([0.0, d[0], 1e-9], [1.0, d[-1], 2 * np.pi / t])
    res = lm_fit(model, p0, d, y, s, bounds=bounds)
    if scan.shots is not None:
        res = lm_fit(model, res.parameters, d, y,
                     _binomial_sigma(model(d, res.parameters), scan.shots), bounds=bounds)
    amp, center, rate = res.parameters

    def peak(p):
        return p[0] * np.sin(0.5 * p[2] * t) ** 2

    value = peak(res.parameters)
    grad = np.zeros(3)
    for j in range(3):
        h = 1e-6 * max(abs(res.parameters[j]), 1e-6)
        hi, lo = res.parameters.copy(), res.parameters.copy()
        hi[j] += h
        lo[j] -= h
        grad[j] = (peak(hi) - peak(lo)) / (2 * h)
    sigma = float(np.sqrt(max(grad @ res.covariance @ grad, 0.0)))
    return SidebandPeak(float(value), sigma, float(center), res)


@dataclass(frozen=True)
class SidebandRatio:
    ratio: float
    ratio_sigma: float
    n_bar: float
    n_bar_sigma: float
    result: FitResult = field(repr=False)


def fit_sideband_ratio(red: SidebandScan, blue: SidebandScan) -> SidebandRatio:
    """Amplitude ratio of red and blue lines sharing one lineshape.

    For a thermal state the red line is the blue line scaled by
    ``n/(n+1)``, so both scans are fitted with a common centre and
    effective rate, a blue amplitude and the ratio ``r``.
    """
    if red.kind != "rsb_line" or blue.kind != "bsb_line":
        raise ValueError("need one rsb_line and one bsb_line scan")
    if red.duration != blue.duration:
        raise ValueError("red and blue scans must share the pulse duration")
    t = blue.duration
    line = _rabi_line(t)
    n_red = red.abscissa.size
    x = np.concatenate([red.abscissa, blue.abscissa])
    y = np.concatenate([red.excitation, blue.excitation])
    s = np.concatenate([red.uncertainties, blue.uncertainties])

    def model(d, p):
        amp, r, center, rate = p
        out = line(d, (amp, center, rate))
        out[:n_red] *= r
        return out

    start = fit_sideband_peak(blue)
    amp0, center0, rate0 = start.result.parameters
    r0 = np.clip(red.excitation.max() / max(blue.excitation.max(), 1e-3), 0.0, 0.95)
    lo = [0.0, 0.0, min(x), 1e-9]
    hi = [1.0, 1.0, max(x), 2 * np.pi / t]
    res = lm_fit(model, [amp0, r0, center0, rate0], x, y, s, bounds=(lo, hi))
    if red.shots is not None and blue.shots is not None:
        shots = np.concatenate([np.full(n_red, red.shots), np.full(blue.abscissa.size, blue.shots)])
        s = _binomial_sigma(model(x, res.parameters), shots)
        res = lm_fit(model, res.parameters, x, y, s, bounds=(lo, hi))
    r = float(res.parameters[1])
    sr = float(np.sqrt(max(res.covariance[1, 1], 0.0)))
    if not r < 1.0:
        raise ValueError("sideband excitations outside thermal regime (red >= blue)")
    return SidebandRatio(r, sr, r / (1.0 - r), sr / (1.0 - r) ** 2, res)


def ratio_thermometry(red_excitation: float, blue_excitation: float) -> float:
    """Mean thermal occupation ``r / (1 - r)`` with ``r = red / blue``."""
    if not (0.0 <= red_excitation < blue_excitation <= 1.0):
        raise ValueError("sideband excitations outside thermal regime (need 0 <= red < blue <= 1)")
    r = red_excitation / blue_excitation
    return r / (1.0 - r)


def ratio_thermometry_sigma(red_excitation, blue_excitation, red_sigma, blue_sigma) -> float:
    """First-order propagated uncertainty of :func:`ratio_thermometry`."""
    ratio_thermometry(red_excitation, blue_excitation)
    r = red_excitation / blue_excitation
    dn_dr = 1.0 / (1.0 - r) ** 2
    sr = r * np.hypot(red_sigma / red_excitation if red_excitation > 0 else 0.0,
                      blue_sigma / blue_excitation)
    if red_excitation == 0:
        sr = red_sigma / blue_excitation
    return float(dn_dr * sr)


class SidebandFlopRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper for blue-sideband flop fits.

    ``fit(t, y, sigma, shots)`` takes pulse times (us), bright fractions,
    their uncertainties and, optionally, the shots per point.
    """

    def __init__(self, model="displaced_thermal", eta=0.1, n_th=0.5, alpha=0.0, gamma=0.0,
                 omega0=2 * np.pi * 0.05, fixed=()):
        self.model = model
        self.eta = eta
        self.n_th = n_th
        self.alpha = alpha
        self.gamma = gamma
        self.omega0 = omega0
        self.fixed = fixed

    def fit(self, X, y, sigma=None, shots=None):
        t = column_or_1d(np.asarray(X, dtype=float))
        y = column_or_1d(np.asarray(y, dtype=float))
        if sigma is None:
            sigma = np.full(y.shape, 0.05)
        scan = SidebandScan(t, y, sigma, "bsb_flop", shots=shots)
        initial = MotionalParams(self.n_th, self.alpha, self.gamma, self.eta, self.omega0)
        self.params_, self.result_ = fit_flop(scan, initial, self.model, self.fixed)
        self.condition_number_ = condition_number(self.result_)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return bsb_flop(column_or_1d(np.asarray(X, dtype=float)), self.params_)
