"""Numerical building blocks shared by the rest of the package.

Special functions, a fixed-step RK4 integrator, a weighted
Levenberg-Marquardt fitter, Wilson binomial intervals and seeded RNGs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special, stats

__all__ = [
    "FitResult",
    "ConfidenceInterval",
    "IntegrationError",
    "erf",
    "assoc_laguerre",
    "laguerre_sequence",
    "lm_fit",
    "binomial_ci",
    "wilson_bounds",
    "integrate_ode",
    "make_rng",
    "spawn_seeds",
]


class IntegrationError(RuntimeError):
    """Raised when an ODE state becomes non-finite."""

    def __init__(self, time, message="non-finite state"):
        super().__init__(f"{message} at t={time!r}")
        self.time = time


@dataclass(frozen=True)
class FitResult:
    parameters: np.ndarray
    covariance: np.ndarray
    reduced_chi2: float
    iterations: int
    converged: bool
    rank: int = 0
    n_free: int = 0
    message: str = ""
    chi2: float = float("nan")

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n_free


@dataclass(frozen=True)
class ConfidenceInterval:
    low: float
    high: float
    level: float
    estimate: float = field(default=float("nan"))

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"confidence level must be in (0, 1), got {self.level}")
        if self.low > self.high:
            raise ValueError("interval bounds are inverted")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.high - self.low)


def erf(x):
    """Error function, ``2/sqrt(pi) * integral_0^x exp(-y**2) dy``.

    Accepts scalars or arrays.
    """
    return special.erf(x)


def assoc_laguerre(n: int, k: int, x):
    """Associated Laguerre polynomial L_n^k(x) by upward recurrence.

    ``(m+1) L_{m+1} = (2m+1+k-x) L_m - (m+k) L_{m-1}`` starting from
    ``L_0 = 1`` and ``L_1 = 1+k-x``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if n == 0:
        return prev if prev.ndim else float(prev)
    cur = 1.0 + k - x
    for m in range(1, n):
        prev, cur = cur, ((2 * m + 1 + k - x) * cur - (m + k) * prev) / (m + 1)
    return cur if cur.ndim else float(cur)


def laguerre_sequence(n_max: int, k: float, x: float) -> np.ndarray:
    """All of ``L_0^k(x) .. L_{n_max}^k(x)`` from the same recurrence."""
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    out = np.empty(n_max + 1)
    out[0] = 1.0
    if n_max >= 1:
        out[1] = 1.0 + k - x
    for m in range(1, n_max):
        out[m + 1] = ((2 * m + 1 + k - x) * out[m] - (m + k) * out[m - 1]) / (m + 1)
    return out


def _jacobian(fun, p, free, rel_step):
    r0 = fun(p)
    jac = np.empty((r0.size, free.size))
    for col, j in enumerate(free):
        h = rel_step * (abs(p[j]) if p[j] != 0 else 1.0)
        hi = p.copy()
        lo = p.copy()
        hi[j] += h
        lo[j] -= h
        jac[:, col] = (fun(hi) - fun(lo)) / (2.0 * h)
    return jac


def lm_fit(
    model: Callable[[np.ndarray, np.ndarray], np.ndarray],
    initial: Sequence[float],
    x,
    y,
    sigma=None,
    bounds: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
    max_iter: int = 200,
    xtol: float = 1e-10,
    rel_step: float = 1e-6,
    lam0: float = 1e-3,
) -> FitResult:
    """Weighted Levenberg-Marquardt least squares.

    Minimises ``sum(((model(x, p) - y) / sigma)**2)``. Parameters whose lower
    and upper bound coincide are held fixed and get zero variance; the
    remaining ones are clipped into the box after every step.

    Parameters
    ----------
    model : callable
        ``model(x, params) -> array`` with the shape of ``y``.
    initial : sequence of float
        Starting parameter vector.
    x, y : array_like
        Abscissae (passed through to ``model`` untouched) and data.
    sigma : array_like, optional
        Per-point standard deviations, all strictly positive.
    bounds : (lower, upper), optional
        Box constraints; use ``-inf``/``inf`` for free directions.
    max_iter : int
        Iteration cap; hitting it returns ``converged=False``.
    xtol : float
        Convergence threshold on the relative step length.

    Returns
    -------
    FitResult
        Covariance is ``(J^T J)^-1`` at the optimum, not rescaled by chi2.
    """
    p = np.array(initial, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.ones_like(y) if sigma is None else np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise ValueError("all sigma must be strictly positive")
    if bounds is None:
        lower = np.full(p.size, -np.inf)
        upper = np.full(p.size, np.inf)
    else:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), p.shape).copy()
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), p.shape).copy()
    if np.any(lower > upper):
        raise ValueError("lower bound exceeds upper bound")
    p = np.clip(p, lower, upper)
    free = np.flatnonzero(lower < upper)
    if y.size < free.size:
        raise ValueError(f"{y.size} data points cannot constrain {free.size} parameters")

    def residuals(params):
        return (np.asarray(model(x, params), dtype=float) - y) / sigma

    r = residuals(p)
    chi2 = float(r @ r)
    lam = lam0
    converged = False
    message = "iteration cap reached"
    iteration = 0
    for iteration in range(1, max_iter + 1):
        if free.size == 0:
            converged = True
            message = "all parameters fixed"
            break
        jac = _jacobian(residuals, p, free, rel_step)
        jtj_diag = np.einsum("ij,ij->j", jac, jac)
        scale = np.sqrt(np.where(jtj_diag > 0, jtj_diag, 1.0))
        accepted = False
        while lam < 1e16:
            a = np.vstack([jac, np.diag(np.sqrt(lam) * scale)])
            b = np.concatenate([-r, np.zeros(free.size)])
            step = np.linalg.lstsq(a, b, rcond=None)[0]
            trial = p.copy()
            trial[free] += step
            trial = np.clip(trial, lower, upper)
            r_trial = residuals(trial)
            chi2_trial = float(r_trial @ r_trial)
            if np.isfinite(chi2_trial) and chi2_trial <= chi2:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            message = "no further decrease possible"
            break
        taken = trial[free] - p[free]
        rel = np.linalg.norm(taken) / (np.linalg.norm(p[free]) + 1e-30)
        decrease = chi2 - chi2_trial
        p, r, chi2 = trial, r_trial, chi2_trial
        lam = max(lam / 10.0, 1e-12)
        if rel < xtol or decrease <= 1e-15 * max(chi2, 1e-300) or chi2 == 0.0:
            converged = True
            message = "converged"
            break

    cov = np.zeros((p.size, p.size))
    rank = 0
    if free.size:
        jac = _jacobian(residuals, p, free, rel_step)
        sv = np.linalg.svd(jac, compute_uv=False)
        tol = 1e-8 * sv.max() if sv.size else 0.0
        rank = int(np.sum(sv > tol))
        sub = np.linalg.pinv(jac.T @ jac)
        sub = 0.5 * (sub + sub.T)
        cov[np.ix_(free, free)] = sub
        if rank < free.size:
            message += f"; rank deficient Jacobian ({rank} of {free.size})"
    dof = y.size - free.size
    if not np.all(np.isfinite(p)):
        converged = False
    return FitResult(
        parameters=p,
        covariance=cov,
        reduced_chi2=chi2 / dof if dof > 0 else float("nan"),
        iterations=iteration,
        converged=converged,
        rank=rank,
        n_free=int(free.size),
        message=message,
        chi2=chi2,
    )


def binomial_ci(successes: int, trials: int, level: float = 0.68) -> ConfidenceInterval:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    low, high = wilson_bounds(successes, trials, level)
    return ConfidenceInterval(float(low), float(high), level, successes / trials)


def wilson_bounds(successes, trials, level: float = 0.68):
    """Vectorised Wilson interval, returns ``(low, high)`` arrays."""
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    if np.any(n < 1) or np.any(k < 0) or np.any(k > n):
        raise ValueError("need 0 <= successes <= trials and trials >= 1")
    z = stats.norm.ppf(0.5 + 0.5 * level)
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    margin = z / denom * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    # analytically low <= phat <= high; enforce it against rounding at k = 0 or n
    low = np.minimum(np.clip(center - margin, 0.0, 1.0), phat)
    high = np.maximum(np.clip(center + margin, 0.0, 1.0), phat)
    return low, high


def integrate_ode(derivative, initial, t_span, dt):
    """Classic fourth-order Runge-Kutta with a fixed step.

    ``derivative(t, y)`` returns dy/dt. The final step is shortened if
    ``dt`` does not divide the span. Returns ``(times, states)`` with
    ``states[i]`` the state at ``times[i]``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    t_start, t_end = float(t_span[0]), float(t_span[1])
    n_steps = int(np.ceil((t_end - t_start) / dt - 1e-9))
    n_steps = max(n_steps, 0)
    times = t_start + dt * np.arange(n_steps + 1)
    if n_steps:
        times[-1] = t_end
    y = np.array(initial, dtype=float)
    states = np.empty((n_steps + 1,) + y.shape)
    states[0] = y
    for i in range(n_steps):
        t = times[i]
        h = times[i + 1] - t
        k1 = derivative(t, y)
        k2 = derivative(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = derivative(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = derivative(t + h, y + h * k3)
        y = y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(times[i + 1])
        states[i + 1] = y
    return times, states


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator for reproducible draws."""
    return np.random.Generator(np.random.Philox(seed))


def spawn_seeds(seed, n: int):
    """Derive ``n`` independent child seeds from ``seed``."""
    return np.random.SeedSequence(seed).spawn(n)
