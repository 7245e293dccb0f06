"""Independent reference computations used only by the tests."""
import numpy as np
from scipy import integrate
from scipy.linalg import expm


def displaced_thermal_oracle(n_bar, alpha, n_max, dim=600):
    """Diagonal of D(alpha) rho_th D(alpha)^dagger in a truncated Fock space."""
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    d = expm(alpha * a.T - np.conj(alpha) * a)
    n = np.arange(dim)
    if n_bar > 0:
        p = np.exp(n * np.log(n_bar) - (n + 1) * np.log1p(n_bar))
    else:
        p = (n == 0).astype(float)
    rho = (d * p) @ d.conj().T
    return np.real(np.diag(rho))[: n_max + 1]


def filter_ode_oracle(values, sample_interval, omega0, q, n_fine, oversample=100):
    """Second-order filter integrated with a tight-tolerance ODE solver.

    Each hold segment is integrated separately with ``oversample`` output
    points per fine step; returns the output on the fine grid.
    """
    values = np.asarray(values, dtype=float)
    x = np.array([values[0], 0.0])
    dt = sample_interval / n_fine
    out = [x[0]]
    for u in values:
        def rhs(t, y, u=u):
            return [y[1], omega0 * omega0 * (u - y[0]) - omega0 / q * y[1]]

        t_eval = np.linspace(0.0, sample_interval, n_fine * oversample + 1)
        sol = integrate.solve_ivp(rhs, (0.0, sample_interval), x, method="DOP853",
                                  t_eval=t_eval, rtol=1e-13, atol=1e-14)
        out.extend(sol.y[0, oversample::oversample])
        x = sol.y[:, -1]
    return np.array(out), dt


def wilson_direct(k, n, z):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half
