"""Exactly harmonic test basis: voltages (c, -2 c z0, c z0^2) give c (z - z0)^2."""
import numpy as np

from shuttlelab.potential import ElectrodeBasis, curvature_for_frequency


class HarmonicBasis(ElectrodeBasis):
    centers = np.array([-1.0, 0.0, 1.0])
    axial_range = (-1e4, 1e4)

    def moments(self, z, order=0):
        z = np.asarray(z, dtype=float)[..., None]
        one = np.ones_like(z)
        zero = np.zeros_like(z)
        table = [(z * z, z, one), (2 * z, one, zero), (2 * one, zero, zero), (zero, zero, zero)]
        return np.concatenate(table[order], axis=-1)


def moving_well_voltages(z0, frequency_hz):
    c = 0.5 * curvature_for_frequency(frequency_hz)
    z0 = np.asarray(z0, dtype=float)
    return np.column_stack([np.full_like(z0, c), -2 * c * z0, c * z0 * z0])


def random_piecewise_linear_transport(rng, dt=1e-3, settle=400):
    """Random harmonic transport whose well path has knots on the 2*dt grid.

    Returns ``(times, well_positions, frequency_hz)``.
    """
    f = rng.uniform(1.0e6, 3.0e6)
    duration = rng.uniform(0.5, 3.0)
    distance = rng.uniform(-150.0, 150.0)
    n = 2 * int(round(duration / (2 * dt)))
    inner = rng.choice(np.arange(1, n // 2), int(rng.integers(1, 28)), replace=False)
    knots = np.concatenate([[0], np.sort(inner) * 2, [n]])
    values = distance * np.concatenate([[0.0], np.sort(rng.uniform(0, 1, knots.size - 2)), [1.0]])
    t = dt * np.arange(n + 1 + settle)
    z = np.interp(np.arange(t.size), knots, values)
    return t, z, f
