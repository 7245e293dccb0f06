"""Physical constants and the unit conventions used across the package.

Positions are in micrometres, times in microseconds, velocities in m/s
(identical to um/us), voltages in volts. Frequencies entering public
interfaces are in Hz.
"""
from scipy import constants as _c

HBAR = _c.hbar
ELEMENTARY_CHARGE = _c.e
AMU = _c.atomic_mass
CA40_MASS = 40.0 * AMU  # nominal, matches the usual "40 u" convention

UM = 1e-6
US = 1e-6
HZ_TO_RAD_PER_US = 2.0 * _c.pi * 1e-6
