"""Simulation and analysis toolkit for fast transport of trapped ions.

Submodules
----------
numerics   special functions, fitting, integration, intervals, RNG
potential  electrode bases, well finding and transport waveforms
filtering  low-pass electrode filters driven by DACs
dynamics   ion motion, coherent displacement and compensation pulses
probe      deshelving probe calibration and trajectory reconstruction
motional   Fock distributions, sideband models and thermometry
config     JSON run configuration
cli        ``shuttlelab`` command line
"""
from .dynamics import (CompensationPulse, IonSpec, IonTrajectory, coherent_displacement,
                       ground_state_extent, integrate_ion, optimize_compensation,
                       transport_displacement)
from .filtering import ContinuousSignal, FilterSpec, filter_channel, filter_waveform
from .motional import (FockDistribution, MotionalParams, SidebandFlopRegressor, bsb_flop,
                       displaced_thermal_distribution, fit_flop, ratio_thermometry)
from .potential import (StripElectrodeBasis, TabulatedBasis, Waveform, default_basis,
                        make_transport_waveform)
from .probe import (BeamProfile, DeshelvingCalibration, ErfTrajectoryRegressor,
                    fit_calibration, fit_erf_trajectory, speed_metrics)

__version__ = "0.1.0"

__all__ = [
    "BeamProfile", "CompensationPulse", "ContinuousSignal", "DeshelvingCalibration",
    "ErfTrajectoryRegressor", "FilterSpec", "FockDistribution", "IonSpec", "IonTrajectory",
    "MotionalParams", "SidebandFlopRegressor", "StripElectrodeBasis", "TabulatedBasis",
    "Waveform", "bsb_flop", "coherent_displacement", "default_basis",
    "displaced_thermal_distribution", "filter_channel", "filter_waveform", "fit_calibration",
    "fit_erf_trajectory", "fit_flop", "ground_state_extent", "integrate_ion",
    "make_transport_waveform", "optimize_compensation", "ratio_thermometry", "speed_metrics",
    "transport_displacement",
]
