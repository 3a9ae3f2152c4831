"""Heralded dual-rail magnon memory: click-level simulation and tomography."""

from .memory import (
    ClickTable,
    MagnonRecord,
    NoiseParams,
    ProtocolTiming,
    TrialRecord,
    herald_probability,
    read_map,
    run_sequence,
    run_trial,
    simulate,
    write_map,
)
from .polarization import (
    Basis,
    DensityMatrix,
    Fiducial,
    PolarizationState,
    StokesVector,
    degree_of_polarization,
    density_from_pure,
    density_from_stokes,
    fidelity,
    stokes_from_density,
)

__version__ = "0.1.0"

__all__ = [
    "Basis", "ClickTable", "DensityMatrix", "Fiducial", "MagnonRecord", "NoiseParams",
    "PolarizationState", "ProtocolTiming", "StokesVector", "TrialRecord", "degree_of_polarization",
    "density_from_pure", "density_from_stokes", "fidelity", "herald_probability", "read_map",
    "run_sequence", "run_trial", "simulate", "stokes_from_density", "write_map",
]
