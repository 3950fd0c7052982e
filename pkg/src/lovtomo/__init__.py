"""Simulation and pixel-wise tomography of spin-orbit lattice states."""

from .analysis import (
    SpacingEstimate,
    SpacingEstimationError,
    bell_fidelity_map,
    entangled_fraction,
    estimate_lattice_spacing,
    fidelity_histogram,
    map_difference,
    max_bell_fidelity,
)
from .lattice import (
    BeamEnvelope,
    CountFrame,
    GridGeometry,
    LatticeParams,
    default_geometry,
    evaluate_field,
    lattice_spacing,
    lov_operator,
    lov_state,
    simulate_frame,
    simulate_measurement_frames,
    theoretical_intensity,
)
from .tomography import BACKEND, MeasurementSet, mle_reconstruct, pixelwise_tomography

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BeamEnvelope",
    "bell_fidelity_map",
    "CountFrame",
    "default_geometry",
    "entangled_fraction",
    "estimate_lattice_spacing",
    "evaluate_field",
    "fidelity_histogram",
    "GridGeometry",
    "lattice_spacing",
    "LatticeParams",
    "lov_operator",
    "lov_state",
    "map_difference",
    "max_bell_fidelity",
    "MeasurementSet",
    "mle_reconstruct",
    "pixelwise_tomography",
    "simulate_frame",
    "simulate_measurement_frames",
    "SpacingEstimate",
    "SpacingEstimationError",
    "theoretical_intensity",
]
